#pragma once

// HTTP JSON API over the pipeline. Each session holds named signals,
// responses, episode sets, index series and calibration jobs; every
// computation goes through the same helpers as the CLI so exported CSVs match.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "impit/calibrate.hpp"
#include "impit/csv.hpp"
#include "impit/episodes.hpp"
#include "impit/error.hpp"
#include "impit/index.hpp"
#include "impit/pipeline.hpp"
#include "impit/serialize.hpp"
#include "impit/stats.hpp"
#include "impit/timeline.hpp"

namespace impit::service {

using nlohmann::json;
namespace ser = impit::json;

struct Config {
  std::chrono::seconds ttl{3600};
  int workers = 2;                    ///< concurrent calibration jobs
  int jobs_per_calibration = 1;       ///< threads inside one job
  std::size_t max_upload = 64u << 20; ///< bytes
  std::string persist_dir;            ///< empty: memory only
};

/// Error carrying an explicit HTTP status (404/409 and request-shape problems).
class HttpError : public std::runtime_error {
public:
  HttpError(int status, std::string code, const std::string &message, std::string field = {})
      : std::runtime_error(message), status(status), code(std::move(code)), field(std::move(field)) {}
  int status;
  std::string code;
  std::string field;
};

[[noreturn]] inline void not_found(const std::string &what) { throw HttpError(404, "not_found", what + " not found"); }

inline int status_for(const Error &e) {
  switch (e.kind()) {
  case ErrorKind::validation: return 400;
  case ErrorKind::domain: return 422;
  case ErrorKind::not_found: return 404;
  case ErrorKind::conflict: return 409;
  case ErrorKind::runtime: return 500;
  }
  return 500;
}

inline json error_body(int status, const std::string &kind, const std::string &code, const std::string &message,
                       const std::string &field) {
  json err{{"status", status}, {"kind", kind}, {"code", code}, {"message", message}};
  if (!field.empty()) err["fields"] = json::array({json{{"field", field}, {"code", code}, {"message", message}}});
  return json{{"schema_version", ser::schema_version}, {"error", err}};
}

// ---------------------------------------------------------------------------
// Request body access with field-level errors
// ---------------------------------------------------------------------------

class Body {
public:
  explicit Body(const json &j) : j_(j) {
    if (!j_.is_object()) throw HttpError(400, "bad_json", "request body must be a JSON object");
  }

  /// Rejects keys outside `allowed` so that typos do not pass silently.
  void only(std::initializer_list<const char *> allowed) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char *a : allowed) ok = ok || it.key() == a;
      if (!ok) throw HttpError(400, "unknown_field", "unknown field '" + it.key() + "'", it.key());
    }
  }

  bool has(const char *k) const { return j_.contains(k) && !j_.at(k).is_null(); }
  const json &at(const char *k) const { return j_.at(k); }

  std::string str(const char *k, std::string fallback = {}) const {
    if (!has(k)) return fallback;
    if (!j_.at(k).is_string()) bad(k, "must be a string");
    return j_.at(k).get<std::string>();
  }
  std::string required_str(const char *k) const {
    if (!has(k)) bad(k, "is required", "missing_field");
    return str(k);
  }
  std::optional<double> number(const char *k) const {
    if (!has(k)) return std::nullopt;
    if (!j_.at(k).is_number()) bad(k, "must be a number");
    return j_.at(k).get<double>();
  }
  std::optional<int> integer(const char *k) const {
    if (!has(k)) return std::nullopt;
    if (!j_.at(k).is_number_integer()) bad(k, "must be an integer");
    return j_.at(k).get<int>();
  }
  bool flag(const char *k, bool fallback = false) const {
    if (!has(k)) return fallback;
    if (!j_.at(k).is_boolean()) bad(k, "must be true or false");
    return j_.at(k).get<bool>();
  }
  /// Grid given as a JSON number array or the CLI's text form.
  std::optional<std::vector<double>> grid(const char *k) const {
    if (!has(k)) return std::nullopt;
    const auto &v = j_.at(k);
    if (v.is_string()) return parse_grid(v.get<std::string>());
    if (!v.is_array()) bad(k, "must be an array of numbers or lo:hi:step");
    std::vector<double> out;
    for (const auto &x : v) {
      if (!x.is_number()) bad(k, "must contain numbers only");
      out.push_back(x.get<double>());
    }
    return out;
  }

  [[noreturn]] static void bad(const char *k, const std::string &what, const char *code = "bad_field") {
    throw HttpError(400, code, std::string("'") + k + "' " + what, k);
  }

private:
  const json &j_;
};

inline json parse_json(const std::string &text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error &e) {
    throw HttpError(400, "bad_json", std::string("malformed JSON: ") + e.what());
  }
}

inline void check_name(const std::string &name, const char *field = "name") {
  static const std::regex ok("[A-Za-z0-9_.-]{1,64}");
  if (!std::regex_match(name, ok) || name == "." || name == "..")
    throw HttpError(400, "bad_name", "names use letters, digits, '_', '-' or '.' (at most 64)", field);
}

inline std::optional<Season> season_field(const Body &b, const char *k) {
  const auto text = b.str(k);
  if (text.empty()) return std::nullopt;
  auto s = Season::parse(text);
  if (!s) Body::bad(k, "must be MM-DD:MM-DD");
  return s;
}

// ---------------------------------------------------------------------------
// Worker pool and calibration jobs
// ---------------------------------------------------------------------------

/// Fixed set of threads draining a FIFO queue.
class WorkerPool {
public:
  explicit WorkerPool(int n) {
    for (int i = 0; i < std::max(1, n); ++i)
      threads_.emplace_back([this](std::stop_token st) { loop(st); });
  }
  ~WorkerPool() {
    for (auto &t : threads_) t.request_stop();
    cv_.notify_all();
  }
  WorkerPool(const WorkerPool &) = delete;
  WorkerPool &operator=(const WorkerPool &) = delete;

  void submit(std::function<void()> task) {
    {
      std::lock_guard lk(mu_);
      queue_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

private:
  void loop(std::stop_token st) {
    while (true) {
      std::function<void()> task;
      {
        std::unique_lock lk(mu_);
        if (!cv_.wait(lk, st, [this] { return !queue_.empty(); })) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable_any cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::jthread> threads_; // last: joined before the queue goes away
};

enum class JobStatus { queued, running, done, failed, cancelled };

inline const char *to_string(JobStatus s) {
  switch (s) {
  case JobStatus::queued: return "queued";
  case JobStatus::running: return "running";
  case JobStatus::done: return "done";
  case JobStatus::failed: return "failed";
  case JobStatus::cancelled: return "cancelled";
  }
  return "failed";
}

struct Job {
  std::string id;
  Stage stage = Stage::S1;
  std::size_t total = 0;
  std::atomic<std::size_t> done{0};
  std::atomic<bool> cancel{false};

  mutable std::mutex mu; // guards the fields below
  JobStatus status = JobStatus::queued;
  std::optional<CalibrationMap> map;
  json error;

  json snapshot(bool with_records) const {
    std::lock_guard lk(mu);
    json out{{"schema_version", ser::schema_version},
             {"job", id},
             {"stage", impit::to_string(stage)},
             {"status", to_string(status)},
             {"done", done.load()},
             {"total", total}};
    if (!error.is_null()) out["error"] = error;
    if (map) {
      auto m = ser::to_json(*map);
      if (!with_records) {
        m.erase("records");
        m.erase("csv");
      }
      out["map"] = std::move(m);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

struct Session {
  using Clock = std::chrono::steady_clock;

  std::string id;
  std::chrono::system_clock::time_point created;
  Clock::time_point last_used;

  std::mutex mu; // serializes every access to the maps below
  std::map<std::string, Signal> signals;
  std::map<std::string, ResponseSeries> responses;
  std::map<std::string, EpisodeSet> episodes;
  std::map<std::string, IndexSeries> indices;
  std::map<std::string, std::shared_ptr<Job>> jobs;
};

template <class Map> auto &lookup(Map &m, const std::string &name, const char *what) {
  auto it = m.find(name);
  if (it == m.end()) not_found(std::string(what) + " '" + name + "'");
  return it->second;
}

template <class Map> void ensure_free(const Map &m, const std::string &name, const char *what) {
  if (m.count(name)) throw HttpError(409, "duplicate_name", std::string(what) + " '" + name + "' already exists", "name");
}

class Service {
public:
  explicit Service(Config cfg) : cfg_(std::move(cfg)), pool_(cfg_.workers) {}

  ~Service() {
    std::lock_guard lk(mu_);
    for (auto &[id, s] : sessions_) cancel_jobs(*s);
  }

  Service(const Service &) = delete;
  Service &operator=(const Service &) = delete;

  const Config &config() const { return cfg_; }

  /// Installs every route on `srv`.
  void mount(httplib::Server &srv) {
    srv.set_payload_max_length(cfg_.max_upload);
    const std::string sid = "/sessions/([A-Za-z0-9]+)";
    const std::string nm = "([A-Za-z0-9_.-]+)";

    srv.Post("/sessions", wrap([this](const auto &, auto &) { return create_session(); }, 201));
    srv.Get(sid, wrap([this](const auto &req, auto &) { return describe(session(req)); }));
    srv.Delete(sid, wrap([this](const auto &req, auto &) { return drop_session(req.matches[1]); }));

    srv.Post(sid + "/signals", wrap([this](const auto &req, auto &) { return post_signal(req); }, 201));
    srv.Get(sid + "/signals/" + nm, wrap([this](const auto &req, auto &) { return get_signal(req); }));
    srv.Post(sid + "/responses", wrap([this](const auto &req, auto &) { return post_response(req); }, 201));

    srv.Post(sid + "/episodes", wrap([this](const auto &req, auto &) { return post_episodes(req); }, 201));
    srv.Get(sid + "/episodes/" + nm, wrap([this](const auto &req, auto &) { return get_episodes(req); }));

    srv.Post(sid + "/index", wrap([this](const auto &req, auto &) { return post_index(req); }, 201));
    srv.Get(sid + "/index/" + nm, wrap([this](const auto &req, auto &) { return get_index(req); }));

    srv.Post(sid + "/calibrate", wrap([this](const auto &req, auto &) { return post_calibrate(req); }, 202));
    srv.Get(sid + "/calibrate/" + nm, wrap([this](const auto &req, auto &) { return get_job(req); }));
    srv.Delete(sid + "/calibrate/" + nm, wrap([this](const auto &req, auto &) { return cancel_job(req); }));
    srv.Post(sid + "/calibrate/" + nm + "/selection",
             wrap([this](const auto &req, auto &) { return post_selection(req); }, 201));

    srv.Post(sid + "/associate", wrap([this](const auto &req, auto &) { return post_associate(req); }));
  }

  /// Drops sessions idle for longer than the TTL; returns how many went.
  std::size_t purge_expired() {
    const auto now = Session::Clock::now();
    std::lock_guard lk(mu_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_used > cfg_.ttl) {
        cancel_jobs(*it->second);
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  std::size_t session_count() const {
    std::lock_guard lk(mu_);
    return sessions_.size();
  }

private:
  using Handler = std::function<json(const httplib::Request &, httplib::Response &)>;

  /// Purges, runs the handler and maps every failure to a JSON error body.
  httplib::Server::Handler wrap(Handler h, int ok_status = 200) {
    return [this, h = std::move(h), ok_status](const httplib::Request &req, httplib::Response &res) {
      int status = ok_status;
      json body;
      try {
        purge_expired();
        body = h(req, res);
        if (!body.contains("schema_version")) body["schema_version"] = ser::schema_version;
      } catch (const HttpError &e) {
        status = e.status;
        body = error_body(e.status, e.status == 404 ? "not_found" : e.status == 409 ? "conflict" : "validation", e.code,
                          e.what(), e.field);
      } catch (const Error &e) {
        status = status_for(e);
        body = error_body(status, impit::to_string(e.kind()), e.code(), e.what(),
                          e.kind() == ErrorKind::validation ? e.code() : std::string());
      } catch (const json::exception &e) {
        status = 400;
        body = error_body(400, "validation", "bad_json", e.what(), {});
      } catch (const std::exception &e) {
        status = 500;
        body = error_body(500, "runtime", "internal", e.what(), {});
      }
      res.status = status;
      res.set_content(body.dump(), "application/json");
    };
  }

  static void cancel_jobs(Session &s) {
    std::lock_guard lk(s.mu);
    for (auto &[name, job] : s.jobs) job->cancel = true;
  }

  std::shared_ptr<Session> session(const httplib::Request &req) {
    const std::string id = req.matches[1];
    std::lock_guard lk(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) not_found("session '" + id + "'");
    it->second->last_used = Session::Clock::now();
    return it->second;
  }

  std::string new_id() {
    std::lock_guard lk(rng_mu_);
    std::uniform_int_distribution<std::uint64_t> dist;
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(dist(rng_)),
                  static_cast<unsigned long long>(dist(rng_)));
    return buf;
  }

  void persist(const Session &s, const std::string &file, const std::string &text) const {
    if (cfg_.persist_dir.empty()) return;
    const auto dir = std::filesystem::path(cfg_.persist_dir) / s.id;
    std::filesystem::create_directories(dir);
    csv::write_file((dir / file).string(), text);
  }

  static std::string param(const httplib::Request &req, const char *key) {
    if (req.has_param(key)) return req.get_param_value(key);
    if (req.is_multipart_form_data() && req.has_file(key)) return req.get_file_value(key).content;
    return {};
  }

  /// CSV text from a multipart `file` part or the raw body.
  static std::string upload(const httplib::Request &req) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) throw HttpError(400, "missing_field", "multipart upload needs a 'file' part", "file");
      return req.get_file_value("file").content;
    }
    return req.body;
  }

  static bool is_json(const httplib::Request &req) {
    return req.get_header_value("Content-Type").rfind("application/json", 0) == 0;
  }

  // --- sessions -----------------------------------------------------------

  json create_session() {
    auto s = std::make_shared<Session>();
    s->id = new_id();
    s->created = std::chrono::system_clock::now();
    s->last_used = Session::Clock::now();
    {
      std::lock_guard lk(mu_);
      sessions_[s->id] = s;
    }
    return json{{"id", s->id}, {"ttl_seconds", cfg_.ttl.count()}};
  }

  json describe(const std::shared_ptr<Session> &s) {
    std::lock_guard lk(s->mu);
    auto names = [](const auto &m) {
      json a = json::array();
      for (const auto &kv : m) a.push_back(kv.first);
      return a;
    };
    return json{{"id", s->id},
                {"signals", names(s->signals)},
                {"responses", names(s->responses)},
                {"episodes", names(s->episodes)},
                {"indices", names(s->indices)},
                {"jobs", names(s->jobs)}};
  }

  json drop_session(const std::string &id) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lk(mu_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) not_found("session '" + id + "'");
      s = it->second;
      sessions_.erase(it);
    }
    cancel_jobs(*s);
    return json{{"id", id}, {"deleted", true}};
  }

  // --- data -----------------------------------------------------------------

  json post_signal(const httplib::Request &req) {
    auto s = session(req);
    const auto name = param(req, "name");
    check_name(name);
    std::optional<Resolution> res;
    if (const auto r = param(req, "resolution"); !r.empty()) {
      res = Resolution::parse(r);
      if (!res) throw HttpError(400, "resolution", "unknown resolution '" + r + "'", "resolution");
    }
    auto signal = signal_from_csv(upload(req), name, {param(req, "time_col"), param(req, "value_col")}, res);
    std::lock_guard lk(s->mu);
    ensure_free(s->signals, name, "signal");
    persist(*s, "signal_" + name + ".csv", signal.to_csv());
    const auto summary = signal_summary(signal, false);
    s->signals.emplace(name, std::move(signal));
    return summary;
  }

  static json signal_summary(const Signal &sig, bool with_points) {
    json out{{"name", sig.name()}, {"resolution", sig.resolution().name()}, {"length", sig.size()}};
    if (!sig.empty()) {
      out["first"] = sig.resolution().format(sig.times().front());
      out["last"] = sig.resolution().format(sig.times().back());
      const auto [lo, hi] = std::minmax_element(sig.values().begin(), sig.values().end());
      out["min"] = *lo;
      out["max"] = *hi;
    }
    if (with_points) {
      json pts = json::array();
      for (std::size_t i = 0; i < sig.size(); ++i)
        pts.push_back(json{{"t", sig.resolution().format(sig.times()[i])}, {"v", sig.values()[i]}});
      out["points"] = std::move(pts);
    }
    return out;
  }

  json get_signal(const httplib::Request &req) {
    auto s = session(req);
    std::lock_guard lk(s->mu);
    return signal_summary(lookup(s->signals, req.matches[2], "signal"), true);
  }

  static ResponseSeries parse_response(const std::string &text, const std::string &label, const std::string &time_col,
                                       const std::string &value_col, bool log) {
    return response_from_csv(text, label, {time_col, value_col}, log ? ResponseTransform::log : ResponseTransform::none);
  }

  json post_response(const httplib::Request &req) {
    auto s = session(req);
    const auto name = param(req, "name");
    check_name(name);
    const auto log = param(req, "log");
    auto r = parse_response(upload(req), name, param(req, "time_col"), param(req, "value_col"),
                            log == "true" || log == "1");
    std::lock_guard lk(s->mu);
    ensure_free(s->responses, name, "response");
    std::string text = "date,value\n";
    for (std::size_t i = 0; i < r.times.size(); ++i) text += format_day(r.times[i]) + "," + csv::format(r.values[i]) + "\n";
    persist(*s, "response_" + name + ".csv", text);
    json out{{"name", name}, {"length", r.times.size()}, {"log", r.transform == ResponseTransform::log}};
    s->responses.emplace(name, std::move(r));
    return out;
  }

  // --- episodes -------------------------------------------------------------

  /// JSON spec, or a CSV episode list with query parameters name/signal/season.
  json post_episodes(const httplib::Request &req) {
    auto s = session(req);
    EpisodeSpec spec;
    std::string name, signal_name, csv_text;
    if (is_json(req)) {
      const auto j = parse_json(req.body);
      Body b(j);
      b.only({"name", "signal", "method", "threshold", "direction", "min_duration", "season", "baseline",
              "percentile", "csv"});
      name = b.required_str("name");
      signal_name = b.str("signal");
      auto method = parse_episode_method(b.str("method", b.has("csv") ? "file" : "threshold"));
      if (!method) Body::bad("method", "must be threshold, climatology, periodic, singletons or file");
      spec.method = *method;
      spec.threshold = b.number("threshold");
      auto dir = parse_direction(b.str("direction", "up"));
      if (!dir) Body::bad("direction", "must be up or down");
      spec.direction = *dir;
      if (auto md = b.integer("min_duration")) {
        spec.min_duration = *md;
        spec.climatology_min_duration = *md;
      }
      spec.season = season_field(b, "season");
      if (b.has("baseline")) {
        spec.baseline = parse_baseline(b.str("baseline"));
        if (!spec.baseline) Body::bad("baseline", "must be YYYY:YYYY");
      }
      spec.percentile = b.number("percentile").value_or(90.0);
      csv_text = b.str("csv");
    } else {
      name = param(req, "name");
      signal_name = param(req, "signal");
      spec.method = EpisodeMethod::file;
      if (const auto se = param(req, "season"); !se.empty()) {
        spec.season = Season::parse(se);
        if (!spec.season) throw HttpError(400, "season", "season must be MM-DD:MM-DD", "season");
      }
      csv_text = upload(req);
    }
    check_name(name);

    std::lock_guard lk(s->mu);
    ensure_free(s->episodes, name, "episode set");
    const Signal *signal = signal_name.empty() ? nullptr : &lookup(s->signals, signal_name, "signal");
    auto set = build_episodes(signal, spec, csv_text);
    auto out = ser::to_json(set);
    out["name"] = name;
    persist(*s, "episodes_" + name + ".csv", episodes_to_csv(set));
    s->episodes.emplace(name, std::move(set));
    return out;
  }

  json get_episodes(const httplib::Request &req) {
    auto s = session(req);
    std::lock_guard lk(s->mu);
    auto out = ser::to_json(lookup(s->episodes, req.matches[2], "episode set"));
    out["name"] = req.matches[2].str();
    return out;
  }

  // --- index ----------------------------------------------------------------

  static WeightParams params_field(const Body &b) {
    if (!b.has("params")) Body::bad("params", "is required", "missing_field");
    Body p(b.at("params"));
    p.only({"m", "a", "b", "c", "d"});
    WeightParams w;
    auto m = p.integer("m");
    if (!m) Body::bad("m", "is required", "missing_field");
    w.m = *m;
    w.a = p.number("a").value_or(w.a);
    w.b = p.number("b").value_or(w.b);
    w.c = p.number("c").value_or(w.c);
    w.d = p.number("d").value_or(w.d);
    return w;
  }

  static IndexOptions options_field(const Body &b) {
    IndexOptions opt;
    opt.per_memory = b.flag("per_memory");
    const auto edge = b.str("edge", "truncate");
    if (edge != "truncate" && edge != "drop") Body::bad("edge", "must be truncate or drop");
    opt.edge = edge == "drop" ? EdgePolicy::drop : EdgePolicy::truncate;
    return opt;
  }

  static IntensityKind kind_field(const Body &b) {
    auto k = parse_intensity_kind(b.str("kind", "mean"));
    if (!k) Body::bad("kind", "must be mean, log_sum, median, min, max, sum or precomputed");
    return *k;
  }

  json post_index(const httplib::Request &req) {
    auto s = session(req);
    const auto j = parse_json(req.body);
    Body b(j);
    b.only({"name", "episodes", "params", "timing_season", "kind", "schedule", "response", "per_memory", "edge",
            "explain"});
    const auto name = b.required_str("name");
    check_name(name);
    auto params = params_field(b);
    auto opt = options_field(b);
    opt.timing_season = season_field(b, "timing_season");
    params.timing_enabled = opt.timing_season.has_value();
    const auto kind = kind_field(b);
    const bool explain = b.flag("explain");

    std::lock_guard lk(s->mu);
    ensure_free(s->indices, name, "index");
    const auto &set = lookup(s->episodes, b.required_str("episodes"), "episode set");
    const ResponseSeries *response = b.has("response") ? &lookup(s->responses, b.str("response"), "response") : nullptr;
    const auto sched = build_schedule(b.str("schedule", "annual:12"), set, response);
    auto ix = evaluate(set, params, kind, sched, opt);
    auto out = ser::to_json(ix, explain);
    out["name"] = name;
    persist(*s, "index_" + name + ".csv", index_to_csv(ix));
    if (explain) persist(*s, "index_" + name + "_diagnostics.csv", diagnostics_to_csv(ix));
    s->indices.emplace(name, std::move(ix));
    return out;
  }

  json get_index(const httplib::Request &req) {
    auto s = session(req);
    std::lock_guard lk(s->mu);
    auto out = ser::to_json(lookup(s->indices, req.matches[2], "index"), req.get_param_value("explain") == "true");
    out["name"] = req.matches[2].str();
    return out;
  }

  // --- calibration ----------------------------------------------------------

  json post_calibrate(const httplib::Request &req) {
    auto s = session(req);
    const auto j = parse_json(req.body);
    Body b(j);
    b.only({"name", "episodes", "response", "stage", "m_list", "a_grid", "a", "b_list", "c_grid", "d_list", "season",
            "kind", "per_memory", "edge", "schedule", "tolerance", "jobs"});
    StageSpec spec;
    const auto stage_text = b.has("stage") && b.at("stage").is_number_integer()
                                ? std::to_string(b.at("stage").get<int>())
                                : b.required_str("stage");
    auto stage = parse_stage(stage_text);
    if (!stage) Body::bad("stage", "must be 1, 2 or 3");
    spec.stage = *stage;
    auto ms = b.grid("m_list");
    if (!ms) Body::bad("m_list", "is required", "missing_field");
    for (double m : *ms) {
      if (m != std::floor(m)) Body::bad("m_list", "must hold integers");
      spec.m_list.push_back(static_cast<int>(m));
    }
    if (auto g = b.grid("a_grid")) spec.a_grid = *g;
    spec.a = b.number("a").value_or(0.0);
    if (auto g = b.grid("b_list")) spec.b_list = *g;
    if (auto g = b.grid("c_grid")) spec.c_grid = *g;
    if (auto g = b.grid("d_list")) spec.d_list = *g;
    spec.index_options = options_field(b);
    const auto kind = kind_field(b);
    CalibrationOptions copt;
    copt.tolerance_steps = b.integer("tolerance").value_or(0);
    if (copt.tolerance_steps < 0 || copt.tolerance_steps > 1) Body::bad("tolerance", "must be 0 or 1");
    copt.jobs = std::clamp(b.integer("jobs").value_or(cfg_.jobs_per_calibration), 1,
                           std::max(1, cfg_.jobs_per_calibration));
    const auto job_name = b.str("name", "");
    if (!job_name.empty()) check_name(job_name);

    auto job = std::make_shared<Job>();
    EpisodeSet set;
    ResponseSeries response;
    EvaluationSchedule sched;
    {
      std::lock_guard lk(s->mu);
      set = lookup(s->episodes, b.required_str("episodes"), "episode set");
      response = lookup(s->responses, b.required_str("response"), "response");
      spec.season = season_field(b, "season");
      if (!spec.season) spec.season = set.season;
      if (spec.stage == Stage::S3 && !spec.season)
        throw HttpError(400, "season", "stage 3 requires a season", "season");
      spec.normalize();
      sched = build_schedule(b.str("schedule", "response"), set, &response);
      job->id = job_name.empty() ? "job" + std::to_string(s->jobs.size() + 1) : job_name;
      ensure_free(s->jobs, job->id, "job");
      job->stage = spec.stage;
      job->total = spec.cell_count();
      s->jobs.emplace(job->id, job);
    }

    copt.cancel = &job->cancel;
    copt.progress = [job](std::size_t done, std::size_t) { job->done = done; };
    std::weak_ptr<Session> weak = s;
    pool_.submit([this, job, weak, spec, set = std::move(set), response = std::move(response),
                  sched = std::move(sched), kind, copt]() {
      {
        std::lock_guard lk(job->mu);
        if (job->cancel) {
          job->status = JobStatus::cancelled;
          return;
        }
        job->status = JobStatus::running;
      }
      try {
        auto map = run_stage(spec, set, kind, sched, response, copt);
        if (auto sess = weak.lock()) {
          std::lock_guard lk(sess->mu);
          persist(*sess, "map_" + job->id + ".csv", map_to_csv(map));
        }
        std::lock_guard lk(job->mu);
        job->map = std::move(map);
        job->status = JobStatus::done;
      } catch (const Error &e) {
        std::lock_guard lk(job->mu);
        job->status = e.code() == "cancelled" ? JobStatus::cancelled : JobStatus::failed;
        if (job->status == JobStatus::failed)
          job->error = json{{"kind", impit::to_string(e.kind())}, {"code", e.code()}, {"message", e.what()}};
      } catch (const std::exception &e) {
        std::lock_guard lk(job->mu);
        job->status = JobStatus::failed;
        job->error = json{{"kind", "runtime"}, {"code", "internal"}, {"message", e.what()}};
      }
    });
    return job->snapshot(false);
  }

  std::shared_ptr<Job> find_job(const httplib::Request &req) {
    auto s = session(req);
    std::lock_guard lk(s->mu);
    return lookup(s->jobs, req.matches[2], "job");
  }

  json get_job(const httplib::Request &req) {
    return find_job(req)->snapshot(req.get_param_value("records") != "false");
  }

  json cancel_job(const httplib::Request &req) {
    auto job = find_job(req);
    job->cancel = true;
    {
      std::lock_guard lk(job->mu);
      if (job->status == JobStatus::queued) job->status = JobStatus::cancelled;
    }
    return job->snapshot(false);
  }

  /// Body: {rule: max_abs_r | manual, configuration: {m,a,b,c,d}, rationale, stability_radius}.
  json post_selection(const httplib::Request &req) {
    auto s = session(req);
    auto job = find_job(req);
    const auto j = parse_json(req.body);
    Body b(j);
    b.only({"rule", "configuration", "rationale", "stability_radius"});
    const auto rule = b.str("rule", "manual");
    const auto rationale = b.str("rationale");
    std::lock_guard lk(job->mu);
    if (job->status != JobStatus::done || !job->map)
      throw HttpError(409, "job_not_done", "job '" + job->id + "' has no finished map");
    Selection sel;
    if (rule == "max_abs_r") {
      const int radius = b.integer("stability_radius").value_or(1);
      if (radius < 0) Body::bad("stability_radius", "must be >= 0");
      sel = select_max_abs_r(*job->map, radius);
      sel.rationale = rationale;
    } else if (rule == "manual") {
      if (rationale.empty()) Body::bad("rationale", "is required for a manual selection", "missing_field");
      if (!b.has("configuration")) Body::bad("configuration", "is required", "missing_field");
      Body c(b.at("configuration"));
      c.only({"m", "a", "b", "c", "d"});
      MapRecord cell;
      auto m = c.integer("m");
      if (!m) Body::bad("m", "is required", "missing_field");
      cell.m = *m;
      cell.a = c.number("a").value_or(job->map->fixed_a.value_or(0.0));
      cell.b = c.number("b");
      cell.c = c.number("c");
      cell.d = c.number("d");
      sel = select_manual(*job->map, cell, rationale);
    } else {
      Body::bad("rule", "must be max_abs_r or manual");
    }
    job->map->selection = sel;
    const auto out = ser::to_json(sel);
    {
      std::lock_guard slk(s->mu);
      persist(*s, "selection_" + job->id + ".json", out.dump(2) + "\n");
    }
    return out;
  }

  // --- association ----------------------------------------------------------

  /// JSON {index, response | response_csv, log_response, tolerance, smooth}
  /// or a raw response CSV with ?index=NAME.
  json post_associate(const httplib::Request &req) {
    auto s = session(req);
    std::string index_name, response_name, response_text;
    bool log = false;
    int tolerance = 0, smooth = 0;
    if (is_json(req)) {
      const auto j = parse_json(req.body);
      Body b(j);
      b.only({"index", "response", "response_csv", "log_response", "tolerance", "smooth"});
      index_name = b.required_str("index");
      response_name = b.str("response");
      response_text = b.str("response_csv");
      if (response_name.empty() == response_text.empty())
        throw HttpError(400, "missing_field", "give exactly one of 'response' or 'response_csv'", "response");
      log = b.flag("log_response");
      tolerance = b.integer("tolerance").value_or(0);
      smooth = b.integer("smooth").value_or(0);
    } else {
      index_name = param(req, "index");
      response_text = upload(req);
      const auto l = param(req, "log_response");
      log = l == "true" || l == "1";
      if (auto t = csv::to_integer(param(req, "tolerance"))) tolerance = static_cast<int>(*t);
      if (auto w = csv::to_integer(param(req, "smooth"))) smooth = static_cast<int>(*w);
    }
    if (tolerance < 0 || tolerance > 1) throw HttpError(400, "tolerance", "tolerance must be 0 or 1", "tolerance");
    if (smooth < 0) throw HttpError(400, "window", "smoothing window must be >= 0", "smooth");

    std::lock_guard lk(s->mu);
    const auto &ix = lookup(s->indices, index_name, "index");
    ResponseSeries response;
    if (!response_name.empty()) {
      response = lookup(s->responses, response_name, "response");
      if (log) {
        if (response.transform == ResponseTransform::log)
          throw HttpError(400, "log_response", "response is already log-transformed", "log_response");
        for (std::size_t i = 0; i < response.values.size(); ++i) {
          if (!(response.values[i] > 0.0))
            fail_validation("log_response", "log transform needs positive responses (" +
                                                format_day(response.times[i]) + ")");
          response.values[i] = std::log(response.values[i]);
        }
        response.transform = ResponseTransform::log;
      }
    } else {
      response = parse_response(response_text, "upload", {}, {}, log);
    }
    const auto pairs = align(ix, response, tolerance);
    const auto assoc = associate(pairs);
    json scatter = json::array();
    for (std::size_t i = 0; i < pairs.x.size(); ++i)
      scatter.push_back(json{{"anchor", ix.resolution.format(pairs.times[i])}, {"x", pairs.x[i]}, {"y", pairs.y[i]}});
    json out{{"index", index_name}, {"association", ser::to_json(assoc)}, {"scatter", scatter}};
    if (smooth > 0) {
      const auto sm = moving_average(ix.values, smooth);
      json pts = json::array();
      for (std::size_t i = 0; i < ix.size(); ++i)
        pts.push_back(json{{"anchor", ix.resolution.format(ix.anchors[i])}, {"value", ix.values[i]}, {"smoothed", sm[i]}});
      out["smoothed"] = std::move(pts);
    }
    return out;
  }

  Config cfg_;
  mutable std::mutex mu_; // guards sessions_
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_{std::random_device{}()};
  WorkerPool pool_; // last member: joined before anything it touches is destroyed
};

} // namespace impit::service
