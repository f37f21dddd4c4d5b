#pragma once

// Batch front end: `impit episodes | index | calibrate | stats`.
//
// Exit codes: 0 success, 2 validation error (bad flags, missing files,
// invalid parameters), 1 runtime or domain error.

#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "impit/calibrate.hpp"
#include "impit/episodes.hpp"
#include "impit/index.hpp"
#include "impit/pipeline.hpp"
#include "impit/serialize.hpp"
#include "impit/stats.hpp"
#include "impit/timeline.hpp"

namespace impit::cli {

namespace fs = std::filesystem;

inline constexpr const char *help_m =
    "Memory: length of the look-back window, in grid steps of the signal, over which episodes count.";
inline constexpr const char *help_a =
    "Persistence dampening (>= 0). Controls how fast the weight of short episodes falls; 0 gives every "
    "episode the same weight whatever its duration.";
inline constexpr const char *help_b =
    "Recency dampening (>= 0). Sets how quickly the recency weight decays as an episode moves away from "
    "the peak position; small values flatten it.";
inline constexpr const char *help_c =
    "Recency skew in [0,1]. Places the recency peak at c*m steps back; values near 0 favour the most "
    "recent episodes, values near 1 the oldest.";
inline constexpr const char *help_d =
    "Timing dampening (>= 0). The timing weight grows with d and with the share of the episode inside the "
    "timing season.";

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Caps the requested parallelism by IMPIT_MAX_JOBS when set.
inline int effective_jobs(int requested) {
  int jobs = std::max(1, requested);
  if (const char *env = std::getenv("IMPIT_MAX_JOBS")) {
    if (auto cap = csv::to_integer(env); cap && *cap >= 1) jobs = std::min<int>(jobs, static_cast<int>(*cap));
  }
  return jobs;
}

struct SignalArgs {
  std::string path;
  std::string time_col;
  std::string value_col;
  std::string resolution;

  std::optional<Signal> load() const {
    if (path.empty()) return std::nullopt;
    std::optional<Resolution> res;
    if (!resolution.empty()) {
      res = Resolution::parse(resolution);
      if (!res) fail_validation("resolution", "unknown resolution '" + resolution + "'");
    }
    return ingest_signal(path, {time_col, value_col}, res);
  }
};

struct EpisodeArgs {
  std::string method = "threshold";
  std::optional<double> threshold;
  std::string direction = "up";
  int min_duration = 1;
  std::string season;
  std::string baseline;
  double percentile = 90.0;
  std::string episodes_file;

  std::optional<Season> parsed_season() const {
    if (season.empty()) return std::nullopt;
    auto s = Season::parse(season);
    if (!s) fail_validation("season", "season must be MM-DD:MM-DD, got '" + season + "'");
    return s;
  }

  EpisodeSet build(const std::optional<Signal> &signal, bool min_duration_given) const {
    EpisodeSpec spec;
    if (!episodes_file.empty() && method == "threshold" && !threshold) spec.method = EpisodeMethod::file;
    else {
      auto m = parse_episode_method(method);
      if (!m) fail_validation("method", "unknown episode method '" + method + "'");
      spec.method = *m;
    }
    spec.threshold = threshold;
    auto dir = parse_direction(direction);
    if (!dir) fail_validation("direction", "direction must be up or down");
    spec.direction = *dir;
    spec.min_duration = min_duration;
    if (min_duration_given) spec.climatology_min_duration = min_duration;
    spec.season = parsed_season();
    if (!baseline.empty()) {
      spec.baseline = parse_baseline(baseline);
      if (!spec.baseline) fail_validation("baseline", "baseline must be YYYY:YYYY");
    }
    spec.percentile = percentile;
    std::string text;
    if (spec.method == EpisodeMethod::file) {
      if (episodes_file.empty()) fail_validation("episodes", "method 'file' needs --episodes");
      text = csv::read_file(episodes_file);
    }
    return build_episodes(signal ? &*signal : nullptr, spec, text);
  }
};

inline void add_signal_options(CLI::App *sub, SignalArgs &s, bool required) {
  auto *opt = sub->add_option("--signal", s.path, "Signal CSV (header row; YYYY-MM or YYYY-MM-DD timestamps)")
                  ->check(CLI::ExistingFile);
  if (required) opt->required();
  sub->add_option("--time-col", s.time_col, "Timestamp column name (default: date)");
  sub->add_option("--value-col", s.value_col, "Value column name (default: value)");
  sub->add_option("--resolution", s.resolution, "daily | monthly | custom:N (default: from timestamp format)");
}

inline CLI::Option *add_episode_options(CLI::App *sub, EpisodeArgs &e) {
  sub->add_option("--method", e.method, "Episode definition: threshold | climatology | periodic | singletons | file")
      ->check(CLI::IsMember({"threshold", "climatology", "periodic", "singletons", "file"}));
  sub->add_option("--threshold", e.threshold, "Threshold delta for threshold-crossing episodes");
  sub->add_option("--direction", e.direction, "up (value >= delta) or down (value <= delta)")
      ->check(CLI::IsMember({"up", "down"}));
  auto *md = sub->add_option("--min-duration", e.min_duration, "Minimum episode duration in grid steps (>= 1)")
                 ->check(CLI::Range(1, std::numeric_limits<int>::max()));
  sub->add_option("--season", e.season, "Special season MM-DD:MM-DD (inclusive, may wrap the year)");
  sub->add_option("--baseline", e.baseline, "Climatology baseline years YYYY:YYYY");
  sub->add_option("--percentile", e.percentile, "Climatology percentile (default 90)")->check(CLI::Range(0.0, 100.0));
  sub->add_option("--episodes", e.episodes_file, "Episode CSV to load instead of extracting")->check(CLI::ExistingFile);
  return md;
}

/// Output bookkeeping: every artifact is hashed into manifest.json.
class Outputs {
public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) {}

  std::string path_for(const std::string &explicit_path, const std::string &default_name) const {
    return explicit_path.empty() ? (fs::path(dir_) / default_name).string() : explicit_path;
  }

  void write(const std::string &path, const std::string &content) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    csv::write_file(path, content);
    artifacts_.push_back(nlohmann::json{{"path", path}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
  }

  void finish(const std::string &command, const std::string &config_echo) {
    fs::create_directories(dir_);
    const auto cfg = (fs::path(dir_) / "run_config.toml").string();
    csv::write_file(cfg, config_echo);
    nlohmann::json manifest{{"schema_version", json::schema_version},
                            {"command", command},
                            {"config", cfg},
                            {"artifacts", artifacts_}};
    csv::write_file((fs::path(dir_) / "manifest.json").string(), manifest.dump(2) + "\n");
  }

private:
  std::string dir_;
  nlohmann::json artifacts_ = nlohmann::json::array();
};

/// TOML echo of the invoked subcommand with defaults expanded; unset
/// optional values are omitted so the echo parses back cleanly.
inline std::string config_echo(const CLI::App &app) {
  std::string out;
  for (const auto *sub : app.get_subcommands()) {
    out += "[" + sub->get_name() + "]\n";
    std::istringstream lines(sub->config_to_str(true, false));
    for (std::string line; std::getline(lines, line);) {
      if (line.empty() || line.ends_with("=\"\"") || line.ends_with("=[]")) continue;
      out += line + "\n";
    }
  }
  return out;
}

inline int exit_code_for(const Error &e) {
  switch (e.kind()) {
  case ErrorKind::validation:
  case ErrorKind::not_found:
  case ErrorKind::conflict: return 2;
  default: return 1;
  }
}

/// Runs the CLI; returns the process exit code.
inline int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Episode-based environmental indices: extraction, evaluation and stage-wise calibration"};
  app.name("impit");
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML run configuration; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->always_capture_default();

  std::string out_dir = ".";
  std::string out_file;
  int jobs = 1;

  // episodes
  SignalArgs ep_sig;
  EpisodeArgs ep_args;
  auto *episodes = app.add_subcommand("episodes", "Extract or load episodes and write the episode CSV");
  episodes->configurable();
  add_signal_options(episodes, ep_sig, false);
  auto *ep_min = add_episode_options(episodes, ep_args);
  episodes->add_option("--out", out_file, "Episode CSV path (default: <out-dir>/episodes.csv)");
  episodes->add_option("--out-dir", out_dir, "Directory for outputs, manifest and config echo");

  // index
  SignalArgs ix_sig;
  EpisodeArgs ix_args;
  WeightParams params;
  params.c = 0.5;
  std::string timing_season, kind = "mean", edge = "truncate", schedule = "annual:12", response_path;
  bool per_memory = false, explain = false;
  auto *index = app.add_subcommand("index", "Evaluate the index at a schedule of anchors");
  index->configurable();
  add_signal_options(index, ix_sig, false);
  auto *ix_min = add_episode_options(index, ix_args);
  index->add_option("--m", params.m, help_m)->required()->check(CLI::Range(1, 1 << 24));
  index->add_option("--a", params.a, help_a)->check(CLI::NonNegativeNumber);
  index->add_option("--b", params.b, help_b)->check(CLI::NonNegativeNumber);
  index->add_option("--c", params.c, help_c)->check(CLI::Range(0.0, 1.0));
  index->add_option("--d", params.d, help_d)->check(CLI::NonNegativeNumber);
  index->add_option("--timing-season", timing_season, "Enable the timing weight on this season (MM-DD:MM-DD)");
  index->add_option("--kind", kind, "Intensity: mean | log_sum | median | min | max | sum | precomputed");
  index->add_flag("--per-memory", per_memory, "Divide every intensity by m");
  index->add_option("--edge", edge, "Episodes cut by the window edge: truncate | drop")
      ->check(CLI::IsMember({"truncate", "drop"}));
  index->add_option("--schedule", schedule, "Anchors: annual[:MM] | all | response");
  index->add_option("--response", response_path, "Response CSV (for --schedule response)")->check(CLI::ExistingFile);
  index->add_flag("--explain", explain, "Also write per-episode diagnostics");
  index->add_option("--out", out_file, "Index CSV path (default: <out-dir>/index.csv)");
  index->add_option("--out-dir", out_dir, "Directory for outputs, manifest and config echo");

  // calibrate
  SignalArgs cal_sig;
  EpisodeArgs cal_args;
  std::string stage_text, m_list, a_grid, b_list, c_grid, d_list, cal_schedule = "response", cal_kind = "mean",
                                                                   select_rule = "none", rationale;
  std::string cal_response, resp_time_col, resp_value_col, cal_edge = "truncate";
  double fixed_a = 0.0;
  bool log_response = false, cal_per_memory = false;
  int radius = 1, tolerance = 0;
  auto *calibrate = app.add_subcommand("calibrate", "Sweep one calibration stage and write its correlation map");
  calibrate->configurable();
  add_signal_options(calibrate, cal_sig, false);
  auto *cal_min = add_episode_options(calibrate, cal_args);
  calibrate->add_option("--stage", stage_text, "Stage 1 (m x a), 2 (m x b x c) or 3 (m x b x c x d, needs --season)")
      ->required()
      ->check(CLI::IsMember({"1", "2", "3", "S1", "S2", "S3"}));
  calibrate->add_option("--m-list", m_list, std::string("Memory values (list or lo:hi:step). ") + help_m)->required();
  calibrate->add_option("--a-grid", a_grid, std::string("Stage 1 a grid (default 0:5:0.25). ") + help_a);
  calibrate->add_option("--a", fixed_a, "a chosen at stage 1 (stages 2 and 3)")->check(CLI::NonNegativeNumber);
  calibrate->add_option("--b-list", b_list, std::string("b values (default 0.5:5:0.5). ") + help_b);
  calibrate->add_option("--c-grid", c_grid, std::string("c grid (default 0:1:0.05). ") + help_c);
  calibrate->add_option("--d-list", d_list, std::string("d values (default 0.5,1,2,3). ") + help_d);
  calibrate->add_option("--response", cal_response, "Response CSV")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--response-time-col", resp_time_col, "Response timestamp column");
  calibrate->add_option("--response-value-col", resp_value_col, "Response value column");
  calibrate->add_flag("--log-response", log_response, "Natural-log transform the response before pairing");
  calibrate->add_option("--kind", cal_kind, "Intensity kind");
  calibrate->add_flag("--per-memory", cal_per_memory, "Divide every intensity by m");
  calibrate->add_option("--edge", cal_edge, "truncate | drop")->check(CLI::IsMember({"truncate", "drop"}));
  calibrate->add_option("--schedule", cal_schedule, "Anchors: response (default) | annual[:MM] | all");
  calibrate->add_option("--tolerance", tolerance, "Pair anchors with responses up to this many grid steps away (0|1)")
      ->check(CLI::Range(0, 1));
  calibrate->add_option("--jobs", jobs, "Worker threads (capped by IMPIT_MAX_JOBS)")->check(CLI::PositiveNumber);
  calibrate->add_option("--select", select_rule, "Write a selection: none | max_abs_r")
      ->check(CLI::IsMember({"none", "max_abs_r"}));
  calibrate->add_option("--stability-radius", radius, "Neighbourhood radius of the stability screen")
      ->check(CLI::NonNegativeNumber);
  calibrate->add_option("--rationale", rationale, "Free-text rationale stored with the selection");
  calibrate->add_option("--out", out_file, "Map CSV path (default: <out-dir>/map_s<stage>.csv)");
  calibrate->add_option("--out-dir", out_dir, "Directory for outputs, manifest and config echo");

  // stats
  std::string st_index, st_response;
  bool st_log = false;
  int smooth = 0, st_tol = 0;
  auto *stats = app.add_subcommand("stats", "Correlate an index CSV with a response series");
  stats->configurable();
  stats->add_option("--index", st_index, "Index CSV (anchor,value,K)")->required()->check(CLI::ExistingFile);
  stats->add_option("--response", st_response, "Response CSV")->required()->check(CLI::ExistingFile);
  stats->add_option("--response-time-col", resp_time_col, "Response timestamp column");
  stats->add_option("--response-value-col", resp_value_col, "Response value column");
  stats->add_flag("--log-response", st_log, "Natural-log transform the response before pairing");
  stats->add_option("--tolerance", st_tol, "Pairing tolerance in grid steps (0|1)")->check(CLI::Range(0, 1));
  stats->add_option("--smooth", smooth, "Also write a centred moving average of the index (odd window)")
      ->check(CLI::NonNegativeNumber);
  stats->add_option("--out", out_file, "Association JSON path (default: <out-dir>/association.json)");
  stats->add_option("--out-dir", out_dir, "Directory for outputs, manifest and config echo");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    Outputs outputs(out_dir);
    const auto echo = config_echo(app);

    if (*episodes) {
      const auto signal = ep_sig.load();
      const auto set = ep_args.build(signal, ep_min->count() > 0);
      outputs.write(outputs.path_for(out_file, "episodes.csv"), episodes_to_csv(set));
      outputs.finish("episodes", echo);
      out << set.size() << " episodes\n";
      return 0;
    }

    if (*index) {
      const auto signal = ix_sig.load();
      const auto set = ix_args.build(signal, ix_min->count() > 0);
      auto k = parse_intensity_kind(kind);
      if (!k) fail_validation("kind", "unknown intensity kind '" + kind + "'");
      IndexOptions opt;
      opt.per_memory = per_memory;
      opt.edge = edge == "drop" ? EdgePolicy::drop : EdgePolicy::truncate;
      if (!timing_season.empty()) {
        opt.timing_season = Season::parse(timing_season);
        if (!opt.timing_season) fail_validation("timing_season", "season must be MM-DD:MM-DD");
        params.timing_enabled = true;
      }
      std::optional<ResponseSeries> response;
      if (!response_path.empty()) response = load_response(response_path, {resp_time_col, resp_value_col});
      const auto sched = build_schedule(schedule, set, response ? &*response : nullptr);
      const auto ix = evaluate(set, params, *k, sched, opt);
      for (const auto &w : ix.warnings) err << "warning: " << w << "\n";
      const auto path = outputs.path_for(out_file, "index.csv");
      outputs.write(path, index_to_csv(ix));
      if (explain) {
        auto diag = fs::path(path);
        diag.replace_filename(diag.stem().string() + "_diagnostics.csv");
        outputs.write(diag.string(), diagnostics_to_csv(ix));
      }
      outputs.finish("index", echo);
      out << ix.size() << " anchors\n";
      return 0;
    }

    if (*calibrate) {
      const auto signal = cal_sig.load();
      const auto set = cal_args.build(signal, cal_min->count() > 0);
      auto k = parse_intensity_kind(cal_kind);
      if (!k) fail_validation("kind", "unknown intensity kind '" + cal_kind + "'");
      StageSpec spec;
      spec.stage = *parse_stage(stage_text);
      spec.m_list = parse_int_list(m_list);
      if (!a_grid.empty()) spec.a_grid = parse_grid(a_grid);
      spec.a = fixed_a;
      if (!b_list.empty()) spec.b_list = parse_grid(b_list);
      if (!c_grid.empty()) spec.c_grid = parse_grid(c_grid);
      if (!d_list.empty()) spec.d_list = parse_grid(d_list);
      spec.season = cal_args.parsed_season();
      if (spec.stage == Stage::S3 && !spec.season) fail_validation("season", "stage 3 requires --season");
      spec.index_options.per_memory = cal_per_memory;
      spec.index_options.edge = cal_edge == "drop" ? EdgePolicy::drop : EdgePolicy::truncate;
      const auto response = load_response(cal_response, {resp_time_col, resp_value_col},
                                          log_response ? ResponseTransform::log : ResponseTransform::none);
      const auto sched = build_schedule(cal_schedule, set, &response);
      CalibrationOptions copt;
      copt.jobs = effective_jobs(jobs);
      copt.tolerance_steps = tolerance;
      auto map = run_stage(spec, set, *k, sched, response, copt);
      const std::string tag = std::to_string(static_cast<int>(spec.stage));
      outputs.write(outputs.path_for(out_file, "map_s" + tag + ".csv"), map_to_csv(map));
      std::size_t defined = 0;
      for (const auto &r : map.records) defined += r.defined() ? 1 : 0;
      out << map.cells() << " cells (" << defined << " defined)\n";
      if (select_rule == "max_abs_r") {
        auto sel = select_max_abs_r(map, radius);
        sel.rationale = rationale;
        if (sel.fallback) err << "warning: no cell passed the stability screen; using the unconstrained maximum\n";
        outputs.write((fs::path(out_dir) / ("selection_s" + tag + ".json")).string(), json::to_json(sel).dump(2) + "\n");
        out << "selected m=" << sel.m << " a=" << sel.a;
        if (sel.b) out << " b=" << *sel.b;
        if (sel.c) out << " c=" << *sel.c;
        if (sel.d) out << " d=" << *sel.d;
        out << " r=" << sel.r.value_or(0.0) << "\n";
      }
      outputs.finish("calibrate", echo);
      return 0;
    }

    if (*stats) {
      const auto table = csv::parse(csv::read_file(st_index));
      bool months = false;
      auto rows = parse_observations(table, {"anchor", "value"}, &months);
      std::vector<Date> anchors;
      std::vector<double> values;
      for (auto &[d, v] : rows) {
        anchors.push_back(d);
        values.push_back(v);
      }
      const auto res = months ? Resolution::monthly() : Resolution::daily();
      const auto response = load_response(st_response, {resp_time_col, resp_value_col},
                                          st_log ? ResponseTransform::log : ResponseTransform::none);
      const auto pairs = align_series(anchors, values, response, res, st_tol);
      const auto assoc = associate(pairs);
      auto report = json::to_json(assoc);
      outputs.write(outputs.path_for(out_file, "association.json"), report.dump(2) + "\n");
      if (smooth > 0) {
        const auto sm = moving_average(values, smooth);
        std::string text = "anchor,value,smoothed\n";
        for (std::size_t i = 0; i < values.size(); ++i)
          text += res.format(anchors[i]) + "," + csv::format(values[i]) + "," + csv::format(sm[i]) + "\n";
        outputs.write((fs::path(out_dir) / "index_smoothed.csv").string(), text);
      }
      outputs.finish("stats", echo);
      out << report.dump() << "\n";
      return 0;
    }
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

} // namespace impit::cli
