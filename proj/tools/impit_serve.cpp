// impit-serve: runs the HTTP JSON service until interrupted.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "impit_service.hpp"

namespace {
httplib::Server *g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
} // namespace

int main(int argc, char **argv) {
  CLI::App app{"HTTP JSON service for episode extraction, index evaluation and calibration"};
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  long ttl = 3600;
  impit::service::Config cfg;
  app.add_option("--host", host, "Listen address")->envname("IMPIT_HOST")->capture_default_str();
  app.add_option("--port", port, "Listen port (0 picks a free one)")
      ->envname("IMPIT_PORT")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  app.add_option("--ttl", ttl, "Seconds an idle session survives")
      ->envname("IMPIT_SESSION_TTL")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--workers", cfg.workers, "Calibration jobs that may run at once")
      ->envname("IMPIT_WORKERS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--jobs", cfg.jobs_per_calibration, "Threads available to one calibration job")
      ->envname("IMPIT_JOBS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--max-upload", cfg.max_upload, "Largest accepted request body in bytes")
      ->envname("IMPIT_MAX_UPLOAD")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--persist-dir", cfg.persist_dir, "Also write session artifacts under this directory")
      ->envname("IMPIT_PERSIST_DIR");
  app.add_option("--static", static_dir, "Serve a directory of static files at /")
      ->envname("IMPIT_STATIC_DIR")
      ->check(CLI::ExistingDirectory);
  CLI11_PARSE(app, argc, argv);
  cfg.ttl = std::chrono::seconds(ttl);

  impit::service::Service service(cfg);
  httplib::Server server;
  service.mount(server);
  if (!static_dir.empty()) server.set_mount_point("/", static_dir);

  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  server.listen_after_bind();
  return 0;
}
