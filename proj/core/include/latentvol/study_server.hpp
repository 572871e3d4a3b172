#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "latentvol/study.hpp"

namespace httplib {
class Server;
}

namespace latentvol::study {

struct ServerOptions {
  /// Base directory for relative volume paths.
  std::filesystem::path data_root = ".";
  /// When set, every request must carry "Authorization: Bearer <token>".
  std::optional<std::string> token;
  /// Decoded volumes kept in memory.
  std::size_t volume_cache = 16;
};

/// The reader-study HTTP+JSON API under /v1:
///
///   POST /v1/studies                          create a study
///   GET  /v1/studies/{id}/next?reader=R       next volume for a reader
///   GET  /v1/volumes/{id}/meta                shape and depth
///   GET  /v1/volumes/{id}/slices/{k}.png      8-bit slice, ?window=lo,hi
///   POST /v1/ratings                          one record or {"ratings": [...]}
///   GET  /v1/studies/{id}/results             aggregate report
///   GET  /v1/studies/{id}/export.csv          one row per rating
///
/// Reader-facing payloads carry volume ids and geometry only.
class StudyService {
 public:
  StudyService(StudyStore& store, ServerOptions options);
  ~StudyService();

  /// Registers the routes on an httplib server owned by the caller.
  void mount(httplib::Server& server);

  /// Binds host:port (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on the bound socket until stop() is called from another thread.
  void serve();
  void stop();

  /// Loads (or returns the cached) volume behind a study volume id. Throws NotFoundError.
  std::shared_ptr<const Volume> volume(const std::string& volume_id);

 private:
  StudyStore& store_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex cache_mutex_;
  std::list<std::pair<std::string, std::shared_ptr<const Volume>>> cache_;
};

}  // namespace latentvol::study
