#include <csignal>
#include <fstream>

#include "common.hpp"
#include "latentvol/config.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/manifest.hpp"
#include "latentvol/study.hpp"
#include "latentvol/study_server.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::cli {
namespace {

study::StudyService* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

// Opaque per-study id so served payloads reveal nothing about the file's origin.
std::string blinded_id(const std::string& study_id, const std::string& path) {
  return "v" + pipeline::sha256_hex(study_id + '\n' + path).substr(0, 16);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

void register_study(CLI::App& app) {
  auto* st = app.add_subcommand("study", "Reader study service");
  st->require_subcommand(1);

  {
    struct Args {
      std::filesystem::path db = "study.sqlite";
      std::filesystem::path data_root = ".";
      std::string host = "127.0.0.1";
      int port = 8080;
      std::optional<std::string> token;
    };
    auto a = std::make_shared<Args>();
    auto* cmd = st->add_subcommand("serve", "Serve the /v1 HTTP API");
    cmd->add_option("--db", a->db, "SQLite store")->capture_default_str();
    cmd->add_option("--data-root", a->data_root, "Base directory for relative volume paths")->capture_default_str();
    cmd->add_option("--host", a->host)->capture_default_str();
    cmd->add_option("--port", a->port, "0 picks a free port")->capture_default_str();
    cmd->add_option("--token", a->token, "Shared reader bearer token")->envname("LATENTVOL_STUDY_TOKEN");
    cmd->callback([a] {
      study::StudyStore store(a->db);
      study::StudyService service(store, {a->data_root, a->token, 16});
      const int port = service.bind(a->host, a->port);
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      log_line("listening on http://" + a->host + ":" + std::to_string(port) + "/v1");
      service.serve();
      g_service = nullptr;
    });
  }
  {
    struct Args {
      std::filesystem::path db = "study.sqlite";
      std::string id;
      std::string readers;
      std::uint64_t seed = 0;
      std::vector<std::filesystem::path> dirs;
      std::optional<std::filesystem::path> manifest;
      std::string dataset = "default";
    };
    auto a = std::make_shared<Args>();
    auto* cmd = st->add_subcommand("create", "Create a study from volume directories or a manifest");
    cmd->add_option("--db", a->db, "SQLite store")->capture_default_str();
    cmd->add_option("--id", a->id, "Study id")->required();
    cmd->add_option("--readers", a->readers, "Comma-separated reader ids")->required();
    cmd->add_option("--seed", a->seed, "Presentation order seed")->capture_default_str();
    cmd->add_option("--volumes-dir", a->dirs, "Directory of volumes; dataset tag is the directory name")
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--manifest", a->manifest, "Manifest; dataset tag is the split")->check(CLI::ExistingFile);
    cmd->callback([a] {
      std::vector<study::StudyVolume> volumes;
      for (const auto& dir : a->dirs) {
        const auto tag = std::filesystem::absolute(dir).lexically_normal().filename().string();
        for (const auto& f : list_volumes(dir)) {
          const auto path = std::filesystem::absolute(f).string();
          volumes.push_back({blinded_id(a->id, path), tag, path});
        }
      }
      if (a->manifest) {
        const auto m = DatasetManifest::load(*a->manifest);
        for (const auto& r : m.records()) {
          const auto p = std::filesystem::absolute(m.resolve(r.path));
          volumes.push_back({blinded_id(a->id, p.string()), r.split, p.string()});
        }
      }
      if (volumes.empty()) throw ConfigError("no volumes: pass --volumes-dir or --manifest");
      study::StudyStore store(a->db);
      const auto def = study::make_study(a->id, volumes, split_list(a->readers), a->seed);
      store.create_study(def);
      print_json({{"id", def.id}, {"readers", def.readers}, {"volumes", def.volumes.size()}});
    });
  }
  {
    struct Args {
      std::filesystem::path db = "study.sqlite";
      std::string id;
      std::optional<std::filesystem::path> csv;
    };
    auto a = std::make_shared<Args>();
    auto* cmd = st->add_subcommand("export", "Print the aggregate report and optionally write the ratings CSV");
    cmd->add_option("--db", a->db, "SQLite store")->capture_default_str()->check(CLI::ExistingFile);
    cmd->add_option("--id", a->id, "Study id")->required();
    cmd->add_option("--csv", a->csv, "Ratings CSV output");
    cmd->callback([a] {
      study::StudyStore store(a->db);
      const auto report = study::to_json(store.aggregate(a->id));
      if (a->csv) {
        std::ofstream out(*a->csv, std::ios::binary);
        if (!out) throw IoError("cannot write " + a->csv->string());
        out << store.export_csv(a->id);
      }
      print_json(report);
    });
  }
}

}  // namespace latentvol::cli
