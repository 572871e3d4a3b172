#include "latentvol/study_server.hpp"

#include <charconv>

#include "httplib.h"
#include "latentvol/errors.hpp"
#include "latentvol/volume_io.hpp"

namespace latentvol::study {
namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValueError(std::string("malformed JSON body: ") + e.what());
  }
}

RatingRecord rating_from(const json& j) {
  RatingRecord r;
  r.study_id = j.at("study_id").get<std::string>();
  r.reader_id = j.at("reader_id").get<std::string>();
  r.volume_id = j.at("volume_id").get<std::string>();
  r.category = j.at("category").get<std::string>();
  r.option = j.at("option").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  return r;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValueError("not a number: '" + std::string(s) + "'");
  return v;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValueError("not an integer: '" + std::string(s) + "'");
  return v;
}

json volume_meta(const std::string& id, const Volume& v) {
  const auto s = v.shape();
  return {{"id", id}, {"shape", {s.h, s.w, s.d}}, {"depth", s.d}};
}

}  // namespace

StudyService::StudyService(StudyStore& store, ServerOptions options)
    : store_(store), options_(std::move(options)) {}

StudyService::~StudyService() { stop(); }

std::shared_ptr<const Volume> StudyService::volume(const std::string& volume_id) {
  {
    std::lock_guard lock(cache_mutex_);
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == volume_id) {
        cache_.splice(cache_.begin(), cache_, it);
        return it->second;
      }
    }
  }
  const auto rec = store_.find_volume(volume_id);
  if (!rec) throw NotFoundError("unknown volume '" + volume_id + "'");
  std::filesystem::path p(rec->path);
  if (p.is_relative()) p = options_.data_root / p;
  auto v = std::make_shared<const Volume>(load_volume(p));
  std::lock_guard lock(cache_mutex_);
  cache_.emplace_front(volume_id, v);
  while (cache_.size() > std::max<std::size_t>(options_.volume_cache, 1)) cache_.pop_back();
  return v;
}

void StudyService::mount(httplib::Server& server) {
  server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (!options_.token) return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") == "Bearer " + *options_.token) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send_error(res, 401, "missing or invalid bearer token");
    return httplib::Server::HandlerResponse::Handled;
  });

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const ValueError& e) {
      send_error(res, 400, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("invalid request: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  server.Post("/v1/studies", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::vector<StudyVolume> volumes;
    for (const auto& v : body.at("volumes")) {
      volumes.push_back({v.at("id").get<std::string>(), v.value("dataset", "default"), v.at("path").get<std::string>()});
    }
    auto labels = body.contains("labels") ? std::vector<CategoryLabels>{} : default_labels();
    if (body.contains("labels")) {
      for (const auto& l : body.at("labels")) {
        labels.push_back({l.at("category").get<std::string>(), l.at("title").get<std::string>(),
                          l.at("options").get<std::array<std::string, 4>>()});
      }
    }
    const auto def = make_study(body.at("id").get<std::string>(), std::move(volumes),
                                body.at("readers").get<std::vector<std::string>>(),
                                body.value("seed", std::uint64_t{0}), std::move(labels));
    store_.create_study(def);
    send_json(res, 201, {{"id", def.id}, {"readers", def.readers}, {"volumes", def.volumes.size()}});
  });

  server.Get(R"(/v1/studies/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto study_id = req.matches[1].str();
    if (!req.has_param("reader")) throw ValueError("query parameter 'reader' is required");
    const auto reader = req.get_param_value("reader");
    const auto def = store_.get_study(study_id);
    const auto p = store_.next_for(study_id, reader);
    json categories = json::array();
    for (const auto& l : def.labels) {
      json options = json::array();
      for (std::size_t i = 0; i < l.options.size(); ++i) {
        options.push_back({{"option", std::string(1, kOptions[i])}, {"label", l.options[i]}});
      }
      categories.push_back({{"category", l.category}, {"title", l.title}, {"options", options}});
    }
    json body{{"study_id", study_id},      {"reader", reader},         {"done", !p.next_volume},
              {"completed", p.completed}, {"total", p.total},         {"categories", categories},
              {"volume", nullptr}};
    if (p.next_volume) body["volume"] = volume_meta(*p.next_volume, *volume(*p.next_volume));
    send_json(res, 200, body);
  });

  server.Get(R"(/v1/volumes/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    send_json(res, 200, volume_meta(id, *volume(id)));
  });

  server.Get(R"(/v1/volumes/([^/]+)/slices/(-?[0-9]+)\.png)",
             [this](const httplib::Request& req, httplib::Response& res) {
               const auto id = req.matches[1].str();
               const auto k = parse_int(req.matches[2].str());
               double lo = -1.0, hi = 1.0;
               if (req.has_param("window")) {
                 const auto w = req.get_param_value("window");
                 const auto comma = w.find(',');
                 if (comma == std::string::npos) throw ValueError("window must be 'lo,hi'");
                 lo = parse_double(std::string_view(w).substr(0, comma));
                 hi = parse_double(std::string_view(w).substr(comma + 1));
               }
               const auto v = volume(id);
               if (k < 0 || k >= v->shape().d) {
                 send_error(res, 404, "slice " + std::to_string(k) + " out of range");
                 return;
               }
               res.status = 200;
               res.set_content(slice_png(*v, k, lo, hi), "image/png");
             });

  server.Post("/v1/ratings", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::vector<RatingRecord> records;
    if (body.is_object() && body.contains("ratings")) {
      for (const auto& r : body.at("ratings")) records.push_back(rating_from(r));
    } else {
      records.push_back(rating_from(body));
    }
    if (records.empty()) throw ValueError("no ratings submitted");
    const auto results = store_.submit_all(records);
    json statuses = json::array();
    for (auto r : results) statuses.push_back(r == UpsertResult::Inserted ? "inserted" : "replaced");
    send_json(res, 200, {{"status", statuses.size() == 1 ? statuses[0] : json(statuses)},
                         {"count", store_.count(records.front().study_id)}});
  });

  server.Get(R"(/v1/studies/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, to_json(store_.aggregate(req.matches[1].str())));
  });

  server.Get(R"(/v1/studies/([^/]+)/export\.csv)", [this](const httplib::Request& req, httplib::Response& res) {
    res.status = 200;
    res.set_content(store_.export_csv(req.matches[1].str()), "text/csv");
  });
}

int StudyService::bind(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void StudyService::serve() {
  if (!server_) throw Error("serve() called before bind()");
  server_->listen_after_bind();
}

void StudyService::stop() {
  if (server_) server_->stop();
}

}  // namespace latentvol::study
