#include <gtest/gtest.h>

#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "latentvol/study_server.hpp"
#include "latentvol/volume_io.hpp"
#include "test_support.hpp"

using namespace latentvol;
using namespace latentvol::study;
using latentvol::fixtures::TempDir;
using nlohmann::json;

namespace {

class StudyServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int i = 0; i < 3; ++i) {
      save_volume(fixtures::phantom(static_cast<std::uint64_t>(i), {16, 12, 4}), dir_ / ("v" + std::to_string(i)));
    }
    store_ = std::make_unique<StudyStore>(dir_ / "study.db");
    ServerOptions o;
    o.data_root = dir_.path();
    o.token = "secret";
    service_ = std::make_unique<StudyService>(*store_, o);
    port_ = service_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { service_->serve(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_bearer_token_auth("secret");
    client_->set_connection_timeout(5);

    json body{{"id", "s1"}, {"seed", 11}, {"readers", {"r1", "r2"}}, {"volumes", json::array()}};
    for (int i = 0; i < 3; ++i) {
      body["volumes"].push_back({{"id", "vol-" + std::to_string(i)},
                                 {"dataset", i == 2 ? "brain" : "knee"},
                                 {"path", "v" + std::to_string(i) + ".f32raw"}});
    }
    const auto res = client_->Post("/v1/studies", body.dump(), "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 201) << res->body;
  }

  void TearDown() override {
    service_->stop();
    if (thread_.joinable()) thread_.join();
  }

  json get_json(const std::string& path, int expect = 200) {
    const auto res = client_->Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << ": " << res->body;
    return json::parse(res->body);
  }

  httplib::Result rate(const std::string& reader, const std::string& volume, const std::string& category,
                       const std::string& option) {
    const json r{{"study_id", "s1"}, {"reader_id", reader}, {"volume_id", volume}, {"category", category},
                 {"option", option}};
    return client_->Post("/v1/ratings", r.dump(), "application/json");
  }

  TempDir dir_{"study-server"};
  std::unique_ptr<StudyStore> store_;
  std::unique_ptr<StudyService> service_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(StudyServerTest, RequiresBearerToken) {
  httplib::Client anon("127.0.0.1", port_);
  const auto res = anon.Get("/v1/studies/s1/next?reader=r1");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
  httplib::Client wrong("127.0.0.1", port_);
  wrong.set_bearer_token_auth("guess");
  EXPECT_EQ(wrong.Get("/v1/volumes/vol-0/meta")->status, 401);
}

TEST_F(StudyServerTest, NextAndMetaCarryNoProvenance) {
  const auto next = get_json("/v1/studies/s1/next?reader=r1");
  const auto order = store_->get_study("s1").order.at("r1");
  EXPECT_EQ(next["volume"]["id"], order.front());
  EXPECT_EQ(next["total"], 3);
  EXPECT_EQ(next["done"], false);
  ASSERT_EQ(next["categories"].size(), 3u);
  EXPECT_EQ(next["categories"][0]["options"][3]["label"], "Can’t tell whether fake or not");
  const auto meta = get_json("/v1/volumes/vol-1/meta");
  EXPECT_EQ(meta["depth"], 4);
  EXPECT_EQ(meta["shape"], json({16, 12, 4}));
  for (const auto& payload : {next.dump(), meta.dump()}) {
    EXPECT_EQ(payload.find("knee"), std::string::npos);
    EXPECT_EQ(payload.find("brain"), std::string::npos);
    EXPECT_EQ(payload.find(".f32raw"), std::string::npos);
    EXPECT_EQ(payload.find("dataset"), std::string::npos);
  }
  get_json("/v1/studies/s1/next?reader=nobody", 404);
  get_json("/v1/studies/s1/next", 400);
}

TEST_F(StudyServerTest, SlicesAreStablePngsWithinRange) {
  const auto a = client_->Get("/v1/volumes/vol-0/slices/2.png");
  const auto b = client_->Get("/v1/volumes/vol-0/slices/2.png");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(a->body, b->body);
  EXPECT_EQ(a->body, slice_png(fixtures::phantom(0, {16, 12, 4}), 2));
  const auto windowed = client_->Get("/v1/volumes/vol-0/slices/2.png?window=-0.5,0.5");
  EXPECT_EQ(windowed->body, slice_png(fixtures::phantom(0, {16, 12, 4}), 2, -0.5, 0.5));
  EXPECT_EQ(client_->Get("/v1/volumes/vol-0/slices/4.png")->status, 404);
  EXPECT_EQ(client_->Get("/v1/volumes/vol-0/slices/-1.png")->status, 404);
  EXPECT_EQ(client_->Get("/v1/volumes/vol-9/slices/0.png")->status, 404);
  EXPECT_EQ(client_->Get("/v1/volumes/vol-0/slices/0.png?window=1,0")->status, 400);
}

TEST_F(StudyServerTest, RatingsUpsertAndValidate) {
  auto res = rate("r1", "vol-0", "realistic_appearance", "B");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["status"], "inserted");
  res = rate("r1", "vol-0", "realistic_appearance", "C");
  EXPECT_EQ(json::parse(res->body)["status"], "replaced");
  EXPECT_EQ(json::parse(res->body)["count"], 1);
  EXPECT_EQ(rate("r1", "vol-0", "realistic_appearance", "E")->status, 400);
  EXPECT_EQ(rate("r1", "vol-0", "sharpness", "A")->status, 400);
  EXPECT_EQ(rate("r9", "vol-0", "realistic_appearance", "A")->status, 404);
  EXPECT_EQ(client_->Post("/v1/ratings", "{not json", "application/json")->status, 400);
  EXPECT_EQ(store_->count("s1"), 1);
  EXPECT_EQ(store_->ratings("s1")[0].option, "C");
}

TEST_F(StudyServerTest, BatchSubmissionAdvancesNext) {
  const auto first = get_json("/v1/studies/s1/next?reader=r2")["volume"]["id"].get<std::string>();
  json batch{{"ratings", json::array()}};
  for (const char* c : {"realistic_appearance", "slice_consistency", "anatomical_correctness"}) {
    batch["ratings"].push_back(
        {{"study_id", "s1"}, {"reader_id", "r2"}, {"volume_id", first}, {"category", c}, {"option", "D"}});
  }
  const auto res = client_->Post("/v1/ratings", batch.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["status"], json({"inserted", "inserted", "inserted"}));
  const auto next = get_json("/v1/studies/s1/next?reader=r2");
  EXPECT_EQ(next["completed"], 1);
  EXPECT_NE(next["volume"]["id"], first);
}

TEST_F(StudyServerTest, ResultsAndExport) {
  rate("r1", "vol-0", "realistic_appearance", "C");
  rate("r2", "vol-0", "realistic_appearance", "A");
  rate("r1", "vol-2", "slice_consistency", "D");
  const auto results = get_json("/v1/studies/s1/results");
  EXPECT_EQ(results["total"], 3);
  EXPECT_EQ(results["counts"]["knee"]["realistic_appearance"]["C"], 1);
  EXPECT_EQ(results["counts"]["knee"]["realistic_appearance"]["A"], 1);
  EXPECT_EQ(results["counts"]["brain"]["slice_consistency"]["D"], 1);
  EXPECT_EQ(results["threshold"]["by_category"]["realistic_appearance"], 1);
  const auto csv = client_->Get("/v1/studies/s1/export.csv");
  ASSERT_TRUE(csv);
  EXPECT_EQ(csv->status, 200);
  EXPECT_EQ(csv->body, store_->export_csv("s1"));
  EXPECT_EQ(std::count(csv->body.begin(), csv->body.end(), '\n'), 4);
  get_json("/v1/studies/nope/results", 404);
}

TEST_F(StudyServerTest, DuplicateStudyConflicts) {
  const json body{{"id", "s1"}, {"readers", {"r"}}, {"volumes", {{{"id", "vol-x"}, {"path", "v0.f32raw"}}}}};
  const auto res = client_->Post("/v1/studies", body.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 409);
}
