#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <set>

#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"
#include "latentvol/study.hpp"
#include "test_support.hpp"

using namespace latentvol;
using namespace latentvol::study;
using latentvol::fixtures::TempDir;

namespace {

std::vector<StudyVolume> study_volumes(int n) {
  std::vector<StudyVolume> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({"vol-" + std::to_string(i), i % 2 == 0 ? "knee" : "brain", "v" + std::to_string(i) + ".lvvol"});
  }
  return out;
}

RatingRecord rating(const std::string& reader, const std::string& volume, std::string_view category,
                    const std::string& option) {
  return {"s1", reader, volume, std::string(category), option, ""};
}

std::vector<std::uint8_t> decode_png(const std::string& bytes, png_uint_32& w, png_uint_32& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) return {};
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) return {};
  w = img.width;
  h = img.height;
  return px;
}

}  // namespace

TEST(Study, LabelsCoverThreeCategoriesOfFourOptions) {
  const auto labels = default_labels();
  ASSERT_EQ(labels.size(), 3u);
  EXPECT_EQ(labels[0].options[3], "Can’t tell whether fake or not");
  EXPECT_EQ(labels[1].options[2], "Majority of slices (>10) is consistent");
  EXPECT_EQ(labels[2].options[0], "Anatomical region not recognizable");
  EXPECT_EQ(option_index("A"), 0);
  EXPECT_EQ(option_index("D"), 3);
  EXPECT_THROW(option_index("E"), ValueError);
  EXPECT_THROW(option_index("AB"), ValueError);
}

TEST(Study, ReaderOrdersArePermutationsAndReproducible) {
  const auto a = make_study("s1", study_volumes(12), {"r1", "r2", "r3"}, 42);
  const auto b = make_study("s1", study_volumes(12), {"r1", "r2", "r3"}, 42);
  const auto c = make_study("s1", study_volumes(12), {"r1", "r2", "r3"}, 43);
  std::set<std::string> ids;
  for (const auto& v : a.volumes) ids.insert(v.volume_id);
  for (const auto& [reader, order] : a.order) {
    EXPECT_EQ(std::set<std::string>(order.begin(), order.end()), ids) << reader;
    EXPECT_EQ(order.size(), 12u);
  }
  EXPECT_EQ(a.order, b.order);
  EXPECT_NE(a.order, c.order);
  EXPECT_NE(a.order.at("r1"), a.order.at("r2"));
  // A reader's order does not depend on who else is in the study.
  EXPECT_EQ(make_study("s1", study_volumes(12), {"r2"}, 42).order.at("r2"), a.order.at("r2"));
}

TEST(Study, DefinitionValidation) {
  EXPECT_THROW(make_study("s", {}, {"r"}, 0), ValueError);
  EXPECT_THROW(make_study("s", study_volumes(2), {}, 0), ValueError);
  EXPECT_THROW(make_study("s", study_volumes(2), {"r", "r"}, 0), ValueError);
  auto dup = study_volumes(2);
  dup[1].volume_id = dup[0].volume_id;
  EXPECT_THROW(make_study("s", dup, {"r"}, 0), ValueError);
  auto labels = default_labels();
  std::swap(labels[0], labels[1]);
  EXPECT_THROW(make_study("s", study_volumes(2), {"r"}, 0, labels), ValueError);
}

TEST(StudyStore, UpsertReplacesWithinKey) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  store.create_study(make_study("s1", study_volumes(3), {"r1"}, 1));
  EXPECT_EQ(store.submit(rating("r1", "vol-0", kCategories[0], "B")), UpsertResult::Inserted);
  EXPECT_EQ(store.submit(rating("r1", "vol-0", kCategories[0], "D")), UpsertResult::Replaced);
  EXPECT_EQ(store.count("s1"), 1);
  const auto all = store.ratings("s1");
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].option, "D");
  EXPECT_FALSE(all[0].timestamp.empty());
  EXPECT_EQ(store.submit(rating("r1", "vol-0", kCategories[1], "D")), UpsertResult::Inserted);
  EXPECT_EQ(store.count("s1"), 2);
}

TEST(StudyStore, RejectsInvalidAndUnknownReferences) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  store.create_study(make_study("s1", study_volumes(2), {"r1"}, 1));
  EXPECT_THROW(store.submit(rating("r1", "vol-0", kCategories[0], "E")), ValueError);
  EXPECT_THROW(store.submit(rating("r1", "vol-0", "sharpness", "A")), ValueError);
  EXPECT_THROW(store.submit(rating("nobody", "vol-0", kCategories[0], "A")), NotFoundError);
  EXPECT_THROW(store.submit(rating("r1", "vol-9", kCategories[0], "A")), NotFoundError);
  auto bad_study = rating("r1", "vol-0", kCategories[0], "A");
  bad_study.study_id = "s2";
  EXPECT_THROW(store.submit(bad_study), NotFoundError);
  // A failing batch leaves nothing behind.
  EXPECT_THROW(store.submit_all({rating("r1", "vol-0", kCategories[0], "A"), rating("r1", "vol-7", kCategories[0], "A")}),
               NotFoundError);
  EXPECT_EQ(store.count("s1"), 0);
  EXPECT_THROW(store.create_study(make_study("s1", study_volumes(1), {"r9"}, 0)), ConflictError);
  EXPECT_THROW(store.get_study("missing"), NotFoundError);
  EXPECT_THROW(store.aggregate("missing"), NotFoundError);
}

TEST(StudyStore, DefinitionSurvivesReopen) {
  TempDir dir("study");
  const auto def = make_study("s1", study_volumes(4), {"r1", "r2"}, 9);
  {
    StudyStore store(dir / "study.db");
    store.create_study(def);
    store.submit(rating("r2", "vol-3", kCategories[2], "C"));
  }
  StudyStore store(dir / "study.db");
  const auto back = store.get_study("s1");
  EXPECT_EQ(back.order, def.order);
  EXPECT_EQ(back.readers, def.readers);
  EXPECT_EQ(back.labels[0].options, def.labels[0].options);
  EXPECT_EQ(store.count("s1"), 1);
  EXPECT_EQ(store.find_volume("vol-1")->dataset, "brain");
}

TEST(StudyStore, NextFollowsReaderOrderUntilDone) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  const auto def = make_study("s1", study_volumes(3), {"r1"}, 5);
  store.create_study(def);
  const auto& order = def.order.at("r1");
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto p = store.next_for("s1", "r1");
    ASSERT_TRUE(p.next_volume);
    EXPECT_EQ(*p.next_volume, order[i]);
    EXPECT_EQ(p.completed, static_cast<std::int64_t>(i));
    for (const auto& c : kCategories) store.submit(rating("r1", order[i], c, "A"));
  }
  const auto done = store.next_for("s1", "r1");
  EXPECT_FALSE(done.next_volume);
  EXPECT_EQ(done.completed, 3);
  EXPECT_THROW(store.next_for("s1", "stranger"), NotFoundError);
}

TEST(StudyStore, AggregationConservesRatings) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  const auto vols = study_volumes(10);
  std::vector<std::string> readers;
  for (int r = 0; r < 7; ++r) readers.push_back("r" + std::to_string(r));
  store.create_study(make_study("s1", vols, readers, 3));
  Rng rng(17);
  std::vector<RatingRecord> records;
  for (const auto& r : readers)
    for (const auto& v : vols)
      for (const auto& c : kCategories) {
        if (uniform01(rng) < 0.6) records.push_back(rating(r, v.volume_id, c, std::string(1, kOptions[uniform_index(rng, 4)])));
      }
  store.submit_all(records);
  const auto report = store.aggregate("s1");
  EXPECT_EQ(report.total, static_cast<std::int64_t>(records.size()));
  std::int64_t sum = 0, reader_sum = 0;
  for (const auto& [ds, cats] : report.counts)
    for (const auto& [c, oc] : cats)
      for (auto n : oc) sum += n;
  for (const auto& [r, dss] : report.per_reader)
    for (const auto& [ds, cats] : dss)
      for (const auto& [c, oc] : cats)
        for (auto n : oc) reader_sum += n;
  EXPECT_EQ(sum, report.total);
  EXPECT_EQ(reader_sum, report.total);
  EXPECT_EQ(store.count("s1"), report.total);
}

TEST(StudyStore, ThresholdTallyOnFixedFixture) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  const auto vols = study_volumes(20);
  std::vector<std::string> readers;
  for (int r = 0; r < 10; ++r) readers.push_back("r" + std::to_string(r));
  auto all_knee = vols;
  for (auto& v : all_knee) v.dataset = "knee";
  store.create_study(make_study("s1", all_knee, readers, 0));
  // 200 ratings of one category: 189 at C or D, 11 below.
  std::vector<RatingRecord> records;
  int n = 0;
  for (const auto& r : readers)
    for (const auto& v : all_knee) {
      const char* opt = n < 11 ? (n % 2 ? "A" : "B") : (n % 3 ? "C" : "D");
      records.push_back(rating(r, v.volume_id, kCategories[0], opt));
      ++n;
    }
  store.submit_all(records);
  const auto report = store.aggregate("s1");
  const auto& oc = report.counts.at("knee").at(std::string(kCategories[0]));
  EXPECT_EQ(threshold_tally(oc), 189);
  EXPECT_EQ(threshold_tally(oc, 'A'), 200);
  EXPECT_EQ(threshold_tally(oc, 'D'), oc[3]);
  const auto j = to_json(report);
  EXPECT_EQ(j["threshold"]["by_category"][std::string(kCategories[0])], 189);
  EXPECT_EQ(j["counts"]["knee"][std::string(kCategories[1])]["C"], 0);
}

TEST(StudyStore, EmptyStudyReportsZeroCountsAndHeaderOnlyCsv) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  store.create_study(make_study("s1", study_volumes(2), {"r1"}, 0));
  const auto report = store.aggregate("s1");
  EXPECT_EQ(report.total, 0);
  for (const auto& [ds, cats] : report.counts) {
    EXPECT_EQ(cats.size(), 3u);
    for (const auto& [c, oc] : cats) EXPECT_EQ(oc, (OptionCounts{0, 0, 0, 0}));
  }
  EXPECT_EQ(store.export_csv("s1"), "study_id,reader_id,volume_id,dataset,category,option,timestamp\n");
}

TEST(StudyStore, CsvHasOneRowPerRating) {
  TempDir dir("study");
  StudyStore store(dir / "study.db");
  store.create_study(make_study("s1", study_volumes(2), {"r1", "r2"}, 0));
  store.submit(rating("r2", "vol-1", kCategories[1], "B"));
  store.submit(rating("r1", "vol-0", kCategories[0], "C"));
  const auto csv = store.export_csv("s1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("\ns1,r1,vol-0,knee,realistic_appearance,C,"), std::string::npos);
  EXPECT_LT(csv.find("r1,"), csv.find("r2,"));
}

TEST(Slices, PixelMappingAndWindow) {
  const auto v = fixtures::volume_from({2, 3, 2}, [](std::int64_t h, std::int64_t w, std::int64_t d) {
    if (d == 1) return 0.25;
    return h == 0 ? (w == 0 ? -1.0 : (w == 1 ? 0.0 : 1.0)) : 2.0;
  });
  EXPECT_EQ(slice_pixels(v, 0), (std::vector<std::uint8_t>{0, 128, 255, 255, 255, 255}));
  EXPECT_EQ(slice_pixels(v, 1, 0.0, 0.5), std::vector<std::uint8_t>(6, 128));
  EXPECT_THROW(slice_pixels(v, 2), ValueError);
  EXPECT_THROW(slice_pixels(v, -1), ValueError);
  EXPECT_THROW(slice_pixels(v, 0, 1.0, 1.0), ValueError);
}

TEST(Slices, PngIsLosslessAndStable) {
  const auto v = fixtures::phantom(3, {16, 12, 4});
  const auto bytes = slice_png(v, 2);
  EXPECT_EQ(bytes, slice_png(v, 2));
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
  png_uint_32 w = 0, h = 0;
  const auto px = decode_png(bytes, w, h);
  EXPECT_EQ(w, 12u);
  EXPECT_EQ(h, 16u);
  EXPECT_EQ(px, slice_pixels(v, 2));
  EXPECT_NE(bytes, slice_png(v, 1));
}
