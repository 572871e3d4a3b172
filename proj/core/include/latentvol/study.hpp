#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "latentvol/volume.hpp"

namespace latentvol::study {

inline constexpr std::array<std::string_view, 3> kCategories{"realistic_appearance", "slice_consistency",
                                                             "anatomical_correctness"};
/// Likert options, worst to best.
inline constexpr std::array<char, 4> kOptions{'A', 'B', 'C', 'D'};

struct CategoryLabels {
  std::string category;
  std::string title;
  std::array<std::string, 4> options;
};

/// The rating instrument: three categories with four worded options each.
std::vector<CategoryLabels> default_labels();

bool is_category(std::string_view c);
/// Index 0..3 of option "A".."D"; throws ValueError otherwise.
int option_index(std::string_view option);

struct StudyVolume {
  std::string volume_id;
  /// Dataset tag used for aggregation only; never served to readers.
  std::string dataset;
  /// Server-side file location; never served to readers.
  std::string path;
};

struct StudyDefinition {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<StudyVolume> volumes;
  std::vector<std::string> readers;
  std::vector<CategoryLabels> labels;
  /// Per-reader presentation order (volume ids).
  std::map<std::string, std::vector<std::string>> order;
};

/// Validates the inputs and draws one seeded permutation per reader, each from
/// its own stream. Throws ValueError for empty or duplicate volumes/readers or malformed labels.
StudyDefinition make_study(std::string id, std::vector<StudyVolume> volumes, std::vector<std::string> readers,
                           std::uint64_t seed, std::vector<CategoryLabels> labels = default_labels());

struct RatingRecord {
  std::string study_id;
  std::string reader_id;
  std::string volume_id;
  std::string category;
  std::string option;
  /// ISO-8601 UTC; filled in on submission when empty.
  std::string timestamp;
};

using OptionCounts = std::array<std::int64_t, 4>;

/// Number of ratings at `min_option` or better.
std::int64_t threshold_tally(const OptionCounts& counts, char min_option = 'C');

struct AggregateReport {
  std::string study_id;
  std::int64_t total = 0;
  /// dataset -> category -> counts per option.
  std::map<std::string, std::map<std::string, OptionCounts>> counts;
  /// reader -> dataset -> category -> counts per option.
  std::map<std::string, std::map<std::string, std::map<std::string, OptionCounts>>> per_reader;
};

/// JSON form with zero-filled counts for every category and "C or better" tallies.
nlohmann::json to_json(const AggregateReport& report);

struct Progress {
  std::optional<std::string> next_volume;
  std::int64_t completed = 0;
  std::int64_t total = 0;
};

enum class UpsertResult { Inserted, Replaced };

/// Durable study storage in a single SQLite file (WAL journal, full sync).
/// Writes are serialized; reads use their own connections.
class StudyStore {
 public:
  explicit StudyStore(std::filesystem::path file);
  ~StudyStore();
  StudyStore(const StudyStore&) = delete;
  StudyStore& operator=(const StudyStore&) = delete;

  /// Throws ConflictError for an existing study id or a volume id already bound to another path.
  void create_study(const StudyDefinition& def);
  [[nodiscard]] std::optional<StudyDefinition> find_study(const std::string& id) const;
  /// Throws NotFoundError.
  [[nodiscard]] StudyDefinition get_study(const std::string& id) const;
  [[nodiscard]] std::optional<StudyVolume> find_volume(const std::string& volume_id) const;

  /// First volume in the reader's order still missing a category. Throws NotFoundError.
  [[nodiscard]] Progress next_for(const std::string& study_id, const std::string& reader_id) const;

  /// Upsert on (study, reader, volume, category). Throws ValueError for an
  /// invalid category or option and NotFoundError for unknown references.
  UpsertResult submit(RatingRecord record);
  /// All-or-nothing submission of several records.
  std::vector<UpsertResult> submit_all(std::vector<RatingRecord> records);

  [[nodiscard]] std::vector<RatingRecord> ratings(const std::string& study_id) const;
  [[nodiscard]] std::int64_t count(const std::string& study_id) const;
  /// Throws NotFoundError for an unknown study.
  [[nodiscard]] AggregateReport aggregate(const std::string& study_id) const;
  /// Header plus one row per rating, ordered by reader, volume and category.
  [[nodiscard]] std::string export_csv(const std::string& study_id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Depth slice k as 8-bit rows (H rows of W pixels): floor((v - lo) / (hi - lo) * 255 + 0.5)
/// clamped to [0, 255]. Throws ValueError for k outside [0, depth) or lo >= hi.
std::vector<std::uint8_t> slice_pixels(const Volume& v, std::int64_t k, double lo = -1.0, double hi = 1.0);

/// Lossless 8-bit grayscale PNG with fixed encoder settings (no timestamps), so equal pixels give equal bytes.
std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, std::int64_t width, std::int64_t height);

std::string slice_png(const Volume& v, std::int64_t k, double lo = -1.0, double hi = 1.0);

}  // namespace latentvol::study
