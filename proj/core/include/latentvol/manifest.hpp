#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace latentvol {

struct ManifestRecord {
  std::string path;
  std::string patient_id;
  std::string split;
  /// Optional label volume for segmentation data.
  std::optional<std::string> mask;
};

/// JSON-lines dataset listing. Relative paths resolve against root().
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::filesystem::path root, std::vector<ManifestRecord> records);

  /// Reads a JSON-lines file; root defaults to the file's directory.
  /// Throws FormatError on malformed lines or overlapping patient splits.
  static DatasetManifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  [[nodiscard]] const std::filesystem::path& root() const { return root_; }
  [[nodiscard]] const std::vector<ManifestRecord>& records() const { return records_; }
  [[nodiscard]] std::vector<ManifestRecord> records_in(const std::string& split) const;
  [[nodiscard]] std::filesystem::path resolve(const std::string& path) const;

  /// Throws ValueError if one patient id appears under two split tags.
  void check_patient_disjoint() const;

 private:
  std::filesystem::path root_;
  std::vector<ManifestRecord> records_;
};

/// Assigns splits at the patient level: patients are shuffled with `seed` and
/// the first round(test_fraction * n) become "test", the next
/// round(val_fraction * n) "val", the rest "train".
DatasetManifest make_patient_split(std::filesystem::path root, std::vector<ManifestRecord> records,
                                   double val_fraction, double test_fraction, std::uint64_t seed);

}  // namespace latentvol
