#include "latentvol/manifest.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"

namespace latentvol {
namespace fs = std::filesystem;
using nlohmann::json;

DatasetManifest::DatasetManifest(fs::path root, std::vector<ManifestRecord> records)
    : root_(std::move(root)), records_(std::move(records)) {
  check_patient_disjoint();
}

DatasetManifest DatasetManifest::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("manifest not found: " + file.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ManifestRecord r;
      r.path = j.at("path").get<std::string>();
      r.patient_id = j.at("patient_id").get<std::string>();
      r.split = j.at("split").get<std::string>();
      if (j.contains("mask") && !j.at("mask").is_null()) r.mask = j.at("mask").get<std::string>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  try {
    return DatasetManifest(file.has_parent_path() ? file.parent_path() : fs::path("."), std::move(records));
  } catch (const ValueError& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

void DatasetManifest::save(const fs::path& file) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + file.string());
  for (const auto& r : records_) {
    json j{{"path", r.path}, {"patient_id", r.patient_id}, {"split", r.split}};
    if (r.mask) j["mask"] = *r.mask;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> DatasetManifest::records_in(const std::string& split) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records_) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

fs::path DatasetManifest::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : root_ / p;
}

void DatasetManifest::check_patient_disjoint() const {
  std::map<std::string, std::string> split_of;
  for (const auto& r : records_) {
    const auto [it, inserted] = split_of.emplace(r.patient_id, r.split);
    if (!inserted && it->second != r.split) {
      throw ValueError("patient '" + r.patient_id + "' appears in splits '" + it->second + "' and '" + r.split + "'");
    }
  }
}

DatasetManifest make_patient_split(fs::path root, std::vector<ManifestRecord> records, double val_fraction,
                                   double test_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction > 1.0) {
    throw ValueError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::string> patients;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.patient_id).second) patients.push_back(r.patient_id);
  }
  Rng rng(derive_seed(seed, "patient-split"));
  shuffle(std::span<std::string>(patients), rng);
  const auto n = static_cast<double>(patients.size());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * n));
  std::map<std::string, std::string> split_of;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    split_of[patients[i]] = i < n_test ? "test" : i < n_test + n_val ? "val" : "train";
  }
  for (auto& r : records) r.split = split_of.at(r.patient_id);
  return DatasetManifest(std::move(root), std::move(records));
}

}  // namespace latentvol
