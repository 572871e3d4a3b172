#include "latentvol/study.hpp"

#include <png.h>
#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <mutex>
#include <set>
#include <sstream>

#include "latentvol/errors.hpp"
#include "latentvol/random.hpp"

namespace latentvol::study {
namespace {

using nlohmann::json;

// Thin RAII layer over the sqlite C API.
class Db {
 public:
  Db(const std::filesystem::path& file, bool readonly) {
    const int flags = readonly ? SQLITE_OPEN_READONLY : (SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE);
    if (sqlite3_open_v2(file.c_str(), &db_, flags | SQLITE_OPEN_NOMUTEX, nullptr) != SQLITE_OK) {
      const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw IoError("cannot open study store " + file.string() + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
  }
  ~Db() { sqlite3_close(db_); }
  Db(const Db&) = delete;
  Db& operator=(const Db&) = delete;

  void exec(const std::string& sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw IoError("sqlite: " + msg);
    }
  }
  sqlite3* get() { return db_; }

 private:
  sqlite3* db_ = nullptr;
};

class Stmt {
 public:
  Stmt(Db& db, const char* sql) : db_(db.get()) {
    if (sqlite3_prepare_v2(db_, sql, -1, &s_, nullptr) != SQLITE_OK) {
      throw IoError(std::string("sqlite prepare: ") + sqlite3_errmsg(db_));
    }
  }
  ~Stmt() { sqlite3_finalize(s_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    sqlite3_bind_text(s_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(s_, i, v);
    return *this;
  }
  /// True while a row is available.
  bool step() {
    const int rc = sqlite3_step(s_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw IoError(std::string("sqlite step: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }
  std::string text(int col) {
    const auto* p = sqlite3_column_text(s_, col);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
  std::int64_t int64(int col) { return sqlite3_column_int64(s_, col); }

 private:
  sqlite3* db_;
  sqlite3_stmt* s_ = nullptr;
};

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS studies (
  id TEXT PRIMARY KEY,
  seed INTEGER NOT NULL,
  labels TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS study_readers (
  study_id TEXT NOT NULL,
  reader_id TEXT NOT NULL,
  PRIMARY KEY (study_id, reader_id)
);
CREATE TABLE IF NOT EXISTS study_volumes (
  study_id TEXT NOT NULL,
  volume_id TEXT NOT NULL,
  position INTEGER NOT NULL,
  dataset TEXT NOT NULL,
  path TEXT NOT NULL,
  PRIMARY KEY (study_id, volume_id)
);
CREATE INDEX IF NOT EXISTS study_volumes_by_id ON study_volumes (volume_id);
CREATE TABLE IF NOT EXISTS reader_order (
  study_id TEXT NOT NULL,
  reader_id TEXT NOT NULL,
  position INTEGER NOT NULL,
  volume_id TEXT NOT NULL,
  PRIMARY KEY (study_id, reader_id, position)
);
CREATE TABLE IF NOT EXISTS ratings (
  study_id TEXT NOT NULL,
  reader_id TEXT NOT NULL,
  volume_id TEXT NOT NULL,
  category TEXT NOT NULL,
  option TEXT NOT NULL,
  timestamp TEXT NOT NULL,
  PRIMARY KEY (study_id, reader_id, volume_id, category)
);
)sql";

json labels_json(const std::vector<CategoryLabels>& labels) {
  json out = json::array();
  for (const auto& l : labels) {
    out.push_back({{"category", l.category}, {"title", l.title}, {"options", l.options}});
  }
  return out;
}

std::vector<CategoryLabels> labels_from(const json& j) {
  std::vector<CategoryLabels> out;
  for (const auto& e : j) {
    CategoryLabels l;
    l.category = e.at("category").get<std::string>();
    l.title = e.at("title").get<std::string>();
    l.options = e.at("options").get<std::array<std::string, 4>>();
    out.push_back(std::move(l));
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

json counts_json(const OptionCounts& c) {
  json j = json::object();
  for (std::size_t i = 0; i < kOptions.size(); ++i) j[std::string(1, kOptions[i])] = c[i];
  return j;
}

}  // namespace

std::vector<CategoryLabels> default_labels() {
  return {
      {"realistic_appearance",
       "Realistic image appearance",
       {"Overall not recognizable as CT/MRI", "Overall unrealistic, but generally recognizable as CT/MRI",
        "Overall realistic and only minor unrealistic areas", "Can’t tell whether fake or not"}},
      {"slice_consistency",
       "Consistency between slices",
       {"No consistent slices", "Only few (up to 3) slices are consistent", "Majority of slices (>10) is consistent",
        "All slices are consistent"}},
      {"anatomical_correctness",
       "Anatomical correctness",
       {"Anatomical region not recognizable",
        "Anatomical region recognizable, but major parts of the images exhibit anatomical incorrectness",
        "Only minor anatomical incorrectness", "Anatomical features are correct"}},
  };
}

bool is_category(std::string_view c) {
  return std::find(kCategories.begin(), kCategories.end(), c) != kCategories.end();
}

int option_index(std::string_view option) {
  if (option.size() == 1) {
    const auto it = std::find(kOptions.begin(), kOptions.end(), option[0]);
    if (it != kOptions.end()) return static_cast<int>(it - kOptions.begin());
  }
  throw ValueError("option must be one of A, B, C, D (got '" + std::string(option) + "')");
}

StudyDefinition make_study(std::string id, std::vector<StudyVolume> volumes, std::vector<std::string> readers,
                           std::uint64_t seed, std::vector<CategoryLabels> labels) {
  if (id.empty()) throw ValueError("study id must not be empty");
  if (volumes.empty()) throw ValueError("a study needs at least one volume");
  if (readers.empty()) throw ValueError("a study needs at least one reader");
  std::set<std::string> seen;
  for (const auto& v : volumes) {
    if (v.volume_id.empty() || v.path.empty()) throw ValueError("volumes need an id and a path");
    if (!seen.insert(v.volume_id).second) throw ValueError("duplicate volume id '" + v.volume_id + "'");
  }
  seen.clear();
  for (const auto& r : readers) {
    if (r.empty()) throw ValueError("reader ids must not be empty");
    if (!seen.insert(r).second) throw ValueError("duplicate reader id '" + r + "'");
  }
  if (labels.size() != kCategories.size()) throw ValueError("labels must cover the three rating categories");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].category != kCategories[i]) {
      throw ValueError("label category " + std::to_string(i) + " must be " + std::string(kCategories[i]));
    }
  }

  StudyDefinition def;
  def.id = std::move(id);
  def.seed = seed;
  def.labels = std::move(labels);
  const auto order_seed = derive_seed(seed, "study-order");
  for (const auto& r : readers) {
    std::vector<std::string> ids;
    for (const auto& v : volumes) ids.push_back(v.volume_id);
    Rng rng(derive_seed(order_seed, r));
    shuffle(std::span<std::string>(ids), rng);
    def.order[r] = std::move(ids);
  }
  def.volumes = std::move(volumes);
  def.readers = std::move(readers);
  return def;
}

std::int64_t threshold_tally(const OptionCounts& counts, char min_option) {
  const int from = option_index(std::string_view(&min_option, 1));
  std::int64_t n = 0;
  for (std::size_t i = static_cast<std::size_t>(from); i < counts.size(); ++i) n += counts[i];
  return n;
}

json to_json(const AggregateReport& r) {
  json counts = json::object();
  json tally = json::object();
  json tally_by_dataset = json::object();
  std::map<std::string, OptionCounts> per_category;
  for (const auto& c : kCategories) per_category[std::string(c)] = {};
  for (const auto& [dataset, cats] : r.counts) {
    for (const auto& c : kCategories) {
      const std::string key(c);
      const auto it = cats.find(key);
      const OptionCounts oc = it == cats.end() ? OptionCounts{} : it->second;
      counts[dataset][key] = counts_json(oc);
      tally_by_dataset[dataset][key] = threshold_tally(oc);
      for (std::size_t i = 0; i < oc.size(); ++i) per_category[key][i] += oc[i];
    }
  }
  for (const auto& [key, oc] : per_category) tally[key] = threshold_tally(oc);

  json readers = json::object();
  for (const auto& [reader, datasets] : r.per_reader) {
    for (const auto& [dataset, cats] : datasets) {
      for (const auto& c : kCategories) {
        const auto it = cats.find(std::string(c));
        readers[reader][dataset][std::string(c)] = counts_json(it == cats.end() ? OptionCounts{} : it->second);
      }
    }
  }
  return {{"study_id", r.study_id},
          {"total", r.total},
          {"counts", counts},
          {"per_reader", readers},
          {"threshold", {{"min_option", "C"}, {"by_category", tally}, {"by_dataset", tally_by_dataset}}}};
}

struct StudyStore::Impl {
  std::filesystem::path file;
  std::mutex write_mutex;
  std::unique_ptr<Db> writer;

  [[nodiscard]] std::unique_ptr<Db> reader() const { return std::make_unique<Db>(file, true); }
};

StudyStore::StudyStore(std::filesystem::path file) : impl_(std::make_unique<Impl>()) {
  impl_->file = std::move(file);
  if (impl_->file.has_parent_path()) std::filesystem::create_directories(impl_->file.parent_path());
  impl_->writer = std::make_unique<Db>(impl_->file, false);
  impl_->writer->exec("PRAGMA journal_mode=WAL; PRAGMA synchronous=FULL;");
  impl_->writer->exec(kSchema);
}

StudyStore::~StudyStore() = default;

void StudyStore::create_study(const StudyDefinition& def) {
  std::lock_guard lock(impl_->write_mutex);
  auto& db = *impl_->writer;
  db.exec("BEGIN IMMEDIATE");
  try {
    {
      Stmt s(db, "SELECT 1 FROM studies WHERE id = ?");
      if (s.bind(1, def.id).step()) throw ConflictError("study '" + def.id + "' already exists");
    }
    for (const auto& v : def.volumes) {
      Stmt s(db, "SELECT path FROM study_volumes WHERE volume_id = ? LIMIT 1");
      if (s.bind(1, v.volume_id).step() && s.text(0) != v.path) {
        throw ConflictError("volume id '" + v.volume_id + "' is already bound to another file");
      }
    }
    Stmt(db, "INSERT INTO studies (id, seed, labels) VALUES (?, ?, ?)")
        .bind(1, def.id)
        .bind(2, static_cast<std::int64_t>(def.seed))
        .bind(3, labels_json(def.labels).dump())
        .run();
    for (const auto& r : def.readers) {
      Stmt(db, "INSERT INTO study_readers (study_id, reader_id) VALUES (?, ?)").bind(1, def.id).bind(2, r).run();
    }
    for (std::size_t i = 0; i < def.volumes.size(); ++i) {
      const auto& v = def.volumes[i];
      Stmt(db, "INSERT INTO study_volumes (study_id, volume_id, position, dataset, path) VALUES (?, ?, ?, ?, ?)")
          .bind(1, def.id)
          .bind(2, v.volume_id)
          .bind(3, static_cast<std::int64_t>(i))
          .bind(4, v.dataset)
          .bind(5, v.path)
          .run();
    }
    for (const auto& [reader, ids] : def.order) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Stmt(db, "INSERT INTO reader_order (study_id, reader_id, position, volume_id) VALUES (?, ?, ?, ?)")
            .bind(1, def.id)
            .bind(2, reader)
            .bind(3, static_cast<std::int64_t>(i))
            .bind(4, ids[i])
            .run();
      }
    }
    db.exec("COMMIT");
  } catch (...) {
    db.exec("ROLLBACK");
    throw;
  }
}

std::optional<StudyDefinition> StudyStore::find_study(const std::string& id) const {
  auto db = impl_->reader();
  StudyDefinition def;
  {
    Stmt s(*db, "SELECT seed, labels FROM studies WHERE id = ?");
    if (!s.bind(1, id).step()) return std::nullopt;
    def.id = id;
    def.seed = static_cast<std::uint64_t>(s.int64(0));
    def.labels = labels_from(json::parse(s.text(1)));
  }
  {
    Stmt s(*db, "SELECT reader_id FROM study_readers WHERE study_id = ? ORDER BY rowid");
    s.bind(1, id);
    while (s.step()) def.readers.push_back(s.text(0));
  }
  {
    Stmt s(*db, "SELECT volume_id, dataset, path FROM study_volumes WHERE study_id = ? ORDER BY position");
    s.bind(1, id);
    while (s.step()) def.volumes.push_back({s.text(0), s.text(1), s.text(2)});
  }
  {
    Stmt s(*db, "SELECT reader_id, volume_id FROM reader_order WHERE study_id = ? ORDER BY reader_id, position");
    s.bind(1, id);
    while (s.step()) def.order[s.text(0)].push_back(s.text(1));
  }
  return def;
}

StudyDefinition StudyStore::get_study(const std::string& id) const {
  auto def = find_study(id);
  if (!def) throw NotFoundError("unknown study '" + id + "'");
  return *def;
}

std::optional<StudyVolume> StudyStore::find_volume(const std::string& volume_id) const {
  auto db = impl_->reader();
  Stmt s(*db, "SELECT dataset, path FROM study_volumes WHERE volume_id = ? ORDER BY rowid LIMIT 1");
  if (!s.bind(1, volume_id).step()) return std::nullopt;
  return StudyVolume{volume_id, s.text(0), s.text(1)};
}

Progress StudyStore::next_for(const std::string& study_id, const std::string& reader_id) const {
  auto db = impl_->reader();
  {
    Stmt s(*db, "SELECT 1 FROM study_readers WHERE study_id = ? AND reader_id = ?");
    if (!s.bind(1, study_id).bind(2, reader_id).step()) {
      throw NotFoundError("unknown study/reader '" + study_id + "'/'" + reader_id + "'");
    }
  }
  Progress p;
  Stmt s(*db,
         "SELECT o.volume_id, (SELECT COUNT(*) FROM ratings r WHERE r.study_id = o.study_id AND "
         "r.reader_id = o.reader_id AND r.volume_id = o.volume_id) FROM reader_order o "
         "WHERE o.study_id = ? AND o.reader_id = ? ORDER BY o.position");
  s.bind(1, study_id).bind(2, reader_id);
  while (s.step()) {
    ++p.total;
    if (s.int64(1) >= static_cast<std::int64_t>(kCategories.size())) {
      ++p.completed;
    } else if (!p.next_volume) {
      p.next_volume = s.text(0);
    }
  }
  return p;
}

UpsertResult StudyStore::submit(RatingRecord record) {
  return submit_all({std::move(record)}).front();
}

std::vector<UpsertResult> StudyStore::submit_all(std::vector<RatingRecord> records) {
  for (auto& r : records) {
    if (!is_category(r.category)) throw ValueError("unknown category '" + r.category + "'");
    option_index(r.option);
    if (r.timestamp.empty()) r.timestamp = utc_now();
  }
  std::lock_guard lock(impl_->write_mutex);
  auto& db = *impl_->writer;
  std::vector<UpsertResult> out;
  db.exec("BEGIN IMMEDIATE");
  try {
    for (const auto& r : records) {
      {
        Stmt s(db, "SELECT 1 FROM study_readers WHERE study_id = ? AND reader_id = ?");
        if (!s.bind(1, r.study_id).bind(2, r.reader_id).step()) {
          throw NotFoundError("unknown study/reader '" + r.study_id + "'/'" + r.reader_id + "'");
        }
      }
      {
        Stmt s(db, "SELECT 1 FROM study_volumes WHERE study_id = ? AND volume_id = ?");
        if (!s.bind(1, r.study_id).bind(2, r.volume_id).step()) {
          throw NotFoundError("volume '" + r.volume_id + "' is not part of study '" + r.study_id + "'");
        }
      }
      bool existed = false;
      {
        Stmt s(db, "SELECT 1 FROM ratings WHERE study_id = ? AND reader_id = ? AND volume_id = ? AND category = ?");
        existed = s.bind(1, r.study_id).bind(2, r.reader_id).bind(3, r.volume_id).bind(4, r.category).step();
      }
      Stmt(db,
           "INSERT INTO ratings (study_id, reader_id, volume_id, category, option, timestamp) "
           "VALUES (?, ?, ?, ?, ?, ?) ON CONFLICT (study_id, reader_id, volume_id, category) "
           "DO UPDATE SET option = excluded.option, timestamp = excluded.timestamp")
          .bind(1, r.study_id)
          .bind(2, r.reader_id)
          .bind(3, r.volume_id)
          .bind(4, r.category)
          .bind(5, r.option)
          .bind(6, r.timestamp)
          .run();
      out.push_back(existed ? UpsertResult::Replaced : UpsertResult::Inserted);
    }
    db.exec("COMMIT");
  } catch (...) {
    db.exec("ROLLBACK");
    throw;
  }
  return out;
}

std::vector<RatingRecord> StudyStore::ratings(const std::string& study_id) const {
  auto db = impl_->reader();
  Stmt s(*db,
         "SELECT reader_id, volume_id, category, option, timestamp FROM ratings WHERE study_id = ? "
         "ORDER BY reader_id, volume_id, category");
  s.bind(1, study_id);
  std::vector<RatingRecord> out;
  while (s.step()) out.push_back({study_id, s.text(0), s.text(1), s.text(2), s.text(3), s.text(4)});
  return out;
}

std::int64_t StudyStore::count(const std::string& study_id) const {
  auto db = impl_->reader();
  Stmt s(*db, "SELECT COUNT(*) FROM ratings WHERE study_id = ?");
  s.bind(1, study_id).step();
  return s.int64(0);
}

AggregateReport StudyStore::aggregate(const std::string& study_id) const {
  const auto def = get_study(study_id);
  std::map<std::string, std::string> dataset_of;
  for (const auto& v : def.volumes) dataset_of[v.volume_id] = v.dataset;

  AggregateReport r;
  r.study_id = study_id;
  // Every dataset appears, even without ratings.
  for (const auto& v : def.volumes) {
    for (const auto& c : kCategories) r.counts[v.dataset][std::string(c)];
  }
  for (const auto& rec : ratings(study_id)) {
    const auto& ds = dataset_of.at(rec.volume_id);
    const auto o = static_cast<std::size_t>(option_index(rec.option));
    ++r.counts[ds][rec.category][o];
    ++r.per_reader[rec.reader_id][ds][rec.category][o];
    ++r.total;
  }
  return r;
}

std::string StudyStore::export_csv(const std::string& study_id) const {
  const auto def = get_study(study_id);
  std::map<std::string, std::string> dataset_of;
  for (const auto& v : def.volumes) dataset_of[v.volume_id] = v.dataset;
  std::ostringstream out;
  out << "study_id,reader_id,volume_id,dataset,category,option,timestamp\n";
  for (const auto& r : ratings(study_id)) {
    out << csv_field(r.study_id) << ',' << csv_field(r.reader_id) << ',' << csv_field(r.volume_id) << ','
        << csv_field(dataset_of.at(r.volume_id)) << ',' << r.category << ',' << r.option << ',' << r.timestamp
        << '\n';
  }
  return out.str();
}

std::vector<std::uint8_t> slice_pixels(const Volume& v, std::int64_t k, double lo, double hi) {
  const auto s = v.shape();
  if (k < 0 || k >= s.d) {
    throw ValueError("slice " + std::to_string(k) + " outside [0, " + std::to_string(s.d) + ")");
  }
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) throw ValueError("window needs finite lo < hi");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(s.h * s.w));
  const double scale = 255.0 / (hi - lo);
  for (std::int64_t h = 0; h < s.h; ++h) {
    for (std::int64_t w = 0; w < s.w; ++w) {
      const double q = std::floor((static_cast<double>(v.at(h, w, k)) - lo) * scale + 0.5);
      px[static_cast<std::size_t>(h * s.w + w)] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }
  }
  return px;
}

std::string encode_png_gray(const std::vector<std::uint8_t>& pixels, std::int64_t width, std::int64_t height) {
  if (width < 1 || height < 1 || static_cast<std::int64_t>(pixels.size()) != width * height) {
    throw ValueError("pixel buffer does not match the image size");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_write_info(png, info);
  for (std::int64_t r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::string slice_png(const Volume& v, std::int64_t k, double lo, double hi) {
  return encode_png_gray(slice_pixels(v, k, lo, hi), v.shape().w, v.shape().h);
}

}  // namespace latentvol::study
