#include "latentvol/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "latentvol/errors.hpp"

namespace latentvol::pipeline {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'V', 'C', 'K', 'P', 'T', '0', '1'};

std::uint8_t dtype_code(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kInt32: return 4;
    case torch::kUInt8: return 5;
    case torch::kBool: return 6;
    default: throw ValueError("checkpoint sections support float32/float64/int64/int32/uint8/bool only");
  }
}

torch::Dtype dtype_from(std::uint8_t code) {
  switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kInt32;
    case 5: return torch::kUInt8;
    case 6: return torch::kBool;
    default: throw FormatError("checkpoint section has unknown dtype code " + std::to_string(code));
  }
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  [[nodiscard]] bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > s_.size() - pos_) throw FormatError("checkpoint is truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(const std::string& name, const torch::Tensor& t) {
  if (has(name)) throw ValueError("duplicate checkpoint section '" + name + "'");
  sections.emplace_back(name, t.detach().to(torch::kCPU).contiguous().clone());
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : sections) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : sections) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no section '" + name + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [n, t] : sections) {
    if (n.starts_with(prefix)) out.emplace_back(n.substr(prefix.size()), t);
  }
  return out;
}

std::string serialize(const Checkpoint& ckpt) {
  const nlohmann::json header = {{"stage", ckpt.stage},
                                 {"iteration", ckpt.iteration},
                                 {"config", ckpt.config},
                                 {"config_hash", ckpt.config_hash},
                                 {"meta", ckpt.meta}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, h.size());
  out += h;
  put<std::uint64_t>(out, ckpt.sections.size());
  for (const auto& [name, tensor] : ckpt.sections) {
    const auto t = tensor.contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, dtype_code(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (const auto d : t.sizes()) put<std::int64_t>(out, d);
    const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    put<std::uint64_t>(out, nbytes);
    out.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw FormatError("not a latentvol checkpoint");
  const auto hlen = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    c.stage = header.at("stage").get<std::string>();
    c.iteration = header.at("iteration").get<std::int64_t>();
    c.config = header.at("config");
    c.config_hash = header.at("config_hash").get<std::string>();
    c.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    auto name = r.bytes(nlen);
    const auto dtype = dtype_from(r.get<std::uint8_t>());
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 16) throw FormatError("checkpoint section '" + name + "' has too many dimensions");
    std::vector<std::int64_t> dims;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      dims.push_back(r.get<std::int64_t>());
      if (dims.back() < 0) throw FormatError("checkpoint section '" + name + "' has a negative extent");
      numel *= dims.back();
    }
    const auto nbytes = r.get<std::uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (nbytes != static_cast<std::uint64_t>(numel) * t.element_size()) {
      throw FormatError("checkpoint section '" + name + "' payload size does not match its shape");
    }
    const auto payload = r.bytes(nbytes);
    if (nbytes) std::memcpy(t.data_ptr(), payload.data(), nbytes);
    if (c.has(name)) throw FormatError("duplicate checkpoint section '" + name + "'");
    c.sections.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last checkpoint section");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    const auto bytes = serialize(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace latentvol::pipeline
