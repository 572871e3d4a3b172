#include "latentvol/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "latentvol/errors.hpp"

namespace latentvol {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "volume payloads assume a little-endian host");

VolumeFormat parse_volume_format(std::string_view s) {
  if (s == "native" || s == "f32raw") return VolumeFormat::Native;
  if (s == "nifti" || s == "nii") return VolumeFormat::Nifti;
  if (s == "auto") return VolumeFormat::Auto;
  throw ValueError("unknown volume format '" + std::string(s) + "'");
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct NativePaths {
  fs::path payload;
  fs::path sidecar;
};

NativePaths native_paths(const fs::path& path) {
  fs::path stem = path;
  if (path.extension() == ".f32raw" || path.extension() == ".json") stem.replace_extension();
  return {fs::path(stem.string() + ".f32raw"), fs::path(stem.string() + ".json")};
}

Volume load_native(const fs::path& path) {
  const auto paths = native_paths(path);
  if (!fs::exists(paths.payload)) throw IoError("volume payload not found: " + paths.payload.string());
  if (!fs::exists(paths.sidecar)) throw IoError("volume sidecar not found: " + paths.sidecar.string());

  json meta;
  try {
    std::ifstream in(paths.sidecar);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("corrupt sidecar " + paths.sidecar.string() + ": " + e.what());
  }

  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  bool defaulted = true;
  Modality modality = Modality::MRI;
  try {
    const auto dims = meta.at("shape").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) throw FormatError("sidecar shape must have 3 entries");
    shape = {dims[0], dims[1], dims[2]};
    if (meta.contains("spacing")) {
      const auto sp = meta.at("spacing").get<std::vector<double>>();
      if (sp.size() != 3) throw FormatError("sidecar spacing must have 3 entries");
      spacing = {sp[0], sp[1], sp[2]};
      defaulted = false;
    }
    if (meta.contains("modality")) modality = parse_modality(meta.at("modality").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + paths.sidecar.string() + ": " + e.what());
  } catch (const ValueError& e) {
    throw FormatError("malformed sidecar " + paths.sidecar.string() + ": " + e.what());
  }
  if (shape.h < 1 || shape.w < 1 || shape.d < 1) throw FormatError("sidecar shape has a non-positive extent");

  const auto expected = static_cast<std::uintmax_t>(shape.numel()) * sizeof(float);
  if (fs::file_size(paths.payload) != expected) {
    throw FormatError("payload " + paths.payload.string() + " has " + std::to_string(fs::file_size(paths.payload)) +
                      " bytes, shape " + shape.str() + " needs " + std::to_string(expected));
  }
  std::vector<float> data(static_cast<std::size_t>(shape.numel()));
  std::ifstream in(paths.payload, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("failed reading " + paths.payload.string());

  Volume v(shape, std::move(data), spacing, modality);
  v.set_spacing_defaulted(defaulted);
  if (meta.contains("value_range")) {
    const auto r = meta.at("value_range").get<std::vector<double>>();
    if (r.size() == 2) v.set_value_range(std::pair{r[0], r[1]});
  }
  return v;
}

// NIfTI-1 header fields used here (offsets in bytes).
constexpr std::size_t kNiftiHeaderSize = 348;

template <typename T>
T read_field(const std::array<char, kNiftiHeaderSize>& hdr, std::size_t offset, bool swap) {
  T value;
  std::memcpy(&value, hdr.data() + offset, sizeof(T));
  if (swap) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    value = std::bit_cast<T>(bytes);
  }
  return value;
}

template <typename T>
void convert_samples(const std::vector<char>& raw, bool swap, std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), raw.data() + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(bytes.begin(), bytes.end());
    out[i] = static_cast<double>(std::bit_cast<T>(bytes));
  }
}

Volume load_nifti(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("volume not found: " + path.string());
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw IoError("cannot open " + path.string());
  struct Closer {
    gzFile f;
    ~Closer() { gzclose(f); }
  } closer{file};

  std::array<char, kNiftiHeaderSize> hdr{};
  if (gzread(file, hdr.data(), kNiftiHeaderSize) != static_cast<int>(kNiftiHeaderSize)) {
    throw FormatError("truncated NIfTI header in " + path.string());
  }
  bool swap = false;
  if (read_field<std::int32_t>(hdr, 0, false) != 348) {
    if (read_field<std::int32_t>(hdr, 0, true) != 348) throw FormatError(path.string() + " is not a NIfTI-1 file");
    swap = true;
  }
  if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0) {
    throw FormatError(path.string() + ": only single-file NIfTI-1 (n+1) is supported");
  }
  std::array<std::int64_t, 3> dims{1, 1, 1};
  const auto ndim = read_field<std::int16_t>(hdr, 40, swap);
  if (ndim < 1 || ndim > 7) throw FormatError(path.string() + ": invalid dim[0]");
  for (int i = 0; i < std::min<int>(ndim, 3); ++i) dims[i] = read_field<std::int16_t>(hdr, 42 + 2 * i, swap);
  for (int i = 3; i < ndim; ++i) {
    if (read_field<std::int16_t>(hdr, 42 + 2 * i, swap) > 1) {
      throw FormatError(path.string() + ": volumes with more than three dimensions are not supported");
    }
  }
  Spacing spacing{1.0, 1.0, 1.0};
  bool defaulted = false;
  for (int i = 0; i < 3; ++i) {
    const double s = read_field<float>(hdr, 80 + 4 * i, swap);
    if (s > 0.0 && std::isfinite(s)) {
      spacing[i] = s;
    } else {
      defaulted = true;
    }
  }
  const auto datatype = read_field<std::int16_t>(hdr, 70, swap);
  const auto vox_offset = static_cast<long>(read_field<float>(hdr, 108, swap));
  double slope = read_field<float>(hdr, 112, swap);
  const double inter = read_field<float>(hdr, 116, swap);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;

  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: case 256: bytes_per = 1; break;
    case 4: case 512: bytes_per = 2; break;
    case 8: case 16: bytes_per = 4; break;
    case 64: bytes_per = 8; break;
    default: throw FormatError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const Shape3 shape{dims[0], dims[1], dims[2]};
  if (shape.h < 1 || shape.w < 1 || shape.d < 1) throw FormatError(path.string() + ": non-positive extent");

  if (gzseek(file, std::max<long>(vox_offset, static_cast<long>(kNiftiHeaderSize)), SEEK_SET) < 0) {
    throw FormatError(path.string() + ": cannot seek to voxel data");
  }
  std::vector<char> raw(static_cast<std::size_t>(shape.numel()) * bytes_per);
  if (gzread(file, raw.data(), static_cast<unsigned>(raw.size())) != static_cast<int>(raw.size())) {
    throw FormatError(path.string() + ": truncated voxel data");
  }
  std::vector<double> samples;
  switch (datatype) {
    case 2: convert_samples<std::uint8_t>(raw, swap, samples); break;
    case 256: convert_samples<std::int8_t>(raw, swap, samples); break;
    case 4: convert_samples<std::int16_t>(raw, swap, samples); break;
    case 512: convert_samples<std::uint16_t>(raw, swap, samples); break;
    case 8: convert_samples<std::int32_t>(raw, swap, samples); break;
    case 16: convert_samples<float>(raw, swap, samples); break;
    case 64: convert_samples<double>(raw, swap, samples); break;
    default: break;
  }
  // NIfTI stores i fastest; the native layout stores depth fastest.
  std::vector<float> data(samples.size());
  for (std::int64_t k = 0; k < shape.d; ++k) {
    for (std::int64_t j = 0; j < shape.w; ++j) {
      for (std::int64_t i = 0; i < shape.h; ++i) {
        const double value = samples[static_cast<std::size_t>(i + shape.h * (j + shape.w * k))] * slope + inter;
        data[static_cast<std::size_t>((i * shape.w + j) * shape.d + k)] = static_cast<float>(value);
      }
    }
  }
  Volume v(shape, std::move(data), spacing, Modality::MRI);
  v.set_spacing_defaulted(defaulted);
  return v;
}

}  // namespace

Volume load_volume(const fs::path& path, VolumeFormat format) {
  if (format == VolumeFormat::Auto) {
    const auto name = path.string();
    format = (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) ? VolumeFormat::Nifti : VolumeFormat::Native;
  }
  return format == VolumeFormat::Nifti ? load_nifti(path) : load_native(path);
}

fs::path save_volume(const Volume& v, const fs::path& path) {
  const auto paths = native_paths(path);
  if (paths.payload.has_parent_path()) fs::create_directories(paths.payload.parent_path());

  json meta;
  meta["shape"] = {v.shape().h, v.shape().w, v.shape().d};
  meta["spacing"] = {v.spacing()[0], v.spacing()[1], v.spacing()[2]};
  meta["modality"] = std::string(to_string(v.modality()));
  if (v.value_range()) meta["value_range"] = {v.value_range()->first, v.value_range()->second};

  {
    std::ofstream out(paths.payload, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + paths.payload.string());
    out.write(reinterpret_cast<const char*>(v.data().data()),
              static_cast<std::streamsize>(v.data().size() * sizeof(float)));
    if (!out) throw IoError("failed writing " + paths.payload.string());
  }
  std::ofstream out(paths.sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot write " + paths.sidecar.string());
  out << meta.dump(2) << "\n";
  return paths.payload;
}

std::vector<fs::path> list_volumes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".f32raw") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace latentvol
