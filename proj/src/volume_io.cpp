#include "rprloc/volume_io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include "json.hpp"

#include "rprloc/errors.hpp"

namespace rprloc {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw I/O assumes a little-endian host");

namespace {

constexpr int kNativeVersion = 1;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(T))) {
    fail(ErrorKind::kIo, path.string() + " is shorter than its sidecar shape");
  }
  return data;
}

json native_sidecar(const char* dtype, const Shape3& shape, const Vec3& spacing, const char* unit) {
  return json{{"format", "rprloc-raw"},
              {"version", kNativeVersion},
              {"dtype", dtype},
              {"byte_order", "little"},
              {"shape", {shape.d, shape.h, shape.w}},
              {"spacing", {spacing.z, spacing.y, spacing.x}},
              {"intensity_unit", unit}};
}

struct NativeHeader {
  std::string dtype;
  Shape3 shape;
  Vec3 spacing;
  IntensityUnit unit = IntensityUnit::kRaw;
  fs::path raw;
};

NativeHeader read_native_header(const fs::path& path) {
  const fs::path raw = path.extension() == ".json" ? fs::path(path).replace_extension(".raw") : path;
  const json j = read_json_file(sidecar_path(raw));
  NativeHeader h;
  try {
    h.dtype = j.at("dtype").get<std::string>();
    const auto s = j.at("shape").get<std::array<int, 3>>();
    const auto e = j.at("spacing").get<std::array<double, 3>>();
    h.shape = {s[0], s[1], s[2]};
    h.spacing = {e[0], e[1], e[2]};
    h.unit = intensity_unit_from_string(j.value("intensity_unit", "raw"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "bad sidecar for " + raw.string() + ": " + e.what());
  }
  if (h.shape.d < 1 || h.shape.h < 1 || h.shape.w < 1) fail(ErrorKind::kIo, "bad shape in sidecar of " + raw.string());
  h.raw = raw;
  return h;
}

bool is_nifti(const fs::path& path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](const std::string& suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz");
}

// NIfTI-1 header field offsets.
constexpr int kHeaderSize = 348;
constexpr int kDimOffset = 40;
constexpr int kDatatypeOffset = 70;
constexpr int kBitpixOffset = 72;
constexpr int kPixdimOffset = 76;
constexpr int kVoxOffsetOffset = 108;
constexpr int kSclSlopeOffset = 112;
constexpr int kSclInterOffset = 116;
constexpr int kXyztUnitsOffset = 123;
constexpr int kMagicOffset = 344;

template <typename T>
T get_field(const std::array<char, kHeaderSize>& hdr, int offset) {
  T v;
  std::memcpy(&v, hdr.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void put_field(std::array<char, kHeaderSize>& hdr, int offset, T v) {
  std::memcpy(hdr.data() + offset, &v, sizeof(T));
}

class GzFile {
 public:
  GzFile(const fs::path& path, const char* mode) : f_(gzopen(path.string().c_str(), mode)), path_(path) {
    if (f_ == nullptr) fail(ErrorKind::kIo, "cannot open " + path.string());
  }
  ~GzFile() {
    if (f_ != nullptr) gzclose(f_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* dst, std::size_t n) {
    auto* p = static_cast<char*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(f_, p, chunk);
      if (got <= 0) fail(ErrorKind::kIo, "truncated NIfTI file " + path_.string());
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }
  void skip(std::size_t n) {
    std::vector<char> buf(n);
    read(buf.data(), n);
  }
  void write(const void* src, std::size_t n) {
    if (gzwrite(f_, src, static_cast<unsigned>(n)) != static_cast<int>(n)) {
      fail(ErrorKind::kIo, "short write to " + path_.string());
    }
  }

 private:
  gzFile f_;
  fs::path path_;
};

template <typename T>
void convert(const std::vector<char>& bytes, std::vector<float>& out, double slope, double inter) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
  }
}

}  // namespace

fs::path sidecar_path(const fs::path& raw_path) { return fs::path(raw_path).replace_extension(".json"); }

void save_volume(const Volume& vol, const fs::path& raw_path) {
  write_raw(raw_path, std::vector<float>(vol.data().begin(), vol.data().end()));
  write_text(sidecar_path(raw_path),
             native_sidecar("float32", vol.shape(), vol.spacing(), to_string(vol.unit())).dump(2) + "\n");
}

void save_mask(const Mask& mask, const Vec3& spacing, const fs::path& raw_path) {
  write_raw(raw_path, mask.data);
  write_text(sidecar_path(raw_path), native_sidecar("uint8", mask.shape, spacing, "mask").dump(2) + "\n");
}

Volume load_volume(const fs::path& path) {
  if (is_nifti(path)) return load_nifti(path);
  const NativeHeader h = read_native_header(path);
  if (h.dtype != "float32") fail(ErrorKind::kIo, h.raw.string() + ": expected float32 volume, got " + h.dtype);
  return Volume(h.shape, h.spacing, h.unit, read_raw<float>(h.raw, h.shape.voxels()));
}

Mask load_mask(const fs::path& path) {
  const fs::path raw = path.extension() == ".json" ? fs::path(path).replace_extension(".raw") : path;
  const json j = read_json_file(sidecar_path(raw));
  if (j.value("dtype", "") != "uint8") fail(ErrorKind::kIo, raw.string() + ": expected uint8 mask");
  const auto s = j.at("shape").get<std::array<int, 3>>();
  Mask m;
  m.shape = {s[0], s[1], s[2]};
  m.data = read_raw<std::uint8_t>(raw, m.shape.voxels());
  return m;
}

Volume load_nifti(const fs::path& path, IntensityUnit unit) {
  GzFile f(path, "rb");
  std::array<char, kHeaderSize> hdr{};
  f.read(hdr.data(), hdr.size());
  if (get_field<std::int32_t>(hdr, 0) != kHeaderSize) {
    fail(ErrorKind::kIo, path.string() + " is not a NIfTI-1 file (or is byte-swapped)");
  }
  const auto ndim = get_field<std::int16_t>(hdr, kDimOffset);
  if (ndim < 3) fail(ErrorKind::kIo, path.string() + ": expected a 3D image");
  // NIfTI stores (x, y, z) with x fastest, which is our (z, y, x) row-major layout.
  const int nx = get_field<std::int16_t>(hdr, kDimOffset + 2);
  const int ny = get_field<std::int16_t>(hdr, kDimOffset + 4);
  const int nz = get_field<std::int16_t>(hdr, kDimOffset + 6);
  for (int k = 4; k <= ndim && k < 8; ++k) {
    if (get_field<std::int16_t>(hdr, kDimOffset + 2 * k) > 1) fail(ErrorKind::kIo, path.string() + ": 4D images unsupported");
  }
  const Vec3 spacing{std::fabs(get_field<float>(hdr, kPixdimOffset + 12)),
                     std::fabs(get_field<float>(hdr, kPixdimOffset + 8)),
                     std::fabs(get_field<float>(hdr, kPixdimOffset + 4))};
  const auto datatype = get_field<std::int16_t>(hdr, kDatatypeOffset);
  const auto vox_offset = static_cast<std::size_t>(get_field<float>(hdr, kVoxOffsetOffset));
  double slope = get_field<float>(hdr, kSclSlopeOffset);
  double inter = get_field<float>(hdr, kSclInterOffset);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (vox_offset > static_cast<std::size_t>(kHeaderSize)) f.skip(vox_offset - kHeaderSize);

  const Shape3 shape{nz, ny, nx};
  std::vector<float> data(shape.voxels());
  auto load = [&](auto tag) {
    using T = decltype(tag);
    std::vector<char> bytes(data.size() * sizeof(T));
    f.read(bytes.data(), bytes.size());
    convert<T>(bytes, data, slope, inter);
  };
  switch (datatype) {
    case 2: load(std::uint8_t{}); break;
    case 4: load(std::int16_t{}); break;
    case 8: load(std::int32_t{}); break;
    case 16: load(float{}); break;
    case 64: load(double{}); break;
    case 256: load(std::int8_t{}); break;
    case 512: load(std::uint16_t{}); break;
    default: fail(ErrorKind::kIo, path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  return Volume(shape, spacing, unit, std::move(data));
}

void save_nifti(const Volume& vol, const fs::path& path) {
  std::array<char, kHeaderSize> hdr{};
  put_field<std::int32_t>(hdr, 0, kHeaderSize);
  const Shape3& s = vol.shape();
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(s.w), static_cast<std::int16_t>(s.h),
                                static_cast<std::int16_t>(s.d), 1, 1, 1, 1};
  std::memcpy(hdr.data() + kDimOffset, dims, sizeof(dims));
  put_field<std::int16_t>(hdr, kDatatypeOffset, 16);
  put_field<std::int16_t>(hdr, kBitpixOffset, 32);
  const float pixdim[8] = {1.0f, static_cast<float>(vol.spacing().x), static_cast<float>(vol.spacing().y),
                           static_cast<float>(vol.spacing().z), 1, 1, 1, 1};
  std::memcpy(hdr.data() + kPixdimOffset, pixdim, sizeof(pixdim));
  put_field<float>(hdr, kVoxOffsetOffset, 352.0f);
  put_field<float>(hdr, kSclSlopeOffset, 1.0f);
  hdr[kXyztUnitsOffset] = 2;  // mm
  std::memcpy(hdr.data() + kMagicOffset, "n+1", 4);

  const bool gz = path.extension() == ".gz";
  GzFile f(path, gz ? "wb6" : "wbT");
  f.write(hdr.data(), hdr.size());
  const char ext[4] = {0, 0, 0, 0};
  f.write(ext, sizeof(ext));
  f.write(vol.data().data(), vol.data().size() * sizeof(float));
}

}  // namespace rprloc
