#ifndef HSICAL_HYPERCUBE_HPP_
#define HSICAL_HYPERCUBE_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsical/common.hpp"

namespace hsical {

enum class CubeKind : std::uint8_t { Radiance = 0, Reflectance = 1, DarkFrame = 2 };

inline const char* kind_name(CubeKind k) {
  switch (k) {
    case CubeKind::Radiance: return "radiance";
    case CubeKind::Reflectance: return "reflectance";
    case CubeKind::DarkFrame: return "dark";
  }
  return "?";
}

/// H x W x C radiance or reflectance volume, stored band-major:
/// data[(b*H + r)*W + c]. Immutable by convention once constructed.
struct HyperCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> wavelengths;  // strictly increasing, size == bands
  std::vector<float> data;         // size == bands * height * width
  CubeKind kind = CubeKind::Radiance;
  std::string bit_origin;  // quantization note, informational only; not serialized

  std::size_t pixels() const { return height * width; }

  std::size_t index(std::size_t b, std::size_t r, std::size_t c) const {
    return (b * height + r) * width + c;
  }

  float at(std::size_t b, std::size_t r, std::size_t c) const { return data[index(b, r, c)]; }
  float& at(std::size_t b, std::size_t r, std::size_t c) { return data[index(b, r, c)]; }

  std::span<const float> band(std::size_t b) const {
    return std::span<const float>(data.data() + b * pixels(), pixels());
  }
  std::span<float> band(std::size_t b) {
    return std::span<float>(data.data() + b * pixels(), pixels());
  }

  static HyperCube make(std::size_t h, std::size_t w, std::vector<float> wl,
                        CubeKind kind = CubeKind::Radiance, float fill = 0.f) {
    HyperCube c;
    c.height = h;
    c.width = w;
    c.bands = wl.size();
    c.wavelengths = std::move(wl);
    c.kind = kind;
    c.data.assign(c.bands * h * w, fill);
    c.validate_dims();
    return c;
  }

  void validate_dims() const {
    require(height > 0 && width > 0 && bands > 0, Err::InvalidDims,
            "cube dims must be positive, got " + std::to_string(height) + "x" +
                std::to_string(width) + "x" + std::to_string(bands));
    require(wavelengths.size() == bands, Err::InvalidDims,
            "wavelength list length != band count");
    for (std::size_t i = 1; i < bands; ++i)
      require(wavelengths[i - 1] < wavelengths[i], Err::NonMonotonicWavelengths,
              "wavelengths must be strictly increasing");
    require(data.size() == bands * height * width, Err::InvalidDims,
            "data length != H*W*C");
  }

  bool same_geometry(const HyperCube& o) const {
    return height == o.height && width == o.width && bands == o.bands &&
           wavelengths == o.wavelengths;
  }
};

inline bool operator==(const HyperCube& a, const HyperCube& b) {
  return a.same_geometry(b) && a.kind == b.kind && a.data == b.data;
}

/// Half-closed-or-closed wavelength interval. VIS is [400,700] with both ends
/// included; NIR is (700,1000] so the 700 nm band belongs to VIS only.
struct BandRange {
  double lo = 0.0;
  double hi = 0.0;
  bool include_lo = true;
  bool include_hi = true;
  std::string name;

  bool contains(double wl) const {
    bool above = include_lo ? wl >= lo : wl > lo;
    bool below = include_hi ? wl <= hi : wl < hi;
    return above && below;
  }

  static BandRange vis() { return {400.0, 700.0, true, true, "vis"}; }
  static BandRange nir() { return {700.0, 1000.0, false, true, "nir"}; }
  static BandRange full() { return {400.0, 1000.0, true, true, "full"}; }
};

// ---------------------------------------------------------------------------
// Cube container file:
//   magic "HSC1" | u32 version=1 | u32 H | u32 W | u32 C | u8 kind
//   | C x f32 wavelengths | H*W*C x f32 data, band-major, all little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCubeVersion = 1;

inline std::vector<std::uint8_t> cube_to_bytes(const HyperCube& cube) {
  cube.validate_dims();
  std::vector<std::uint8_t> buf;
  buf.reserve(21 + 4 * (cube.bands + cube.data.size()));
  buf.insert(buf.end(), {'H', 'S', 'C', '1'});
  io::put_u32(buf, kCubeVersion);
  io::put_u32(buf, static_cast<std::uint32_t>(cube.height));
  io::put_u32(buf, static_cast<std::uint32_t>(cube.width));
  io::put_u32(buf, static_cast<std::uint32_t>(cube.bands));
  io::put_u8(buf, static_cast<std::uint8_t>(cube.kind));
  for (float wl : cube.wavelengths) io::put_f32(buf, wl);
  for (float v : cube.data) io::put_f32(buf, v);
  return buf;
}

inline void save_cube(const HyperCube& cube, const std::string& path) {
  io::write_file(path, cube_to_bytes(cube));
}

inline HyperCube cube_from_bytes(std::vector<std::uint8_t> bytes) {
  io::Reader rd(std::move(bytes));
  char magic[4];
  rd.bytes(magic, 4);
  require(std::memcmp(magic, "HSC1", 4) == 0, Err::BadMagic,
          "expected magic HSC1");
  std::uint32_t version = rd.u32();
  require(version == kCubeVersion, Err::VersionUnsupported,
          "version " + std::to_string(version));
  HyperCube cube;
  cube.height = rd.u32();
  cube.width = rd.u32();
  cube.bands = rd.u32();
  std::uint8_t kind = rd.u8();
  require(kind <= 2, Err::VersionUnsupported, "unknown cube kind tag");
  cube.kind = static_cast<CubeKind>(kind);
  require(cube.height > 0 && cube.width > 0 && cube.bands > 0, Err::InvalidDims,
          "zero dimension in header");
  cube.wavelengths.resize(cube.bands);
  for (auto& wl : cube.wavelengths) wl = rd.f32();
  cube.data.resize(cube.bands * cube.height * cube.width);
  rd.bytes(cube.data.data(), cube.data.size() * sizeof(float));
  cube.validate_dims();
  return cube;
}

inline HyperCube load_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Err::IoFailure, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return cube_from_bytes(std::move(bytes));
}

// ---------------------------------------------------------------------------
// Band resampling and slicing
// ---------------------------------------------------------------------------

/// Resample to the 31-channel 400-700 nm convention. Output band k at nominal
/// wavelength 400+10k nm is the mean of all source bands with wavelength in
/// [nominal-5, nominal+5); half-open bins so a source band lands in exactly
/// one bin.
inline HyperCube resample_to_31(const HyperCube& cube) {
  cube.validate_dims();
  const std::size_t npix = cube.pixels();
  std::vector<float> nominal(31);
  for (int k = 0; k < 31; ++k) nominal[k] = 400.f + 10.f * static_cast<float>(k);

  HyperCube out = HyperCube::make(cube.height, cube.width, nominal, cube.kind);
  out.bit_origin = cube.bit_origin;

  for (int k = 0; k < 31; ++k) {
    const double lo = nominal[k] - 5.0;
    const double hi = nominal[k] + 5.0;
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < cube.bands; ++b) {
      double wl = cube.wavelengths[b];
      if (wl >= lo && wl < hi) members.push_back(b);
    }
    require(!members.empty(), Err::InsufficientCoverage,
            "no source band in bin around " + std::to_string(nominal[k]) + " nm");
    auto dst = out.band(static_cast<std::size_t>(k));
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t p = 0; p < npix; ++p) {
      double acc = 0.0;
      for (std::size_t b : members) acc += cube.data[b * npix + p];
      dst[p] = static_cast<float>(acc * inv);
    }
  }
  return out;
}

/// Keep exactly the bands whose wavelength lies inside the range.
inline HyperCube slice_range(const HyperCube& cube, const BandRange& range) {
  cube.validate_dims();
  std::vector<std::size_t> keep;
  for (std::size_t b = 0; b < cube.bands; ++b)
    if (range.contains(cube.wavelengths[b])) keep.push_back(b);
  require(!keep.empty(), Err::EmptySelection,
          "no band inside [" + std::to_string(range.lo) + ", " +
              std::to_string(range.hi) + "]");

  HyperCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = keep.size();
  out.kind = cube.kind;
  out.bit_origin = cube.bit_origin;
  out.wavelengths.reserve(keep.size());
  out.data.reserve(keep.size() * cube.pixels());
  for (std::size_t b : keep) {
    out.wavelengths.push_back(cube.wavelengths[b]);
    auto src = cube.band(b);
    out.data.insert(out.data.end(), src.begin(), src.end());
  }
  return out;
}

}  // namespace hsical

#endif  // HSICAL_HYPERCUBE_HPP_
