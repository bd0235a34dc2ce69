#ifndef HSICAL_COMMON_HPP_
#define HSICAL_COMMON_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsical {

// Floor applied to illumination values before any division by them.
inline constexpr double kEpsIllum = 1e-6;

// Pixels whose spectral norm falls below this are skipped by SAM.
inline constexpr double kEpsNorm = 1e-9;

enum class Err {
  // container / file format
  BadMagic,
  VersionUnsupported,
  TruncatedPayload,
  NonMonotonicWavelengths,
  InvalidDims,
  IoFailure,
  // band handling
  InsufficientCoverage,
  EmptySelection,
  // radiometry
  DimMismatch,
  EmptyRoi,
  WavelengthMismatch,
  NotDarkCorrected,
  // metrics / grayworld
  DegenerateBand,
  DegenerateBandMean,
  AllBandsDegenerate,
  AllPixelsDegenerate,
  // tensor kernel
  ShapeMismatch,
  NonIntegralOutput,
  NonDivisible,
  NonScalarLoss,
  DisconnectedGraph,
  // network
  SpatialUnderflow,
  IncompatibleSpatialDims,
  // training / config / cli
  DivergenceDetected,
  BadConfig,
  UsageError,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::BadMagic: return "BadMagic";
    case Err::VersionUnsupported: return "VersionUnsupported";
    case Err::TruncatedPayload: return "TruncatedPayload";
    case Err::NonMonotonicWavelengths: return "NonMonotonicWavelengths";
    case Err::InvalidDims: return "InvalidDims";
    case Err::IoFailure: return "IoFailure";
    case Err::InsufficientCoverage: return "InsufficientCoverage";
    case Err::EmptySelection: return "EmptySelection";
    case Err::DimMismatch: return "DimMismatch";
    case Err::EmptyRoi: return "EmptyRoi";
    case Err::WavelengthMismatch: return "WavelengthMismatch";
    case Err::NotDarkCorrected: return "NotDarkCorrected";
    case Err::DegenerateBand: return "DegenerateBand";
    case Err::DegenerateBandMean: return "DegenerateBandMean";
    case Err::AllBandsDegenerate: return "AllBandsDegenerate";
    case Err::AllPixelsDegenerate: return "AllPixelsDegenerate";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonIntegralOutput: return "NonIntegralOutput";
    case Err::NonDivisible: return "NonDivisible";
    case Err::NonScalarLoss: return "NonScalarLoss";
    case Err::DisconnectedGraph: return "DisconnectedGraph";
    case Err::SpatialUnderflow: return "SpatialUnderflow";
    case Err::IncompatibleSpatialDims: return "IncompatibleSpatialDims";
    case Err::DivergenceDetected: return "DivergenceDetected";
    case Err::BadConfig: return "BadConfig";
    case Err::UsageError: return "UsageError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Err code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

namespace io {

// Little-endian byte helpers. Files are byte-exact, so encoding is explicit
// rather than relying on host order.

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  buf.push_back(static_cast<std::uint8_t>(v & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

inline void put_u8(std::vector<std::uint8_t>& buf, std::uint8_t v) { buf.push_back(v); }

inline void put_f32(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(buf, bits);
}

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), Err::IoFailure, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    require(!in.bad(), Err::IoFailure, "read error on " + path);
    return Reader(std::move(bytes));
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) {
    require(pos_ + n <= bytes_.size(), Err::TruncatedPayload,
            "file ends " + std::to_string(pos_ + n - bytes_.size()) + " bytes short");
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Err::IoFailure, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), Err::IoFailure, "write error on " + path);
}

}  // namespace io
}  // namespace hsical

#endif  // HSICAL_COMMON_HPP_
