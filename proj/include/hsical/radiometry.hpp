#ifndef HSICAL_RADIOMETRY_HPP_
#define HSICAL_RADIOMETRY_HPP_

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/hypercube.hpp"

namespace hsical {

/// Per-band global illumination spectrum. Values are linear radiance, floored
/// at kEpsIllum after dark correction so calibration never divides by zero.
struct IlluminationCurve {
  std::vector<float> wavelengths;
  std::vector<float> values;
  bool dark_corrected = false;
  std::string label;
  std::vector<std::size_t> floored_bands;  // bands clamped up to the floor

  std::size_t bands() const { return values.size(); }
  bool degenerate() const { return !floored_bands.empty(); }

  void validate() const {
    require(!values.empty() && wavelengths.size() == values.size(), Err::InvalidDims,
            "curve band count mismatch");
    for (float v : values)
      require(std::isfinite(v), Err::DegenerateBand, "non-finite illumination value");
  }
};

/// Pixel rectangle, half-open on both axes: rows [row0,row1), cols [col0,col1).
struct Roi {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  std::size_t rows() const { return row1 - row0; }
  std::size_t cols() const { return col1 - col0; }
  std::size_t count() const { return rows() * cols(); }

  void validate_for(const HyperCube& cube) const {
    require(row0 < row1 && col0 < col1, Err::EmptyRoi, "roi is empty");
    require(row1 <= cube.height && col1 <= cube.width, Err::EmptyRoi,
            "roi exceeds image bounds");
  }

  static Roi whole(const HyperCube& cube) { return {0, 0, cube.height, cube.width}; }
};

namespace detail {
inline void require_same_grid(const HyperCube& a, const HyperCube& b, const char* what) {
  require(a.height == b.height && a.width == b.width && a.bands == b.bands,
          Err::DimMismatch, std::string(what) + ": dimension mismatch");
  require(a.wavelengths == b.wavelengths, Err::DimMismatch,
          std::string(what) + ": wavelength mismatch");
}
}  // namespace detail

/// Dark-current correction: max(frame - dark, 0) elementwise. Radiance is
/// physically non-negative, so negative residuals clamp to zero.
inline HyperCube subtract_dark(const HyperCube& frame, const HyperCube& dark) {
  detail::require_same_grid(frame, dark, "subtract_dark");
  HyperCube out = frame;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::max(frame.data[i] - dark.data[i], 0.0f);
  return out;
}

/// Per-band mean of (white - dark) over the white-reference roi, floored at
/// kEpsIllum. Accumulation is sequential in pixel order so results do not
/// depend on any internal parallelism.
inline IlluminationCurve measure_illumination(const HyperCube& white_frame,
                                              const HyperCube& dark, const Roi& roi) {
  detail::require_same_grid(white_frame, dark, "measure_illumination");
  roi.validate_for(white_frame);

  IlluminationCurve curve;
  curve.wavelengths = white_frame.wavelengths;
  curve.values.resize(white_frame.bands);
  curve.dark_corrected = true;
  curve.label = "measured";

  const double inv_n = 1.0 / static_cast<double>(roi.count());
  for (std::size_t b = 0; b < white_frame.bands; ++b) {
    double acc = 0.0;
    for (std::size_t r = roi.row0; r < roi.row1; ++r)
      for (std::size_t c = roi.col0; c < roi.col1; ++c)
        acc += static_cast<double>(white_frame.at(b, r, c)) - dark.at(b, r, c);
    double v = acc * inv_n;
    if (v < kEpsIllum) {
      v = kEpsIllum;
      curve.floored_bands.push_back(b);
    }
    curve.values[b] = static_cast<float>(v);
  }
  return curve;
}

/// Ideal-white calibration: out = l * cube / L per band. Input must already be
/// dark-corrected radiance and the curve finalized (dark_corrected set).
inline HyperCube calibrate(const HyperCube& cube, const IlluminationCurve& illum,
                           float l = 1.0f) {
  cube.validate_dims();
  illum.validate();
  require(cube.kind == CubeKind::Radiance, Err::NotDarkCorrected,
          "calibrate expects a radiance cube");
  require(illum.dark_corrected, Err::NotDarkCorrected,
          "illumination curve is not dark-corrected");
  require(cube.wavelengths == illum.wavelengths, Err::WavelengthMismatch,
          "cube and curve sample different wavelengths");

  HyperCube out = cube;
  out.kind = CubeKind::Reflectance;
  const std::size_t npix = cube.pixels();
  for (std::size_t b = 0; b < cube.bands; ++b) {
    const float gain = l / illum.values[b];
    float* dst = out.data.data() + b * npix;
    for (std::size_t p = 0; p < npix; ++p) dst[p] = std::max(dst[p] * gain, 0.0f);
  }
  return out;
}

/// Asynchronous ground-truth generation: dark-correct the scene, measure the
/// illumination from the white-reference shot, then calibrate.
inline HyperCube ground_truth(const HyperCube& scene_raw, const HyperCube& scene_dark,
                              const HyperCube& illum_raw, const HyperCube& illum_dark,
                              const Roi& roi) {
  HyperCube scene = subtract_dark(scene_raw, scene_dark);
  scene.kind = CubeKind::Radiance;
  IlluminationCurve L = measure_illumination(illum_raw, illum_dark, roi);
  detail::require_same_grid(scene_raw, illum_raw, "ground_truth");
  return calibrate(scene, L);
}

/// Dataset expansion: radiance = reflectance * L per band.
inline HyperCube composite(const HyperCube& reflectance, const IlluminationCurve& illum) {
  reflectance.validate_dims();
  illum.validate();
  require(reflectance.kind == CubeKind::Reflectance, Err::DimMismatch,
          "composite expects a reflectance cube");
  require(reflectance.wavelengths == illum.wavelengths, Err::WavelengthMismatch,
          "cube and curve sample different wavelengths");

  HyperCube out = reflectance;
  out.kind = CubeKind::Radiance;
  const std::size_t npix = reflectance.pixels();
  for (std::size_t b = 0; b < reflectance.bands; ++b) {
    const float gain = illum.values[b];
    float* dst = out.data.data() + b * npix;
    for (std::size_t p = 0; p < npix; ++p) dst[p] *= gain;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Illumination curve CSV: header "wavelength_nm,value", one row per band.
// ---------------------------------------------------------------------------

inline void save_curve(const IlluminationCurve& curve, const std::string& path) {
  curve.validate();
  std::ostringstream os;
  os << "wavelength_nm,value\n";
  os.precision(9);
  for (std::size_t b = 0; b < curve.bands(); ++b)
    os << curve.wavelengths[b] << "," << curve.values[b] << "\n";
  const std::string s = os.str();
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  io::write_file(path, bytes);
}

inline IlluminationCurve load_curve(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Err::IoFailure, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Err::TruncatedPayload,
          "empty curve file");
  require(line.rfind("wavelength_nm,value", 0) == 0, Err::BadMagic,
          "curve file header mismatch");

  IlluminationCurve curve;
  // Curves on disk are finalized measurements.
  curve.dark_corrected = true;
  std::size_t slash = path.find_last_of("/\\");
  std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
  std::size_t dot = stem.find_last_of('.');
  curve.label = dot == std::string::npos ? stem : stem.substr(0, dot);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    require(comma != std::string::npos, Err::TruncatedPayload,
            "malformed curve row: " + line);
    curve.wavelengths.push_back(std::stof(line.substr(0, comma)));
    curve.values.push_back(std::stof(line.substr(comma + 1)));
  }
  curve.validate();
  for (std::size_t i = 1; i < curve.bands(); ++i)
    require(curve.wavelengths[i - 1] < curve.wavelengths[i],
            Err::NonMonotonicWavelengths, "curve wavelengths must increase");
  return curve;
}

}  // namespace hsical

#endif  // HSICAL_RADIOMETRY_HPP_
