#ifndef HSICAL_GRAYWORLD_HPP_
#define HSICAL_GRAYWORLD_HPP_

#include <cmath>
#include <string>

#include "hsical/common.hpp"
#include "hsical/hypercube.hpp"
#include "hsical/radiometry.hpp"

namespace hsical {

/// Sentinel target: use the mean of the band means, which keeps overall image
/// energy unchanged and gives the estimated curve unit mean.
inline constexpr double kGrayWorldAuto = 0.0;

/// Fixed default target for calibration. A constant target makes the
/// calibrated image independent of any per-band gain on the input, so the
/// output is identical under every illumination of the same scene.
inline constexpr double kGrayWorldTarget = 0.5;

/// Gray-World illumination estimate: the spatial mean of every band is assumed
/// equal to the target m*, so value(b) = mean_b / m*.
inline IlluminationCurve grayworld_estimate(const HyperCube& cube,
                                            double target_mean = kGrayWorldAuto) {
  cube.validate_dims();
  require(cube.kind == CubeKind::Radiance, Err::NotDarkCorrected,
          "grayworld_estimate expects a radiance cube");

  const std::size_t npix = cube.pixels();
  const double inv_n = 1.0 / static_cast<double>(npix);
  std::vector<double> band_mean(cube.bands);
  for (std::size_t b = 0; b < cube.bands; ++b) {
    double acc = 0.0;
    const float* src = cube.data.data() + b * npix;
    for (std::size_t p = 0; p < npix; ++p) acc += src[p];
    band_mean[b] = acc * inv_n;
    require(band_mean[b] >= kEpsIllum, Err::DegenerateBand,
            "band " + std::to_string(b) + " mean below floor");
  }

  double target = target_mean;
  if (target <= 0.0) {
    double acc = 0.0;
    for (double m : band_mean) acc += m;
    target = acc / static_cast<double>(cube.bands);
  }

  IlluminationCurve curve;
  curve.wavelengths = cube.wavelengths;
  curve.values.resize(cube.bands);
  curve.dark_corrected = true;
  curve.label = "grayworld";
  for (std::size_t b = 0; b < cube.bands; ++b)
    curve.values[b] = static_cast<float>(band_mean[b] / target);
  return curve;
}

/// Calibrate with the Gray-World estimate; output band means all equal m*.
/// The default is the fixed target so per-band input gains cancel exactly and
/// the operator is idempotent; pass kGrayWorldAuto for the energy-preserving
/// variant.
inline HyperCube grayworld_calibrate(const HyperCube& cube,
                                     double target_mean = kGrayWorldTarget) {
  return calibrate(cube, grayworld_estimate(cube, target_mean));
}

}  // namespace hsical

#endif  // HSICAL_GRAYWORLD_HPP_
