#ifndef HSICAL_METRICS_HPP_
#define HSICAL_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/hypercube.hpp"

namespace hsical {

// PSNR of a zero-error band; keeps aggregation finite on exact matches.
inline constexpr double kPsnrCapDb = 99.0;

struct MetricsReport {
  double psnr_db = 0.0;
  double sam_deg = 0.0;
  double rmse_pct = 0.0;   // 100 * raw RMSE
  double ergas_pct = 0.0;
  BandRange range;
  std::size_t n_pixels = 0;
  std::size_t n_bands = 0;
  std::vector<std::size_t> skipped_bands;  // bands with max(gt)=0, excluded from PSNR
  std::size_t skipped_pixels = 0;          // zero-norm pixels excluded from SAM
  bool exact_match = false;
  bool scale_aligned = false;
  double align_scale = 1.0;
};

namespace detail {
inline void require_same_dims(const HyperCube& gt, const HyperCube& est) {
  require(gt.height == est.height && gt.width == est.width && gt.bands == est.bands,
          Err::DimMismatch, "metric inputs have different dimensions");
}
}  // namespace detail

/// Mean over bands of 10*log10(max(gt_k)^2 / MSE_k). Bands whose gt maximum is
/// zero are skipped and recorded; zero-MSE bands are capped at kPsnrCapDb.
inline double psnr(const HyperCube& gt, const HyperCube& est,
                   std::vector<std::size_t>* skipped = nullptr) {
  detail::require_same_dims(gt, est);
  const std::size_t npix = gt.pixels();
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < gt.bands; ++b) {
    const float* g = gt.data.data() + b * npix;
    const float* e = est.data.data() + b * npix;
    double peak = 0.0;
    double sse = 0.0;
    for (std::size_t p = 0; p < npix; ++p) {
      peak = std::max(peak, static_cast<double>(g[p]));
      const double d = static_cast<double>(g[p]) - e[p];
      sse += d * d;
    }
    if (peak <= 0.0) {
      if (skipped) skipped->push_back(b);
      continue;
    }
    const double mse = sse / static_cast<double>(npix);
    acc += mse == 0.0 ? kPsnrCapDb
                      : std::min(10.0 * std::log10(peak * peak / mse), kPsnrCapDb);
    ++used;
  }
  require(used > 0, Err::AllBandsDegenerate, "every gt band has zero maximum");
  return acc / static_cast<double>(used);
}

/// sqrt of the mean squared difference over all H*W*C cells.
inline double rmse(const HyperCube& gt, const HyperCube& est) {
  detail::require_same_dims(gt, est);
  double sse = 0.0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const double d = static_cast<double>(gt.data[i]) - est.data[i];
    sse += d * d;
  }
  return std::sqrt(sse / static_cast<double>(gt.data.size()));
}

/// Relative global error as a percentage:
/// 100 * sqrt((1/B) sum_k MSE_k / mean(gt_k)^2). Per-band MSE normalization
/// keeps the value resolution-independent.
inline double ergas(const HyperCube& gt, const HyperCube& est) {
  detail::require_same_dims(gt, est);
  const std::size_t npix = gt.pixels();
  double acc = 0.0;
  for (std::size_t b = 0; b < gt.bands; ++b) {
    const float* g = gt.data.data() + b * npix;
    const float* e = est.data.data() + b * npix;
    double sum = 0.0;
    double sse = 0.0;
    for (std::size_t p = 0; p < npix; ++p) {
      sum += g[p];
      const double d = static_cast<double>(g[p]) - e[p];
      sse += d * d;
    }
    const double mean = sum / static_cast<double>(npix);
    require(mean >= kEpsIllum, Err::DegenerateBandMean,
            "gt band " + std::to_string(b) + " mean below floor");
    acc += (sse / static_cast<double>(npix)) / (mean * mean);
  }
  return 100.0 * std::sqrt(acc / static_cast<double>(gt.bands));
}

/// Unnormalized variant: sqrt((1/B) sum_k ||gt_k - est_k||^2 / mean(gt_k)^2).
/// Scales with pixel count; kept for auditing against the percentage form.
inline double ergas_literal(const HyperCube& gt, const HyperCube& est) {
  detail::require_same_dims(gt, est);
  const std::size_t npix = gt.pixels();
  double acc = 0.0;
  for (std::size_t b = 0; b < gt.bands; ++b) {
    const float* g = gt.data.data() + b * npix;
    const float* e = est.data.data() + b * npix;
    double sum = 0.0;
    double sse = 0.0;
    for (std::size_t p = 0; p < npix; ++p) {
      sum += g[p];
      const double d = static_cast<double>(g[p]) - e[p];
      sse += d * d;
    }
    const double mean = sum / static_cast<double>(npix);
    require(mean >= kEpsIllum, Err::DegenerateBandMean,
            "gt band " + std::to_string(b) + " mean below floor");
    acc += sse / (mean * mean);
  }
  return std::sqrt(acc / static_cast<double>(gt.bands));
}

/// Mean per-pixel angle between the two spectra, in degrees. Pixels where
/// either spectrum has norm below kEpsNorm are skipped and counted; the arccos
/// argument is clamped to [-1,1] against ulp overshoot.
inline double sam(const HyperCube& gt, const HyperCube& est,
                  std::size_t* skipped_pixels = nullptr) {
  detail::require_same_dims(gt, est);
  const std::size_t npix = gt.pixels();
  double acc = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
  for (std::size_t p = 0; p < npix; ++p) {
    double dot = 0.0, ngs = 0.0, nes = 0.0;
    for (std::size_t b = 0; b < gt.bands; ++b) {
      const double g = gt.data[b * npix + p];
      const double e = est.data[b * npix + p];
      dot += g * e;
      ngs += g * g;
      nes += e * e;
    }
    if (ngs < kEpsNorm * kEpsNorm || nes < kEpsNorm * kEpsNorm) {
      ++skipped;
      continue;
    }
    // Compare against the unrooted norms first so exactly collinear spectra
    // land on 0 or pi before sqrt rounding can push the cosine off +-1.
    double ang;
    if (dot * dot >= ngs * nes) {
      ang = dot >= 0.0 ? 0.0 : std::numbers::pi;
    } else {
      ang = std::acos(std::clamp(dot / std::sqrt(ngs * nes), -1.0, 1.0));
    }
    acc += ang;
    ++used;
  }
  if (skipped_pixels) *skipped_pixels = skipped;
  require(used > 0, Err::AllPixelsDegenerate, "every pixel has a zero-norm spectrum");
  return acc / static_cast<double>(used) * (180.0 / std::numbers::pi);
}

/// All four metrics on cubes that are already sliced to the range of interest.
inline MetricsReport compute_report(const HyperCube& gt, const HyperCube& est,
                                    const BandRange& range) {
  detail::require_same_dims(gt, est);
  MetricsReport rep;
  rep.range = range;
  rep.n_pixels = gt.pixels();
  rep.n_bands = gt.bands;
  rep.exact_match = gt.data == est.data;
  rep.psnr_db = psnr(gt, est, &rep.skipped_bands);
  rep.rmse_pct = 100.0 * rmse(gt, est);
  rep.ergas_pct = ergas(gt, est);
  rep.sam_deg = sam(gt, est, &rep.skipped_pixels);
  return rep;
}

/// Closed-form least-squares global scale: argmin_s ||gt - s*est||.
inline double best_global_scale(const HyperCube& gt, const HyperCube& est) {
  detail::require_same_dims(gt, est);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    num += static_cast<double>(gt.data[i]) * est.data[i];
    den += static_cast<double>(est.data[i]) * est.data[i];
  }
  return den > 0.0 ? num / den : 1.0;
}

/// One report per range; with `scale_aligned` each range additionally gets a
/// report where est was pre-multiplied by the best global scale.
inline std::vector<MetricsReport> evaluate(const HyperCube& gt, const HyperCube& est,
                                           const std::vector<BandRange>& ranges,
                                           bool scale_aligned = false) {
  detail::require_same_dims(gt, est);
  std::vector<MetricsReport> reports;
  for (const BandRange& range : ranges) {
    HyperCube g = slice_range(gt, range);
    HyperCube e = slice_range(est, range);
    reports.push_back(compute_report(g, e, range));
    if (scale_aligned) {
      const double s = best_global_scale(g, e);
      HyperCube es = e;
      for (float& v : es.data) v = static_cast<float>(v * s);
      MetricsReport rep = compute_report(g, es, range);
      rep.scale_aligned = true;
      rep.align_scale = s;
      reports.push_back(rep);
    }
  }
  return reports;
}

}  // namespace hsical

#endif  // HSICAL_METRICS_HPP_
