#ifndef HSICAL_SYNTH_HPP_
#define HSICAL_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/hypercube.hpp"
#include "hsical/radiometry.hpp"

namespace hsical {

/// Procedural stand-in for the captured dataset: piecewise-constant scenes of
/// smooth random spectra, combined with a small family of parametric
/// illumination archetypes.
struct SynthConfig {
  std::size_t n_scenes = 16;
  std::size_t size = 64;  // square spatial extent
  std::size_t bands = 8;
  double wl_lo = 400.0;
  double wl_hi = 1000.0;
  std::size_t n_blobs = 5;  // piecewise regions per scene
  std::vector<std::string> illum_family = {"flat", "ramp", "notch", "lowlight"};
  double noise_dark = 0.0;  // dark-current level; 0 disables the noisy pipeline
  std::uint64_t seed = 7;

  std::vector<float> wavelengths() const {
    require(bands >= 2, Err::BadConfig, "need at least 2 bands");
    std::vector<float> wl(bands);
    for (std::size_t i = 0; i < bands; ++i)
      wl[i] = static_cast<float>(wl_lo + (wl_hi - wl_lo) * static_cast<double>(i) /
                                             static_cast<double>(bands - 1));
    return wl;
  }
};

/// Fixed illumination archetypes, evaluated on the scene's wavelength grid.
inline IlluminationCurve make_illumination(const std::string& name,
                                           const std::vector<float>& wavelengths) {
  IlluminationCurve curve;
  curve.wavelengths = wavelengths;
  curve.values.resize(wavelengths.size());
  curve.dark_corrected = true;
  curve.label = name;
  const double lo = wavelengths.front(), hi = wavelengths.back();
  for (std::size_t b = 0; b < wavelengths.size(); ++b) {
    const double wl = wavelengths[b];
    const double t = (wl - lo) / (hi - lo);
    double v;
    if (name == "flat") {
      v = 1.0;
    } else if (name == "ramp") {
      // blackbody-like rise toward the red/NIR end
      v = 0.4 + 0.6 * t;
    } else if (name == "notch") {
      // color-filter style dip centered mid-spectrum
      const double d = (wl - 550.0) / 60.0;
      v = 1.0 - 0.6 * std::exp(-0.5 * d * d);
    } else if (name == "lowlight") {
      // several-fold dimmer with a mild tilt
      v = 0.3 * (0.75 + 0.25 * t);
    } else {
      fail(Err::BadConfig, "unknown illumination archetype '" + name + "'");
    }
    curve.values[b] = static_cast<float>(std::max(v, kEpsIllum));
  }
  return curve;
}

namespace detail {
inline std::mt19937_64 scene_rng(const SynthConfig& cfg, std::size_t index) {
  // Distinct deterministic stream per (seed, index).
  return std::mt19937_64(cfg.seed * 0x9E3779B97F4A7C15ull + index * 2654435761ull + 1);
}
}  // namespace detail

/// Reflectance scene `index`: Voronoi regions around random sites, one smooth
/// spectrum per region (a few Gaussian bumps over wavelength, clamped to
/// [0.02, 1] so no band is degenerate).
inline HyperCube synth_scene(const SynthConfig& cfg, std::size_t index,
                             std::string* name = nullptr) {
  auto rng = detail::scene_rng(cfg, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto wl = cfg.wavelengths();
  const std::size_t n = cfg.size;

  struct Site {
    double r, c;
    std::vector<float> spectrum;
  };
  std::vector<Site> sites(std::max<std::size_t>(cfg.n_blobs, 1));
  for (auto& s : sites) {
    s.r = unit(rng) * static_cast<double>(n);
    s.c = unit(rng) * static_cast<double>(n);
    const double base = 0.1 + 0.5 * unit(rng);
    const int bumps = 1 + static_cast<int>(unit(rng) * 3.0);
    std::vector<double> amp(bumps), center(bumps), width(bumps);
    for (int j = 0; j < bumps; ++j) {
      amp[j] = -0.3 + 0.7 * unit(rng);
      center[j] = cfg.wl_lo + (cfg.wl_hi - cfg.wl_lo) * unit(rng);
      width[j] = 30.0 + 120.0 * unit(rng);
    }
    s.spectrum.resize(cfg.bands);
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      double v = base;
      for (int j = 0; j < bumps; ++j) {
        const double d = (wl[b] - center[j]) / width[j];
        v += amp[j] * std::exp(-0.5 * d * d);
      }
      s.spectrum[b] = static_cast<float>(std::clamp(v, 0.02, 1.0));
    }
  }

  HyperCube cube = HyperCube::make(n, n, wl, CubeKind::Reflectance);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t s = 0; s < sites.size(); ++s) {
        const double dr = static_cast<double>(r) + 0.5 - sites[s].r;
        const double dc = static_cast<double>(c) + 0.5 - sites[s].c;
        const double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      for (std::size_t b = 0; b < cfg.bands; ++b)
        cube.at(b, r, c) = sites[best].spectrum[b];
    }
  }
  if (name) *name = "scene" + std::to_string(index);
  return cube;
}

struct SynthPair {
  HyperCube uncalibrated;  // radiance, dark-corrected
  HyperCube gt;            // reflectance
  std::string illum_label;
  std::size_t scene_index = 0;
};

/// Every scene crossed with every illumination archetype. With noise_dark > 0
/// the pair is produced through the full asynchronous pipeline (dark frames on
/// both shots, white-reference measurement); otherwise the gt is the scene
/// itself and the uncalibrated cube is the plain composite.
inline std::vector<SynthPair> synth_dataset(const SynthConfig& cfg) {
  std::vector<SynthPair> out;
  out.reserve(cfg.n_scenes * cfg.illum_family.size());
  const auto wl = cfg.wavelengths();
  for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
    const HyperCube scene = synth_scene(cfg, i);
    for (const std::string& label : cfg.illum_family) {
      const IlluminationCurve L = make_illumination(label, wl);
      SynthPair pair;
      pair.illum_label = label;
      pair.scene_index = i;
      if (cfg.noise_dark <= 0.0) {
        pair.uncalibrated = composite(scene, L);
        pair.gt = scene;
      } else {
        auto rng = detail::scene_rng(cfg, i * 7919 + 31337);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        HyperCube scene_dark = HyperCube::make(cfg.size, cfg.size, wl, CubeKind::DarkFrame);
        for (float& v : scene_dark.data)
          v = static_cast<float>(cfg.noise_dark * (0.5 + unit(rng)));
        HyperCube illum_dark = HyperCube::make(cfg.size, cfg.size, wl, CubeKind::DarkFrame);
        for (float& v : illum_dark.data)
          v = static_cast<float>(cfg.noise_dark * (0.5 + unit(rng)));

        HyperCube scene_raw = composite(scene, L);
        for (std::size_t j = 0; j < scene_raw.data.size(); ++j)
          scene_raw.data[j] += scene_dark.data[j];
        HyperCube illum_raw = HyperCube::make(cfg.size, cfg.size, wl, CubeKind::Radiance);
        const std::size_t npix = illum_raw.pixels();
        for (std::size_t b = 0; b < cfg.bands; ++b) {
          float* dst = illum_raw.data.data() + b * npix;
          const float* dk = illum_dark.data.data() + b * npix;
          for (std::size_t p = 0; p < npix; ++p) dst[p] = L.values[b] + dk[p];
        }
        pair.gt = ground_truth(scene_raw, scene_dark, illum_raw, illum_dark,
                               Roi::whole(scene_raw));
        pair.uncalibrated = subtract_dark(scene_raw, scene_dark);
      }
      pair.uncalibrated.kind = CubeKind::Radiance;
      out.push_back(std::move(pair));
    }
  }
  return out;
}

}  // namespace hsical

#endif  // HSICAL_SYNTH_HPP_
