#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "hsical/grayworld.hpp"
#include "hsical/metrics.hpp"
#include "oracles.hpp"

using namespace hsical;

namespace {

double band_mean(const HyperCube& c, std::size_t b) {
  double acc = 0.0;
  for (std::size_t p = 0; p < c.pixels(); ++p) acc += c.data[b * c.pixels() + p];
  return acc / double(c.pixels());
}

HyperCube gray_scene(std::size_t h, std::size_t w, const std::vector<float>& wl,
                     std::mt19937_64& rng) {
  // spatial texture identical across bands, so every band mean is equal
  HyperCube cube = HyperCube::make(h, w, wl, CubeKind::Reflectance);
  std::uniform_real_distribution<float> dist(0.1f, 1.0f);
  std::vector<float> tex(h * w);
  for (auto& v : tex) v = dist(rng);
  for (std::size_t b = 0; b < wl.size(); ++b)
    std::copy(tex.begin(), tex.end(), cube.data.begin() + b * h * w);
  return cube;
}

IlluminationCurve rand_curve(const std::vector<float>& wl, std::mt19937_64& rng) {
  IlluminationCurve c;
  c.wavelengths = wl;
  c.dark_corrected = true;
  c.label = "rand";
  std::uniform_real_distribution<float> dist(0.2f, 2.0f);
  c.values.resize(wl.size());
  for (auto& v : c.values) v = dist(rng);
  return c;
}

}  // namespace

TEST_CASE("already-gray cube estimates a unit curve") {
  std::mt19937_64 rng(41);
  auto cube = gray_scene(4, 4, oracle::linspace_wl(400, 1000, 5), rng);
  cube.kind = CubeKind::Radiance;
  IlluminationCurve c = grayworld_estimate(cube);
  CHECK(c.label == "grayworld");
  for (float v : c.values) CHECK(v == Catch::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("two-band estimate against hand-computed means") {
  // means 0.2 and 0.4, default target 0.3 -> curve [2/3, 4/3]
  HyperCube cube = HyperCube::make(2, 2, {500.f, 600.f}, CubeKind::Radiance);
  for (std::size_t p = 0; p < 4; ++p) cube.data[p] = 0.2f;
  for (std::size_t p = 0; p < 4; ++p) cube.data[4 + p] = 0.4f;
  IlluminationCurve c = grayworld_estimate(cube);
  CHECK(c.values[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(c.values[1] == Catch::Approx(4.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("estimate is proportional to the true curve on gray scenes") {
  std::mt19937_64 rng(42);
  auto wl = oracle::linspace_wl(400, 1000, 6);
  auto refl = gray_scene(5, 5, wl, rng);
  auto L = rand_curve(wl, rng);
  HyperCube uncal = composite(refl, L);
  IlluminationCurve est = grayworld_estimate(uncal);
  const double ratio0 = double(est.values[0]) / L.values[0];
  for (std::size_t b = 1; b < wl.size(); ++b)
    CHECK(double(est.values[b]) / L.values[b] == Catch::Approx(ratio0).epsilon(1e-5));
}

TEST_CASE("degenerate band is reported") {
  HyperCube cube = HyperCube::make(2, 2, {500.f, 600.f}, CubeKind::Radiance, 0.5f);
  for (std::size_t p = 0; p < 4; ++p) cube.data[4 + p] = 0.0f;
  try {
    grayworld_estimate(cube);
    FAIL("expected DegenerateBand");
  } catch (const Error& e) {
    CHECK(e.code() == Err::DegenerateBand);
  }
}

TEST_CASE("calibrated output has equal band means") {
  std::mt19937_64 rng(43);
  auto cube = oracle::rand_cube(6, 6, oracle::linspace_wl(400, 1000, 5), rng, 0.05, 1.0);
  HyperCube out = grayworld_calibrate(cube);
  const double m0 = band_mean(out, 0);
  for (std::size_t b = 1; b < out.bands; ++b)
    CHECK(band_mean(out, b) == Catch::Approx(m0).epsilon(1e-6));
}

TEST_CASE("already-gray cube passes through unchanged under the auto target") {
  std::mt19937_64 rng(44);
  auto cube = gray_scene(4, 4, oracle::linspace_wl(400, 1000, 4), rng);
  cube.kind = CubeKind::Radiance;
  HyperCube out = grayworld_calibrate(cube, kGrayWorldAuto);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    CHECK(out.data[i] == Catch::Approx(cube.data[i]).epsilon(1e-6));
}

TEST_CASE("calibrate composes estimate for any explicit target") {
  std::mt19937_64 rng(49);
  auto cube = oracle::rand_cube(4, 4, oracle::linspace_wl(400, 1000, 3), rng, 0.1, 1.0);
  for (double target : {0.25, 0.5, 1.0}) {
    HyperCube a = grayworld_calibrate(cube, target);
    HyperCube b = calibrate(cube, grayworld_estimate(cube, target));
    CHECK(a.data == b.data);
  }
}

TEST_CASE("gray reflectance under any illumination calibrates to near-zero SAM") {
  std::mt19937_64 rng(45);
  auto wl = oracle::linspace_wl(400, 1000, 6);
  auto refl = gray_scene(5, 5, wl, rng);
  auto L = rand_curve(wl, rng);
  HyperCube out = grayworld_calibrate(composite(refl, L));
  CHECK(sam(out, refl) <= 1e-5);  // degrees; per-channel gains cancel up to scale
}

TEST_CASE("diagonal-gain equivariance") {
  std::mt19937_64 rng(46);
  auto wl = oracle::linspace_wl(400, 1000, 5);
  auto cube = oracle::rand_cube(5, 5, wl, rng, 0.05, 1.0);
  auto gains = rand_curve(wl, rng);
  HyperCube gained = cube;
  for (std::size_t b = 0; b < cube.bands; ++b)
    for (std::size_t p = 0; p < cube.pixels(); ++p)
      gained.data[b * cube.pixels() + p] *= gains.values[b];
  HyperCube a = grayworld_calibrate(cube);
  HyperCube b = grayworld_calibrate(gained);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-6f * std::max(1.0f, std::abs(a.data[i])));
}

TEST_CASE("grayworld_calibrate is idempotent") {
  std::mt19937_64 rng(47);
  auto cube = oracle::rand_cube(4, 4, oracle::linspace_wl(400, 1000, 4), rng, 0.05, 1.0);
  HyperCube once = grayworld_calibrate(cube);
  HyperCube once_rad = once;
  once_rad.kind = CubeKind::Radiance;
  HyperCube twice = grayworld_calibrate(once_rad);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    CHECK(std::abs(once.data[i] - twice.data[i]) <=
          1e-6f * std::max(1.0f, std::abs(once.data[i])));
}

TEST_CASE("explicit target mean scales the output") {
  std::mt19937_64 rng(48);
  auto cube = oracle::rand_cube(4, 4, oracle::linspace_wl(400, 1000, 3), rng, 0.1, 1.0);
  HyperCube out = grayworld_calibrate(cube, 0.5);
  for (std::size_t b = 0; b < out.bands; ++b)
    CHECK(band_mean(out, b) == Catch::Approx(0.5).epsilon(1e-5));
}
