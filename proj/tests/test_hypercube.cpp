#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "hsical/hypercube.hpp"
#include "oracles.hpp"

using namespace hsical;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "hsical_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("save/load round trip is exact") {
  std::mt19937_64 rng(11);
  auto cube = oracle::rand_cube(3, 4, {400.f, 550.f, 700.f, 900.f, 1000.f}, rng);
  const auto p = temp_path("roundtrip.hsc");
  save_cube(cube, p.string());
  HyperCube back = load_cube(p.string());
  CHECK(back == cube);
  CHECK(back.data == cube.data);  // bitwise: float vectors compare exactly
}

TEST_CASE("bad magic is rejected") {
  const auto p = temp_path("badmagic.hsc");
  std::ofstream out(p, std::ios::binary);
  out << "XXXXjunkjunkjunk";
  out.close();
  try {
    load_cube(p.string());
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == Err::BadMagic);
  }
}

TEST_CASE("truncated payload is rejected") {
  std::mt19937_64 rng(12);
  auto cube = oracle::rand_cube(2, 2, {400.f, 500.f}, rng);
  auto bytes = cube_to_bytes(cube);
  bytes.resize(bytes.size() - 3);
  try {
    cube_from_bytes(bytes);
    FAIL("expected TruncatedPayload");
  } catch (const Error& e) {
    CHECK(e.code() == Err::TruncatedPayload);
  }
}

TEST_CASE("non-monotonic wavelengths are rejected on load") {
  auto cube = HyperCube::make(1, 1, {400.f, 500.f}, CubeKind::Radiance, 1.f);
  auto bytes = cube_to_bytes(cube);
  // wavelengths start at offset 21; swap the two f32 entries
  std::swap_ranges(bytes.begin() + 21, bytes.begin() + 25, bytes.begin() + 25);
  try {
    cube_from_bytes(bytes);
    FAIL("expected NonMonotonicWavelengths");
  } catch (const Error& e) {
    CHECK(e.code() == Err::NonMonotonicWavelengths);
  }
}

TEST_CASE("2x2x3 cube cells land at the band-major offsets") {
  HyperCube cube = HyperCube::make(2, 2, {400.f, 500.f, 600.f});
  for (std::size_t i = 0; i < 12; ++i) cube.data[i] = static_cast<float>(i);
  const auto p = temp_path("enum.hsc");
  save_cube(cube, p.string());
  HyperCube back = load_cube(p.string());
  // enumerate every cell against the writer's index formula (b*H + r)*W + c
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(back.at(b, r, c) == static_cast<float>((b * 2 + r) * 2 + c));
}

TEST_CASE("degenerate dims are rejected on save") {
  HyperCube cube;
  cube.height = 0;
  cube.width = 4;
  cube.bands = 1;
  cube.wavelengths = {500.f};
  try {
    save_cube(cube, temp_path("never.hsc").string());
    FAIL("expected InvalidDims");
  } catch (const Error& e) {
    CHECK(e.code() == Err::InvalidDims);
  }
}

TEST_CASE("two saves of the same cube produce identical bytes") {
  std::mt19937_64 rng(13);
  auto cube = oracle::rand_cube(4, 4, oracle::linspace_wl(400, 1000, 6), rng);
  const auto p1 = temp_path("det1.hsc"), p2 = temp_path("det2.hsc");
  save_cube(cube, p1.string());
  save_cube(cube, p2.string());
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("1x1x1 cube payload is one little-endian f32") {
  HyperCube cube = HyperCube::make(1, 1, {500.f}, CubeKind::Radiance, 0.5f);
  auto bytes = cube_to_bytes(cube);
  // header: 4 magic + 4 version + 12 dims + 1 kind + 4 wavelength = 25 bytes
  REQUIRE(bytes.size() == 29);
  CHECK(bytes[25] == 0x00);
  CHECK(bytes[26] == 0x00);
  CHECK(bytes[27] == 0x00);
  CHECK(bytes[28] == 0x3F);  // 0.5f = 0x3F000000
}

TEST_CASE("resample keeps cubes already on the 31-channel grid") {
  std::mt19937_64 rng(14);
  std::vector<float> wl(31);
  for (int k = 0; k < 31; ++k) wl[k] = 400.f + 10.f * k;
  auto cube = oracle::rand_cube(3, 3, wl, rng);
  HyperCube out = resample_to_31(cube);
  CHECK(out.bands == 31);
  CHECK(out.wavelengths == wl);
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    CHECK(out.data[i] == Catch::Approx(cube.data[i]).epsilon(1e-7));
}

TEST_CASE("resample of a constant cube is constant") {
  auto cube = HyperCube::make(2, 2, oracle::linspace_wl(395, 705, 64), CubeKind::Radiance, 0.37f);
  HyperCube out = resample_to_31(cube);
  for (float v : out.data) CHECK(v == Catch::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("204-band resample matches the per-bin mean oracle") {
  // band value = its wavelength, so bin means are directly checkable
  auto wl = oracle::linspace_wl(400, 1000, 204);
  HyperCube cube = HyperCube::make(2, 3, wl);
  for (std::size_t b = 0; b < 204; ++b)
    for (std::size_t p = 0; p < 6; ++p) cube.data[b * 6 + p] = wl[b];
  HyperCube out = resample_to_31(cube);
  auto ref = oracle::resample31_ref(cube);
  REQUIRE(out.data.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(out.data[i] == Catch::Approx(ref[i]).margin(1e-6));
}

TEST_CASE("resample reports empty bins") {
  // 400-700 nm nominal grid needs sources beyond 695; stop early
  std::mt19937_64 rng(15);
  auto cube = oracle::rand_cube(2, 2, oracle::linspace_wl(395, 600, 40), rng);
  try {
    resample_to_31(cube);
    FAIL("expected InsufficientCoverage");
  } catch (const Error& e) {
    CHECK(e.code() == Err::InsufficientCoverage);
  }
}

TEST_CASE("resampling is linear in the data") {
  std::mt19937_64 rng(16);
  auto wl = oracle::linspace_wl(395, 705, 50);
  auto c1 = oracle::rand_cube(3, 3, wl, rng);
  auto c2 = oracle::rand_cube(3, 3, wl, rng);
  const float a = 0.7f, b = -0.3f;
  HyperCube mix = c1;
  for (std::size_t i = 0; i < mix.data.size(); ++i)
    mix.data[i] = a * c1.data[i] + b * c2.data[i];
  HyperCube lhs = resample_to_31(mix);
  HyperCube r1 = resample_to_31(c1), r2 = resample_to_31(c2);
  for (std::size_t i = 0; i < lhs.data.size(); ++i) {
    const double rhs = a * double(r1.data[i]) + b * double(r2.data[i]);
    CHECK(std::abs(lhs.data[i] - rhs) <= 1e-6 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("resampling preserves per-bin spatial means") {
  std::mt19937_64 rng(17);
  auto cube = oracle::rand_cube(4, 5, oracle::linspace_wl(395, 705, 80), rng);
  HyperCube out = resample_to_31(cube);
  for (int k = 0; k < 31; ++k) {
    const double nominal = 400.0 + 10.0 * k;
    double member_mean = 0.0;
    std::size_t members = 0;
    for (std::size_t b = 0; b < cube.bands; ++b) {
      if (cube.wavelengths[b] < nominal - 5.0 || cube.wavelengths[b] >= nominal + 5.0)
        continue;
      double m = 0.0;
      for (std::size_t p = 0; p < cube.pixels(); ++p) m += cube.data[b * cube.pixels() + p];
      member_mean += m / double(cube.pixels());
      ++members;
    }
    member_mean /= double(members);
    double out_mean = 0.0;
    for (std::size_t p = 0; p < out.pixels(); ++p) out_mean += out.data[k * out.pixels() + p];
    out_mean /= double(out.pixels());
    CHECK(out_mean == Catch::Approx(member_mean).epsilon(1e-6));
  }
}

TEST_CASE("slice_range boundaries") {
  auto cube = HyperCube::make(1, 1, {400.f, 700.f, 701.f}, CubeKind::Radiance, 1.f);
  SECTION("FULL is the identity") {
    HyperCube out = slice_range(cube, BandRange::full());
    CHECK(out == cube);
  }
  SECTION("VIS includes both ends") {
    CHECK(slice_range(cube, BandRange::vis()).bands == 2);
  }
  SECTION("NIR excludes the lower bound") {
    HyperCube out = slice_range(cube, BandRange::nir());
    REQUIRE(out.bands == 1);
    CHECK(out.wavelengths[0] == 701.f);
  }
  SECTION("empty selection is an error") {
    try {
      slice_range(cube, BandRange{100.0, 200.0, true, true, "uv"});
      FAIL("expected EmptySelection");
    } catch (const Error& e) {
      CHECK(e.code() == Err::EmptySelection);
    }
  }
}

TEST_CASE("VIS and NIR partition FULL") {
  std::mt19937_64 rng(18);
  auto cube = oracle::rand_cube(2, 2, oracle::linspace_wl(400, 1000, 37), rng);
  HyperCube vis = slice_range(cube, BandRange::vis());
  HyperCube nir = slice_range(cube, BandRange::nir());
  HyperCube full = slice_range(cube, BandRange::full());
  CHECK(vis.bands + nir.bands == full.bands);
  std::vector<float> merged = vis.wavelengths;
  merged.insert(merged.end(), nir.wavelengths.begin(), nir.wavelengths.end());
  CHECK(merged == full.wavelengths);
}
