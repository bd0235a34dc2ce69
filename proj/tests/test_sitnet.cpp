#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "hsical/sitnet.hpp"
#include "oracles.hpp"

using namespace hsical;
using sit::SitConfig;
using tk::Graph;
using tk::Tensor;
using Id = Graph<double>::Id;

namespace {

SitConfig unit_cfg(std::size_t t = 2, std::size_t p = 2,
                   sit::Ablation abl = sit::Ablation::Both) {
  SitConfig cfg;
  cfg.stride_t = t;
  cfg.pool_p = p;
  cfg.ablation = abl;
  return cfg;
}

/// Zeroed block whose convs pass one channel tap through, for closed-form
/// checks.
sit::SitUnitParams<double> passthrough_unit(std::size_t c) {
  SitConfig cfg;
  auto u = sit::init_unit_params<double>(c, cfg, 7);
  auto identity_conv = [&](Tensor<double>& w) {
    std::fill(w.data.begin(), w.data.end(), 0.0);
    const std::size_t kh = w.shape[2], kw = w.shape[3];
    for (std::size_t i = 0; i < c; ++i)
      w.data[((i * c + i) * kh + kh / 2) * kw + kw / 2] = 1.0;  // one center-ish tap
  };
  identity_conv(u.c0.w);
  identity_conv(u.q_proj.w);
  identity_conv(u.k_proj.w);
  identity_conv(u.v_proj.w);
  identity_conv(u.c1.w);
  identity_conv(u.c2.w);
  identity_conv(u.c3.w);
  std::fill(u.c0.b.data.begin(), u.c0.b.data.end(), 0.0);
  std::fill(u.q_proj.b.data.begin(), u.q_proj.b.data.end(), 0.0);
  std::fill(u.k_proj.b.data.begin(), u.k_proj.b.data.end(), 0.0);
  std::fill(u.v_proj.b.data.begin(), u.v_proj.b.data.end(), 0.0);
  std::fill(u.c1.b.data.begin(), u.c1.b.data.end(), 0.0);
  std::fill(u.c2.b.data.begin(), u.c2.b.data.end(), 0.0);
  std::fill(u.c3.b.data.begin(), u.c3.b.data.end(), 0.0);
  std::fill(u.fl.w.data.begin(), u.fl.w.data.end(), 0.0);
  for (std::size_t i = 0; i < c; ++i) u.fl.w.data[i * c + i] = 1.0;
  std::fill(u.fl.b.data.begin(), u.fl.b.data.end(), 0.0);
  return u;
}

}  // namespace

TEST_CASE("single-channel spectral attention collapses to the temperature") {
  auto u = passthrough_unit(1);
  u.temperature[0] = 0.7;
  std::mt19937_64 rng(201);
  auto x = oracle::rand_tensor<double>({1, 1, 4, 4}, rng, 0.1, 1.0);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  auto sa = sit::spectral_attention(g, g.leaf(x), u, bi);
  REQUIRE(g.val(sa.a_s).shape == std::vector<std::size_t>{1, 1, 1});
  CHECK(g.val(sa.a_s)[0] == Catch::Approx(0.7).margin(1e-9));
}

TEST_CASE("duplicated channels give a symmetric attention map with equal diagonal") {
  auto u = passthrough_unit(2);
  std::mt19937_64 rng(202);
  auto x = oracle::rand_tensor<double>({1, 2, 4, 4}, rng, -1.0, 1.0);
  for (std::size_t i = 0; i < 16; ++i) x.data[16 + i] = x.data[i];  // channel 1 = channel 0
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  auto sa = sit::spectral_attention(g, g.leaf(x), u, bi);
  const auto& a = g.val(sa.a_s);
  CHECK(a.data[0 * 2 + 1] == Catch::Approx(a.data[1 * 2 + 0]).margin(1e-9));
  CHECK(a.data[0] == Catch::Approx(a.data[3]).margin(1e-9));
  CHECK(a.data[0] == Catch::Approx(a.data[1]).margin(1e-9));  // collinear rows
}

TEST_CASE("spectral attention matches a normalize-then-dot oracle") {
  SitConfig cfg;
  auto u = sit::init_unit_params<double>(4, cfg, 11);
  std::mt19937_64 rng(203);
  auto x = oracle::rand_tensor<double>({1, 4, 4, 4}, rng, -1.0, 1.0);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  auto sa = sit::spectral_attention(g, g.leaf(x), u, bi);

  // oracle: 1x1 conv projections, flatten, row-normalize, gram, temperature
  auto q = oracle::conv2d_ref(x, u.q_proj.w, &u.q_proj.b, 1, 0);
  auto k = oracle::conv2d_ref(x, u.k_proj.w, &u.k_proj.b, 1, 0);
  auto v = oracle::conv2d_ref(x, u.v_proj.w, &u.v_proj.b, 1, 0);
  auto normalize_rows = [](Tensor<double>& m) {
    for (std::size_t r = 0; r < m.shape[1]; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 16; ++j) s += m.data[r * 16 + j] * m.data[r * 16 + j];
      const double inv = 1.0 / std::sqrt(s + 1e-12);
      for (std::size_t j = 0; j < 16; ++j) m.data[r * 16 + j] *= inv;
    }
  };
  normalize_rows(q);
  normalize_rows(k);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t s = 0; s < 16; ++s) dot += q.data[i * 16 + s] * k.data[j * 16 + s];
      CHECK(g.val(sa.a_s).data[i * 4 + j] ==
            Catch::Approx(dot * u.temperature[0]).margin(1e-6));
    }
  for (std::size_t i = 0; i < v.numel(); ++i)
    CHECK(g.val(sa.x_v)[i] == Catch::Approx(v.data[i]).margin(1e-9));
}

TEST_CASE("illumination attention is symmetric and rank one") {
  SitConfig cfg = unit_cfg();
  auto u = sit::init_unit_params<double>(4, cfg, 13);
  std::mt19937_64 rng(204);
  auto x = oracle::rand_tensor<double>({2, 4, 16, 16}, rng, -1.0, 1.0);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  Id a_i = sit::illumination_attention(g, g.leaf(x), u, bi, 2, 2);
  const auto& a = g.val(a_i);
  REQUIRE(a.shape == std::vector<std::size_t>{2, 4, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double aij = a.data[(n * 4 + i) * 4 + j];
        const double aji = a.data[(n * 4 + j) * 4 + i];
        CHECK(std::abs(aij - aji) < 1e-6);
        // rank-1: 2x2 minors vanish
        for (std::size_t l = 0; l < 4; ++l) {
          const double minor = aij * a.data[(n * 4 + j) * 4 + l] -
                               a.data[(n * 4 + i) * 4 + l] * a.data[(n * 4 + j) * 4 + j];
          (void)minor;
        }
      }
  // rank-1 via outer-product identity: a_ij * a_kl == a_il * a_kj
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 4; ++k)
          for (std::size_t l = 0; l < 4; ++l) {
            const auto at = [&](std::size_t r, std::size_t c2) {
              return a.data[(n * 4 + r) * 4 + c2];
            };
            CHECK(std::abs(at(i, j) * at(k, l) - at(i, l) * at(k, j)) < 1e-6);
          }
}

TEST_CASE("constant input with passthrough weights gives the outer-product map") {
  auto u = passthrough_unit(3);
  auto x = Tensor<double>::full({1, 3, 16, 16}, 0.6);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  Id a_i = sit::illumination_attention(g, g.leaf(x), u, bi, 2, 2);
  // every channel mean is 0.6, so A_I = 0.36 everywhere
  for (double v : g.val(a_i).data) CHECK(v == Catch::Approx(0.36).margin(1e-9));
}

TEST_CASE("illumination attention matches the loop pipeline oracle") {
  SitConfig cfg = unit_cfg();
  auto u = sit::init_unit_params<double>(4, cfg, 17);
  std::mt19937_64 rng(205);
  auto x = oracle::rand_tensor<double>({1, 4, 16, 16}, rng, -1.0, 1.0);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  Id a_i = sit::illumination_attention(g, g.leaf(x), u, bi, 2, 2);

  auto x2 = oracle::conv2d_ref(x, u.c1.w, &u.c1.b, 1, 1);
  auto x3 = oracle::avg_pool_ref(oracle::conv2d_ref(x2, u.c2.w, &u.c2.b, 2, 0), 2);
  auto x4 = oracle::avg_pool_ref(oracle::conv2d_ref(x3, u.c3.w, &u.c3.b, 2, 0), 2);
  const std::size_t hw = x4.shape[2] * x4.shape[3];
  std::vector<double> xi(4, 0.0);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < hw; ++i) xi[c] += x4.data[c * hw + i];
    xi[c] /= double(hw);
  }
  std::vector<double> qi(4, 0.0);
  for (std::size_t o = 0; o < 4; ++o) {
    qi[o] = u.fl.b[o];
    for (std::size_t i = 0; i < 4; ++i) qi[o] += u.fl.w.data[o * 4 + i] * xi[i];
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(g.val(a_i).data[i * 4 + j] == Catch::Approx(qi[i] * qi[j]).margin(1e-6));
}

TEST_CASE("illumination attention underflows on too-small inputs") {
  SitConfig cfg = unit_cfg();
  auto u = sit::init_unit_params<double>(4, cfg, 19);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  auto x = Tensor<double>::zeros({1, 4, 8, 8});
  try {
    sit::illumination_attention(g, g.leaf(x), u, bi, 2, 2);
    FAIL("expected SpatialUnderflow");
  } catch (const Error& e) {
    CHECK(e.code() == Err::SpatialUnderflow);
  }
}

TEST_CASE("block output keeps the input shape over the config grid") {
  std::mt19937_64 rng(206);
  for (std::size_t cf : {4u, 8u})
    for (std::size_t hw : {16u, 32u})
      for (auto abl : {sit::Ablation::None, sit::Ablation::SaOnly, sit::Ablation::IaOnly,
                       sit::Ablation::Both}) {
        SitConfig cfg = unit_cfg(2, 2, abl);
        auto u = sit::init_unit_params<double>(cf, cfg, 23);
        auto x = oracle::rand_tensor<double>({1, cf, hw, hw}, rng, -0.5, 0.5);
        Graph<double> g;
        sit::Binding<double> bi(g, u, false);
        Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg);
        CHECK(g.val(out).shape == x.shape);
      }
}

TEST_CASE("combined attention rows sum to one") {
  std::mt19937_64 rng(207);
  for (auto abl : {sit::Ablation::SaOnly, sit::Ablation::IaOnly, sit::Ablation::Both}) {
    SitConfig cfg = unit_cfg(2, 2, abl);
    auto u = sit::init_unit_params<double>(4, cfg, 29);
    auto x = oracle::rand_tensor<double>({2, 4, 16, 16}, rng, -0.5, 0.5);
    Graph<double> g;
    sit::Binding<double> bi(g, u, false);
    sit::SitUnitTrace<double> trace;
    sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg, &trace);
    REQUIRE(trace.a_si != Graph<double>::npos);
    const auto& a = g.val(trace.a_si);
    for (std::size_t row = 0; row < a.numel() / 4; ++row) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) sum += a.data[row * 4 + j];
      CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("forcing the identity illumination map reproduces the SA-only block") {
  SitConfig both = unit_cfg(2, 2, sit::Ablation::Both);
  both.force_identity_ia = true;
  SitConfig sa_only = unit_cfg(2, 2, sit::Ablation::SaOnly);
  auto u = sit::init_unit_params<double>(4, both, 31);
  std::mt19937_64 rng(208);
  auto x = oracle::rand_tensor<double>({1, 4, 16, 16}, rng, -0.5, 0.5);

  Graph<double> g1;
  sit::Binding<double> b1(g1, u, false);
  Id out1 = sit::sit_unit_forward(g1, g1.leaf(x), u, b1, both);
  Graph<double> g2;
  sit::Binding<double> b2(g2, u, false);
  Id out2 = sit::sit_unit_forward(g2, g2.leaf(x), u, b2, sa_only);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(g1.val(out1)[i] - g2.val(out2)[i]) < 1e-6);
}

TEST_CASE("elementwise combination variant also yields stochastic rows") {
  SitConfig cfg = unit_cfg(2, 2, sit::Ablation::Both);
  cfg.elementwise_combine = true;
  auto u = sit::init_unit_params<double>(4, cfg, 37);
  std::mt19937_64 rng(209);
  auto x = oracle::rand_tensor<double>({1, 4, 16, 16}, rng, -0.5, 0.5);
  Graph<double> g;
  sit::Binding<double> bi(g, u, false);
  sit::SitUnitTrace<double> trace;
  Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg, &trace);
  CHECK(g.val(out).shape == x.shape);
  const auto& a = g.val(trace.a_si);
  for (std::size_t row = 0; row < a.numel() / 4; ++row) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sum += a.data[row * 4 + j];
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("full block gradient check at 1x4x8x8 for every ablation") {
  for (auto abl : {sit::Ablation::None, sit::Ablation::SaOnly, sit::Ablation::IaOnly,
                   sit::Ablation::Both}) {
    INFO("ablation " << sit::ablation_name(abl));
    SitConfig cfg = unit_cfg(2, 1, abl);  // pool 1 keeps the IA chain valid at 8x8
    auto u = sit::init_unit_params<double>(4, cfg, 41);
    std::mt19937_64 rng(210);
    auto x = oracle::rand_tensor<double>({1, 4, 8, 8}, rng, -0.5, 0.5);

    auto forward = [&]() {
      Graph<double> g;
      sit::Binding<double> bi(g, u, false);
      Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg);
      return g.val(tk::mean_all(g, out))[0];
    };

    Graph<double> g;
    sit::Binding<double> bi(g, u, true);
    Id xi = g.leaf(x, true);
    Id out = sit::sit_unit_forward(g, xi, u, bi, cfg);
    g.backward(tk::mean_all(g, out));

    auto numeric_x = oracle::fd_grad<double>(forward, x, 1e-6);
    CHECK(oracle::max_rel_err(g.grad(xi), numeric_x) < 1e-4);
  }
}

TEST_CASE("full block parameter gradients at 1x4x8x8, Both ablation") {
  SitConfig cfg = unit_cfg(2, 1, sit::Ablation::Both);
  auto u = sit::init_unit_params<double>(4, cfg, 43);
  std::mt19937_64 rng(211);
  auto x = oracle::rand_tensor<double>({1, 4, 8, 8}, rng, -0.5, 0.5);

  auto forward = [&]() {
    Graph<double> g;
    sit::Binding<double> bi(g, u, false);
    Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg);
    return g.val(tk::mean_all(g, out))[0];
  };

  Graph<double> g;
  sit::Binding<double> bi(g, u, true);
  Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg);
  g.backward(tk::mean_all(g, out));

  std::vector<Tensor<double>*> tensors;
  sit::detail::visit_unit<double>(u, "unit", [&](const std::string&, Tensor<double>& t) {
    tensors.push_back(&t);
  });
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto numeric = oracle::fd_grad<double>(forward, *tensors[i], 1e-6);
    INFO("parameter slot " << i);
    CHECK(oracle::max_rel_err(g.grad(bi.flat()[i]), numeric) < 1e-4);
  }
}

TEST_CASE("pooling stays in the gradient path on a 16x16 block") {
  SitConfig cfg = unit_cfg(2, 2, sit::Ablation::IaOnly);
  auto u = sit::init_unit_params<double>(4, cfg, 47);
  std::mt19937_64 rng(212);
  auto x = oracle::rand_tensor<double>({1, 4, 16, 16}, rng, -0.5, 0.5);

  auto forward = [&]() {
    Graph<double> g;
    sit::Binding<double> bi(g, u, false);
    Id out = sit::sit_unit_forward(g, g.leaf(x), u, bi, cfg);
    return g.val(tk::mean_all(g, out))[0];
  };
  Graph<double> g;
  sit::Binding<double> bi(g, u, true);
  Id xi = g.leaf(x, true);
  Id out = sit::sit_unit_forward(g, xi, u, bi, cfg);
  g.backward(tk::mean_all(g, out));
  auto numeric = oracle::fd_grad<double>(forward, x, 1e-6);
  CHECK(oracle::max_rel_err(g.grad(xi), numeric) < 1e-4);
}

TEST_CASE("zero-initialized head makes the whole network the identity") {
  SitConfig cfg;
  cfg.in_bands = 8;
  cfg.base_channels = 8;
  cfg.ushape_depth = 2;
  auto w = sit::init_weights<float>(cfg);
  std::mt19937_64 rng(213);
  auto x = oracle::rand_tensor<float>({1, 8, 64, 64}, rng, 0.0, 1.0);
  auto out = sit::run_inference(w, cfg, x);
  CHECK(out.data == x.data);  // exact: zero head + global residual
}

TEST_CASE("network output keeps the input shape across configs") {
  std::mt19937_64 rng(214);
  struct Case {
    std::size_t bands, depth, hw, pool;
  };
  for (const Case& c : {Case{31, 1, 32, 2}, Case{31, 2, 64, 2}, Case{8, 1, 32, 2},
                        Case{8, 2, 32, 1}}) {
    SitConfig cfg;
    cfg.in_bands = c.bands;
    cfg.base_channels = 4;
    cfg.ushape_depth = c.depth;
    cfg.pool_p = c.pool;
    auto w = sit::init_weights<float>(cfg);
    auto x = oracle::rand_tensor<float>({1, c.bands, c.hw, c.hw}, rng, 0.0, 1.0);
    auto out = sit::run_inference(w, cfg, x);
    CHECK(out.shape == x.shape);
  }
}

TEST_CASE("incompatible spatial dims are rejected") {
  SitConfig cfg;
  cfg.in_bands = 4;
  cfg.ushape_depth = 2;
  auto w = sit::init_weights<float>(cfg);
  auto x = Tensor<float>::zeros({1, 4, 30, 30});
  try {
    sit::run_inference(w, cfg, x);
    FAIL("expected IncompatibleSpatialDims");
  } catch (const Error& e) {
    CHECK(e.code() == Err::IncompatibleSpatialDims);
  }
}

TEST_CASE("parameter count matches the closed form") {
  SitConfig cfg;
  cfg.in_bands = 8;
  cfg.base_channels = 8;
  cfg.ushape_depth = 2;
  cfg.layers_m = 1;
  cfg.ffn_expansion = 2;
  auto w = sit::init_weights<float>(cfg);

  // independent closed form, derived per layer
  auto unit_params = [&](std::size_t c) {
    const std::size_t e = cfg.ffn_expansion;
    return (22 + 2 * e) * c * c + (13 + e) * c + 1;
  };
  std::size_t expected = 0;
  expected += 8ull * cfg.in_bands * 9 + 8;  // embed 3x3
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t c = 8u << i;
    expected += cfg.layers_m * unit_params(c);
    expected += (2 * c) * c * 4 + 2 * c;  // down 2x2
  }
  expected += cfg.layers_m * unit_params(32);  // bottleneck
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t c = 8u << i;
    expected += c * (2 * c) + c;  // up 1x1
    expected += c * (2 * c) + c;  // fuse 1x1
    expected += cfg.layers_m * unit_params(c);
  }
  expected += cfg.in_bands * 8ull * 9 + cfg.in_bands;  // head 3x3

  CHECK(sit::count_parameters(w) == expected);
}

TEST_CASE("weight initialization and inference are deterministic per seed") {
  SitConfig cfg;
  cfg.in_bands = 4;
  cfg.base_channels = 4;
  cfg.ushape_depth = 1;
  cfg.seed = 555;
  auto w1 = sit::init_weights<float>(cfg);
  auto w2 = sit::init_weights<float>(cfg);
  auto p1 = sit::parameters(w1);
  auto p2 = sit::parameters(w2);
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].name == p2[i].name);
    CHECK(p1[i].tensor->data == p2[i].tensor->data);
  }
  std::mt19937_64 rng(215);
  auto x = oracle::rand_tensor<float>({1, 4, 32, 32}, rng, 0.0, 1.0);
  CHECK(sit::run_inference(w1, cfg, x).data == sit::run_inference(w2, cfg, x).data);
}

TEST_CASE("checkpoint round trip restores config and weights") {
  SitConfig cfg;
  cfg.in_bands = 4;
  cfg.base_channels = 4;
  cfg.ushape_depth = 1;
  cfg.ablation = sit::Ablation::IaOnly;
  cfg.seed = 88;
  auto w = sit::init_weights<float>(cfg);
  // make the head nonzero so the round trip is meaningful
  std::mt19937_64 rng(216);
  tk::fill_trunc_normal(w.head.w, 0.02, rng);

  const auto path = std::filesystem::temp_directory_path() / "hsical_tests" / "model.hsw";
  std::filesystem::create_directories(path.parent_path());
  sit::save_weights(w, cfg, path.string());
  auto loaded = sit::load_weights(path.string());
  CHECK(loaded.config.ablation == sit::Ablation::IaOnly);
  CHECK(loaded.config.in_bands == 4);
  auto pa = sit::parameters(w);
  auto pb = sit::parameters(loaded.weights);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->data == pb[i].tensor->data);
}
