#ifndef HSICAL_SITNET_HPP_
#define HSICAL_SITNET_HPP_

#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsical/checkpoint.hpp"
#include "hsical/common.hpp"
#include "hsical/graph.hpp"
#include "hsical/tensor.hpp"

namespace hsical::sit {

using tk::Graph;
using tk::Tensor;

inline constexpr double kLnEps = 1e-5;
inline constexpr double kL2Eps = 1e-12;

enum class Ablation { None, SaOnly, IaOnly, Both };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::SaOnly: return "sa";
    case Ablation::IaOnly: return "ia";
    case Ablation::Both: return "both";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "sa") return Ablation::SaOnly;
  if (s == "ia") return Ablation::IaOnly;
  if (s == "both") return Ablation::Both;
  fail(Err::BadConfig, "unknown ablation '" + s + "' (none|sa|ia|both)");
}

struct SitConfig {
  std::size_t layers_m = 1;       // SIT-U blocks per stage
  std::size_t stride_t = 2;       // IA down-scaling conv stride
  std::size_t pool_p = 2;         // IA average-pool window
  std::size_t base_channels = 8;  // embedding width
  std::size_t ushape_depth = 2;   // encoder/decoder stages
  std::size_t ffn_expansion = 2;
  std::size_t in_bands = 8;
  Ablation ablation = Ablation::Both;
  std::uint64_t seed = 42;
  // Test hook: substitute the identity matrix for A_I in the combined mode.
  bool force_identity_ia = false;
  // Combine Eq.-19 style attention maps elementwise instead of by matrix product.
  bool elementwise_combine = false;

  std::size_t stage_channels(std::size_t stage) const {
    return base_channels << stage;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "layers_m=" << layers_m << "\nstride_t=" << stride_t << "\npool_p=" << pool_p
       << "\nbase_channels=" << base_channels << "\nushape_depth=" << ushape_depth
       << "\nffn_expansion=" << ffn_expansion << "\nin_bands=" << in_bands
       << "\nablation=" << ablation_name(ablation) << "\nseed=" << seed << "\n";
    return os.str();
  }

  static SitConfig from_text(const std::string& text) {
    SitConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const std::size_t eq = line.find('=');
      require(eq != std::string::npos, Err::BadConfig, "expected key=value, got: " + line);
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "layers_m") cfg.layers_m = std::stoul(val);
      else if (key == "stride_t") cfg.stride_t = std::stoul(val);
      else if (key == "pool_p") cfg.pool_p = std::stoul(val);
      else if (key == "base_channels") cfg.base_channels = std::stoul(val);
      else if (key == "ushape_depth") cfg.ushape_depth = std::stoul(val);
      else if (key == "ffn_expansion") cfg.ffn_expansion = std::stoul(val);
      else if (key == "in_bands") cfg.in_bands = std::stoul(val);
      else if (key == "ablation") cfg.ablation = parse_ablation(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else fail(Err::BadConfig, "unknown config key '" + key + "'");
    }
    require(cfg.layers_m >= 1 && cfg.stride_t >= 1 && cfg.pool_p >= 1 &&
                cfg.ushape_depth >= 1 && cfg.base_channels >= 1,
            Err::BadConfig, "config values must be positive");
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class T>
struct Conv2dParams {
  Tensor<T> w;  // [Cout, Cin, kh, kw]
  Tensor<T> b;  // [Cout]
};

template <class T>
struct LinearParams {
  Tensor<T> w;  // [Dout, Din]
  Tensor<T> b;  // [Dout]
};

/// Weights of one SIT-U block at a fixed feature width.
template <class T>
struct SitUnitParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Conv2dParams<T> c0;                    // f_c0, 1x1
  Conv2dParams<T> q_proj, k_proj, v_proj;  // SA channel projections, 1x1
  Tensor<T> temperature;                 // learnable scale on A_S, shape [1]
  Conv2dParams<T> c1;                    // f_c1, 3x3 stride 1
  Conv2dParams<T> c2, c3;                // f_c2/f_c3, 2x2 stride t
  LinearParams<T> fl;                    // f_l
  Tensor<T> ln2_gamma, ln2_beta;
  Conv2dParams<T> ffn1, ffn2;            // 1x1 expansion convs
};

template <class T>
struct SitStage {
  std::vector<SitUnitParams<T>> blocks;
};

template <class T>
struct SitWeights {
  Conv2dParams<T> embed;                 // in_bands -> base, 3x3
  std::vector<SitStage<T>> enc;          // one per stage
  std::vector<Conv2dParams<T>> down;     // 2x2 stride-2, channels double
  SitStage<T> bottleneck;
  std::vector<Conv2dParams<T>> up;       // 1x1 after nearest upsample, channels halve
  std::vector<Conv2dParams<T>> fuse;     // 1x1 after skip concatenation
  std::vector<SitStage<T>> dec;
  Conv2dParams<T> head;                  // base -> in_bands, 3x3, zero-init
};

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

template <class T, class F>
void visit_unit(SitUnitParams<T>& u, const std::string& p, F&& f) {
  f(p + ".ln1.g", u.ln1_gamma);
  f(p + ".ln1.b", u.ln1_beta);
  f(p + ".c0.w", u.c0.w);
  f(p + ".c0.b", u.c0.b);
  f(p + ".q.w", u.q_proj.w);
  f(p + ".q.b", u.q_proj.b);
  f(p + ".k.w", u.k_proj.w);
  f(p + ".k.b", u.k_proj.b);
  f(p + ".v.w", u.v_proj.w);
  f(p + ".v.b", u.v_proj.b);
  f(p + ".tau", u.temperature);
  f(p + ".c1.w", u.c1.w);
  f(p + ".c1.b", u.c1.b);
  f(p + ".c2.w", u.c2.w);
  f(p + ".c2.b", u.c2.b);
  f(p + ".c3.w", u.c3.w);
  f(p + ".c3.b", u.c3.b);
  f(p + ".fl.w", u.fl.w);
  f(p + ".fl.b", u.fl.b);
  f(p + ".ln2.g", u.ln2_gamma);
  f(p + ".ln2.b", u.ln2_beta);
  f(p + ".ffn1.w", u.ffn1.w);
  f(p + ".ffn1.b", u.ffn1.b);
  f(p + ".ffn2.w", u.ffn2.w);
  f(p + ".ffn2.b", u.ffn2.b);
}

/// Single traversal shared by parameters(), binding, and the checkpoint
/// writer; order is the decoder execution order and must stay stable.
template <class T, class F>
void visit_params(SitWeights<T>& w, F&& f) {
  f("embed.w", w.embed.w);
  f("embed.b", w.embed.b);
  for (std::size_t i = 0; i < w.enc.size(); ++i) {
    for (std::size_t j = 0; j < w.enc[i].blocks.size(); ++j)
      visit_unit(w.enc[i].blocks[j], "enc" + std::to_string(i) + ".blk" + std::to_string(j), f);
    f("down" + std::to_string(i) + ".w", w.down[i].w);
    f("down" + std::to_string(i) + ".b", w.down[i].b);
  }
  for (std::size_t j = 0; j < w.bottleneck.blocks.size(); ++j)
    visit_unit(w.bottleneck.blocks[j], "mid.blk" + std::to_string(j), f);
  for (std::size_t i = w.dec.size(); i-- > 0;) {
    f("up" + std::to_string(i) + ".w", w.up[i].w);
    f("up" + std::to_string(i) + ".b", w.up[i].b);
    f("fuse" + std::to_string(i) + ".w", w.fuse[i].w);
    f("fuse" + std::to_string(i) + ".b", w.fuse[i].b);
    for (std::size_t j = 0; j < w.dec[i].blocks.size(); ++j)
      visit_unit(w.dec[i].blocks[j], "dec" + std::to_string(i) + ".blk" + std::to_string(j), f);
  }
  f("head.w", w.head.w);
  f("head.b", w.head.b);
}

}  // namespace detail

template <class T>
std::vector<ParamRef<T>> parameters(SitWeights<T>& w) {
  std::vector<ParamRef<T>> out;
  detail::visit_params(w, [&](const std::string& name, Tensor<T>& t) {
    out.push_back({name, &t});
  });
  return out;
}

template <class T>
std::size_t count_parameters(SitWeights<T>& w) {
  std::size_t n = 0;
  detail::visit_params(w, [&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Conv2dParams<T> init_conv(std::size_t cout, std::size_t cin, std::size_t k, double stddev,
                          std::mt19937_64& rng) {
  Conv2dParams<T> p;
  p.w = Tensor<T>::zeros({cout, cin, k, k});
  tk::fill_trunc_normal(p.w, stddev, rng);
  p.b = Tensor<T>::zeros({cout});
  return p;
}

inline double fan_in_std(std::size_t cin, std::size_t k) {
  // signal-preserving scale for the convs on the non-residual spine
  return std::sqrt(2.0 / static_cast<double>(cin * k * k));
}

// Attention/FFN channel projections take the flat 0.02 scale; the spatial
// convs inside the illumination extractor carry the signal and use fan-in
// scaling like the rest of the spine.
template <class T>
SitUnitParams<T> init_unit(std::size_t c, const SitConfig& cfg, std::mt19937_64& rng) {
  const double proj_std = 0.02;
  SitUnitParams<T> u;
  u.ln1_gamma = Tensor<T>::full({c}, T(1));
  u.ln1_beta = Tensor<T>::zeros({c});
  u.c0 = init_conv<T>(c, c, 1, fan_in_std(c, 1), rng);
  u.q_proj = init_conv<T>(c, c, 1, proj_std, rng);
  u.k_proj = init_conv<T>(c, c, 1, proj_std, rng);
  u.v_proj = init_conv<T>(c, c, 1, proj_std, rng);
  u.temperature = Tensor<T>::full({1}, T(1));
  u.c1 = init_conv<T>(c, c, 3, fan_in_std(c, 3), rng);
  u.c2 = init_conv<T>(c, c, 2, fan_in_std(c, 2), rng);
  u.c3 = init_conv<T>(c, c, 2, fan_in_std(c, 2), rng);
  u.fl.w = Tensor<T>::zeros({c, c});
  tk::fill_trunc_normal(u.fl.w, proj_std, rng);
  u.fl.b = Tensor<T>::zeros({c});
  u.ln2_gamma = Tensor<T>::full({c}, T(1));
  u.ln2_beta = Tensor<T>::zeros({c});
  u.ffn1 = init_conv<T>(cfg.ffn_expansion * c, c, 1, proj_std, rng);
  u.ffn2 = init_conv<T>(c, cfg.ffn_expansion * c, 1, proj_std, rng);
  return u;
}

}  // namespace detail

template <class T>
SitUnitParams<T> init_unit_params(std::size_t channels, const SitConfig& cfg,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return detail::init_unit<T>(channels, cfg, rng);
}

/// Fresh weights for the configured topology. The output head starts at zero
/// so an untrained network is the identity map through the global residual.
template <class T>
SitWeights<T> init_weights(const SitConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  SitWeights<T> w;
  w.embed = detail::init_conv<T>(cfg.base_channels, cfg.in_bands, 3,
                                 detail::fan_in_std(cfg.in_bands, 3), rng);
  for (std::size_t i = 0; i < cfg.ushape_depth; ++i) {
    const std::size_t c = cfg.stage_channels(i);
    SitStage<T> st;
    for (std::size_t j = 0; j < cfg.layers_m; ++j)
      st.blocks.push_back(detail::init_unit<T>(c, cfg, rng));
    w.enc.push_back(std::move(st));
    w.down.push_back(detail::init_conv<T>(2 * c, c, 2, detail::fan_in_std(c, 2), rng));
  }
  {
    const std::size_t c = cfg.stage_channels(cfg.ushape_depth);
    for (std::size_t j = 0; j < cfg.layers_m; ++j)
      w.bottleneck.blocks.push_back(detail::init_unit<T>(c, cfg, rng));
  }
  w.up.resize(cfg.ushape_depth);
  w.fuse.resize(cfg.ushape_depth);
  w.dec.resize(cfg.ushape_depth);
  for (std::size_t i = cfg.ushape_depth; i-- > 0;) {
    const std::size_t c = cfg.stage_channels(i);
    w.up[i] = detail::init_conv<T>(c, 2 * c, 1, detail::fan_in_std(2 * c, 1), rng);
    w.fuse[i] = detail::init_conv<T>(c, 2 * c, 1, detail::fan_in_std(2 * c, 1), rng);
    for (std::size_t j = 0; j < cfg.layers_m; ++j)
      w.dec[i].blocks.push_back(detail::init_unit<T>(c, cfg, rng));
  }
  w.head.w = Tensor<T>::zeros({cfg.in_bands, cfg.base_channels, 3, 3});
  w.head.b = Tensor<T>::zeros({cfg.in_bands});
  return w;
}

// ---------------------------------------------------------------------------
// Graph binding
// ---------------------------------------------------------------------------

/// Maps every weight tensor to its leaf id in one graph. Ids in `flat` follow
/// the parameters() order, so gradients line up with the optimizer state.
template <class T>
class Binding {
 public:
  Binding(Graph<T>& g, SitWeights<T>& w, bool requires_grad) {
    detail::visit_params(w, [&](const std::string&, Tensor<T>& t) {
      const auto id = g.leaf(t, requires_grad);
      flat_.push_back(id);
      by_tensor_[&t] = id;
    });
  }

  /// Bind one block's parameters, for standalone SIT-U use.
  Binding(Graph<T>& g, SitUnitParams<T>& u, bool requires_grad) {
    detail::visit_unit(u, "unit", [&](const std::string&, Tensor<T>& t) {
      const auto id = g.leaf(t, requires_grad);
      flat_.push_back(id);
      by_tensor_[&t] = id;
    });
  }

  /// Empty binding to be filled with pre-existing leaf ids.
  Binding() = default;
  void adopt(const Tensor<T>& t, typename Graph<T>::Id id) {
    flat_.push_back(id);
    by_tensor_[&t] = id;
  }

  typename Graph<T>::Id id(const Tensor<T>& t) const { return by_tensor_.at(&t); }
  const std::vector<typename Graph<T>::Id>& flat() const { return flat_; }

 private:
  std::vector<typename Graph<T>::Id> flat_;
  std::unordered_map<const Tensor<T>*, typename Graph<T>::Id> by_tensor_;
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace detail {

/// Spatial extent after one IA reduction hop (2x2 conv of stride t, then
/// p-pool). Returns 0 when the hop is not representable.
inline std::size_t ia_hop(std::size_t h, std::size_t t, std::size_t p) {
  if (h < 2 || (h - 2) % t != 0) return 0;
  const std::size_t after_conv = (h - 2) / t + 1;
  if (after_conv == 0 || after_conv % p != 0) return 0;
  return after_conv / p;
}

inline void check_ia_chain(std::size_t h, std::size_t w, std::size_t t, std::size_t p) {
  const std::size_t h1 = ia_hop(h, t, p), w1 = ia_hop(w, t, p);
  require(h1 > 0 && w1 > 0, Err::SpatialUnderflow,
          "illumination attention cannot reduce " + std::to_string(h) + "x" +
              std::to_string(w) + " with stride " + std::to_string(t) + ", pool " +
              std::to_string(p));
  const std::size_t h2 = ia_hop(h1, t, p), w2 = ia_hop(w1, t, p);
  require(h2 > 0 && w2 > 0, Err::SpatialUnderflow,
          "second illumination attention reduction underflows at " + std::to_string(h1) +
              "x" + std::to_string(w1));
}

}  // namespace detail

template <class T>
struct SaResult {
  typename Graph<T>::Id a_s;  // [N, C, C], not yet softmaxed
  typename Graph<T>::Id x_v;  // [N, C, H*W]
};

/// Channel-transposed attention: q/k/v are 1x1 projections flattened to
/// [C, H*W]; q and k are L2-normalized along the spatial axis and A_S is the
/// temperature-scaled Gram matrix q k^T. Softmax is applied later, after the
/// combination with the illumination map.
template <class T>
SaResult<T> spectral_attention(Graph<T>& g, typename Graph<T>::Id x1,
                               const SitUnitParams<T>& u, const Binding<T>& bi) {
  const auto& xs = g.val(x1).shape;
  require(xs.size() == 4, Err::ShapeMismatch, "spectral_attention expects NCHW");
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  auto q = tk::conv2d(g, x1, bi.id(u.q_proj.w), bi.id(u.q_proj.b), 1, 0);
  auto k = tk::conv2d(g, x1, bi.id(u.k_proj.w), bi.id(u.k_proj.b), 1, 0);
  auto v = tk::conv2d(g, x1, bi.id(u.v_proj.w), bi.id(u.v_proj.b), 1, 0);
  auto qn = tk::l2_normalize_lastdim(g, tk::reshape(g, q, {n, c, hw}), T(kL2Eps));
  auto kn = tk::l2_normalize_lastdim(g, tk::reshape(g, k, {n, c, hw}), T(kL2Eps));
  auto gram = tk::matmul(g, qn, tk::transpose_last2(g, kn));
  SaResult<T> out;
  out.a_s = tk::scale_by(g, gram, bi.id(u.temperature));
  out.x_v = tk::reshape(g, v, {n, c, hw});
  return out;
}

/// Illumination branch: same-size conv, two (strided conv, average pool)
/// reductions, a per-channel global mean, one shared linear projection, and
/// the rank-1 outer product A_I = q_I q_I^T.
template <class T>
typename Graph<T>::Id illumination_attention(Graph<T>& g, typename Graph<T>::Id x1,
                                             const SitUnitParams<T>& u, const Binding<T>& bi,
                                             std::size_t t, std::size_t p) {
  const auto& xs = g.val(x1).shape;
  require(xs.size() == 4, Err::ShapeMismatch, "illumination_attention expects NCHW");
  const std::size_t n = xs[0], c = xs[1];
  detail::check_ia_chain(xs[2], xs[3], t, p);
  auto x2 = tk::conv2d(g, x1, bi.id(u.c1.w), bi.id(u.c1.b), 1, 1);
  auto x3 = tk::avg_pool(g, tk::conv2d(g, x2, bi.id(u.c2.w), bi.id(u.c2.b), t, 0), p);
  auto x4 = tk::avg_pool(g, tk::conv2d(g, x3, bi.id(u.c3.w), bi.id(u.c3.b), t, 0), p);
  auto xi = tk::reshape(g, tk::global_avg(g, x4), {n, c});
  auto qi = tk::linear(g, xi, bi.id(u.fl.w), bi.id(u.fl.b));
  auto col = tk::reshape(g, qi, {n, c, 1});
  auto row = tk::reshape(g, qi, {n, 1, c});
  return tk::matmul(g, col, row);
}

template <class T>
Tensor<T> identity_matrix(std::size_t batch, std::size_t c) {
  Tensor<T> m = Tensor<T>::zeros({batch, c, c});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < c; ++i) m.data[(b * c + i) * c + i] = T(1);
  return m;
}

/// Intermediate node ids a test can inspect after a block forward.
template <class T>
struct SitUnitTrace {
  typename Graph<T>::Id a_si = Graph<T>::npos;  // combined attention, post-softmax
};

/// One SIT-U block. Attention output feeds a residual add, then a pre-norm
/// feed-forward with its own residual. Ablations select which attention maps
/// participate; None keeps only the convolutional value path.
template <class T>
typename Graph<T>::Id sit_unit_forward(Graph<T>& g, typename Graph<T>::Id x0,
                                       const SitUnitParams<T>& u, const Binding<T>& bi,
                                       const SitConfig& cfg,
                                       SitUnitTrace<T>* trace = nullptr) {
  const auto& xs = g.val(x0).shape;
  require(xs.size() == 4, Err::ShapeMismatch, "sit_unit_forward expects NCHW");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];

  auto ln1 = tk::layer_norm(g, x0, bi.id(u.ln1_gamma), bi.id(u.ln1_beta), T(kLnEps));
  auto x1 = tk::conv2d(g, ln1, bi.id(u.c0.w), bi.id(u.c0.b), 1, 0);

  typename Graph<T>::Id x_a;
  if (cfg.ablation == Ablation::None) {
    x_a = tk::conv2d(g, x1, bi.id(u.v_proj.w), bi.id(u.v_proj.b), 1, 0);
  } else {
    typename Graph<T>::Id combined;
    typename Graph<T>::Id x_v;
    if (cfg.ablation == Ablation::IaOnly) {
      auto v = tk::conv2d(g, x1, bi.id(u.v_proj.w), bi.id(u.v_proj.b), 1, 0);
      x_v = tk::reshape(g, v, {n, c, h * w});
      combined = illumination_attention(g, x1, u, bi, cfg.stride_t, cfg.pool_p);
    } else {
      SaResult<T> sa = spectral_attention(g, x1, u, bi);
      x_v = sa.x_v;
      if (cfg.ablation == Ablation::SaOnly) {
        combined = sa.a_s;
      } else {
        auto a_i = cfg.force_identity_ia
                       ? g.leaf(identity_matrix<T>(n, c), false)
                       : illumination_attention(g, x1, u, bi, cfg.stride_t, cfg.pool_p);
        combined = cfg.elementwise_combine ? tk::mul(g, sa.a_s, a_i)
                                           : tk::matmul(g, sa.a_s, a_i);
      }
    }
    auto a_si = tk::softmax_lastdim(g, combined);
    if (trace) trace->a_si = a_si;
    x_a = tk::reshape(g, tk::matmul(g, a_si, x_v), {n, c, h, w});
  }

  auto z = tk::add(g, x0, x_a);
  auto ln2 = tk::layer_norm(g, z, bi.id(u.ln2_gamma), bi.id(u.ln2_beta), T(kLnEps));
  auto ff = tk::conv2d(g, ln2, bi.id(u.ffn1.w), bi.id(u.ffn1.b), 1, 0);
  ff = tk::gelu(g, ff);
  ff = tk::conv2d(g, ff, bi.id(u.ffn2.w), bi.id(u.ffn2.b), 1, 0);
  return tk::add(g, z, ff);
}

/// Whole network: patch embed, encoder stages with 2x downsamples, bottleneck,
/// mirrored decoder with skip concatenation, and a zero-initialized head added
/// onto the input (the network predicts the calibration residual).
template <class T>
typename Graph<T>::Id sit_forward(Graph<T>& g, typename Graph<T>::Id input,
                                  SitWeights<T>& w, const Binding<T>& bi,
                                  const SitConfig& cfg) {
  const auto& xs = g.val(input).shape;
  require(xs.size() == 4, Err::ShapeMismatch, "sit_forward expects NCHW");
  require(xs[1] == cfg.in_bands, Err::ShapeMismatch,
          "input bands != configured in_bands");
  const std::size_t div = std::size_t(1) << cfg.ushape_depth;
  require(xs[2] % div == 0 && xs[3] % div == 0, Err::IncompatibleSpatialDims,
          "spatial dims must be divisible by 2^depth");
  const bool uses_ia = (cfg.ablation == Ablation::IaOnly || cfg.ablation == Ablation::Both) &&
                       !cfg.force_identity_ia;
  if (uses_ia || cfg.ablation == Ablation::IaOnly)
    for (std::size_t i = 0; i <= cfg.ushape_depth; ++i)
      detail::check_ia_chain(xs[2] >> i, xs[3] >> i, cfg.stride_t, cfg.pool_p);

  auto x = tk::conv2d(g, input, bi.id(w.embed.w), bi.id(w.embed.b), 1, 1);
  std::vector<typename Graph<T>::Id> skips;
  for (std::size_t i = 0; i < cfg.ushape_depth; ++i) {
    for (auto& blk : w.enc[i].blocks) x = sit_unit_forward(g, x, blk, bi, cfg);
    skips.push_back(x);
    x = tk::conv2d(g, x, bi.id(w.down[i].w), bi.id(w.down[i].b), 2, 0);
  }
  for (auto& blk : w.bottleneck.blocks) x = sit_unit_forward(g, x, blk, bi, cfg);
  for (std::size_t i = cfg.ushape_depth; i-- > 0;) {
    x = tk::upsample_nearest2(g, x);
    x = tk::conv2d(g, x, bi.id(w.up[i].w), bi.id(w.up[i].b), 1, 0);
    x = tk::concat_channels(g, x, skips[i]);
    x = tk::conv2d(g, x, bi.id(w.fuse[i].w), bi.id(w.fuse[i].b), 1, 0);
    for (auto& blk : w.dec[i].blocks) x = sit_unit_forward(g, x, blk, bi, cfg);
  }
  auto res = tk::conv2d(g, x, bi.id(w.head.w), bi.id(w.head.b), 1, 1);
  return tk::add(g, input, res);
}

/// Inference convenience: one forward pass without gradient tracking.
template <class T>
Tensor<T> run_inference(SitWeights<T>& w, const SitConfig& cfg, const Tensor<T>& input) {
  Graph<T> g;
  Binding<T> bi(g, w, /*requires_grad=*/false);
  auto in = g.leaf(input, false);
  auto out = sit_forward(g, in, w, bi, cfg);
  return g.val(out);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_weights(SitWeights<float>& w, const SitConfig& cfg, const std::string& path) {
  std::vector<tk::NamedTensor> entries;
  entries.push_back(tk::config_entry(cfg.to_text()));
  detail::visit_params(w, [&](const std::string& name, Tensor<float>& t) {
    entries.push_back({name, t});
  });
  tk::save_checkpoint(entries, path);
}

struct LoadedModel {
  SitConfig config;
  SitWeights<float> weights;
};

inline LoadedModel load_weights(const std::string& path) {
  const auto entries = tk::load_checkpoint(path);
  const std::string cfg_text = tk::config_text(entries);
  require(!cfg_text.empty(), Err::BadConfig, "checkpoint lacks embedded config");
  LoadedModel m;
  m.config = SitConfig::from_text(cfg_text);
  m.weights = init_weights<float>(m.config);
  std::unordered_map<std::string, const tk::NamedTensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  detail::visit_params(m.weights, [&](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find(name);
    require(it != by_name.end(), Err::BadConfig, "checkpoint missing tensor " + name);
    require(it->second->tensor.shape == t.shape, Err::BadConfig,
            "checkpoint shape mismatch for " + name);
    t = it->second->tensor;
  });
  return m;
}

}  // namespace hsical::sit

#endif  // HSICAL_SITNET_HPP_
