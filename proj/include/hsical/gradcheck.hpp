#ifndef HSICAL_GRADCHECK_HPP_
#define HSICAL_GRADCHECK_HPP_

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hsical/graph.hpp"
#include "hsical/sitnet.hpp"

namespace hsical::tk {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace gc_detail {

inline Tensor<double> rand_t(std::vector<std::size_t> shape, std::mt19937_64& rng,
                             double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

/// Central differences against the recorded analytic gradients. `build` must
/// reconstruct the op from the current contents of `inputs` on every call.
inline GradCheckResult check(
    const std::string& name, std::vector<Tensor<double>*> inputs,
    const std::function<Graph<double>::Id(Graph<double>&, const std::vector<Graph<double>::Id>&)>&
        build,
    double tol = 1e-4, double h = 1e-5) {
  Tensor<double> mix;
  auto forward = [&]() {
    Graph<double> g;
    std::vector<Graph<double>::Id> ids;
    for (auto* t : inputs) ids.push_back(g.leaf(*t, false));
    auto out = build(g, ids);
    if (mix.empty()) {
      std::mt19937_64 wr(2024);
      mix = rand_t(g.val(out).shape, wr, 0.2, 1.0);
    }
    return g.val(sum_all(g, mul(g, out, g.leaf(mix, false))))[0];
  };
  forward();

  Graph<double> g;
  std::vector<Graph<double>::Id> ids;
  for (auto* t : inputs) ids.push_back(g.leaf(*t, true));
  auto out = build(g, ids);
  g.backward(sum_all(g, mul(g, out, g.leaf(mix, false))));

  GradCheckResult res;
  res.name = name;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& x = *inputs[i];
    const Tensor<double>& analytic = g.grad(ids[i]);
    for (std::size_t j = 0; j < x.numel(); ++j) {
      const double keep = x.data[j];
      x.data[j] = keep + h;
      const double fp = forward();
      x.data[j] = keep - h;
      const double fm = forward();
      x.data[j] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[j];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
      res.max_rel_err = std::max(res.max_rel_err, err);
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

}  // namespace gc_detail

/// Finite-difference validation of every primitive and of the full SIT-U
/// block in each attention configuration. Double precision, fixed seeds.
inline std::vector<GradCheckResult> run_gradcheck_suite() {
  using gc_detail::check;
  using gc_detail::rand_t;
  using Id = Graph<double>::Id;
  std::vector<GradCheckResult> results;
  std::mt19937_64 rng(4242);

  {
    auto x = rand_t({2, 3, 5, 5}, rng);
    auto w = rand_t({2, 3, 3, 3}, rng);
    auto b = rand_t({2}, rng);
    results.push_back(check("conv2d_s1p1", {&x, &w, &b},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return conv2d(g, ids[0], ids[1], ids[2], 1, 1);
                            }));
  }
  {
    auto x = rand_t({1, 2, 6, 6}, rng);
    auto w = rand_t({3, 2, 2, 2}, rng);
    auto b = rand_t({3}, rng);
    results.push_back(check("conv2d_s2k2", {&x, &w, &b},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return conv2d(g, ids[0], ids[1], ids[2], 2, 0);
                            }));
  }
  {
    auto x = rand_t({2, 2, 4, 4}, rng);
    results.push_back(check("avg_pool", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return avg_pool(g, ids[0], 2);
                            }));
  }
  {
    auto x = rand_t({2, 3, 3, 3}, rng);
    results.push_back(check("global_avg", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return global_avg(g, ids[0]);
                            }));
  }
  {
    auto x = rand_t({2, 4, 3, 3}, rng);
    auto gm = rand_t({4}, rng, 0.5, 1.5);
    auto bt = rand_t({4}, rng, -0.5, 0.5);
    results.push_back(check("layer_norm", {&x, &gm, &bt},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return layer_norm(g, ids[0], ids[1], ids[2], 1e-5);
                            }));
  }
  {
    auto x = rand_t({4, 3}, rng);
    auto w = rand_t({5, 3}, rng);
    auto b = rand_t({5}, rng);
    results.push_back(check("linear", {&x, &w, &b},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return linear(g, ids[0], ids[1], ids[2]);
                            }));
  }
  {
    auto a = rand_t({2, 3, 4}, rng);
    auto b = rand_t({2, 4, 3}, rng);
    results.push_back(check("matmul", {&a, &b},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return matmul(g, ids[0], ids[1]);
                            }));
  }
  {
    auto x = rand_t({2, 3, 4}, rng);
    results.push_back(check("transpose", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return transpose_last2(g, ids[0]);
                            }));
  }
  {
    auto x = rand_t({3, 5}, rng, -2.0, 2.0);
    results.push_back(check("softmax", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return softmax_lastdim(g, ids[0]);
                            }));
  }
  {
    auto x = rand_t({3, 6}, rng);
    results.push_back(check("l2_normalize", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return l2_normalize_lastdim(g, ids[0], 1e-12);
                            }));
  }
  {
    auto x = rand_t({2, 2, 3, 3}, rng);
    results.push_back(check("upsample", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return upsample_nearest2(g, ids[0]);
                            }));
  }
  {
    auto a = rand_t({1, 2, 3, 3}, rng);
    auto b = rand_t({1, 3, 3, 3}, rng);
    results.push_back(check("concat", {&a, &b},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return concat_channels(g, ids[0], ids[1]);
                            }));
  }
  {
    auto a = rand_t({3, 4}, rng);
    auto b = rand_t({3, 4}, rng, 0.2, 1.0);
    auto s = rand_t({1}, rng, 0.5, 1.5);
    results.push_back(check("elementwise", {&a, &b, &s},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              auto prod = mul(g, add(g, ids[0], ids[1]), sub(g, ids[0], ids[1]));
                              auto scaled = scale_by(g, relu(g, prod), ids[2]);
                              return absval(g, add_const(g, scale(g, scaled, 0.7), 0.05));
                            }));
  }
  {
    auto x = rand_t({3, 4}, rng, -2.0, 2.0);
    results.push_back(check("gelu", {&x},
                            [](Graph<double>& g, const std::vector<Id>& ids) {
                              return gelu(g, ids[0]);
                            }));
  }

  for (auto abl : {sit::Ablation::None, sit::Ablation::SaOnly, sit::Ablation::IaOnly,
                   sit::Ablation::Both}) {
    sit::SitConfig cfg;
    cfg.stride_t = 2;
    cfg.pool_p = 1;  // keeps the reduction chain valid at 8x8
    cfg.ablation = abl;
    auto unit = sit::init_unit_params<double>(4, cfg, 2025);
    std::mt19937_64 xr(77);
    auto x = rand_t({1, 4, 8, 8}, xr, -0.5, 0.5);
    std::vector<Tensor<double>*> inputs = {&x};
    sit::detail::visit_unit<double>(unit, "u", [&](const std::string&, Tensor<double>& t) {
      inputs.push_back(&t);
    });
    // h = 1e-6: the normalization inside the attention has strong curvature
    // at 0.02-scale activations, so the usual 1e-5 step leaves visible
    // truncation error.
    results.push_back(check(
        std::string("sit_unit_") + sit::ablation_name(abl), inputs,
        [&unit, &cfg](Graph<double>& g, const std::vector<Id>& ids) {
          // ids beyond the input are the unit tensors in visit order
          sit::Binding<double> bi;
          std::size_t k = 1;
          sit::detail::visit_unit<double>(unit, "u",
                                          [&](const std::string&, Tensor<double>& t) {
                                            bi.adopt(t, ids[k++]);
                                          });
          return sit::sit_unit_forward(g, ids[0], unit, bi, cfg);
        },
        1e-4, 1e-6));
  }
  return results;
}

}  // namespace hsical::tk

#endif  // HSICAL_GRADCHECK_HPP_
