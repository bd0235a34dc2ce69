#ifndef HSICAL_GRAPH_HPP_
#define HSICAL_GRAPH_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/tensor.hpp"

namespace hsical::tk {

/// Reverse-mode tape. Nodes are recorded in execution order, which is a
/// topological order, so backward() is a single reverse sweep. One graph
/// instance is single-threaded; independent graphs may run concurrently.
template <class T>
class Graph {
 public:
  using Id = std::size_t;
  static constexpr Id npos = static_cast<Id>(-1);
  using BackFn = std::function<void(Graph&, const Tensor<T>&)>;

  Id leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.needs = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  Id record(Tensor<T> value, std::vector<Id> parents, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    for (Id p : n.parents) n.needs = n.needs || nodes_[p].needs;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor<T>& val(Id id) const { return nodes_[id].value; }
  bool needs_grad(Id id) const { return nodes_[id].needs; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer, allocated to zeros on first touch.
  Tensor<T>& gbuf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  const Tensor<T>& grad(Id id) { return gbuf(id); }

  /// Fills grad buffers of every node the loss depends on.
  void backward(Id loss) {
    require(val(loss).numel() == 1, Err::NonScalarLoss,
            "backward needs a scalar loss, got shape " + shape_str(val(loss).shape));
    require(nodes_[loss].needs, Err::DisconnectedGraph,
            "loss does not depend on any tensor with requires_grad");
    gbuf(loss).data[0] += T(1);
    for (Id id = loss + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs || n.grad.empty() || !n.back) continue;
      n.back(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<Id> parents;
    BackFn back;
    bool needs = false;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.same_shape(b), Err::ShapeMismatch,
          std::string(what) + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
typename Graph<T>::Id add(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id b) {
  detail::require_same_shape(g.val(a), g.val(b), "add");
  Tensor<T> out = g.val(a);
  const Tensor<T>& bv = g.val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(a)) {
      Tensor<T>& da = gr.gbuf(a);
      for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i];
    }
    if (gr.needs_grad(b)) {
      Tensor<T>& db = gr.gbuf(b);
      for (std::size_t i = 0; i < go.numel(); ++i) db[i] += go[i];
    }
  });
}

template <class T>
typename Graph<T>::Id sub(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id b) {
  detail::require_same_shape(g.val(a), g.val(b), "sub");
  Tensor<T> out = g.val(a);
  const Tensor<T>& bv = g.val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(a)) {
      Tensor<T>& da = gr.gbuf(a);
      for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i];
    }
    if (gr.needs_grad(b)) {
      Tensor<T>& db = gr.gbuf(b);
      for (std::size_t i = 0; i < go.numel(); ++i) db[i] -= go[i];
    }
  });
}

template <class T>
typename Graph<T>::Id mul(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id b) {
  detail::require_same_shape(g.val(a), g.val(b), "mul");
  Tensor<T> out = g.val(a);
  const Tensor<T>& bv = g.val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    const Tensor<T>& bv2 = gr.val(b);
    if (gr.needs_grad(a)) {
      Tensor<T>& da = gr.gbuf(a);
      for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i] * bv2[i];
    }
    if (gr.needs_grad(b)) {
      Tensor<T>& db = gr.gbuf(b);
      for (std::size_t i = 0; i < go.numel(); ++i) db[i] += go[i] * av[i];
    }
  });
}

template <class T>
typename Graph<T>::Id scale(Graph<T>& g, typename Graph<T>::Id a, T c) {
  Tensor<T> out = g.val(a);
  for (T& v : out.data) v *= c;
  return g.record(std::move(out), {a}, [a, c](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i] * c;
  });
}

template <class T>
typename Graph<T>::Id add_const(Graph<T>& g, typename Graph<T>::Id a, T c) {
  Tensor<T> out = g.val(a);
  for (T& v : out.data) v += c;
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i];
  });
}

template <class T>
typename Graph<T>::Id relu(Graph<T>& g, typename Graph<T>::Id a) {
  Tensor<T> out = g.val(a);
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i)
      if (av[i] > T(0)) da[i] += go[i];
  });
}

/// Exact (erf-based) GELU; smooth everywhere, which keeps finite-difference
/// checks of deep compositions stable.
template <class T>
typename Graph<T>::Id gelu(Graph<T>& g, typename Graph<T>::Id a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  Tensor<T> out = g.val(a);
  for (T& v : out.data)
    v = static_cast<T>(0.5 * double(v) * (1.0 + std::erf(double(v) * inv_sqrt2)));
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      const double x = av[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      da[i] += go[i] * static_cast<T>(cdf + x * pdf);
    }
  });
}

template <class T>
typename Graph<T>::Id absval(Graph<T>& g, typename Graph<T>::Id a) {
  Tensor<T> out = g.val(a);
  for (T& v : out.data) v = std::abs(v);
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      if (av[i] > T(0)) da[i] += go[i];
      else if (av[i] < T(0)) da[i] -= go[i];
    }
  });
}

/// Multiply a tensor by a learnable scalar (shape [1]) tensor.
template <class T>
typename Graph<T>::Id scale_by(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id s) {
  require(g.val(s).numel() == 1, Err::ShapeMismatch, "scale_by: scalar expected");
  const T sv = g.val(s)[0];
  Tensor<T> out = g.val(a);
  for (T& v : out.data) v *= sv;
  return g.record(std::move(out), {a, s}, [a, s](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    const T sv2 = gr.val(s)[0];
    if (gr.needs_grad(a)) {
      Tensor<T>& da = gr.gbuf(a);
      for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i] * sv2;
    }
    if (gr.needs_grad(s)) {
      T acc = T(0);
      for (std::size_t i = 0; i < go.numel(); ++i) acc += go[i] * av[i];
      gr.gbuf(s)[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshape
// ---------------------------------------------------------------------------

template <class T>
typename Graph<T>::Id sum_all(Graph<T>& g, typename Graph<T>::Id a) {
  T acc = T(0);
  for (const T& v : g.val(a).data) acc += v;
  return g.record(Tensor<T>::scalar(acc), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& da = gr.gbuf(a);
    for (T& v : da.data) v += go[0];
  });
}

template <class T>
typename Graph<T>::Id mean_all(Graph<T>& g, typename Graph<T>::Id a) {
  const T inv = T(1) / static_cast<T>(g.val(a).numel());
  T acc = T(0);
  for (const T& v : g.val(a).data) acc += v;
  return g.record(Tensor<T>::scalar(acc * inv), {a},
                  [a, inv](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& da = gr.gbuf(a);
                    const T gv = go[0] * inv;
                    for (T& v : da.data) v += gv;
                  });
}

template <class T>
typename Graph<T>::Id reshape(Graph<T>& g, typename Graph<T>::Id a,
                              std::vector<std::size_t> shape) {
  require(Tensor<T>::count(shape) == g.val(a).numel(), Err::ShapeMismatch,
          "reshape: element count mismatch");
  Tensor<T> out = g.val(a);
  out.shape = std::move(shape);
  return g.record(std::move(out), {a}, [a](Graph<T>& gr, const Tensor<T>& go) {
    Tensor<T>& da = gr.gbuf(a);
    for (std::size_t i = 0; i < go.numel(); ++i) da[i] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (NCHW)
// ---------------------------------------------------------------------------

/// Cross-correlation plus bias, the deep-learning convention. Output extent
/// (H + 2*pad - kh) must divide the stride exactly.
template <class T>
typename Graph<T>::Id conv2d(Graph<T>& g, typename Graph<T>::Id x, typename Graph<T>::Id w,
                             typename Graph<T>::Id b, std::size_t stride, std::size_t pad) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& wv = g.val(w);
  require(xv.ndim() == 4 && wv.ndim() == 4, Err::ShapeMismatch, "conv2d expects NCHW");
  const std::size_t N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t Cout = wv.dim(0), kh_ = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == Cin, Err::ShapeMismatch, "conv2d channel mismatch");
  require(H + 2 * pad >= kh_ && W + 2 * pad >= kw, Err::ShapeMismatch,
          "conv2d kernel larger than padded input");
  require((H + 2 * pad - kh_) % stride == 0 && (W + 2 * pad - kw) % stride == 0,
          Err::NonIntegralOutput, "conv2d output extent is not integral");
  const std::size_t Ho = (H + 2 * pad - kh_) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const bool has_bias = b != Graph<T>::npos;
  if (has_bias)
    require(g.val(b).numel() == Cout, Err::ShapeMismatch, "conv2d bias size mismatch");

  Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);

  // Valid output column range for a kernel column offset `off`:
  // 0 <= ow*s + off < W.
  auto col_range = [s](std::ptrdiff_t off, std::size_t in, std::size_t outn) {
    std::ptrdiff_t lo = off < 0 ? (-off + s - 1) / s : 0;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(in) - 1 - off) / s + 1;
    lo = std::max<std::ptrdiff_t>(lo, 0);
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(outn));
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>(lo, hi);
  };

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Cout; ++co) {
      T* op = out.data.data() + (n * Cout + co) * Ho * Wo;
      if (has_bias) {
        const T bias = g.val(b)[co];
        for (std::size_t i = 0; i < Ho * Wo; ++i) op[i] = bias;
      }
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* xp = xv.data.data() + (n * Cin + ci) * H * W;
        const T* wp = wv.data.data() + (co * Cin + ci) * kh_ * kw;
        for (std::size_t ki = 0; ki < kh_; ++ki) {
          const std::ptrdiff_t offh = static_cast<std::ptrdiff_t>(ki) - p;
          auto [oh_lo, oh_hi] = col_range(offh, H, Ho);
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const T wval = wp[ki * kw + kj];
            if (wval == T(0)) continue;
            const std::ptrdiff_t offw = static_cast<std::ptrdiff_t>(kj) - p;
            auto [ow_lo, ow_hi] = col_range(offw, W, Wo);
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const T* xrow = xp + (oh * s + offh) * static_cast<std::ptrdiff_t>(W);
              T* orow = op + oh * static_cast<std::ptrdiff_t>(Wo);
              for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                orow[ow] += wval * xrow[ow * s + offw];
            }
          }
        }
      }
    }
  }

  auto back = [x, w, b, stride, pad, N, Cin, H, W, Cout, kh_, kw, Ho, Wo, has_bias,
               col_range](Graph<T>& gr, const Tensor<T>& go) {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
    const Tensor<T>& xv = gr.val(x);
    const Tensor<T>& wv = gr.val(w);
    const bool need_x = gr.needs_grad(x);
    const bool need_w = gr.needs_grad(w);
    const bool need_b = has_bias && gr.needs_grad(b);
    Tensor<T>* dx = need_x ? &gr.gbuf(x) : nullptr;
    Tensor<T>* dw = need_w ? &gr.gbuf(w) : nullptr;
    Tensor<T>* db = need_b ? &gr.gbuf(b) : nullptr;

    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t co = 0; co < Cout; ++co) {
        const T* gp = go.data.data() + (n * Cout + co) * Ho * Wo;
        if (db) {
          T acc = T(0);
          for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
          db->data[co] += acc;
        }
        if (!need_x && !need_w) continue;
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const T* xp = xv.data.data() + (n * Cin + ci) * H * W;
          T* dxp = dx ? dx->data.data() + (n * Cin + ci) * H * W : nullptr;
          const T* wp = wv.data.data() + (co * Cin + ci) * kh_ * kw;
          T* dwp = dw ? dw->data.data() + (co * Cin + ci) * kh_ * kw : nullptr;
          for (std::size_t ki = 0; ki < kh_; ++ki) {
            const std::ptrdiff_t offh = static_cast<std::ptrdiff_t>(ki) - p;
            auto [oh_lo, oh_hi] = col_range(offh, H, Ho);
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const std::ptrdiff_t offw = static_cast<std::ptrdiff_t>(kj) - p;
              auto [ow_lo, ow_hi] = col_range(offw, W, Wo);
              const T wval = wp[ki * kw + kj];
              T wacc = T(0);
              for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
                const std::ptrdiff_t ih = oh * s + offh;
                const T* grow = gp + oh * static_cast<std::ptrdiff_t>(Wo);
                const T* xrow = xp + ih * static_cast<std::ptrdiff_t>(W);
                T* dxrow = dxp ? dxp + ih * static_cast<std::ptrdiff_t>(W) : nullptr;
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) {
                  const T gv = grow[ow];
                  if (dxrow) dxrow[ow * s + offw] += wval * gv;
                  wacc += xrow[ow * s + offw] * gv;
                }
              }
              if (dwp) dwp[ki * kw + kj] += wacc;
            }
          }
        }
      }
    }
  };
  std::vector<typename Graph<T>::Id> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return g.record(std::move(out), std::move(parents), back);
}

/// Non-overlapping p x p window means.
template <class T>
typename Graph<T>::Id avg_pool(Graph<T>& g, typename Graph<T>::Id x, std::size_t p) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() == 4, Err::ShapeMismatch, "avg_pool expects NCHW");
  require(p >= 1, Err::NonDivisible, "avg_pool window must be >= 1");
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  require(H % p == 0 && W % p == 0, Err::NonDivisible,
          "avg_pool: spatial dims not divisible by window");
  const std::size_t Ho = H / p, Wo = W / p;
  const T inv = T(1) / static_cast<T>(p * p);

  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = xv.data.data() + nc * H * W;
    T* op = out.data.data() + nc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T acc = T(0);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j) acc += xp[(oh * p + i) * W + ow * p + j];
        op[oh * Wo + ow] = acc * inv;
      }
  }
  return g.record(std::move(out), {x},
                  [x, p, N, C, H, W, Ho, Wo, inv](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t nc = 0; nc < N * C; ++nc) {
                      T* dxp = dx.data.data() + nc * H * W;
                      const T* gp = go.data.data() + nc * Ho * Wo;
                      for (std::size_t oh = 0; oh < Ho; ++oh)
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                          const T gv = gp[oh * Wo + ow] * inv;
                          for (std::size_t i = 0; i < p; ++i)
                            for (std::size_t j = 0; j < p; ++j)
                              dxp[(oh * p + i) * W + ow * p + j] += gv;
                        }
                    }
                  });
}

/// Per-channel spatial mean, [N,C,H,W] -> [N,C,1,1].
template <class T>
typename Graph<T>::Id global_avg(Graph<T>& g, typename Graph<T>::Id x) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() == 4, Err::ShapeMismatch, "global_avg expects NCHW");
  const std::size_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  const T inv = T(1) / static_cast<T>(HW);
  Tensor<T> out = Tensor<T>::zeros({N, C, 1, 1});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = xv.data.data() + nc * HW;
    T acc = T(0);
    for (std::size_t i = 0; i < HW; ++i) acc += xp[i];
    out[nc] = acc * inv;
  }
  return g.record(std::move(out), {x},
                  [x, N, C, HW, inv](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t nc = 0; nc < N * C; ++nc) {
                      const T gv = go[nc] * inv;
                      T* dxp = dx.data.data() + nc * HW;
                      for (std::size_t i = 0; i < HW; ++i) dxp[i] += gv;
                    }
                  });
}

/// Nearest-neighbour 2x spatial upsample.
template <class T>
typename Graph<T>::Id upsample_nearest2(Graph<T>& g, typename Graph<T>::Id x) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() == 4, Err::ShapeMismatch, "upsample expects NCHW");
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xp = xv.data.data() + nc * H * W;
    T* op = out.data.data() + nc * 4 * H * W;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const T v = xp[h * W + w];
        T* o0 = op + (2 * h) * 2 * W + 2 * w;
        T* o1 = o0 + 2 * W;
        o0[0] = o0[1] = o1[0] = o1[1] = v;
      }
  }
  return g.record(std::move(out), {x},
                  [x, N, C, H, W](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t nc = 0; nc < N * C; ++nc) {
                      T* dxp = dx.data.data() + nc * H * W;
                      const T* gp = go.data.data() + nc * 4 * H * W;
                      for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w) {
                          const T* g0 = gp + (2 * h) * 2 * W + 2 * w;
                          const T* g1 = g0 + 2 * W;
                          dxp[h * W + w] += g0[0] + g0[1] + g1[0] + g1[1];
                        }
                    }
                  });
}

/// Concatenate along the channel dimension.
template <class T>
typename Graph<T>::Id concat_channels(Graph<T>& g, typename Graph<T>::Id a,
                                      typename Graph<T>::Id b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  require(av.ndim() == 4 && bv.ndim() == 4, Err::ShapeMismatch, "concat expects NCHW");
  require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
          Err::ShapeMismatch, "concat: non-channel dims differ");
  const std::size_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
  const std::size_t HW = av.dim(2) * av.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, Ca + Cb, av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.data.data() + n * Ca * HW, Ca * HW,
                out.data.data() + n * (Ca + Cb) * HW);
    std::copy_n(bv.data.data() + n * Cb * HW, Cb * HW,
                out.data.data() + n * (Ca + Cb) * HW + Ca * HW);
  }
  return g.record(std::move(out), {a, b},
                  [a, b, N, Ca, Cb, HW](Graph<T>& gr, const Tensor<T>& go) {
                    if (gr.needs_grad(a)) {
                      Tensor<T>& da = gr.gbuf(a);
                      for (std::size_t n = 0; n < N; ++n) {
                        const T* gp = go.data.data() + n * (Ca + Cb) * HW;
                        T* dp = da.data.data() + n * Ca * HW;
                        for (std::size_t i = 0; i < Ca * HW; ++i) dp[i] += gp[i];
                      }
                    }
                    if (gr.needs_grad(b)) {
                      Tensor<T>& db = gr.gbuf(b);
                      for (std::size_t n = 0; n < N; ++n) {
                        const T* gp = go.data.data() + n * (Ca + Cb) * HW + Ca * HW;
                        T* dp = db.data.data() + n * Cb * HW;
                        for (std::size_t i = 0; i < Cb * HW; ++i) dp[i] += gp[i];
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Layer normalization over the channel dimension (dim 1); every spatial
/// position is normalized independently. gamma/beta have shape [C].
template <class T>
typename Graph<T>::Id layer_norm(Graph<T>& g, typename Graph<T>::Id x,
                                 typename Graph<T>::Id gamma, typename Graph<T>::Id beta,
                                 T eps) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() >= 2, Err::ShapeMismatch, "layer_norm expects at least 2 dims");
  const std::size_t N = xv.dim(0), C = xv.dim(1);
  std::size_t spatial = 1;
  for (std::size_t d = 2; d < xv.ndim(); ++d) spatial *= xv.dim(d);
  require(g.val(gamma).numel() == C && g.val(beta).numel() == C, Err::ShapeMismatch,
          "layer_norm affine params must have C entries");

  Tensor<T> out = Tensor<T>::zeros(xv.shape);
  // Cached inverse stddev and normalized values for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(xv.numel());
  auto istd = std::make_shared<std::vector<T>>(N * spatial);

  const Tensor<T>& gm = g.val(gamma);
  const Tensor<T>& bt = g.val(beta);
  const T invc = T(1) / static_cast<T>(C);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t sp = 0; sp < spatial; ++sp) {
      const std::size_t base = n * C * spatial + sp;
      T mean = T(0);
      for (std::size_t c = 0; c < C; ++c) mean += xv[base + c * spatial];
      mean *= invc;
      T var = T(0);
      for (std::size_t c = 0; c < C; ++c) {
        const T d = xv[base + c * spatial] - mean;
        var += d * d;
      }
      var *= invc;
      const T inv = T(1) / std::sqrt(var + eps);
      (*istd)[n * spatial + sp] = inv;
      for (std::size_t c = 0; c < C; ++c) {
        const T xh = (xv[base + c * spatial] - mean) * inv;
        (*xhat)[base + c * spatial] = xh;
        out[base + c * spatial] = xh * gm[c] + bt[c];
      }
    }
  }

  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, N, C, spatial, invc, xhat, istd](Graph<T>& gr,
                                                                    const Tensor<T>& go) {
    const Tensor<T>& gm = gr.val(gamma);
    const bool need_x = gr.needs_grad(x);
    const bool need_g = gr.needs_grad(gamma);
    const bool need_b = gr.needs_grad(beta);
    Tensor<T>* dx = need_x ? &gr.gbuf(x) : nullptr;
    Tensor<T>* dg = need_g ? &gr.gbuf(gamma) : nullptr;
    Tensor<T>* db = need_b ? &gr.gbuf(beta) : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t base = n * C * spatial + sp;
        const T inv = (*istd)[n * spatial + sp];
        T mean_h = T(0), mean_hx = T(0);
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = base + c * spatial;
          const T h = go[i] * gm[c];
          mean_h += h;
          mean_hx += h * (*xhat)[i];
        }
        mean_h *= invc;
        mean_hx *= invc;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = base + c * spatial;
          if (dx) {
            const T h = go[i] * gm[c];
            dx->data[i] += inv * (h - mean_h - (*xhat)[i] * mean_hx);
          }
          if (dg) dg->data[c] += go[i] * (*xhat)[i];
          if (db) db->data[c] += go[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// x[..., Din] * w[Dout, Din]^T + b. Leading dimensions are flattened to rows.
template <class T>
typename Graph<T>::Id linear(Graph<T>& g, typename Graph<T>::Id x, typename Graph<T>::Id w,
                             typename Graph<T>::Id b) {
  const Tensor<T>& xv = g.val(x);
  const Tensor<T>& wv = g.val(w);
  require(wv.ndim() == 2, Err::ShapeMismatch, "linear weight must be 2-D");
  const std::size_t din = wv.dim(1), dout = wv.dim(0);
  require(xv.ndim() >= 1 && xv.shape.back() == din, Err::ShapeMismatch,
          "linear: input feature dim mismatch");
  const std::size_t rows = xv.numel() / din;
  const bool has_bias = b != Graph<T>::npos;
  if (has_bias)
    require(g.val(b).numel() == dout, Err::ShapeMismatch, "linear bias size mismatch");

  std::vector<std::size_t> oshape = xv.shape;
  oshape.back() = dout;
  Tensor<T> out = Tensor<T>::zeros(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = xv.data.data() + r * din;
    T* op = out.data.data() + r * dout;
    for (std::size_t o = 0; o < dout; ++o) {
      const T* wp = wv.data.data() + o * din;
      T acc = has_bias ? g.val(b)[o] : T(0);
      for (std::size_t i = 0; i < din; ++i) acc += wp[i] * xp[i];
      op[o] = acc;
    }
  }

  auto back = [x, w, b, rows, din, dout, has_bias](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& xv = gr.val(x);
    const Tensor<T>& wv = gr.val(w);
    const bool need_x = gr.needs_grad(x);
    const bool need_w = gr.needs_grad(w);
    Tensor<T>* dx = need_x ? &gr.gbuf(x) : nullptr;
    Tensor<T>* dw = need_w ? &gr.gbuf(w) : nullptr;
    Tensor<T>* db = has_bias && gr.needs_grad(b) ? &gr.gbuf(b) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gp = go.data.data() + r * dout;
      const T* xp = xv.data.data() + r * din;
      for (std::size_t o = 0; o < dout; ++o) {
        const T gv = gp[o];
        if (gv == T(0)) continue;
        if (dx) {
          const T* wp = wv.data.data() + o * din;
          T* dxp = dx->data.data() + r * din;
          for (std::size_t i = 0; i < din; ++i) dxp[i] += gv * wp[i];
        }
        if (dw) {
          T* dwp = dw->data.data() + o * din;
          for (std::size_t i = 0; i < din; ++i) dwp[i] += gv * xp[i];
        }
        if (db) db->data[o] += gv;
      }
    }
  };
  std::vector<typename Graph<T>::Id> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return g.record(std::move(out), std::move(parents), back);
}

namespace detail {
template <class T>
void matmul_dims(const Tensor<T>& a, const Tensor<T>& b, std::size_t& batch, std::size_t& m,
                 std::size_t& k, std::size_t& n) {
  require(a.ndim() == b.ndim() && (a.ndim() == 2 || a.ndim() == 3), Err::ShapeMismatch,
          "matmul expects matching 2-D or 3-D operands");
  if (a.ndim() == 2) {
    batch = 1;
    m = a.dim(0);
    k = a.dim(1);
    require(b.dim(0) == k, Err::ShapeMismatch, "matmul inner dims differ");
    n = b.dim(1);
  } else {
    batch = a.dim(0);
    require(b.dim(0) == batch, Err::ShapeMismatch, "matmul batch dims differ");
    m = a.dim(1);
    k = a.dim(2);
    require(b.dim(1) == k, Err::ShapeMismatch, "matmul inner dims differ");
    n = b.dim(2);
  }
}
}  // namespace detail

/// 2-D or batched 3-D matrix product.
template <class T>
typename Graph<T>::Id matmul(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id b) {
  const Tensor<T>& av = g.val(a);
  const Tensor<T>& bv = g.val(b);
  std::size_t batch, m, k, n;
  detail::matmul_dims(av, bv, batch, m, k, n);
  std::vector<std::size_t> oshape =
      av.ndim() == 2 ? std::vector<std::size_t>{m, n} : std::vector<std::size_t>{batch, m, n};
  Tensor<T> out = Tensor<T>::zeros(oshape);
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const T* ap = av.data.data() + bt * m * k;
    const T* bp = bv.data.data() + bt * k * n;
    T* op = out.data.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = ap[i * k + kk];
        if (aik == T(0)) continue;
        const T* brow = bp + kk * n;
        T* orow = op + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
  }
  return g.record(std::move(out), {a, b},
                  [a, b, batch, m, k, n](Graph<T>& gr, const Tensor<T>& go) {
    const Tensor<T>& av = gr.val(a);
    const Tensor<T>& bv = gr.val(b);
    if (gr.needs_grad(a)) {
      Tensor<T>& da = gr.gbuf(a);
      // dA = G * B^T
      for (std::size_t bt = 0; bt < batch; ++bt) {
        const T* gp = go.data.data() + bt * m * n;
        const T* bp = bv.data.data() + bt * k * n;
        T* dap = da.data.data() + bt * m * k;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T* grow = gp + i * n;
            const T* brow = bp + kk * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            dap[i * k + kk] += acc;
          }
      }
    }
    if (gr.needs_grad(b)) {
      Tensor<T>& db = gr.gbuf(b);
      // dB = A^T * G
      for (std::size_t bt = 0; bt < batch; ++bt) {
        const T* gp = go.data.data() + bt * m * n;
        const T* ap = av.data.data() + bt * m * k;
        T* dbp = db.data.data() + bt * k * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = ap[i * k + kk];
            if (aik == T(0)) continue;
            const T* grow = gp + i * n;
            T* dbrow = dbp + kk * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
          }
      }
    }
  });
}

/// Swap the last two dimensions of a 2-D or 3-D tensor.
template <class T>
typename Graph<T>::Id transpose_last2(Graph<T>& g, typename Graph<T>::Id x) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() == 2 || xv.ndim() == 3, Err::ShapeMismatch,
          "transpose expects 2-D or 3-D");
  const std::size_t batch = xv.ndim() == 3 ? xv.dim(0) : 1;
  const std::size_t m = xv.dim(xv.ndim() - 2), n = xv.dim(xv.ndim() - 1);
  std::vector<std::size_t> oshape = xv.shape;
  std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const T* xp = xv.data.data() + bt * m * n;
    T* op = out.data.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) op[j * m + i] = xp[i * n + j];
  }
  return g.record(std::move(out), {x},
                  [x, batch, m, n](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t bt = 0; bt < batch; ++bt) {
                      const T* gp = go.data.data() + bt * m * n;
                      T* dxp = dx.data.data() + bt * m * n;
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dxp[i * n + j] += gp[j * m + i];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Softmax and row normalization (last dimension)
// ---------------------------------------------------------------------------

/// Row softmax over the last dimension, computed with max subtraction. The
/// backward pass keeps a copy of the output: dx_i = y_i * (g_i - sum_j g_j y_j).
template <class T>
typename Graph<T>::Id softmax_lastdim(Graph<T>& g, typename Graph<T>::Id x) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() >= 1, Err::ShapeMismatch, "softmax needs at least 1 dim");
  const std::size_t n = xv.shape.back();
  const std::size_t rows = xv.numel() / n;
  Tensor<T> out = Tensor<T>::zeros(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = xv.data.data() + r * n;
    T* op = out.data.data() + r * n;
    T mx = xp[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xp[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      op[j] = std::exp(xp[j] - mx);
      sum += op[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) op[j] *= inv;
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return g.record(std::move(out), {x},
                  [x, rows, n, y](Graph<T>& gr, const Tensor<T>& go) {
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T* yp = y->data.data() + r * n;
                      const T* gp = go.data.data() + r * n;
                      T dot = T(0);
                      for (std::size_t j = 0; j < n; ++j) dot += gp[j] * yp[j];
                      T* dxp = dx.data.data() + r * n;
                      for (std::size_t j = 0; j < n; ++j) dxp[j] += yp[j] * (gp[j] - dot);
                    }
                  });
}

/// L2-normalize each row of the last dimension: y = x / sqrt(sum x^2 + eps).
template <class T>
typename Graph<T>::Id l2_normalize_lastdim(Graph<T>& g, typename Graph<T>::Id x, T eps) {
  const Tensor<T>& xv = g.val(x);
  require(xv.ndim() >= 1, Err::ShapeMismatch, "l2_normalize needs at least 1 dim");
  const std::size_t n = xv.shape.back();
  const std::size_t rows = xv.numel() / n;
  Tensor<T> out = Tensor<T>::zeros(xv.shape);
  auto invn = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = xv.data.data() + r * n;
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += xp[j] * xp[j];
    const T inv = T(1) / std::sqrt(s + eps);
    (*invn)[r] = inv;
    T* op = out.data.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) op[j] = xp[j] * inv;
  }
  return g.record(std::move(out), {x},
                  [x, rows, n, invn](Graph<T>& gr, const Tensor<T>& go) {
                    const Tensor<T>& xv = gr.val(x);
                    Tensor<T>& dx = gr.gbuf(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T* xp = xv.data.data() + r * n;
                      const T* gp = go.data.data() + r * n;
                      const T inv = (*invn)[r];
                      T dot = T(0);
                      for (std::size_t j = 0; j < n; ++j) dot += gp[j] * xp[j];
                      const T inv3 = inv * inv * inv;
                      T* dxp = dx.data.data() + r * n;
                      for (std::size_t j = 0; j < n; ++j)
                        dxp[j] += gp[j] * inv - dot * xp[j] * inv3;
                    }
                  });
}

}  // namespace hsical::tk

#endif  // HSICAL_GRAPH_HPP_
