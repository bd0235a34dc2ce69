#ifndef HSICAL_ADAM_HPP_
#define HSICAL_ADAM_HPP_

#include <cmath>
#include <vector>

#include "hsical/common.hpp"
#include "hsical/tensor.hpp"

namespace hsical::tk {

/// First/second moment buffers, one pair per parameter, allocated lazily on
/// the first step so the state always matches the parameter list.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long step = 0;
};

template <class T>
struct AdamOptions {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/// One bias-corrected Adam update over a parameter list.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<const Tensor<T>*>& grads, AdamState<T>& state,
               const AdamOptions<T>& opt) {
  require(params.size() == grads.size(), Err::ShapeMismatch,
          "adam: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.push_back(Tensor<T>::zeros(p->shape));
      state.v.push_back(Tensor<T>::zeros(p->shape));
    }
  }
  require(state.m.size() == params.size(), Err::ShapeMismatch,
          "adam: state does not match parameter list");

  state.step += 1;
  const T bc1 = T(1) - std::pow(opt.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(opt.beta2, static_cast<T>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    require(p.same_shape(g) && p.same_shape(state.m[i]), Err::ShapeMismatch,
            "adam: shape mismatch at parameter " + std::to_string(i));
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = opt.beta1 * m[j] + (T(1) - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (T(1) - opt.beta2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

}  // namespace hsical::tk

#endif  // HSICAL_ADAM_HPP_
