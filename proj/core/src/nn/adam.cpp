#include "tempofuse/nn/adam.hpp"

#include <cmath>

#include "tempofuse/error.hpp"

namespace tempofuse::nn {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state,
               const AdamConfig& cfg, std::uint64_t step) {
  require(step >= 1, ErrorCode::invalid_argument, "adam step counter must start at 1");
  require(cfg.lr > 0.0, ErrorCode::invalid_argument, "learning rate must be > 0");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  require(grads.size() == params.size() && state.m.size() == params.size() &&
              state.v.size() == params.size(),
          ErrorCode::shape,
          "adam: parameter/gradient/state length mismatch (" + std::to_string(params.size()) +
              "/" + std::to_string(grads.size()) + "/" + std::to_string(state.m.size()) + ")");
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const auto t = static_cast<double>(step);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T m_hat = state.m[i] * c1;
    const T v_hat = state.v[i] * c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  require(cfg_.lr > 0.0, ErrorCode::invalid_argument, "learning rate must be > 0");
  moments_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    moments_[i].m.assign(params_[i]->numel(), T(0));
    moments_[i].v.assign(params_[i]->numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  std::vector<T> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    std::span<const T> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    adam_step<T>(p.data(), g, moments_[i], cfg_, step_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
void Adam<T>::restore(std::uint64_t step, std::vector<AdamMoments<T>> moments) {
  require(moments.size() == params_.size(), ErrorCode::shape,
          "optimizer state has " + std::to_string(moments.size()) + " entries, model has " +
              std::to_string(params_.size()) + " parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(moments[i].m.size() == params_[i]->numel() &&
                moments[i].v.size() == params_[i]->numel(),
            ErrorCode::shape, "optimizer state length mismatch at parameter " + std::to_string(i));
  }
  step_ = step;
  moments_ = std::move(moments);
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&,
                               const AdamConfig&, std::uint64_t);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                AdamMoments<double>&, const AdamConfig&, std::uint64_t);
template class Adam<float>;
template class Adam<double>;

}  // namespace tempofuse::nn
