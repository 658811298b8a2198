#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "wmvac/tensor.hpp"

namespace wmvac {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected adaptive-moment estimation over a fixed parameter list.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return t_; }

  // One update. params and grads are parallel lists; moment buffers are
  // created on first use and must keep matching shapes afterwards.
  void update(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("AdamState::update: params/grads size mismatch");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("AdamState::update: parameter list changed size");
    ++t_;
    const float bc1 = 1.0f - std::pow(config_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(config_.beta2, static_cast<float>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      if (!p.same_shape(g) || !p.same_shape(m))
        throw std::invalid_argument("AdamState::update: shape mismatch at parameter " + std::to_string(k));
      for (std::int64_t i = 0; i < p.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * g[i] * g[i];
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline void adam_update(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                        AdamState& state) {
  state.update(params, grads);
}

}  // namespace wmvac
