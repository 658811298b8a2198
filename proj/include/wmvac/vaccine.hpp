#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmvac/autodiff.hpp"
#include "wmvac/removal_net.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac {

// Dwv ruins the restored image (gradient ascent on the image distance);
// Iwv suppresses detection and removal (descent on image + mask terms).
enum class VaccineKind { Dwv, Iwv };

inline const char* vaccine_kind_name(VaccineKind k) { return k == VaccineKind::Dwv ? "dwv" : "iwv"; }

struct VaccineConfig {
  float epsilon = 8.0f / 255.0f;  // L-inf budget
  float step = 2.0f / 255.0f;     // signed-gradient step size
  int iterations = 50;
  float beta = 2.0f;              // Iwv balance between image and mask terms
  VaccineKind kind = VaccineKind::Dwv;
  std::vector<const RemovalModel*> models;  // >= 1; more than one means a stacked vaccine
  bool check_projection = false;  // verify the constraints after every iteration
};

struct Vaccine {
  Tensor delta;
  VaccineConfig config;
  // loss at delta^0 .. delta^T (iterations+1 entries)
  std::vector<double> loss_trace;
};

// Distance between the removal output for the vaccinated host and the clean
// host. The ascent objective.
inline double loss_dwv(const RemovalModel& model, const Tensor& host, const Tensor& delta) {
  Tape tape;
  Var x = tape.add(tape.constant(host), tape.constant(delta));
  TapedForward f = forward_on_tape(tape, model, x);
  return mean_squared_error(tape.value(f.restored), host);
}

// 0.5 * (beta * image term + mask-versus-zero term). The descent objective.
inline double loss_iwv(const RemovalModel& model, const Tensor& host, const Tensor& delta, float beta) {
  if (!(beta > 0.0f)) throw std::invalid_argument("loss_iwv: beta must be positive");
  Tape tape;
  Var x = tape.add(tape.constant(host), tape.constant(delta));
  TapedForward f = forward_on_tape(tape, model, x);
  const double img = mean_squared_error(tape.value(f.restored), host);
  const Tensor zeros(tape.value(f.mask).shape());
  const double mask = mean_squared_error(tape.value(f.mask), zeros);
  return 0.5 * (static_cast<double>(beta) * img + mask);
}

// The same objective as a differentiable node.
inline Var build_vaccine_loss(Tape& tape, const RemovalModel& model, const Tensor& host, Var vaccinated,
                              VaccineKind kind, float beta) {
  TapedForward f = forward_on_tape(tape, model, vaccinated);
  Var l_img = tape.mse(f.restored, tape.constant(host));
  if (kind == VaccineKind::Dwv) return l_img;
  Var l_mask = tape.mse(f.mask, tape.constant(Tensor(tape.value(f.mask).shape())));
  return tape.scale_add(l_img, 0.5f * beta, l_mask, 0.5f);
}

namespace detail {

inline float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Clip delta to the L-inf ball, then clip host+delta into [0,1] by adjusting
// delta. Both constraints hold exactly in float afterwards.
inline void project_delta(Tensor& delta, const Tensor& host, float epsilon) {
  for (std::int64_t i = 0; i < delta.size(); ++i) {
    const float d = clampf(delta[i], -epsilon, epsilon);
    delta[i] = clampf(d, -host[i], 1.0f - host[i]);
  }
}

inline void verify_projection(const Tensor& delta, const Tensor& host, float epsilon, int iteration) {
  for (std::int64_t i = 0; i < delta.size(); ++i) {
    const float s = host[i] + delta[i];
    if (std::fabs(delta[i]) > epsilon || s < 0.0f || s > 1.0f)
      throw std::logic_error("vaccine: projection violated at iteration " + std::to_string(iteration) +
                             " entry " + std::to_string(i));
  }
}

inline Var build_mean_loss(Tape& tape, const VaccineConfig& config, const Tensor& host, Var vaccinated) {
  const float inv_k = 1.0f / static_cast<float>(config.models.size());
  Var acc{};
  for (std::size_t k = 0; k < config.models.size(); ++k) {
    Var l = build_vaccine_loss(tape, *config.models[k], host, vaccinated, config.kind, config.beta);
    if (k == 0) {
      acc = config.models.size() == 1 ? l : tape.scale_add(l, inv_k, l, 0.0f);
    } else {
      acc = tape.scale_add(acc, 1.0f, l, inv_k);
    }
  }
  return acc;
}

inline void check_config(const VaccineConfig& c) {
  if (!(c.epsilon > 0.0f)) throw std::invalid_argument("vaccine: epsilon must be positive");
  if (!(c.step > 0.0f)) throw std::invalid_argument("vaccine: step must be positive");
  if (c.iterations < 1) throw std::invalid_argument("vaccine: iterations must be >= 1");
  if (!(c.beta > 0.0f)) throw std::invalid_argument("vaccine: beta must be positive");
  if (c.models.empty()) throw std::invalid_argument("vaccine: model list is empty");
  for (const auto* m : c.models)
    if (!m) throw std::invalid_argument("vaccine: null model in list");
}

}  // namespace detail

// Projected signed-gradient iteration on the clean host image. No watermark
// enters the optimization; that is what makes the result watermark-agnostic.
inline Vaccine generate_vaccine(const Tensor& host, const VaccineConfig& config) {
  detail::check_config(config);
  const Shape s = host.shape();
  if (s.n != 1 || s.c != 3)
    throw std::invalid_argument("generate_vaccine: host must be 1x3xHxW, got " + s.str());
  for (std::int64_t i = 0; i < host.size(); ++i)
    if (host[i] < 0.0f || host[i] > 1.0f)
      throw std::invalid_argument("generate_vaccine: host values must lie in [0,1]");

  Vaccine v;
  v.config = config;
  v.delta = Tensor(s);  // delta^0 = 0
  const float dir = config.kind == VaccineKind::Dwv ? 1.0f : -1.0f;

  for (int t = 0; t < config.iterations; ++t) {
    Tape tape;
    Var d = tape.leaf(v.delta, /*want_grad=*/true);
    Var x = tape.add(tape.constant(host), d);
    Var loss = detail::build_mean_loss(tape, config, host, x);
    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value))
      throw std::runtime_error("generate_vaccine: non-finite loss at iteration " + std::to_string(t) +
                               " (" + std::string(vaccine_kind_name(config.kind)) + ", trace length " +
                               std::to_string(v.loss_trace.size()) + ")");
    v.loss_trace.push_back(loss_value);

    GradMap grads = tape.backward(loss);
    const Tensor& g = grads.at(d);
    for (std::int64_t i = 0; i < v.delta.size(); ++i) {
      const float sign = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      v.delta[i] += dir * config.step * sign;
    }
    detail::project_delta(v.delta, host, config.epsilon);
    if (config.check_projection) detail::verify_projection(v.delta, host, config.epsilon, t);
  }

  {  // closing trace entry at delta^T, same evaluation path as above
    Tape tape;
    Var x = tape.add(tape.constant(host), tape.constant(v.delta));
    Var loss = detail::build_mean_loss(tape, config, host, x);
    v.loss_trace.push_back(tape.scalar_value(loss));
  }
  return v;
}

// Multi-model vaccine: mean of the per-model losses drives the iteration.
inline Vaccine stack(const std::vector<const RemovalModel*>& models, const Tensor& host,
                     VaccineConfig config) {
  config.models = models;
  return generate_vaccine(host, config);
}

inline Tensor vaccinated_image(const Tensor& host, const Vaccine& v) {
  Tensor out = host;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += v.delta[i];
  return out;
}

}  // namespace wmvac
