#include "unimask/adam.hpp"

#include <cmath>
#include <string>

#include "unimask/errors.hpp"

namespace unimask {

template <typename T>
AdamStepReport adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state,
                         double lr, const AdamConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), T(0));
      state.second_moment.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw StateError("adam state tracks " +
                     std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }

  double sq_norm = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.first_moment[i].size() != p.tensor.numel()) {
      throw StateError("adam moment size mismatch for " + p.name);
    }
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in " + p.name);
      }
      sq_norm += double(g) * double(g);
    }
  }

  AdamStepReport report;
  report.grad_norm = std::sqrt(sq_norm);
  if (config.clip_norm > 0.0 && report.grad_norm > config.clip_norm) {
    report.clip_scale = config.clip_norm / report.grad_norm;
  }

  state.step += 1;
  const double bias1 = 1.0 - std::pow(config.beta1, double(state.step));
  const double bias2 = 1.0 - std::pow(config.beta2, double(state.step));
  const T b1 = T(config.beta1);
  const T b2 = T(config.beta2);
  const T clip = T(report.clip_scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto values = p.tensor.data();
    auto grad = p.tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const T decay = p.decay ? T(lr * config.weight_decay) : T(0);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grad.empty() ? T(0) : grad[j] * clip;
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double m_hat = double(m[j]) / bias1;
      const double v_hat = double(v[j]) / bias2;
      values[j] -= decay * values[j];
      values[j] -= T(lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
  return report;
}

template AdamStepReport adam_step(std::span<NamedTensor<float>>,
                                  AdamState<float>&, double,
                                  const AdamConfig&);
template AdamStepReport adam_step(std::span<NamedTensor<double>>,
                                  AdamState<double>&, double,
                                  const AdamConfig&);

}  // namespace unimask
