#include "mvseg/optim.hpp"

#include <algorithm>
#include <cmath>

namespace mvseg::nn {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("Adam: learning rate must be positive");
  for (const auto& e : params_.params) {
    m_.emplace_back(e.param->value.shape());
    v_.emplace_back(e.param->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double step_size = config_.lr / c1;
  const double sqrt_c2 = std::sqrt(c2);
  for (std::size_t p = 0; p < params_.params.size(); ++p) {
    auto& param = *params_.params[p].param;
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double g = param.grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_c2 + config_.eps;
      param.value[i] = static_cast<T>(param.value[i] - step_size * m[i] / denom);
    }
  }
}

template <typename T>
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, ParamList<T>& params,
                           int n_probes, double eps, std::uint64_t seed, double abs_floor) {
  GradCheckReport report;
  const std::size_t total = params.parameter_count();
  if (total == 0 || n_probes <= 0) return report;

  params.zero_grad();
  compute_grads();

  Rng rng(seed);
  for (int k = 0; k < n_probes; ++k) {
    // Pick a scalar uniformly over all parameters.
    std::size_t flat = rng.below(total);
    std::size_t p = 0;
    while (flat >= params.params[p].param->value.size()) {
      flat -= params.params[p].param->value.size();
      ++p;
    }
    auto& param = *params.params[p].param;
    const T saved = param.value[flat];
    param.value[flat] = static_cast<T>(saved + eps);
    const double up = loss();
    param.value[flat] = static_cast<T>(saved - eps);
    const double down = loss();
    param.value[flat] = saved;

    GradProbe probe;
    probe.name = params.params[p].name;
    probe.index = flat;
    probe.analytic = param.grad[flat];
    probe.numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(probe.analytic), std::abs(probe.numeric), abs_floor});
    probe.rel_error = std::abs(probe.analytic - probe.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    report.probes.push_back(std::move(probe));
  }
  return report;
}

template class Adam<float>;
template class Adam<double>;
template GradCheckReport grad_check(const std::function<double()>&, const std::function<void()>&,
                                    ParamList<float>&, int, double, std::uint64_t, double);
template GradCheckReport grad_check(const std::function<double()>&, const std::function<void()>&,
                                    ParamList<double>&, int, double, std::uint64_t, double);

}  // namespace mvseg::nn
