#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mvseg/blocks.hpp"

namespace mvseg::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment tensors follow the order of the
// ParamList the optimizer was built from.
template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamConfig config);

  void step();
  void zero_grad() { params_.zero_grad(); }

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

struct GradProbe {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradProbe> probes;
};

// Compares analytic gradients against central differences on `n_probes`
// randomly chosen scalar parameters. `loss` evaluates the objective at the
// current parameter values; `compute_grads` must leave d(loss)/d(param) in
// every Parameter::grad (grads are zeroed before it is called). The
// relative error uses max(|analytic|, |numeric|, abs_floor) as denominator.
template <typename T>
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, ParamList<T>& params,
                           int n_probes, double eps, std::uint64_t seed,
                           double abs_floor = 1e-6);

}  // namespace mvseg::nn
