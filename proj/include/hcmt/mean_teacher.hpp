#ifndef HCMT_MEAN_TEACHER_HPP
#define HCMT_MEAN_TEACHER_HPP

#include <memory>

#include "hcmt/backbone.hpp"
#include "hcmt/rng.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

enum class NoiseKind { kNone, kAdditiveGaussian };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

// Input perturbation xi. The student and teacher each draw an independent
// realization from their own streams.
struct PerturbationSpec {
  NoiseKind kind = NoiseKind::kAdditiveGaussian;
  double sigma = 0.1;
  double clip = 0.2;

  void validate() const;

  bool operator==(const PerturbationSpec&) const = default;
};

// Additive Gaussian: x + clamp(sigma * n, -clip, clip). kNone or sigma == 0
// return the input unchanged.
Tensor perturb(const Tensor& batch, const PerturbationSpec& spec, Rng& rng);

// Forward pass under a freshly drawn perturbation realization.
PredictionPyramid forward_multiscale(VNet& net, const Tensor& batch, const PerturbationSpec& spec,
                                     Rng& rng, bool training);

// theta'_t = eta * theta'_{t-1} + (1 - eta) * theta_t, elementwise over the
// whole parameter vector. The student is untouched.
void ema_update_params(ParameterVector teacher, ParameterVector student, double eta);

// EMA copy of the student plus its update rate. Initialized as an exact copy
// of the student; never receives gradients.
class TeacherState {
 public:
  TeacherState() = default;

  void initialize_from(VNet& student, double eta);
  bool initialized() const { return net_ != nullptr; }

  VNet& net();
  const VNet& net() const;
  double eta() const { return eta_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }  // checkpoint restore

  // One EMA step against the current student parameters; increments the step
  // counter.
  void ema_update(VNet& student);

  // Gradient-free teacher forward under an independently drawn perturbation.
  PredictionPyramid predict(const Tensor& batch, const PerturbationSpec& spec, Rng& rng);

 private:
  std::unique_ptr<VNet> net_;
  double eta_ = 0.99;
  std::int64_t step_ = 0;
};

}  // namespace hcmt

#endif  // HCMT_MEAN_TEACHER_HPP
