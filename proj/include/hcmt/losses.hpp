#ifndef HCMT_LOSSES_HPP
#define HCMT_LOSSES_HPP

#include <cstdint>
#include <vector>

#include "hcmt/backbone.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

// Per-scale loss weights, index-aligned to the prediction pyramid (index 0 =
// full-resolution output).
struct ScaleWeights {
  std::vector<double> alphas{0.5, 0.4, 0.05, 0.05};

  void validate(std::size_t num_scales) const;
  // {1, 0, ..., 0}: only the final output carries loss.
  static ScaleWeights final_scale_only(std::size_t num_scales);

  bool operator==(const ScaleWeights&) const = default;
};

// Gaussian ramp-up for the consistency weight: lambda(t) =
// lambda_max * exp(-5 * (1 - t/t_max)^2), clamped to lambda_max past t_max.
struct RampSchedule {
  double lambda_max = 0.1;
  std::int64_t t_max = 6000;
  std::int64_t t = 0;
};

double rampup_weight(const RampSchedule& schedule);

// sup + lambda(t) * unsup. Throws NumericError on non-finite inputs.
double total_objective(double sup, double unsup, const RampSchedule& schedule);

// Soft dice with squared-denominator form on a foreground probability map:
// 1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).
// If grad_acc is given, d(loss)/dp scaled by grad_scale is accumulated into it.
double dice_loss(const Tensor& fg_prob, const Tensor& target, double eps = 1e-5,
                 Tensor* grad_acc = nullptr, double grad_scale = 1.0);

// Mean over voxels of -log p[target]; probabilities are clamped to
// >= 1e-12 before the log. probs has shape (C, spatial...), target holds class
// indices with the matching spatial shape.
double cross_entropy_loss(const Tensor& probs, const Tensor& target, Tensor* grad_acc = nullptr,
                          double grad_scale = 1.0);

// Eq-1-style hierarchical supervised loss over a batch pyramid:
//   mean over the first labeled_n items of sum_s alpha_s*(dice+ce)/2.
// labels has shape (labeled_n, spatial...). Gradients accumulate into
// grad_pyramid (same shapes as pyramid maps) when given.
double hierarchical_supervised_loss(const PredictionPyramid& pyramid, const Tensor& labels,
                                    std::int64_t labeled_n, const ScaleWeights& weights,
                                    std::vector<Tensor>* grad_pyramid = nullptr,
                                    double grad_scale = 1.0);

// Eq-2-style hierarchical consistency: sum_s alpha_s * MSE(teacher_s,
// student_s), MSE averaged over voxels and classes, then averaged over batch
// items. The teacher is a constant: gradients flow only into the student.
double hierarchical_consistency_loss(const PredictionPyramid& student,
                                     const PredictionPyramid& teacher,
                                     const ScaleWeights& weights,
                                     std::vector<Tensor>* grad_student = nullptr,
                                     double grad_scale = 1.0);

}  // namespace hcmt

#endif  // HCMT_LOSSES_HPP
