#include "hcmt/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "hcmt/errors.hpp"

namespace hcmt {

namespace {
constexpr double kCeClampFloor = 1e-12;

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite input");
}

double dice_core(const double* p, const double* g, std::int64_t n, double eps, double* grad_acc,
                 double grad_scale) {
  double inter = 0.0, psq = 0.0, gsq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    inter += p[i] * g[i];
    psq += p[i] * p[i];
    gsq += g[i] * g[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = psq + gsq + eps;
  const double loss = 1.0 - num / den;
  if (grad_acc) {
    const double inv_den2 = 1.0 / (den * den);
    for (std::int64_t i = 0; i < n; ++i)
      grad_acc[i] += grad_scale * (2.0 * num * p[i] - 2.0 * g[i] * den) * inv_den2;
  }
  return loss;
}

double ce_core(const double* probs, const double* target, std::int64_t classes, std::int64_t n,
               double* grad_acc, double grad_scale) {
  double sum = 0.0;
  for (std::int64_t v = 0; v < n; ++v) {
    const double tv = target[v];
    const std::int64_t c = static_cast<std::int64_t>(tv);
    if (c < 0 || c >= classes || static_cast<double>(c) != tv)
      throw std::out_of_range("cross_entropy_loss: target class " + std::to_string(tv) +
                              " out of range [0," + std::to_string(classes) + ")");
    const double p = probs[c * n + v];
    const double pc = p < kCeClampFloor ? kCeClampFloor : p;
    sum -= std::log(pc);
    if (grad_acc && p >= kCeClampFloor)
      grad_acc[c * n + v] -= grad_scale / (p * static_cast<double>(n));
  }
  return sum / static_cast<double>(n);
}
}  // namespace

void ScaleWeights::validate(std::size_t num_scales) const {
  if (alphas.size() != num_scales)
    throw ConfigError("ScaleWeights: got " + std::to_string(alphas.size()) + " weights for " +
                      std::to_string(num_scales) + " scales");
  bool any_positive = false;
  for (double a : alphas) {
    if (a < 0.0) throw ConfigError("ScaleWeights: weights must be non-negative");
    if (a > 0.0) any_positive = true;
  }
  if (!any_positive) throw ConfigError("ScaleWeights: at least one weight must be positive");
}

ScaleWeights ScaleWeights::final_scale_only(std::size_t num_scales) {
  ScaleWeights w;
  w.alphas.assign(num_scales, 0.0);
  w.alphas[0] = 1.0;
  return w;
}

double rampup_weight(const RampSchedule& schedule) {
  if (schedule.t < 0) throw ConfigError("rampup_weight: t must be >= 0");
  if (schedule.t_max <= 0 || schedule.t >= schedule.t_max) return schedule.lambda_max;
  const double r = 1.0 - static_cast<double>(schedule.t) / static_cast<double>(schedule.t_max);
  return schedule.lambda_max * std::exp(-5.0 * r * r);
}

double total_objective(double sup, double unsup, const RampSchedule& schedule) {
  if (!std::isfinite(sup) || !std::isfinite(unsup))
    throw NumericError("total_objective: non-finite loss term");
  return sup + rampup_weight(schedule) * unsup;
}

double dice_loss(const Tensor& fg_prob, const Tensor& target, double eps, Tensor* grad_acc,
                 double grad_scale) {
  check_same_shape(fg_prob, target, "dice_loss");
  check_finite(fg_prob, "dice_loss");
  if (grad_acc) check_same_shape(fg_prob, *grad_acc, "dice_loss grad");
  return dice_core(fg_prob.data(), target.data(), static_cast<std::int64_t>(fg_prob.size()), eps,
                   grad_acc ? grad_acc->data() : nullptr, grad_scale);
}

double cross_entropy_loss(const Tensor& probs, const Tensor& target, Tensor* grad_acc,
                          double grad_scale) {
  if (probs.rank() < 2) throw ShapeError("cross_entropy_loss: probs must be (C, spatial...)");
  const std::int64_t classes = probs.dim(0);
  const std::int64_t n = static_cast<std::int64_t>(probs.size()) / classes;
  if (static_cast<std::int64_t>(target.size()) != n)
    throw ShapeError("cross_entropy_loss: target size " + std::to_string(target.size()) +
                     " does not match spatial size " + std::to_string(n));
  check_finite(probs, "cross_entropy_loss");
  if (grad_acc) check_same_shape(probs, *grad_acc, "cross_entropy_loss grad");
  return ce_core(probs.data(), target.data(), classes, n,
                 grad_acc ? grad_acc->data() : nullptr, grad_scale);
}

double hierarchical_supervised_loss(const PredictionPyramid& pyramid, const Tensor& labels,
                                    std::int64_t labeled_n, const ScaleWeights& weights,
                                    std::vector<Tensor>* grad_pyramid, double grad_scale) {
  const std::size_t S = pyramid.num_scales();
  weights.validate(S);
  if (S == 0) throw ConfigError("hierarchical_supervised_loss: empty pyramid");
  if (labeled_n <= 0) throw ConfigError("hierarchical_supervised_loss: need labeled items");
  const Tensor& m0 = pyramid.maps[0];
  if (m0.dim(0) < labeled_n)
    throw ShapeError("hierarchical_supervised_loss: batch smaller than labeled_n");
  const std::int64_t C = m0.dim(1);
  const std::int64_t V = m0.dim(2) * m0.dim(3) * m0.dim(4);
  if (static_cast<std::int64_t>(labels.size()) != labeled_n * V)
    throw ShapeError("hierarchical_supervised_loss: labels shape mismatch");
  if (grad_pyramid && grad_pyramid->size() != S)
    throw ShapeError("hierarchical_supervised_loss: grad pyramid scale mismatch");

  const double item_scale = 1.0 / static_cast<double>(labeled_n);
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor& map = pyramid.maps[s];
    check_same_shape(map, m0, "hierarchical_supervised_loss pyramid");
    const double alpha = weights.alphas[s];
    double* gbase = nullptr;
    if (grad_pyramid) {
      check_same_shape((*grad_pyramid)[s], map, "hierarchical_supervised_loss grad");
      gbase = (*grad_pyramid)[s].data();
    }
    for (std::int64_t i = 0; i < labeled_n; ++i) {
      const double* item = map.item_ptr(i, static_cast<std::size_t>(C) * V);
      const double* lab = labels.data() + i * V;
      double* gitem = gbase ? gbase + i * C * V : nullptr;
      const double gs = grad_scale * alpha * 0.5 * item_scale;
      const bool want_grad = gitem != nullptr && alpha != 0.0;

      // Dice on each foreground class plane (the binary case is class 1).
      double dice_sum = 0.0;
      for (std::int64_t c = 1; c < C; ++c) {
        std::vector<double> indicator(static_cast<std::size_t>(V));
        for (std::int64_t v = 0; v < V; ++v)
          indicator[static_cast<std::size_t>(v)] = lab[v] == static_cast<double>(c) ? 1.0 : 0.0;
        std::vector<double> gtmp;
        if (want_grad) gtmp.assign(static_cast<std::size_t>(V), 0.0);
        dice_sum += dice_core(item + c * V, indicator.data(), V, 1e-5,
                              want_grad ? gtmp.data() : nullptr, gs / static_cast<double>(C - 1));
        if (want_grad)
          for (std::int64_t v = 0; v < V; ++v) gitem[c * V + v] += gtmp[static_cast<std::size_t>(v)];
      }
      const double dice = dice_sum / static_cast<double>(C - 1);
      const double ce = ce_core(item, lab, C, V, want_grad ? gitem : nullptr, gs);
      total += alpha * 0.5 * (dice + ce) * item_scale;
    }
  }
  return total;
}

double hierarchical_consistency_loss(const PredictionPyramid& student,
                                     const PredictionPyramid& teacher,
                                     const ScaleWeights& weights, std::vector<Tensor>* grad_student,
                                     double grad_scale) {
  const std::size_t S = student.num_scales();
  if (teacher.num_scales() != S)
    throw ShapeError("hierarchical_consistency_loss: pyramid scale count mismatch");
  weights.validate(S);
  if (S == 0) throw ConfigError("hierarchical_consistency_loss: empty pyramid");
  if (grad_student && grad_student->size() != S)
    throw ShapeError("hierarchical_consistency_loss: grad pyramid scale mismatch");

  const std::int64_t N = student.maps[0].dim(0);
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor& ps = student.maps[s];
    const Tensor& pt = teacher.maps[s];
    check_same_shape(ps, pt, "hierarchical_consistency_loss");
    const double alpha = weights.alphas[s];
    const std::int64_t per_item = static_cast<std::int64_t>(ps.size()) / N;
    const double inv = 1.0 / static_cast<double>(per_item);
    double* g = nullptr;
    if (grad_student) {
      check_same_shape((*grad_student)[s], ps, "hierarchical_consistency_loss grad");
      g = (*grad_student)[s].data();
    }
    double mse_sum = 0.0;
    const double gs = grad_scale * alpha * inv / static_cast<double>(N);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double d = ps[i] - pt[i];
      mse_sum += d * d;
      if (g && alpha != 0.0) g[i] += gs * 2.0 * d;
    }
    total += alpha * mse_sum * inv / static_cast<double>(N);
  }
  return total;
}

}  // namespace hcmt
