#include "hcmt/mean_teacher.hpp"

#include <algorithm>

#include "hcmt/errors.hpp"

namespace hcmt {

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::kNone;
  if (s == "additive_gaussian") return NoiseKind::kAdditiveGaussian;
  throw ConfigError("unknown noise kind '" + s + "' (expected none|additive_gaussian)");
}

std::string to_string(NoiseKind k) {
  return k == NoiseKind::kNone ? "none" : "additive_gaussian";
}

void PerturbationSpec::validate() const {
  if (sigma < 0.0) throw ConfigError("PerturbationSpec: sigma must be >= 0");
  if (kind == NoiseKind::kAdditiveGaussian && sigma > 0.0 && clip <= 0.0)
    throw ConfigError("PerturbationSpec: clip must be > 0 when noise is enabled");
}

Tensor perturb(const Tensor& batch, const PerturbationSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind == NoiseKind::kNone || spec.sigma == 0.0) return batch;
  Tensor out(batch.shape());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double n = std::clamp(spec.sigma * rng.normal(), -spec.clip, spec.clip);
    out[i] = batch[i] + n;
  }
  return out;
}

PredictionPyramid forward_multiscale(VNet& net, const Tensor& batch, const PerturbationSpec& spec,
                                     Rng& rng, bool training) {
  return net.forward(perturb(batch, spec, rng), training);
}

void ema_update_params(ParameterVector teacher, ParameterVector student, double eta) {
  if (eta < 0.0 || eta > 1.0) throw ConfigError("ema_update: eta must be in [0,1]");
  if (!structure_matches(teacher, student))
    throw ConfigError("ema_update: teacher/student parameter structures do not match");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = *teacher[i].value;
    const Tensor& s = *student[i].value;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = eta * t[j] + (1.0 - eta) * s[j];
  }
}

void TeacherState::initialize_from(VNet& student, double eta) {
  if (eta < 0.0 || eta > 1.0) throw ConfigError("TeacherState: eta must be in [0,1]");
  net_ = std::make_unique<VNet>(student.spec());
  net_->copy_params_from(student);
  net_->zero_grad();
  eta_ = eta;
  step_ = 0;
}

VNet& TeacherState::net() {
  if (!net_) throw StateError("TeacherState: uninitialized teacher");
  return *net_;
}

const VNet& TeacherState::net() const {
  if (!net_) throw StateError("TeacherState: uninitialized teacher");
  return *net_;
}

void TeacherState::ema_update(VNet& student) {
  if (!net_) throw StateError("TeacherState: uninitialized teacher");
  ema_update_params(net_->params(), student.params(), eta_);
  ++step_;
}

PredictionPyramid TeacherState::predict(const Tensor& batch, const PerturbationSpec& spec,
                                        Rng& rng) {
  if (!net_) throw StateError("TeacherState: uninitialized teacher");
  return forward_multiscale(*net_, batch, spec, rng, /*training=*/false);
}

}  // namespace hcmt
