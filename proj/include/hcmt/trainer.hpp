#ifndef HCMT_TRAINER_HPP
#define HCMT_TRAINER_HPP

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hcmt/backbone.hpp"
#include "hcmt/checkpoint.hpp"
#include "hcmt/config.hpp"
#include "hcmt/data.hpp"
#include "hcmt/losses.hpp"
#include "hcmt/mean_teacher.hpp"
#include "hcmt/metrics.hpp"

namespace hcmt {

struct DataConfig {
  bool synthetic = false;
  std::string dir;
  std::string split;
  int synthetic_count = 40;
  int synthetic_test = 20;
  std::int64_t synthetic_grid = 64;
  int labeled = 16;
  std::int64_t crop_margin = 25;
  bool preprocess = true;
  double synthetic_noise = 0.35;
  double synthetic_bias = 0.3;
  double synthetic_contrast = 1.0;

  bool operator==(const DataConfig&) const = default;
};

// Every training hyperparameter plus every paper-gap decision, resolvable from
// and serializable to the flat dotted-key config format.
struct TrainConfig {
  std::int64_t total_iterations = 6000;
  double initial_lr = 0.01;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_every = 2500;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  int batch_size = 4;
  int labeled_per_batch = 2;

  double eta = 0.99;
  bool ema_after_step = true;
  double lambda_max = 0.1;
  std::int64_t rampup_iterations = 0;  // 0 -> total_iterations

  ScaleWeights scale_weights;

  std::string mode = "custom";
  bool use_HS = true;
  bool use_HU = true;
  bool use_teacher = true;

  NetworkSpec network;
  std::array<std::int64_t, 3> patch{112, 112, 80};
  PerturbationSpec perturbation;
  std::uint64_t seed = 1337;
  std::int64_t checkpoint_every = 1000;
  std::array<std::int64_t, 3> eval_stride{0, 0, 0};  // 0 -> patch/2

  DataConfig data;

  // Applies defaults and the mode preset, rejects unknown keys, validates.
  static TrainConfig resolve(ConfigStore store);
  ConfigStore to_store() const;
  void validate() const;

  RampSchedule ramp_at(std::int64_t t) const;
  std::array<std::int64_t, 3> effective_eval_stride() const;

  bool operator==(const TrainConfig&) const = default;
};

// Mode presets for the three component flags, shared by train and ablate.
void apply_mode_flags(const std::string& mode, bool& use_HS, bool& use_HU, bool& use_teacher);
const std::vector<std::string>& known_modes();

// ---------------------------------------------------------------------------
// Dataset in memory (already preprocessed).

struct TrainItem {
  std::string id;
  Tensor volume;               // (H,W,D)
  std::optional<Tensor> mask;  // (H,W,D), binary
};

struct Dataset {
  std::vector<TrainItem> labeled;
  std::vector<TrainItem> unlabeled;
  std::vector<TrainItem> test;
};

Dataset build_synthetic_dataset(const TrainConfig& cfg);
Dataset load_dataset_from_dir(const TrainConfig& cfg);
Dataset build_dataset(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Batch composition: labeled_per_batch labeled crops followed by
// (batch_size - labeled_per_batch) unlabeled crops, sampled with reshuffled
// epochs, deterministic per (seed, iteration).

struct Batch {
  Tensor volumes;  // (N, 1, ph, pw, pd)
  Tensor labels;   // (labeled_n, ph, pw, pd)
  std::int64_t labeled_n = 0;
  std::vector<std::string> ids;
};

Batch compose_batch(const Dataset& data, const TrainConfig& cfg, std::int64_t t);

double learning_rate(std::int64_t t, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay:
//   v <- momentum*v + (grad + wd*theta); theta <- theta - lr*v

class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParameterVector& params, double lr);

  // Momentum buffers keyed by parameter name, for checkpointing.
  std::map<std::string, Tensor>& velocity() { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
  std::int64_t t = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double loss_total = 0.0;
  std::vector<std::string> batch_ids;
};

struct TrainReport {
  std::vector<StepRecord> records;
  double wall_seconds = 0.0;
  std::string final_checkpoint;
};

void write_report_csv(const std::filesystem::path& path, const TrainReport& report);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data);

  // Resume from a checkpoint written by make_checkpoint().
  void restore(const Checkpoint& ckpt);
  Checkpoint make_checkpoint();

  StepRecord step();

  // Runs from the current iteration to total_iterations. The sink (optional)
  // receives cadenced and final checkpoints. Throws NumericError on a
  // non-finite loss after recording a diagnostic record; the partial report
  // stays accessible through report().
  using CheckpointSink = std::function<void(const Checkpoint&, std::int64_t t, bool is_final)>;
  TrainReport run(const CheckpointSink& sink = nullptr);

  const TrainReport& report() const { return report_; }
  std::int64_t iteration() const { return t_; }
  VNet& student() { return *student_; }
  TeacherState& teacher() { return teacher_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  const Dataset* data_;
  std::unique_ptr<VNet> student_;
  TeacherState teacher_;
  Sgd opt_;
  std::int64_t t_ = 0;
  TrainReport report_;
};

// Sliding-window evaluation of every case against its ground truth.
std::vector<CaseScore> evaluate_cases(VNet& net, const std::vector<TrainItem>& cases,
                                      const std::array<std::int64_t, 3>& patch,
                                      const std::array<std::int64_t, 3>& stride);

}  // namespace hcmt

#endif  // HCMT_TRAINER_HPP
