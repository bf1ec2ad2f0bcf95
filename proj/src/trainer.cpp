#include "hcmt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hcmt/errors.hpp"

namespace hcmt {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_same_v<T, double>)
      os << fmt_double(v[i]);
    else
      os << v[i];
  }
  return os.str();
}

std::string join_array3(const std::array<std::int64_t, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}

std::array<std::int64_t, 3> parse_array3(const std::vector<std::int64_t>& v,
                                         const std::string& key) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3)
    throw ConfigError("config key '" + key + "' expects 1 or 3 comma-separated integers");
  return {v[0], v[1], v[2]};
}

}  // namespace

void apply_mode_flags(const std::string& mode, bool& use_HS, bool& use_HU, bool& use_teacher) {
  if (mode == "vnet") {
    use_teacher = false, use_HS = false, use_HU = false;
  } else if (mode == "vnet_hs") {
    use_teacher = false, use_HS = true, use_HU = false;
  } else if (mode == "mt") {
    use_teacher = true, use_HS = false, use_HU = false;
  } else if (mode == "mt_hu") {
    use_teacher = true, use_HS = false, use_HU = true;
  } else if (mode == "mt_hs") {
    use_teacher = true, use_HS = true, use_HU = false;
  } else if (mode == "mt_hu_hs") {
    use_teacher = true, use_HS = true, use_HU = true;
  } else if (mode != "custom") {
    throw ConfigError("unknown mode '" + mode + "'");
  }
}

const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes = {"vnet", "vnet_hs", "mt",
                                                 "mt_hu", "mt_hs", "mt_hu_hs"};
  return modes;
}

ConfigStore TrainConfig::to_store() const {
  ConfigStore s;
  auto put = [&s](const std::string& k, const std::string& v) { s.set(k, v, false); };
  put("total_iterations", std::to_string(total_iterations));
  put("initial_lr", fmt_double(initial_lr));
  put("lr_decay_factor", fmt_double(lr_decay_factor));
  put("lr_decay_every", std::to_string(lr_decay_every));
  put("momentum", fmt_double(momentum));
  put("weight_decay", fmt_double(weight_decay));
  put("batch_size", std::to_string(batch_size));
  put("labeled_per_batch", std::to_string(labeled_per_batch));
  put("eta", fmt_double(eta));
  put("ema_after_step", ema_after_step ? "true" : "false");
  put("lambda_max", fmt_double(lambda_max));
  put("rampup_iterations", std::to_string(rampup_iterations));
  put("scale_weights", join_list(scale_weights.alphas));
  put("mode", mode);
  put("use_HS", use_HS ? "true" : "false");
  put("use_HU", use_HU ? "true" : "false");
  put("use_teacher", use_teacher ? "true" : "false");
  put("patch", join_array3(patch));
  put("seed", std::to_string(seed));
  put("checkpoint_every", std::to_string(checkpoint_every));
  put("eval.stride", join_array3(eval_stride));
  put("network.in_channels", std::to_string(network.in_channels));
  put("network.num_classes", std::to_string(network.num_classes));
  put("network.num_scales", std::to_string(network.num_scales));
  put("network.base_channels", std::to_string(network.base_channels));
  put("network.encoder_depths",
      join_list(std::vector<std::int64_t>(network.encoder_depths.begin(),
                                          network.encoder_depths.end())));
  put("network.activation", to_string(network.activation));
  put("network.normalization", to_string(network.normalization));
  put("network.norm_groups", std::to_string(network.norm_groups));
  put("perturbation.kind", to_string(perturbation.kind));
  put("perturbation.sigma", fmt_double(perturbation.sigma));
  put("perturbation.clip", fmt_double(perturbation.clip));
  put("data.synthetic", data.synthetic ? "true" : "false");
  put("data.dir", data.dir);
  put("data.split", data.split);
  put("data.synthetic_count", std::to_string(data.synthetic_count));
  put("data.synthetic_test", std::to_string(data.synthetic_test));
  put("data.synthetic_grid", std::to_string(data.synthetic_grid));
  put("data.labeled", std::to_string(data.labeled));
  put("data.crop_margin", std::to_string(data.crop_margin));
  put("data.preprocess", data.preprocess ? "true" : "false");
  put("data.synthetic_noise", fmt_double(data.synthetic_noise));
  put("data.synthetic_bias", fmt_double(data.synthetic_bias));
  put("data.synthetic_contrast", fmt_double(data.synthetic_contrast));
  return s;
}

TrainConfig TrainConfig::resolve(ConfigStore store) {
  const ConfigStore defaults = TrainConfig{}.to_store();
  for (const auto& key : store.keys())
    if (!defaults.has(key)) throw ConfigError("unknown config key '" + key + "'");
  for (const auto& key : defaults.keys()) store.set_default(key, defaults.get_string(key));

  TrainConfig cfg;
  cfg.total_iterations = store.get_int("total_iterations");
  cfg.initial_lr = store.get_double("initial_lr");
  cfg.lr_decay_factor = store.get_double("lr_decay_factor");
  cfg.lr_decay_every = store.get_int("lr_decay_every");
  cfg.momentum = store.get_double("momentum");
  cfg.weight_decay = store.get_double("weight_decay");
  cfg.batch_size = static_cast<int>(store.get_int("batch_size"));
  cfg.labeled_per_batch = static_cast<int>(store.get_int("labeled_per_batch"));
  cfg.eta = store.get_double("eta");
  cfg.ema_after_step = store.get_bool("ema_after_step");
  cfg.lambda_max = store.get_double("lambda_max");
  cfg.rampup_iterations = store.get_int("rampup_iterations");
  cfg.scale_weights.alphas = store.get_double_list("scale_weights");
  cfg.mode = store.get_string("mode");
  cfg.use_HS = store.get_bool("use_HS");
  cfg.use_HU = store.get_bool("use_HU");
  cfg.use_teacher = store.get_bool("use_teacher");
  cfg.patch = parse_array3(store.get_int_list("patch"), "patch");
  cfg.seed = static_cast<std::uint64_t>(store.get_int("seed"));
  cfg.checkpoint_every = store.get_int("checkpoint_every");
  cfg.eval_stride = parse_array3(store.get_int_list("eval.stride"), "eval.stride");
  cfg.network.in_channels = static_cast<int>(store.get_int("network.in_channels"));
  cfg.network.num_classes = static_cast<int>(store.get_int("network.num_classes"));
  cfg.network.num_scales = static_cast<int>(store.get_int("network.num_scales"));
  cfg.network.base_channels = static_cast<int>(store.get_int("network.base_channels"));
  {
    const auto depths = store.get_int_list("network.encoder_depths");
    cfg.network.encoder_depths.assign(depths.begin(), depths.end());
  }
  cfg.network.activation = act_kind_from_string(store.get_string("network.activation"));
  cfg.network.normalization = norm_kind_from_string(store.get_string("network.normalization"));
  cfg.network.norm_groups = static_cast<int>(store.get_int("network.norm_groups"));
  cfg.perturbation.kind = noise_kind_from_string(store.get_string("perturbation.kind"));
  cfg.perturbation.sigma = store.get_double("perturbation.sigma");
  cfg.perturbation.clip = store.get_double("perturbation.clip");
  cfg.data.synthetic = store.get_bool("data.synthetic");
  cfg.data.dir = store.get_string("data.dir");
  cfg.data.split = store.get_string("data.split");
  cfg.data.synthetic_count = static_cast<int>(store.get_int("data.synthetic_count"));
  cfg.data.synthetic_test = static_cast<int>(store.get_int("data.synthetic_test"));
  cfg.data.synthetic_grid = store.get_int("data.synthetic_grid");
  cfg.data.labeled = static_cast<int>(store.get_int("data.labeled"));
  cfg.data.crop_margin = store.get_int("data.crop_margin");
  cfg.data.preprocess = store.get_bool("data.preprocess");
  cfg.data.synthetic_noise = store.get_double("data.synthetic_noise");
  cfg.data.synthetic_bias = store.get_double("data.synthetic_bias");
  cfg.data.synthetic_contrast = store.get_double("data.synthetic_contrast");

  // Mode presets set the three component flags; explicit use_* keys win.
  if (cfg.mode != "custom") {
    bool hs = cfg.use_HS, hu = cfg.use_HU, teacher = cfg.use_teacher;
    apply_mode_flags(cfg.mode, hs, hu, teacher);
    if (!store.was_explicit("use_HS")) cfg.use_HS = hs;
    if (!store.was_explicit("use_HU")) cfg.use_HU = hu;
    if (!store.was_explicit("use_teacher")) cfg.use_teacher = teacher;
  }

  cfg.validate();
  return cfg;
}

void TrainConfig::validate() const {
  network.validate();
  scale_weights.validate(static_cast<std::size_t>(network.num_scales));
  perturbation.validate();
  if (total_iterations < 1) throw ConfigError("total_iterations must be >= 1");
  if (initial_lr <= 0.0) throw ConfigError("initial_lr must be > 0");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (lr_decay_factor <= 0.0) throw ConfigError("lr_decay_factor must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (labeled_per_batch < 1) throw ConfigError("labeled_per_batch must be >= 1");
  if (labeled_per_batch > batch_size)
    throw ConfigError("labeled_per_batch (" + std::to_string(labeled_per_batch) +
                      ") exceeds batch_size (" + std::to_string(batch_size) + ")");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must be in [0,1]");
  if (lambda_max < 0.0) throw ConfigError("lambda_max must be >= 0");
  if (rampup_iterations < 0) throw ConfigError("rampup_iterations must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (use_HU && !use_teacher)
    throw ConfigError("use_HU requires use_teacher (consistency needs teacher predictions)");
  if (mode != "custom") {
    bool found = false;
    for (const auto& m : known_modes()) found |= m == mode;
    if (!found) throw ConfigError("unknown mode '" + mode + "'");
  }
  const std::int64_t div = network.spatial_divisor();
  const char* axes[3] = {"H", "W", "D"};
  for (int a = 0; a < 3; ++a) {
    if (patch[static_cast<std::size_t>(a)] < div ||
        patch[static_cast<std::size_t>(a)] % div != 0)
      throw ConfigError(std::string("patch axis ") + axes[a] + " (" +
                        std::to_string(patch[static_cast<std::size_t>(a)]) +
                        ") must be a positive multiple of " + std::to_string(div));
    if (eval_stride[static_cast<std::size_t>(a)] < 0 ||
        eval_stride[static_cast<std::size_t>(a)] > patch[static_cast<std::size_t>(a)])
      throw ConfigError("eval.stride must be in [0, patch] per axis");
  }
  if (data.labeled < 0) throw ConfigError("data.labeled must be >= 0");
  if (data.synthetic) {
    if (data.synthetic_count < 1) throw ConfigError("data.synthetic_count must be >= 1");
    if (data.labeled > data.synthetic_count)
      throw ConfigError("data.labeled exceeds data.synthetic_count");
  }
}

RampSchedule TrainConfig::ramp_at(std::int64_t t) const {
  RampSchedule r;
  r.lambda_max = lambda_max;
  r.t_max = rampup_iterations > 0 ? rampup_iterations : total_iterations;
  r.t = t;
  return r;
}

std::array<std::int64_t, 3> TrainConfig::effective_eval_stride() const {
  std::array<std::int64_t, 3> s{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t v = eval_stride[static_cast<std::size_t>(a)];
    s[static_cast<std::size_t>(a)] = v > 0 ? v : std::max<std::int64_t>(1, patch[static_cast<std::size_t>(a)] / 2);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

TrainItem preprocess_item(Volume v, std::optional<LabelMask> mask, const TrainConfig& cfg,
                          bool keep_mask) {
  TrainItem item;
  item.id = v.id;
  if (cfg.data.preprocess) {
    auto res = preprocess(v, mask, cfg.data.crop_margin);
    item.volume = std::move(res.volume.grid);
    if (keep_mask && res.mask) item.mask = std::move(res.mask->labels);
  } else {
    item.volume = std::move(v.grid);
    if (keep_mask && mask) item.mask = std::move(mask->labels);
  }
  return item;
}

}  // namespace

Dataset build_synthetic_dataset(const TrainConfig& cfg) {
  const int total = cfg.data.synthetic_count + cfg.data.synthetic_test;
  SyntheticParams params;
  params.noise_sigma = cfg.data.synthetic_noise;
  params.bias_amplitude = cfg.data.synthetic_bias;
  params.contrast = cfg.data.synthetic_contrast;
  auto samples = generate_synthetic(total, cfg.data.synthetic_grid, cfg.seed, params);

  const int L = cfg.data.labeled;
  if (L > cfg.data.synthetic_count)
    throw DataError("data.labeled exceeds the synthetic training pool");
  Dataset ds;
  for (int i = 0; i < total; ++i) {
    auto& [vol, mask] = samples[static_cast<std::size_t>(i)];
    const bool is_test = i >= cfg.data.synthetic_count;
    const bool is_labeled = !is_test && i < L;
    // Unlabeled items drop their masks: the trainer must never see them.
    std::optional<LabelMask> m;
    if (is_test || is_labeled) m = std::move(mask);
    TrainItem item = preprocess_item(std::move(vol), std::move(m), cfg, /*keep_mask=*/true);
    if (is_test)
      ds.test.push_back(std::move(item));
    else if (is_labeled)
      ds.labeled.push_back(std::move(item));
    else
      ds.unlabeled.push_back(std::move(item));
  }
  return ds;
}

namespace {

std::filesystem::path find_volume_file(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".nii.gz", ".nii", ".nrrd", ".rawvol"}) {
    const auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw DataError("no volume file for id '" + id + "' under " + dir.string());
}

}  // namespace

Dataset load_dataset_from_dir(const TrainConfig& cfg) {
  if (cfg.data.dir.empty()) throw DataError("data.dir is not set (and data.synthetic is false)");
  const std::filesystem::path dir(cfg.data.dir);
  const std::filesystem::path images = dir / "images";
  const std::filesystem::path labels = dir / "labels";
  if (!std::filesystem::is_directory(images))
    throw DataError("missing images directory: " + images.string());
  const std::filesystem::path split_path =
      cfg.data.split.empty() ? dir / "split.txt" : std::filesystem::path(cfg.data.split);
  if (!std::filesystem::exists(split_path))
    throw DataError("missing split file: " + split_path.string());
  const DatasetSplit split = load_split(split_path);

  Dataset ds;
  for (const auto& id : split.labeled) {
    auto [v, m] = load_case(find_volume_file(images, id), find_volume_file(labels, id));
    v.id = id;
    ds.labeled.push_back(preprocess_item(std::move(v), std::move(m), cfg, true));
  }
  for (const auto& id : split.unlabeled) {
    Volume v = load_volume(find_volume_file(images, id));
    v.id = id;
    ds.unlabeled.push_back(preprocess_item(std::move(v), std::nullopt, cfg, false));
  }
  for (const auto& id : split.test) {
    auto [v, m] = load_case(find_volume_file(images, id), find_volume_file(labels, id));
    v.id = id;
    ds.test.push_back(preprocess_item(std::move(v), std::move(m), cfg, true));
  }
  return ds;
}

Dataset build_dataset(const TrainConfig& cfg) {
  return cfg.data.synthetic ? build_synthetic_dataset(cfg) : load_dataset_from_dir(cfg);
}

// ---------------------------------------------------------------------------
// Batch composition

namespace {

// Index of the sample drawn at global position pos from an epoch-reshuffled
// pool. Pure in (seed, stream, pos), so resume needs no sampler state.
std::size_t epoch_draw(std::uint64_t seed, Stream stream, std::size_t pool, std::int64_t pos) {
  const std::uint64_t epoch = static_cast<std::uint64_t>(pos) / pool;
  const std::size_t within = static_cast<std::size_t>(pos) % pool;
  std::vector<std::size_t> perm(pool);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(stream_seed(seed, stream, {epoch}));
  rng.shuffle(perm);
  return perm[within];
}

}  // namespace

Batch compose_batch(const Dataset& data, const TrainConfig& cfg, std::int64_t t) {
  const int k_l = cfg.labeled_per_batch;
  int k_u = cfg.batch_size - k_l;
  if (data.labeled.empty()) throw DataError("compose_batch: labeled pool is empty");
  if (k_u > 0 && data.unlabeled.empty()) {
    if (cfg.use_teacher)
      throw DataError("compose_batch: unlabeled pool is empty but consistency training needs it");
    k_u = 0;  // supervised-only runs proceed with labeled-only batches
  }

  Batch batch;
  batch.labeled_n = k_l;
  const auto& patch = cfg.patch;
  batch.volumes = Tensor({k_l + k_u, 1, patch[0], patch[1], patch[2]});
  batch.labels = Tensor({k_l, patch[0], patch[1], patch[2]});
  const std::size_t item_size = static_cast<std::size_t>(patch[0] * patch[1] * patch[2]);

  for (int j = 0; j < k_l + k_u; ++j) {
    const bool is_labeled = j < k_l;
    const TrainItem* item;
    if (is_labeled) {
      const std::size_t idx = epoch_draw(cfg.seed, Stream::kBatchLabeled, data.labeled.size(),
                                         t * k_l + j);
      item = &data.labeled[idx];
      if (!item->mask) throw DataError("labeled item '" + item->id + "' has no mask");
    } else {
      const std::size_t idx = epoch_draw(cfg.seed, Stream::kBatchUnlabeled, data.unlabeled.size(),
                                         t * (cfg.batch_size - k_l) + (j - k_l));
      item = &data.unlabeled[idx];
    }
    Rng crop_rng(stream_seed(cfg.seed, Stream::kCrop,
                             {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(j)}));
    auto crop = random_crop(item->volume, is_labeled ? &*item->mask : nullptr, patch, crop_rng);
    std::copy(crop.volume.data(), crop.volume.data() + item_size,
              batch.volumes.data() + static_cast<std::size_t>(j) * item_size);
    if (is_labeled)
      std::copy(crop.mask->data(), crop.mask->data() + item_size,
                batch.labels.data() + static_cast<std::size_t>(j) * item_size);
    batch.ids.push_back(item->id);
  }
  return batch;
}

double learning_rate(std::int64_t t, const TrainConfig& cfg) {
  if (t < 0) throw ConfigError("learning_rate: t must be >= 0");
  return cfg.initial_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(t / cfg.lr_decay_every));
}

// ---------------------------------------------------------------------------
// SGD

void Sgd::step(const ParameterVector& params, double lr) {
  for (const auto& p : params) {
    Tensor& v = velocity_[p.name];
    if (v.empty()) v = Tensor(p.value->shape());
    Tensor& theta = *p.value;
    const Tensor& g = *p.grad;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * theta[i]);
      theta[i] -= lr * v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg, const Dataset& data)
    : cfg_(std::move(cfg)), data_(&data), opt_(cfg_.momentum, cfg_.weight_decay) {
  cfg_.validate();
  student_ = build_network(cfg_.network, cfg_.seed);
  if (cfg_.use_teacher) teacher_.initialize_from(*student_, cfg_.eta);
}

StepRecord Trainer::step() {
  const std::int64_t t = t_;
  Batch batch = compose_batch(*data_, cfg_, t);
  const double lr = learning_rate(t, cfg_);
  const RampSchedule ramp = cfg_.ramp_at(t);
  const double lambda = rampup_weight(ramp);

  // Student forward: in supervised-only runs only the labeled slice is used,
  // which is exactly deeply supervised training.
  Tensor student_in;
  if (cfg_.use_teacher || batch.labeled_n == batch.volumes.dim(0)) {
    student_in = batch.volumes;
  } else {
    student_in = Tensor({batch.labeled_n, 1, cfg_.patch[0], cfg_.patch[1], cfg_.patch[2]});
    std::copy(batch.volumes.data(), batch.volumes.data() + student_in.size(), student_in.data());
  }
  {
    Rng rng(stream_seed(cfg_.seed, Stream::kStudentNoise, {static_cast<std::uint64_t>(t)}));
    student_in = perturb(student_in, cfg_.perturbation, rng);
  }
  PredictionPyramid pyr_s = student_->forward(student_in, /*training=*/true);

  std::vector<Tensor> grad_pyr;
  grad_pyr.reserve(pyr_s.maps.size());
  for (const auto& m : pyr_s.maps) grad_pyr.emplace_back(m.shape());

  const std::size_t S = pyr_s.maps.size();
  const ScaleWeights sup_w = cfg_.use_HS ? cfg_.scale_weights : ScaleWeights::final_scale_only(S);
  const double loss_sup =
      hierarchical_supervised_loss(pyr_s, batch.labels, batch.labeled_n, sup_w, &grad_pyr, 1.0);

  double loss_unsup = 0.0;
  if (cfg_.use_teacher) {
    Rng rng(stream_seed(cfg_.seed, Stream::kTeacherNoise, {static_cast<std::uint64_t>(t)}));
    PredictionPyramid pyr_t = teacher_.predict(batch.volumes, cfg_.perturbation, rng);
    const ScaleWeights cons_w =
        cfg_.use_HU ? cfg_.scale_weights : ScaleWeights::final_scale_only(S);
    loss_unsup = hierarchical_consistency_loss(pyr_s, pyr_t, cons_w, &grad_pyr, lambda);
  }
  const double total = total_objective(loss_sup, loss_unsup, ramp);

  student_->zero_grad();
  student_->backward(grad_pyr);
  if (cfg_.ema_after_step) {
    opt_.step(student_->params(), lr);
    if (cfg_.use_teacher) teacher_.ema_update(*student_);
  } else {
    if (cfg_.use_teacher) teacher_.ema_update(*student_);
    opt_.step(student_->params(), lr);
  }
  ++t_;

  StepRecord rec;
  rec.t = t;
  rec.lr = lr;
  rec.lambda = lambda;
  rec.loss_sup = loss_sup;
  rec.loss_unsup = loss_unsup;
  rec.loss_total = total;
  rec.batch_ids = std::move(batch.ids);
  return rec;
}

Checkpoint Trainer::make_checkpoint() {
  Checkpoint ckpt;
  ckpt.spec = cfg_.network;
  ckpt.iteration = t_;
  store_params_in_checkpoint(ckpt, "student", *student_);
  if (cfg_.use_teacher) store_params_in_checkpoint(ckpt, "teacher", teacher_.net());
  for (const auto& [name, v] : opt_.velocity()) ckpt.tensors["opt/momentum/" + name] = v;
  ckpt.extra["eta"] = cfg_.eta;
  ckpt.extra["use_teacher"] = cfg_.use_teacher;
  ckpt.extra["teacher_step"] = cfg_.use_teacher ? teacher_.step() : 0;
  ckpt.extra["mode"] = cfg_.mode;
  ckpt.extra["config_text"] = cfg_.to_store().serialize();
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (!(ckpt.spec == cfg_.network))
    throw ConfigError("checkpoint network spec does not match the configured network");
  t_ = ckpt.iteration;
  load_params_from_checkpoint(ckpt, "student", *student_);
  if (cfg_.use_teacher) {
    if (!teacher_.initialized()) teacher_.initialize_from(*student_, cfg_.eta);
    load_params_from_checkpoint(ckpt, "teacher", teacher_.net());
    teacher_.set_step(ckpt.extra.value("teacher_step", std::int64_t{0}));
  }
  opt_.velocity().clear();
  const std::string prefix = "opt/momentum/";
  for (const auto& [name, tensor] : ckpt.tensors)
    if (name.rfind(prefix, 0) == 0) opt_.velocity()[name.substr(prefix.size())] = tensor;
}

TrainReport Trainer::run(const CheckpointSink& sink) {
  const auto t0 = std::chrono::steady_clock::now();
  while (t_ < cfg_.total_iterations) {
    StepRecord rec;
    try {
      rec = step();
    } catch (const NumericError& e) {
      StepRecord diag;
      diag.t = t_;
      diag.lr = learning_rate(t_, cfg_);
      diag.lambda = rampup_weight(cfg_.ramp_at(t_));
      diag.loss_sup = diag.loss_unsup = diag.loss_total =
          std::numeric_limits<double>::quiet_NaN();
      report_.records.push_back(std::move(diag));
      throw NumericError("aborted at iteration " + std::to_string(t_) + ": " + e.what());
    }
    report_.records.push_back(std::move(rec));
    if (sink && cfg_.checkpoint_every > 0 && t_ % cfg_.checkpoint_every == 0 &&
        t_ < cfg_.total_iterations)
      sink(make_checkpoint(), t_, false);
  }
  if (sink) sink(make_checkpoint(), t_, true);
  report_.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report_;
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "t,lr,lambda,loss_sup,loss_unsup,loss_total,batch_ids\n";
  for (const auto& r : report.records) {
    out << r.t << "," << fmt_double(r.lr) << "," << fmt_double(r.lambda) << ","
        << fmt_double(r.loss_sup) << "," << fmt_double(r.loss_unsup) << ","
        << fmt_double(r.loss_total) << ",";
    for (std::size_t i = 0; i < r.batch_ids.size(); ++i)
      out << (i ? "|" : "") << r.batch_ids[i];
    out << "\n";
  }
  if (!out) throw IoError("short write: " + path.string());
}

std::vector<CaseScore> evaluate_cases(VNet& net, const std::vector<TrainItem>& cases,
                                      const std::array<std::int64_t, 3>& patch,
                                      const std::array<std::int64_t, 3>& stride) {
  std::vector<CaseScore> scores;
  scores.reserve(cases.size());
  for (const auto& item : cases) {
    if (!item.mask) throw DataError("evaluate_cases: case '" + item.id + "' has no ground truth");
    auto pred = sliding_window_predict(net, item.volume, patch, stride);
    scores.push_back(score_case(item.id, pred.mask, *item.mask));
  }
  return scores;
}

}  // namespace hcmt
