#include "hcmt/backbone.hpp"

#include <algorithm>

#include "hcmt/errors.hpp"
#include "hcmt/rng.hpp"

namespace hcmt {

ActKind act_kind_from_string(const std::string& s) {
  if (s == "relu") return ActKind::kRelu;
  if (s == "leaky_relu") return ActKind::kLeakyRelu;
  throw ConfigError("unknown activation '" + s + "' (expected relu|leaky_relu)");
}

std::string to_string(ActKind k) {
  return k == ActKind::kRelu ? "relu" : "leaky_relu";
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "group") return NormKind::kGroup;
  if (s == "instance") return NormKind::kInstance;
  if (s == "none") return NormKind::kNone;
  throw ConfigError("unknown normalization '" + s + "' (expected group|instance|none)");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::kGroup: return "group";
    case NormKind::kInstance: return "instance";
    default: return "none";
  }
}

void NetworkSpec::validate() const {
  if (in_channels < 1) throw ConfigError("NetworkSpec: in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("NetworkSpec: num_classes must be >= 2");
  if (base_channels < 1) throw ConfigError("NetworkSpec: base_channels must be >= 1");
  if (encoder_depths.size() < 2)
    throw ConfigError("NetworkSpec: need at least 2 encoder levels");
  for (int d : encoder_depths)
    if (d < 1) throw ConfigError("NetworkSpec: encoder depths must be >= 1");
  if (num_scales < 1) throw ConfigError("NetworkSpec: num_scales must be >= 1");
  if (num_scales > num_decoder_blocks())
    throw ConfigError("NetworkSpec: num_scales (" + std::to_string(num_scales) +
                      ") exceeds decoder block count (" + std::to_string(num_decoder_blocks()) +
                      ")");
  if (normalization == NormKind::kGroup && norm_groups < 1)
    throw ConfigError("NetworkSpec: norm_groups must be >= 1");
}

bool structure_matches(const ParameterVector& a, const ParameterVector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) return false;
    if (a[i].value->shape() != b[i].value->shape()) return false;
  }
  return true;
}

std::int64_t parameter_count(const ParameterVector& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += static_cast<std::int64_t>(p.value->size());
  return n;
}

namespace {
// Largest group count <= requested that divides the channel count.
int effective_groups(int channels, int requested) {
  int g = std::min(requested, channels);
  while (channels % g != 0) --g;
  return g;
}
}  // namespace

template <typename T, typename... Args>
T* VNet::add_layer(const std::string& name, Args&&... args) {
  auto layer = std::make_unique<T>(std::forward<Args>(args)...);
  T* raw = layer.get();
  registry_.emplace_back(name, std::move(layer));
  return raw;
}

void VNet::append_norm_act(const std::string& name, int channels, Block& block) {
  switch (spec_.normalization) {
    case NormKind::kGroup:
      block.layers.push_back(add_layer<GroupNorm>(
          name + ".norm", channels, effective_groups(channels, spec_.norm_groups)));
      break;
    case NormKind::kInstance:
      block.layers.push_back(add_layer<GroupNorm>(name + ".norm", channels, channels));
      break;
    case NormKind::kNone:
      break;
  }
  block.layers.push_back(add_layer<Activation>(name + ".act", spec_.activation));
}

VNet::Block VNet::make_conv_block(const std::string& name, int level, int in_ch, int convs) {
  Block b;
  const int ch = spec_.channels_at(level);
  for (int j = 0; j < convs; ++j) {
    const std::string unit = name + ".conv" + std::to_string(j);
    b.layers.push_back(add_layer<Conv3d>(unit, j == 0 ? in_ch : ch, ch, 3, 1, 1));
    append_norm_act(unit, ch, b);
  }
  return b;
}

VNet::Block VNet::make_down(const std::string& name, int in_ch, int out_ch) {
  Block b;
  b.layers.push_back(add_layer<Conv3d>(name + ".conv", in_ch, out_ch, 2, 2, 0));
  append_norm_act(name + ".conv", out_ch, b);
  return b;
}

VNet::Block VNet::make_up(const std::string& name, int in_ch, int out_ch) {
  Block b;
  b.layers.push_back(add_layer<ConvTranspose3d>(name + ".deconv", in_ch, out_ch, 2));
  append_norm_act(name + ".deconv", out_ch, b);
  return b;
}

VNet::VNet(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int L = spec_.num_levels();

  for (int l = 0; l < L; ++l) {
    if (l > 0)
      down_.push_back(make_down("down" + std::to_string(l - 1), spec_.channels_at(l - 1),
                                spec_.channels_at(l)));
    enc_blocks_.push_back(make_conv_block("enc" + std::to_string(l), l,
                                          l == 0 ? spec_.in_channels : spec_.channels_at(l),
                                          spec_.encoder_depths[static_cast<std::size_t>(l)]));
  }
  up_.resize(static_cast<std::size_t>(L - 1));
  dec_blocks_.resize(static_cast<std::size_t>(L - 1));
  for (int l = L - 2; l >= 0; --l) {
    up_[static_cast<std::size_t>(l)] =
        make_up("up" + std::to_string(l), spec_.channels_at(l + 1), spec_.channels_at(l));
    dec_blocks_[static_cast<std::size_t>(l)] =
        make_conv_block("dec" + std::to_string(l), l, spec_.channels_at(l),
                        spec_.encoder_depths[static_cast<std::size_t>(l)]);
  }
  for (int s = 0; s < spec_.num_scales; ++s) {
    Head h;
    const std::string name = "head" + std::to_string(s);
    h.up = add_layer<TrilinearUpsample>(name + ".up", 1 << s);
    h.conv = add_layer<Conv3d>(name + ".conv", spec_.channels_at(s), spec_.num_classes, 1, 1, 0);
    h.softmax = add_layer<SoftmaxChannel>(name + ".softmax");
    heads_.push_back(h);
  }
}

void VNet::init(std::uint64_t seed) {
  Rng rng(stream_seed(seed, Stream::kParamInit));
  for (auto& [name, layer] : registry_) layer->init_params(rng);
}

Tensor VNet::Block::forward(const Tensor& x, bool training) const {
  Tensor cur = x;
  for (Layer* l : layers) cur = l->forward(cur, training);
  return cur;
}

Tensor VNet::Block::backward(const Tensor& g) const {
  Tensor cur = g;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

PredictionPyramid VNet::forward(const Tensor& batch, bool training) {
  if (batch.rank() != 5)
    throw ShapeError("VNet: expected N,C,H,W,D input, got " + shape_str(batch.shape()));
  if (batch.dim(1) != spec_.in_channels)
    throw ShapeError("VNet: expected " + std::to_string(spec_.in_channels) + " channels, got " +
                     std::to_string(batch.dim(1)));
  const std::int64_t div = spec_.spatial_divisor();
  const char* axis_names[3] = {"H", "W", "D"};
  for (int a = 0; a < 3; ++a)
    if (batch.dim(2 + static_cast<std::size_t>(a)) % div != 0)
      throw ShapeError(std::string("VNet: axis ") + axis_names[a] + " extent " +
                       std::to_string(batch.dim(2 + static_cast<std::size_t>(a))) +
                       " not divisible by " + std::to_string(div));

  const int L = spec_.num_levels();
  enc_out_.assign(static_cast<std::size_t>(L), Tensor());
  dec_out_.assign(static_cast<std::size_t>(L - 1), Tensor());
  forward_was_training_ = training;

  Tensor cur = batch;
  for (int l = 0; l < L; ++l) {
    if (l > 0) cur = down_[static_cast<std::size_t>(l - 1)].forward(cur, training);
    cur = enc_blocks_[static_cast<std::size_t>(l)].forward(cur, training);
    enc_out_[static_cast<std::size_t>(l)] = cur;
  }
  for (int l = L - 2; l >= 0; --l) {
    cur = up_[static_cast<std::size_t>(l)].forward(cur, training);
    const Tensor& skip = enc_out_[static_cast<std::size_t>(l)];
    check_same_shape(cur, skip, "VNet skip");
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += skip[i];
    cur = dec_blocks_[static_cast<std::size_t>(l)].forward(cur, training);
    dec_out_[static_cast<std::size_t>(l)] = cur;
  }

  PredictionPyramid pyr;
  pyr.maps.reserve(static_cast<std::size_t>(spec_.num_scales));
  for (int s = 0; s < spec_.num_scales; ++s) {
    const Head& h = heads_[static_cast<std::size_t>(s)];
    Tensor t = h.up->forward(dec_out_[static_cast<std::size_t>(s)], training);
    t = h.conv->forward(t, training);
    pyr.maps.push_back(h.softmax->forward(t, training));
  }
  if (!training) {
    enc_out_.clear();
    dec_out_.clear();
  }
  return pyr;
}

void VNet::backward(const std::vector<Tensor>& grad_pyramid) {
  if (!forward_was_training_ || dec_out_.empty())
    throw StateError("VNet: backward without a training-mode forward");
  if (grad_pyramid.size() != static_cast<std::size_t>(spec_.num_scales))
    throw ShapeError("VNet: gradient pyramid has " + std::to_string(grad_pyramid.size()) +
                     " scales, expected " + std::to_string(spec_.num_scales));
  const int L = spec_.num_levels();

  // Per-decoder-level output gradients: head contributions first.
  std::vector<Tensor> dec_grad(static_cast<std::size_t>(L - 1));
  for (int l = 0; l < L - 1; ++l)
    dec_grad[static_cast<std::size_t>(l)] = Tensor(dec_out_[static_cast<std::size_t>(l)].shape());
  for (int s = 0; s < spec_.num_scales; ++s) {
    const Head& h = heads_[static_cast<std::size_t>(s)];
    Tensor g = h.softmax->backward(grad_pyramid[static_cast<std::size_t>(s)]);
    g = h.conv->backward(g);
    g = h.up->backward(g);
    Tensor& acc = dec_grad[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  // Decoder chain, finest to coarsest; each level routes one part of the
  // gradient into its encoder skip and carries the rest upward.
  std::vector<Tensor> enc_grad(static_cast<std::size_t>(L));
  Tensor carried;
  for (int l = 0; l < L - 1; ++l) {
    Tensor t = dec_blocks_[static_cast<std::size_t>(l)].backward(dec_grad[static_cast<std::size_t>(l)]);
    enc_grad[static_cast<std::size_t>(l)] = t;  // skip branch
    carried = up_[static_cast<std::size_t>(l)].backward(t);
    if (l + 1 <= L - 2) {
      Tensor& acc = dec_grad[static_cast<std::size_t>(l + 1)];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += carried[i];
    }
  }
  enc_grad[static_cast<std::size_t>(L - 1)] = carried;

  // Encoder chain, coarsest to finest.
  Tensor g = enc_grad[static_cast<std::size_t>(L - 1)];
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) {
      Tensor& skip = enc_grad[static_cast<std::size_t>(l)];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += skip[i];
    }
    g = enc_blocks_[static_cast<std::size_t>(l)].backward(g);
    if (l > 0) g = down_[static_cast<std::size_t>(l - 1)].backward(g);
  }
  forward_was_training_ = false;
}

ParameterVector VNet::params() {
  ParameterVector out;
  for (auto& [name, layer] : registry_) layer->collect_params(name, out);
  return out;
}

void VNet::zero_grad() {
  for (auto& p : params()) p.grad->zero();
}

std::int64_t VNet::num_parameters() {
  return parameter_count(params());
}

void VNet::copy_params_from(VNet& other) {
  auto dst = params();
  auto src = other.params();
  if (!structure_matches(dst, src))
    throw ConfigError("copy_params_from: parameter structures do not match");
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].value = *src[i].value;
}

std::unique_ptr<VNet> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto net = std::make_unique<VNet>(spec);
  net->init(seed);
  return net;
}

}  // namespace hcmt
