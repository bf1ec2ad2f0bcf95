#ifndef HCMT_BACKBONE_HPP
#define HCMT_BACKBONE_HPP

#include <memory>
#include <string>
#include <vector>

#include "hcmt/layers.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

enum class NormKind { kGroup, kInstance, kNone };

ActKind act_kind_from_string(const std::string& s);
std::string to_string(ActKind k);
NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);

// Architecture description. encoder_depths lists the conv count of each
// encoder level; the decoder mirrors it. Level l runs at 1/2^l resolution with
// base_channels*2^l channels, so inputs must be divisible by 2^(levels-1).
struct NetworkSpec {
  int in_channels = 1;
  int num_classes = 2;
  int num_scales = 4;
  int base_channels = 16;
  std::vector<int> encoder_depths = {1, 2, 3, 3, 3};
  ActKind activation = ActKind::kRelu;
  NormKind normalization = NormKind::kGroup;
  int norm_groups = 4;

  int num_levels() const { return static_cast<int>(encoder_depths.size()); }
  int num_decoder_blocks() const { return num_levels() - 1; }
  std::int64_t spatial_divisor() const { return std::int64_t{1} << (num_levels() - 1); }
  int channels_at(int level) const { return base_channels << level; }

  void validate() const;  // throws ConfigError on invariant violations

  bool operator==(const NetworkSpec&) const = default;
};

// Per-scale class-probability maps, all upsampled to the input resolution.
// Index 0 is the final full-resolution decoder output; higher indices come
// from deeper decoder blocks.
struct PredictionPyramid {
  std::vector<Tensor> maps;  // each (N, num_classes, H, W, D)

  std::size_t num_scales() const { return maps.size(); }
};

using ParameterVector = std::vector<ParamRef>;

bool structure_matches(const ParameterVector& a, const ParameterVector& b);
std::int64_t parameter_count(const ParameterVector& params);

// V-Net style encoder-decoder with additive skips and one auxiliary prediction
// head per decoder block: trilinear upsample to input resolution, then a 1x1x1
// convolution, then channel softmax.
class VNet {
 public:
  explicit VNet(NetworkSpec spec);

  VNet(const VNet&) = delete;
  VNet& operator=(const VNet&) = delete;
  VNet(VNet&&) = default;
  VNet& operator=(VNet&&) = default;

  const NetworkSpec& spec() const { return spec_; }

  // Deterministic parameter initialization from the seed.
  void init(std::uint64_t seed);

  PredictionPyramid forward(const Tensor& batch, bool training);
  // Accumulates parameter gradients from per-scale probability gradients.
  void backward(const std::vector<Tensor>& grad_pyramid);

  ParameterVector params();
  void zero_grad();
  std::int64_t num_parameters();

  // Copies parameter values from another structurally identical network.
  void copy_params_from(VNet& other);

 private:
  struct Block {  // an ordered run of layers applied as one unit
    std::vector<Layer*> layers;
    Tensor forward(const Tensor& x, bool training) const;
    Tensor backward(const Tensor& g) const;
  };
  struct Head {
    TrilinearUpsample* up = nullptr;
    Conv3d* conv = nullptr;
    SoftmaxChannel* softmax = nullptr;
  };

  template <typename T, typename... Args>
  T* add_layer(const std::string& name, Args&&... args);
  Block make_conv_block(const std::string& name, int level, int in_ch, int convs);
  Block make_down(const std::string& name, int in_ch, int out_ch);
  Block make_up(const std::string& name, int in_ch, int out_ch);
  void append_norm_act(const std::string& name, int channels, Block& block);

  NetworkSpec spec_;
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> registry_;
  std::vector<Block> enc_blocks_, down_, up_, dec_blocks_;
  std::vector<Head> heads_;

  // forward caches for backward routing
  std::vector<Tensor> enc_out_, dec_out_;
  bool forward_was_training_ = false;
};

// Builds and initializes a network. Initialization is deterministic given the
// seed: two builds from the same (spec, seed) are bit-identical.
std::unique_ptr<VNet> build_network(const NetworkSpec& spec, std::uint64_t seed);

}  // namespace hcmt

#endif  // HCMT_BACKBONE_HPP
