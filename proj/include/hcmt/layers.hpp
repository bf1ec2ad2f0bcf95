#ifndef HCMT_LAYERS_HPP
#define HCMT_LAYERS_HPP

#include <memory>
#include <string>
#include <vector>

#include "hcmt/rng.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

// Named view onto a layer parameter and its gradient accumulator.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// One forward/backward unit. Layers cache whatever their backward needs during
// a training-mode forward; an eval-mode forward keeps no state. Exactly one
// forward-backward cycle may be in flight per layer instance.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string&, std::vector<ParamRef>&) {}
  virtual void init_params(Rng&) {}
};

// 3D convolution, cubic kernel, im2col + GEMM. Input/output layout N,C,H,W,D.
class Conv3d : public Layer {
 public:
  Conv3d(int in_ch, int out_ch, int kernel, int stride, int padding);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void init_params(Rng& rng) override;

  int out_channels() const { return out_ch_; }
  std::int64_t out_extent(std::int64_t in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  Tensor weight_;  // (out_ch, in_ch*k^3)
  Tensor bias_;    // (out_ch)
  Tensor dweight_, dbias_;
  Tensor cached_in_;
};

// Transposed 3D convolution with kernel == stride (the V-Net decoder
// upsampling unit). No output overlap, so forward is a GEMM plus scatter.
class ConvTranspose3d : public Layer {
 public:
  ConvTranspose3d(int in_ch, int out_ch, int factor);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void init_params(Rng& rng) override;

 private:
  int in_ch_, out_ch_, f_;
  Tensor weight_;  // (in_ch, out_ch*f^3)
  Tensor bias_;    // (out_ch)
  Tensor dweight_, dbias_;
  Tensor cached_in_;
};

// Group normalization with affine scale/shift. groups == channels gives
// instance norm. Statistics are per item, never across the batch.
class GroupNorm : public Layer {
 public:
  GroupNorm(int channels, int groups, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void init_params(Rng& rng) override;

 private:
  int ch_, groups_;
  double eps_;
  Tensor gamma_, beta_, dgamma_, dbeta_;
  Tensor cached_xhat_;
  Tensor cached_inv_std_;  // (N, groups)
};

enum class ActKind { kRelu, kLeakyRelu };

class Activation : public Layer {
 public:
  explicit Activation(ActKind kind, double slope = 0.01) : kind_(kind), slope_(slope) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  ActKind kind_;
  double slope_;
  Tensor cached_in_;
};

// Trilinear upsampling by an integer factor per axis (half-pixel-center
// coordinate mapping). Backward is the exact transpose scatter.
class TrilinearUpsample : public Layer {
 public:
  explicit TrilinearUpsample(int factor) : f_(factor) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int f_;
  Shape cached_in_shape_;
};

// Softmax over the channel axis (axis 1).
class SoftmaxChannel : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor cached_out_;
};

}  // namespace hcmt

#endif  // HCMT_LAYERS_HPP
