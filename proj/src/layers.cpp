#include "hcmt/layers.hpp"

#include <Eigen/Core>

#include "hcmt/errors.hpp"

namespace hcmt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Expands one item (C,H,W,D) into a (C*k^3, Ho*Wo*Do) column buffer.
void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t D,
            int k, int stride, int pad, std::int64_t Ho, std::int64_t Wo, std::int64_t Do,
            double* col) {
  const std::int64_t V = Ho * Wo * Do;
#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < C * k * k * k; ++row) {
    const std::int64_t c = row / (k * k * k);
    const std::int64_t kr = row % (k * k * k);
    const int kh = static_cast<int>(kr / (k * k));
    const int kw = static_cast<int>((kr / k) % k);
    const int kd = static_cast<int>(kr % k);
    double* dst = col + row * V;
    const double* src = x + c * H * W * D;
    for (std::int64_t ho = 0; ho < Ho; ++ho) {
      const std::int64_t ih = ho * stride - pad + kh;
      if (ih < 0 || ih >= H) {
        std::fill(dst, dst + Wo * Do, 0.0);
        dst += Wo * Do;
        continue;
      }
      for (std::int64_t wo = 0; wo < Wo; ++wo) {
        const std::int64_t iw = wo * stride - pad + kw;
        if (iw < 0 || iw >= W) {
          std::fill(dst, dst + Do, 0.0);
          dst += Do;
          continue;
        }
        const double* line = src + (ih * W + iw) * D;
        for (std::int64_t d0 = 0; d0 < Do; ++d0) {
          const std::int64_t id = d0 * stride - pad + kd;
          *dst++ = (id >= 0 && id < D) ? line[id] : 0.0;
        }
      }
    }
  }
}

// Scatter-adds a column buffer back into (C,H,W,D); the adjoint of im2col.
void col2im(const double* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t D,
            int k, int stride, int pad, std::int64_t Ho, std::int64_t Wo, std::int64_t Do,
            double* dx) {
  const std::int64_t V = Ho * Wo * Do;
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < C; ++c) {
    double* dst = dx + c * H * W * D;
    for (std::int64_t kr = 0; kr < static_cast<std::int64_t>(k) * k * k; ++kr) {
      const int kh = static_cast<int>(kr / (k * k));
      const int kw = static_cast<int>((kr / k) % k);
      const int kd = static_cast<int>(kr % k);
      const double* src = col + (c * k * k * k + kr) * V;
      for (std::int64_t ho = 0; ho < Ho; ++ho) {
        const std::int64_t ih = ho * stride - pad + kh;
        if (ih < 0 || ih >= H) {
          src += Wo * Do;
          continue;
        }
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          const std::int64_t iw = wo * stride - pad + kw;
          if (iw < 0 || iw >= W) {
            src += Do;
            continue;
          }
          double* line = dst + (ih * W + iw) * D;
          for (std::int64_t d0 = 0; d0 < Do; ++d0) {
            const std::int64_t id = d0 * stride - pad + kd;
            if (id >= 0 && id < D) line[id] += *src;
            ++src;
          }
        }
      }
    }
  }
}

void check_input_5d(const Tensor& x, std::int64_t channels, const char* what) {
  if (x.rank() != 5)
    throw ShapeError(std::string(what) + ": expected N,C,H,W,D input, got " +
                     shape_str(x.shape()));
  if (x.dim(1) != channels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv3d

Conv3d::Conv3d(int in_ch, int out_ch, int kernel, int stride, int padding)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_({out_ch, static_cast<std::int64_t>(in_ch) * kernel * kernel * kernel}),
      bias_({out_ch}),
      dweight_(weight_.shape()),
      dbias_(bias_.shape()) {
  if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0)
    throw ConfigError("Conv3d: channel/kernel/stride counts must be positive");
}

void Conv3d::init_params(Rng& rng) {
  // Kaiming-normal for the fan-in of one output unit, zero bias.
  const double std = std::sqrt(2.0 / static_cast<double>(weight_.dim(1)));
  for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = std * rng.normal();
  bias_.zero();
}

void Conv3d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_, &dweight_});
  out.push_back({prefix + ".bias", &bias_, &dbias_});
}

Tensor Conv3d::forward(const Tensor& x, bool training) {
  check_input_5d(x, in_ch_, "Conv3d");
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t Ho = out_extent(H), Wo = out_extent(W), Do = out_extent(D);
  if (Ho <= 0 || Wo <= 0 || Do <= 0)
    throw ShapeError("Conv3d: input " + shape_str(x.shape()) + " too small for kernel");
  const std::int64_t K = weight_.dim(1);
  const std::int64_t V = Ho * Wo * Do;

  Tensor y({N, out_ch_, Ho, Wo, Do});
  std::vector<double> col(static_cast<std::size_t>(K) * V);
  CMapMat Wm(weight_.data(), out_ch_, K);
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.item_ptr(n, static_cast<std::size_t>(in_ch_) * H * W * D), in_ch_, H, W, D, k_,
           stride_, pad_, Ho, Wo, Do, col.data());
    MapMat Ym(y.item_ptr(n, static_cast<std::size_t>(out_ch_) * V), out_ch_, V);
    CMapMat Cm(col.data(), K, V);
    Ym.noalias() = Wm * Cm;
    for (int c = 0; c < out_ch_; ++c) Ym.row(c).array() += bias_[c];
  }
  if (training) cached_in_ = x;
  return y;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
  const Tensor& x = cached_in_;
  if (x.empty()) throw StateError("Conv3d: backward without training-mode forward");
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t Ho = out_extent(H), Wo = out_extent(W), Do = out_extent(D);
  const std::int64_t K = weight_.dim(1);
  const std::int64_t V = Ho * Wo * Do;

  Tensor dx(x.shape());
  std::vector<double> col(static_cast<std::size_t>(K) * V);
  std::vector<double> dcol(static_cast<std::size_t>(K) * V);
  CMapMat Wm(weight_.data(), out_ch_, K);
  MapMat dWm(dweight_.data(), out_ch_, K);
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.item_ptr(n, static_cast<std::size_t>(in_ch_) * H * W * D), in_ch_, H, W, D, k_,
           stride_, pad_, Ho, Wo, Do, col.data());
    CMapMat dYm(grad_out.item_ptr(n, static_cast<std::size_t>(out_ch_) * V), out_ch_, V);
    CMapMat Cm(col.data(), K, V);
    dWm.noalias() += dYm * Cm.transpose();
    for (int c = 0; c < out_ch_; ++c) dbias_[c] += dYm.row(c).sum();
    MapMat dCm(dcol.data(), K, V);
    dCm.noalias() = Wm.transpose() * dYm;
    col2im(dcol.data(), in_ch_, H, W, D, k_, stride_, pad_, Ho, Wo, Do,
           dx.item_ptr(n, static_cast<std::size_t>(in_ch_) * H * W * D));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvTranspose3d

ConvTranspose3d::ConvTranspose3d(int in_ch, int out_ch, int factor)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      f_(factor),
      weight_({in_ch, static_cast<std::int64_t>(out_ch) * factor * factor * factor}),
      bias_({out_ch}),
      dweight_(weight_.shape()),
      dbias_(bias_.shape()) {
  if (factor < 1) throw ConfigError("ConvTranspose3d: factor must be >= 1");
}

void ConvTranspose3d::init_params(Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(weight_.dim(1)));
  for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = std * rng.normal();
  bias_.zero();
}

void ConvTranspose3d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_, &dweight_});
  out.push_back({prefix + ".bias", &bias_, &dbias_});
}

Tensor ConvTranspose3d::forward(const Tensor& x, bool training) {
  check_input_5d(x, in_ch_, "ConvTranspose3d");
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t Ho = H * f_, Wo = W * f_, Do = D * f_;
  const std::int64_t V = H * W * D;
  const std::int64_t R = static_cast<std::int64_t>(out_ch_) * f_ * f_ * f_;

  Tensor y({N, out_ch_, Ho, Wo, Do});
  std::vector<double> col(static_cast<std::size_t>(R) * V);
  CMapMat Wm(weight_.data(), in_ch_, R);
  for (std::int64_t n = 0; n < N; ++n) {
    CMapMat Xm(x.item_ptr(n, static_cast<std::size_t>(in_ch_) * V), in_ch_, V);
    MapMat Cm(col.data(), R, V);
    Cm.noalias() = Wm.transpose() * Xm;
    double* yp = y.item_ptr(n, static_cast<std::size_t>(out_ch_) * Ho * Wo * Do);
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < out_ch_; ++co) {
      double* ydst = yp + co * Ho * Wo * Do;
      for (int kh = 0; kh < f_; ++kh)
        for (int kw = 0; kw < f_; ++kw)
          for (int kd = 0; kd < f_; ++kd) {
            const double* src = col.data() + (((co * f_ + kh) * f_ + kw) * f_ + kd) * V;
            for (std::int64_t h = 0; h < H; ++h)
              for (std::int64_t w = 0; w < W; ++w) {
                double* line = ydst + ((h * f_ + kh) * Wo + (w * f_ + kw)) * Do + kd;
                const double* s = src + (h * W + w) * D;
                for (std::int64_t d = 0; d < D; ++d) line[d * f_] = s[d] + bias_[co];
              }
          }
    }
  }
  if (training) cached_in_ = x;
  return y;
}

Tensor ConvTranspose3d::backward(const Tensor& grad_out) {
  const Tensor& x = cached_in_;
  if (x.empty()) throw StateError("ConvTranspose3d: backward without training-mode forward");
  const std::int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t Ho = H * f_, Wo = W * f_, Do = D * f_;
  const std::int64_t V = H * W * D;
  const std::int64_t R = static_cast<std::int64_t>(out_ch_) * f_ * f_ * f_;

  Tensor dx(x.shape());
  std::vector<double> dcol(static_cast<std::size_t>(R) * V);
  CMapMat Wm(weight_.data(), in_ch_, R);
  MapMat dWm(dweight_.data(), in_ch_, R);
  for (std::int64_t n = 0; n < N; ++n) {
    const double* gp = grad_out.item_ptr(n, static_cast<std::size_t>(out_ch_) * Ho * Wo * Do);
    // Gather dY back into column layout (adjoint of the forward scatter).
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < out_ch_; ++co) {
      const double* gsrc = gp + co * Ho * Wo * Do;
      double bsum = 0.0;
      for (int kh = 0; kh < f_; ++kh)
        for (int kw = 0; kw < f_; ++kw)
          for (int kd = 0; kd < f_; ++kd) {
            double* dst = dcol.data() + (((co * f_ + kh) * f_ + kw) * f_ + kd) * V;
            for (std::int64_t h = 0; h < H; ++h)
              for (std::int64_t w = 0; w < W; ++w) {
                const double* line = gsrc + ((h * f_ + kh) * Wo + (w * f_ + kw)) * Do + kd;
                double* s = dst + (h * W + w) * D;
                for (std::int64_t d = 0; d < D; ++d) {
                  s[d] = line[d * f_];
                  bsum += line[d * f_];
                }
              }
          }
      dbias_[co] += bsum;
    }
    CMapMat Xm(x.item_ptr(n, static_cast<std::size_t>(in_ch_) * V), in_ch_, V);
    CMapMat dCm(dcol.data(), R, V);
    dWm.noalias() += Xm * dCm.transpose();
    MapMat dXm(dx.item_ptr(n, static_cast<std::size_t>(in_ch_) * V), in_ch_, V);
    dXm.noalias() = Wm * dCm;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm::GroupNorm(int channels, int groups, double eps)
    : ch_(channels),
      groups_(groups),
      eps_(eps),
      gamma_({channels}),
      beta_({channels}),
      dgamma_({channels}),
      dbeta_({channels}) {
  if (groups <= 0 || channels % groups != 0)
    throw ConfigError("GroupNorm: groups (" + std::to_string(groups) +
                      ") must divide channels (" + std::to_string(channels) + ")");
  gamma_.fill(1.0);
}

void GroupNorm::init_params(Rng&) {
  gamma_.fill(1.0);
  beta_.zero();
}

void GroupNorm::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
  out.push_back({prefix + ".beta", &beta_, &dbeta_});
}

Tensor GroupNorm::forward(const Tensor& x, bool training) {
  check_input_5d(x, ch_, "GroupNorm");
  const std::int64_t N = x.dim(0);
  const std::int64_t V = x.dim(2) * x.dim(3) * x.dim(4);
  const std::int64_t cg = ch_ / groups_;
  const std::int64_t m = cg * V;

  Tensor y(x.shape());
  Tensor xhat(x.shape());
  Tensor inv_std({N, groups_});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t g = 0; g < groups_; ++g) {
      const double* xs = x.data() + (n * ch_ + g * cg) * V;
      double mean = 0.0;
      for (std::int64_t i = 0; i < m; ++i) mean += xs[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::int64_t i = 0; i < m; ++i) {
        const double d = xs[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + eps_);
      inv_std[static_cast<std::size_t>(n * groups_ + g)] = istd;
      double* xh = xhat.data() + (n * ch_ + g * cg) * V;
      double* yo = y.data() + (n * ch_ + g * cg) * V;
      for (std::int64_t c = 0; c < cg; ++c) {
        const double ga = gamma_[static_cast<std::size_t>(g * cg + c)];
        const double be = beta_[static_cast<std::size_t>(g * cg + c)];
        for (std::int64_t i = 0; i < V; ++i) {
          const double h = (xs[c * V + i] - mean) * istd;
          xh[c * V + i] = h;
          yo[c * V + i] = ga * h + be;
        }
      }
    }
  }
  if (training) {
    cached_xhat_ = std::move(xhat);
    cached_inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
  if (cached_xhat_.empty()) throw StateError("GroupNorm: backward without training-mode forward");
  const Tensor& xhat = cached_xhat_;
  const std::int64_t N = xhat.dim(0);
  const std::int64_t V = xhat.dim(2) * xhat.dim(3) * xhat.dim(4);
  const std::int64_t cg = ch_ / groups_;
  const std::int64_t m = cg * V;

  Tensor dx(xhat.shape());
  // dgamma/dbeta sum over batch and voxels. Groups partition the channel
  // range, so the per-group parameter accumulation is race-free; the batch
  // loop stays sequential.
  for (std::int64_t n = 0; n < N; ++n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t g = 0; g < groups_; ++g) {
      const double istd = cached_inv_std_[static_cast<std::size_t>(n * groups_ + g)];
      const double* xh = xhat.data() + (n * ch_ + g * cg) * V;
      const double* dy = grad_out.data() + (n * ch_ + g * cg) * V;
      double* dxp = dx.data() + (n * ch_ + g * cg) * V;
      double s1 = 0.0, s2 = 0.0;
      for (std::int64_t c = 0; c < cg; ++c) {
        const double ga = gamma_[static_cast<std::size_t>(g * cg + c)];
        double dgc = 0.0, dbc = 0.0;
        for (std::int64_t i = 0; i < V; ++i) {
          const double dyv = dy[c * V + i];
          const double dxh = dyv * ga;
          s1 += dxh;
          s2 += dxh * xh[c * V + i];
          dgc += dyv * xh[c * V + i];
          dbc += dyv;
        }
        dgamma_[static_cast<std::size_t>(g * cg + c)] += dgc;
        dbeta_[static_cast<std::size_t>(g * cg + c)] += dbc;
      }
      s1 /= static_cast<double>(m);
      s2 /= static_cast<double>(m);
      for (std::int64_t c = 0; c < cg; ++c) {
        const double ga = gamma_[static_cast<std::size_t>(g * cg + c)];
        for (std::int64_t i = 0; i < V; ++i) {
          const double dxh = dy[c * V + i] * ga;
          dxp[c * V + i] = istd * (dxh - s1 - xh[c * V + i] * s2);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activation

Tensor Activation::forward(const Tensor& x, bool training) {
  Tensor y(x.shape());
  const double slope = kind_ == ActKind::kRelu ? 0.0 : slope_;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.size()); ++i)
    y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  if (training) cached_in_ = x;
  return y;
}

Tensor Activation::backward(const Tensor& grad_out) {
  if (cached_in_.empty()) throw StateError("Activation: backward without training-mode forward");
  Tensor dx(cached_in_.shape());
  const double slope = kind_ == ActKind::kRelu ? 0.0 : slope_;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(dx.size()); ++i)
    dx[i] = cached_in_[i] > 0.0 ? grad_out[i] : slope * grad_out[i];
  return dx;
}

// ---------------------------------------------------------------------------
// TrilinearUpsample

namespace {
struct AxisTap {
  std::int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

std::vector<AxisTap> make_taps(std::int64_t in, int f) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(in) * f);
  for (std::int64_t o = 0; o < in * f; ++o) {
    // Half-pixel-center source coordinate, clamped at the borders.
    double src = (static_cast<double>(o) + 0.5) / f - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
    const std::int64_t i0 = static_cast<std::int64_t>(src);
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace

Tensor TrilinearUpsample::forward(const Tensor& x, bool training) {
  if (x.rank() != 5) throw ShapeError("TrilinearUpsample: expected N,C,H,W,D input");
  if (f_ == 1) {
    if (training) cached_in_shape_ = x.shape();
    return x;
  }
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), D = x.dim(4);
  const std::int64_t Ho = H * f_, Wo = W * f_, Do = D * f_;
  const auto th = make_taps(H, f_), tw = make_taps(W, f_), td = make_taps(D, f_);

  Tensor y({N, C, Ho, Wo, Do});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* xs = x.data() + (n * C + c) * H * W * D;
      double* yo = y.data() + (n * C + c) * Ho * Wo * Do;
      for (std::int64_t ho = 0; ho < Ho; ++ho) {
        const auto& ah = th[static_cast<std::size_t>(ho)];
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          const auto& aw = tw[static_cast<std::size_t>(wo)];
          for (std::int64_t d0 = 0; d0 < Do; ++d0) {
            const auto& ad = td[static_cast<std::size_t>(d0)];
            double acc = 0.0;
            for (int bh = 0; bh < 2; ++bh) {
              const std::int64_t ih = bh ? ah.i1 : ah.i0;
              const double wh = bh ? ah.w1 : 1.0 - ah.w1;
              for (int bw = 0; bw < 2; ++bw) {
                const std::int64_t iw = bw ? aw.i1 : aw.i0;
                const double ww = bw ? aw.w1 : 1.0 - aw.w1;
                const double whw = wh * ww;
                const double* line = xs + (ih * W + iw) * D;
                acc += whw * ((1.0 - ad.w1) * line[ad.i0] + ad.w1 * line[ad.i1]);
              }
            }
            yo[(ho * Wo + wo) * Do + d0] = acc;
          }
        }
      }
    }
  if (training) cached_in_shape_ = x.shape();
  return y;
}

Tensor TrilinearUpsample::backward(const Tensor& grad_out) {
  if (cached_in_shape_.empty())
    throw StateError("TrilinearUpsample: backward without training-mode forward");
  if (f_ == 1) return grad_out;
  const std::int64_t N = cached_in_shape_[0], C = cached_in_shape_[1], H = cached_in_shape_[2],
                     W = cached_in_shape_[3], D = cached_in_shape_[4];
  const std::int64_t Ho = H * f_, Wo = W * f_, Do = D * f_;
  const auto th = make_taps(H, f_), tw = make_taps(W, f_), td = make_taps(D, f_);

  Tensor dx(cached_in_shape_);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* gs = grad_out.data() + (n * C + c) * Ho * Wo * Do;
      double* dxp = dx.data() + (n * C + c) * H * W * D;
      for (std::int64_t ho = 0; ho < Ho; ++ho) {
        const auto& ah = th[static_cast<std::size_t>(ho)];
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          const auto& aw = tw[static_cast<std::size_t>(wo)];
          for (std::int64_t d0 = 0; d0 < Do; ++d0) {
            const auto& ad = td[static_cast<std::size_t>(d0)];
            const double g = gs[(ho * Wo + wo) * Do + d0];
            for (int bh = 0; bh < 2; ++bh) {
              const std::int64_t ih = bh ? ah.i1 : ah.i0;
              const double wh = bh ? ah.w1 : 1.0 - ah.w1;
              for (int bw = 0; bw < 2; ++bw) {
                const std::int64_t iw = bw ? aw.i1 : aw.i0;
                const double ww = bw ? aw.w1 : 1.0 - aw.w1;
                double* line = dxp + (ih * W + iw) * D;
                line[ad.i0] += g * wh * ww * (1.0 - ad.w1);
                line[ad.i1] += g * wh * ww * ad.w1;
              }
            }
          }
        }
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// SoftmaxChannel

Tensor SoftmaxChannel::forward(const Tensor& x, bool training) {
  if (x.rank() != 5) throw ShapeError("SoftmaxChannel: expected N,C,H,W,D input");
  const std::int64_t N = x.dim(0), C = x.dim(1);
  const std::int64_t V = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor y(x.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < N; ++n) {
    const double* xs = x.data() + n * C * V;
    double* yo = y.data() + n * C * V;
    for (std::int64_t v = 0; v < V; ++v) {
      double mx = xs[v];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, xs[c * V + v]);
      double sum = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        const double e = std::exp(xs[c * V + v] - mx);
        yo[c * V + v] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::int64_t c = 0; c < C; ++c) yo[c * V + v] *= inv;
    }
  }
  if (training) cached_out_ = y;
  return y;
}

Tensor SoftmaxChannel::backward(const Tensor& grad_out) {
  if (cached_out_.empty()) throw StateError("SoftmaxChannel: backward without forward");
  const Tensor& y = cached_out_;
  const std::int64_t N = y.dim(0), C = y.dim(1);
  const std::int64_t V = y.dim(2) * y.dim(3) * y.dim(4);
  Tensor dx(y.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < N; ++n) {
    const double* ys = y.data() + n * C * V;
    const double* gs = grad_out.data() + n * C * V;
    double* dxp = dx.data() + n * C * V;
    for (std::int64_t v = 0; v < V; ++v) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < C; ++c) dot += gs[c * V + v] * ys[c * V + v];
      for (std::int64_t c = 0; c < C; ++c)
        dxp[c * V + v] = ys[c * V + v] * (gs[c * V + v] - dot);
    }
  }
  return dx;
}

}  // namespace hcmt
