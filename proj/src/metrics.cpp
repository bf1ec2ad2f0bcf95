#include "hcmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hcmt/errors.hpp"

namespace hcmt {

std::pair<double, double> dice_jaccard(const Tensor& pred, const Tensor& gt) {
  check_same_shape(pred, gt, "dice_jaccard");
  std::int64_t p = 0, g = 0, inter = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool bp = pred[i] != 0.0, bg = gt[i] != 0.0;
    p += bp;
    g += bg;
    inter += bp && bg;
  }
  if (p == 0 && g == 0) return {100.0, 100.0};
  const double dice = 200.0 * static_cast<double>(inter) / static_cast<double>(p + g);
  const double uni = static_cast<double>(p + g - inter);
  const double jaccard = uni == 0.0 ? 100.0 : 100.0 * static_cast<double>(inter) / uni;
  return {dice, jaccard};
}

std::vector<Voxel> extract_surface(const Tensor& mask) {
  if (mask.rank() != 3) throw ShapeError("extract_surface: mask must be 3D");
  const std::int64_t H = mask.dim(0), W = mask.dim(1), D = mask.dim(2);
  std::vector<Voxel> surface;
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t w = 0; w < W; ++w)
      for (std::int64_t d = 0; d < D; ++d) {
        if (mask[static_cast<std::size_t>((h * W + w) * D + d)] == 0.0) continue;
        bool boundary = h == 0 || h == H - 1 || w == 0 || w == W - 1 || d == 0 || d == D - 1;
        if (!boundary) {
          const std::int64_t idx = (h * W + w) * D + d;
          boundary = mask[static_cast<std::size_t>(idx - W * D)] == 0.0 ||
                     mask[static_cast<std::size_t>(idx + W * D)] == 0.0 ||
                     mask[static_cast<std::size_t>(idx - D)] == 0.0 ||
                     mask[static_cast<std::size_t>(idx + D)] == 0.0 ||
                     mask[static_cast<std::size_t>(idx - 1)] == 0.0 ||
                     mask[static_cast<std::size_t>(idx + 1)] == 0.0;
        }
        if (boundary) surface.push_back({h, w, d});
      }
  return surface;
}

namespace {

// Finite sentinel standing in for "no seed": far above any reachable squared
// distance, small enough that parabola intersections stay finite.
constexpr double kFar = 1e20;

// 1D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, std::int64_t n, double* out, std::int64_t* v, double* z) {
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::int64_t q = 1; q < n; ++q) {
    double s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
               (2.0 * static_cast<double>(q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q) * q) -
           (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
          (2.0 * static_cast<double>(q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    out[q] = static_cast<double>(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace

Tensor squared_edt(const Shape& shape, const std::vector<Voxel>& seeds) {
  if (shape.size() != 3) throw ShapeError("squared_edt: shape must be 3D");
  const std::int64_t H = shape[0], W = shape[1], D = shape[2];
  Tensor g(shape, kFar);
  for (const auto& s : seeds) g[static_cast<std::size_t>((s[0] * W + s[1]) * D + s[2])] = 0.0;

  const std::int64_t nmax = std::max({H, W, D});
  std::vector<double> f(static_cast<std::size_t>(nmax)), out(static_cast<std::size_t>(nmax));
  std::vector<std::int64_t> v(static_cast<std::size_t>(nmax));
  std::vector<double> z(static_cast<std::size_t>(nmax) + 1);

  // axis D (contiguous)
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t w = 0; w < W; ++w) {
      double* row = g.data() + (h * W + w) * D;
      edt_1d(row, D, out.data(), v.data(), z.data());
      std::copy(out.begin(), out.begin() + D, row);
    }
  // axis W
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t d = 0; d < D; ++d) {
      for (std::int64_t w = 0; w < W; ++w)
        f[static_cast<std::size_t>(w)] = g[static_cast<std::size_t>((h * W + w) * D + d)];
      edt_1d(f.data(), W, out.data(), v.data(), z.data());
      for (std::int64_t w = 0; w < W; ++w)
        g[static_cast<std::size_t>((h * W + w) * D + d)] = out[static_cast<std::size_t>(w)];
    }
  // axis H
  for (std::int64_t w = 0; w < W; ++w)
    for (std::int64_t d = 0; d < D; ++d) {
      for (std::int64_t h = 0; h < H; ++h)
        f[static_cast<std::size_t>(h)] = g[static_cast<std::size_t>((h * W + w) * D + d)];
      edt_1d(f.data(), H, out.data(), v.data(), z.data());
      for (std::int64_t h = 0; h < H; ++h)
        g[static_cast<std::size_t>((h * W + w) * D + d)] = out[static_cast<std::size_t>(h)];
    }
  return g;
}

double percentile_linear(const std::vector<double>& v, double q) {
  if (v.empty()) throw DataError("percentile of empty sample");
  if (v.size() == 1) return v[0];
  const double h = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

SurfaceDistances surface_distances(const Tensor& pred, const Tensor& gt) {
  check_same_shape(pred, gt, "surface_distances");
  const auto sp = extract_surface(pred);
  const auto sg = extract_surface(gt);
  if (sp.empty() || sg.empty())
    throw DataError("surface_distances: undefined for an empty mask");

  const Tensor dt_g = squared_edt(gt.shape(), sg);
  const Tensor dt_p = squared_edt(pred.shape(), sp);
  const std::int64_t W = pred.dim(1), D = pred.dim(2);

  std::vector<double> d_pg, d_gp;
  d_pg.reserve(sp.size());
  d_gp.reserve(sg.size());
  for (const auto& s : sp)
    d_pg.push_back(std::sqrt(dt_g[static_cast<std::size_t>((s[0] * W + s[1]) * D + s[2])]));
  for (const auto& s : sg)
    d_gp.push_back(std::sqrt(dt_p[static_cast<std::size_t>((s[0] * W + s[1]) * D + s[2])]));

  double mean_pg = 0.0, mean_gp = 0.0;
  for (double d : d_pg) mean_pg += d;
  for (double d : d_gp) mean_gp += d;
  mean_pg /= static_cast<double>(d_pg.size());
  mean_gp /= static_cast<double>(d_gp.size());

  std::sort(d_pg.begin(), d_pg.end());
  std::sort(d_gp.begin(), d_gp.end());

  SurfaceDistances out;
  out.asd = 0.5 * (mean_pg + mean_gp);
  out.hd95 = std::max(percentile_linear(d_pg, 0.95), percentile_linear(d_gp, 0.95));
  return out;
}

namespace {

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch,
                                        std::int64_t stride) {
  std::vector<std::int64_t> starts;
  for (std::int64_t p = 0; p + patch < extent; p += stride) starts.push_back(p);
  starts.push_back(extent - patch);
  return starts;
}

// np.pad-style 'reflect' index (no edge repetition); degenerates to 0 for
// single-voxel axes.
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace

SlidingWindowResult sliding_window_predict(const PatchPredictor& predictor, int num_classes,
                                           const Tensor& volume,
                                           const std::array<std::int64_t, 3>& patch_shape,
                                           const std::array<std::int64_t, 3>& stride) {
  if (volume.rank() != 3) throw ShapeError("sliding_window_predict: volume must be 3D");
  for (int a = 0; a < 3; ++a) {
    if (stride[static_cast<std::size_t>(a)] < 1 ||
        stride[static_cast<std::size_t>(a)] > patch_shape[static_cast<std::size_t>(a)])
      throw ConfigError("sliding_window_predict: stride must be in [1, patch] per axis");
  }

  SlidingWindowResult res;
  const Shape orig_shape = volume.shape();
  Tensor work = volume;
  // Reflection-pad axes smaller than the patch.
  bool needs_pad = false;
  for (int a = 0; a < 3; ++a)
    needs_pad |= orig_shape[static_cast<std::size_t>(a)] < patch_shape[static_cast<std::size_t>(a)];
  if (needs_pad) {
    res.padded = true;
    const Shape padded = {std::max(orig_shape[0], patch_shape[0]),
                          std::max(orig_shape[1], patch_shape[1]),
                          std::max(orig_shape[2], patch_shape[2])};
    Tensor p(padded);
    for (std::int64_t h = 0; h < padded[0]; ++h)
      for (std::int64_t w = 0; w < padded[1]; ++w)
        for (std::int64_t d = 0; d < padded[2]; ++d)
          p[static_cast<std::size_t>((h * padded[1] + w) * padded[2] + d)] =
              volume[static_cast<std::size_t>((reflect_index(h, orig_shape[0]) * orig_shape[1] +
                                               reflect_index(w, orig_shape[1])) *
                                                  orig_shape[2] +
                                              reflect_index(d, orig_shape[2]))];
    work = std::move(p);
  }

  const std::int64_t H = work.dim(0), W = work.dim(1), D = work.dim(2);
  const int C = num_classes;
  Tensor prob_sum({C, H, W, D});
  Tensor counts({H, W, D});

  const auto hs = window_starts(H, patch_shape[0], stride[0]);
  const auto ws = window_starts(W, patch_shape[1], stride[1]);
  const auto ds = window_starts(D, patch_shape[2], stride[2]);
  Tensor input({1, 1, patch_shape[0], patch_shape[1], patch_shape[2]});
  for (const std::int64_t h0 : hs)
    for (const std::int64_t w0 : ws)
      for (const std::int64_t d0 : ds) {
        for (std::int64_t h = 0; h < patch_shape[0]; ++h)
          for (std::int64_t w = 0; w < patch_shape[1]; ++w) {
            const double* src = work.data() + ((h0 + h) * W + (w0 + w)) * D + d0;
            double* dst = input.data() + (h * patch_shape[1] + w) * patch_shape[2];
            std::copy(src, src + patch_shape[2], dst);
          }
        const Tensor p = predictor(input);  // (1,C,ph,pw,pd)
        if (p.rank() != 5 || p.dim(1) != C)
          throw ShapeError("sliding_window_predict: predictor returned " + shape_str(p.shape()));
        for (int c = 0; c < C; ++c)
          for (std::int64_t h = 0; h < patch_shape[0]; ++h)
            for (std::int64_t w = 0; w < patch_shape[1]; ++w) {
              const double* src =
                  p.data() +
                  ((static_cast<std::int64_t>(c) * patch_shape[0] + h) * patch_shape[1] + w) *
                      patch_shape[2];
              double* dst =
                  prob_sum.data() +
                  ((static_cast<std::int64_t>(c) * H + h0 + h) * W + (w0 + w)) * D + d0;
              for (std::int64_t d = 0; d < patch_shape[2]; ++d) dst[d] += src[d];
            }
        for (std::int64_t h = 0; h < patch_shape[0]; ++h)
          for (std::int64_t w = 0; w < patch_shape[1]; ++w) {
            double* dst = counts.data() + ((h0 + h) * W + (w0 + w)) * D + d0;
            for (std::int64_t d = 0; d < patch_shape[2]; ++d) dst[d] += 1.0;
          }
      }

  // Average overlaps, crop back to the original extent, argmax.
  res.prob = Tensor({C, orig_shape[0], orig_shape[1], orig_shape[2]});
  res.mask = Tensor(orig_shape);
  for (std::int64_t h = 0; h < orig_shape[0]; ++h)
    for (std::int64_t w = 0; w < orig_shape[1]; ++w)
      for (std::int64_t d = 0; d < orig_shape[2]; ++d) {
        const double cnt = counts[static_cast<std::size_t>((h * W + w) * D + d)];
        int best = 0;
        double best_p = -1.0;
        for (int c = 0; c < C; ++c) {
          const double p =
              prob_sum[static_cast<std::size_t>(((static_cast<std::int64_t>(c) * H + h) * W + w) *
                                                    D +
                                                d)] /
              cnt;
          res.prob[static_cast<std::size_t>(
              ((static_cast<std::int64_t>(c) * orig_shape[0] + h) * orig_shape[1] + w) *
                  orig_shape[2] +
              d)] = p;
          if (p > best_p) {
            best_p = p;
            best = c;
          }
        }
        res.mask[static_cast<std::size_t>((h * orig_shape[1] + w) * orig_shape[2] + d)] =
            static_cast<double>(best);
      }
  return res;
}

SlidingWindowResult sliding_window_predict(VNet& net, const Tensor& volume,
                                           const std::array<std::int64_t, 3>& patch_shape,
                                           const std::array<std::int64_t, 3>& stride) {
  auto predictor = [&net](const Tensor& input) {
    return net.forward(input, /*training=*/false).maps[0];
  };
  return sliding_window_predict(predictor, net.spec().num_classes, volume, patch_shape, stride);
}

CaseScore score_case(const std::string& case_id, const Tensor& pred_mask, const Tensor& gt_mask) {
  CaseScore s;
  s.case_id = case_id;
  const auto [dice, jaccard] = dice_jaccard(pred_mask, gt_mask);
  s.dice = dice;
  s.jaccard = jaccard;
  bool pred_empty = true, gt_empty = true;
  for (std::size_t i = 0; i < pred_mask.size() && (pred_empty || gt_empty); ++i) {
    pred_empty = pred_empty && pred_mask[i] == 0.0;
    gt_empty = gt_empty && gt_mask[i] == 0.0;
  }
  if (!pred_empty && !gt_empty) {
    const auto d = surface_distances(pred_mask, gt_mask);
    s.asd = d.asd;
    s.hd95 = d.hd95;
    s.distances_defined = true;
  }
  return s;
}

MeanScore mean_scores(const std::vector<CaseScore>& scores) {
  MeanScore m;
  for (const auto& s : scores) {
    m.dice += s.dice;
    m.jaccard += s.jaccard;
    ++m.cases;
    if (s.distances_defined) {
      m.asd += s.asd;
      m.hd95 += s.hd95;
      ++m.distance_cases;
    }
  }
  if (m.cases > 0) {
    m.dice /= m.cases;
    m.jaccard /= m.cases;
  }
  if (m.distance_cases > 0) {
    m.asd /= m.distance_cases;
    m.hd95 /= m.distance_cases;
  } else {
    m.asd = std::numeric_limits<double>::quiet_NaN();
    m.hd95 = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

}  // namespace hcmt
