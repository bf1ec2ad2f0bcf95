#ifndef HCMT_METRICS_HPP
#define HCMT_METRICS_HPP

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hcmt/backbone.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

// One evaluated case. Overlap metrics are percentages; distances are in voxel
// units. Distances stay undefined (NaN + flag) when either mask is empty.
struct CaseScore {
  std::string case_id;
  double dice = 0.0;
  double jaccard = 0.0;
  double asd = std::numeric_limits<double>::quiet_NaN();
  double hd95 = std::numeric_limits<double>::quiet_NaN();
  bool distances_defined = false;
};

// dice = 200*|P&G|/(|P|+|G|), jaccard = 100*|P&G|/|P|G|; both-empty masks
// score (100, 100).
std::pair<double, double> dice_jaccard(const Tensor& pred, const Tensor& gt);

using Voxel = std::array<std::int64_t, 3>;

// Foreground voxels with at least one background 6-neighbor, counting the
// volume border as background.
std::vector<Voxel> extract_surface(const Tensor& mask);

struct SurfaceDistances {
  double asd = 0.0;
  double hd95 = 0.0;
};

// asd = symmetric mean of nearest-surface distances, hd95 = max of the two
// directed 95th percentiles (linear interpolation). Throws DataError when
// either mask is empty.
SurfaceDistances surface_distances(const Tensor& pred, const Tensor& gt);

// Exact squared Euclidean distance transform to the given seed voxels.
Tensor squared_edt(const Shape& shape, const std::vector<Voxel>& seeds);

// Linear-interpolation percentile, q in [0,1]; v is sorted ascending.
double percentile_linear(const std::vector<double>& v, double q);

struct SlidingWindowResult {
  Tensor mask;  // (H,W,D) argmax class indices
  Tensor prob;  // (C,H,W,D) overlap-averaged probabilities
  bool padded = false;
};

// Maps one (1,1,ph,pw,pd) patch to (1,C,ph,pw,pd) class probabilities.
using PatchPredictor = std::function<Tensor(const Tensor&)>;

// Full-volume inference: overlapping patches, probabilities averaged over
// overlaps, argmax to a mask. Volumes smaller than the patch are
// reflection-padded and the result cropped back.
SlidingWindowResult sliding_window_predict(const PatchPredictor& predictor, int num_classes,
                                           const Tensor& volume,
                                           const std::array<std::int64_t, 3>& patch_shape,
                                           const std::array<std::int64_t, 3>& stride);

// The production path: scale-0 output of an eval-mode network forward.
SlidingWindowResult sliding_window_predict(VNet& net, const Tensor& volume,
                                           const std::array<std::int64_t, 3>& patch_shape,
                                           const std::array<std::int64_t, 3>& stride);

// Scores one case end to end.
CaseScore score_case(const std::string& case_id, const Tensor& pred_mask, const Tensor& gt_mask);

// Aggregate means; cases with undefined distances are excluded from the
// distance means (their count is reported by the caller).
struct MeanScore {
  double dice = 0.0, jaccard = 0.0, asd = 0.0, hd95 = 0.0;
  int cases = 0;
  int distance_cases = 0;
};
MeanScore mean_scores(const std::vector<CaseScore>& scores);

}  // namespace hcmt

#endif  // HCMT_METRICS_HPP
