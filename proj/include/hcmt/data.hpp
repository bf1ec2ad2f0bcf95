#ifndef HCMT_DATA_HPP
#define HCMT_DATA_HPP

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hcmt/rng.hpp"
#include "hcmt/tensor.hpp"

namespace hcmt {

// A 3D scalar grid with voxel spacing, layout (H, W, D) with D fastest.
struct Volume {
  Tensor grid;                              // (H, W, D)
  std::array<double, 3> spacing{1, 1, 1};   // mm per voxel, per axis
  std::string id;

  const Shape& shape() const { return grid.shape(); }
};

// Binary mask aligned to a Volume.
struct LabelMask {
  Tensor labels;  // (H, W, D), values in {0, 1}
  std::string id;

  const Shape& shape() const { return labels.shape(); }
};

// Throws DataError when values are not strictly {0, 1}.
void validate_binary(const Tensor& mask, const std::string& context);

// ---------------------------------------------------------------------------
// IO. Formats are chosen by extension: .nii / .nii.gz (NIfTI-1), .nrrd
// (NRRD, raw or gzip encoding), .rawvol (raw doubles + JSON sidecar).

Volume load_volume(const std::filesystem::path& path);
LabelMask load_mask(const std::filesystem::path& path);
void save_volume(const std::filesystem::path& path, const Volume& v);
void save_mask(const std::filesystem::path& path, const LabelMask& m);

// Loads an image and its mask, enforcing shape alignment.
std::pair<Volume, LabelMask> load_case(const std::filesystem::path& image_path,
                                       const std::filesystem::path& mask_path);

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessResult {
  Volume volume;
  std::optional<LabelMask> mask;
  bool degenerate_constant = false;  // zero-variance input, grid zeroed
  std::array<std::int64_t, 3> crop_origin{0, 0, 0};
};

// Crop to the foreground-bearing region expanded by margin voxels per side
// (clipped to bounds), then z-score normalize intensities over the crop. With
// a mask the crop region is the mask bounding box; without one it is the
// bounding box of non-zero intensities. An empty mask is a DataError.
PreprocessResult preprocess(const Volume& v, const std::optional<LabelMask>& mask,
                            std::int64_t margin = 25);

// Uniformly random crop corner; the mask is cropped identically.
struct CropResult {
  Tensor volume;
  std::optional<Tensor> mask;
  std::array<std::int64_t, 3> corner{0, 0, 0};
};
CropResult random_crop(const Tensor& volume, const Tensor* mask,
                       const std::array<std::int64_t, 3>& patch_shape, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic data: randomized ellipsoid-with-lobes foreground, smooth intensity
// falloff, low-order bias field, Gaussian observation noise. The mask is the
// exact generating region.

struct SyntheticParams {
  double contrast = 1.0;
  double noise_sigma = 0.35;
  double bias_amplitude = 0.3;
  double edge_width = 0.12;  // softness of the intensity falloff at the region edge
};

std::vector<std::pair<Volume, LabelMask>> generate_synthetic(int count, std::int64_t grid_size,
                                                             std::uint64_t seed,
                                                             const SyntheticParams& params = {});

// True when the foreground is one 6-connected component.
bool single_connected_component(const Tensor& mask);

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<std::string> labeled, unlabeled, test;
  std::uint64_t seed = 0;

  void validate() const;  // id sets must be disjoint
};

DatasetSplit make_split(std::vector<std::string> ids, int labeled_n, int unlabeled_n, int test_n,
                        std::uint64_t seed);
void save_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace hcmt

#endif  // HCMT_DATA_HPP
