#include "hcmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>

#include "hcmt/errors.hpp"

namespace hcmt {

void validate_binary(const Tensor& mask, const std::string& context) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw DataError("mask is not binary (found value " + std::to_string(mask[i]) + ") in " +
                      context);
}

namespace {

struct Bbox {
  std::array<std::int64_t, 3> lo{0, 0, 0}, hi{0, 0, 0};  // hi exclusive
  bool empty = true;
};

template <typename Pred>
Bbox bounding_box(const Tensor& grid, Pred pred) {
  const std::int64_t H = grid.dim(0), W = grid.dim(1), D = grid.dim(2);
  Bbox b;
  b.lo = {H, W, D};
  b.hi = {0, 0, 0};
  const double* p = grid.data();
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t w = 0; w < W; ++w)
      for (std::int64_t d = 0; d < D; ++d)
        if (pred(*p++)) {
          b.empty = false;
          b.lo[0] = std::min(b.lo[0], h);
          b.lo[1] = std::min(b.lo[1], w);
          b.lo[2] = std::min(b.lo[2], d);
          b.hi[0] = std::max(b.hi[0], h + 1);
          b.hi[1] = std::max(b.hi[1], w + 1);
          b.hi[2] = std::max(b.hi[2], d + 1);
        }
  return b;
}

Tensor crop_region(const Tensor& grid, const std::array<std::int64_t, 3>& lo,
                   const std::array<std::int64_t, 3>& hi) {
  Tensor out({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const std::int64_t W = grid.dim(1), D = grid.dim(2);
  const std::int64_t ow = out.dim(1), od = out.dim(2);
  for (std::int64_t h = 0; h < out.dim(0); ++h)
    for (std::int64_t w = 0; w < ow; ++w) {
      const double* src = grid.data() + ((lo[0] + h) * W + (lo[1] + w)) * D + lo[2];
      double* dst = out.data() + (h * ow + w) * od;
      std::copy(src, src + od, dst);
    }
  return out;
}

}  // namespace

PreprocessResult preprocess(const Volume& v, const std::optional<LabelMask>& mask,
                            std::int64_t margin) {
  if (!v.grid.all_finite()) throw DataError("preprocess: non-finite intensities in " + v.id);
  if (v.grid.rank() != 3) throw ShapeError("preprocess: volume must be 3D");
  Bbox box;
  if (mask) {
    if (mask->labels.shape() != v.grid.shape())
      throw DataError("preprocess: mask shape mismatch for " + v.id);
    box = bounding_box(mask->labels, [](double x) { return x != 0.0; });
    if (box.empty) throw DataError("preprocess: mask-guided crop requested on empty mask (" +
                                   v.id + ")");
  } else {
    box = bounding_box(v.grid, [](double x) { return std::abs(x) > 1e-8; });
    if (box.empty) {
      box.lo = {0, 0, 0};
      box.hi = {v.grid.dim(0), v.grid.dim(1), v.grid.dim(2)};
    }
  }
  std::array<std::int64_t, 3> lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<std::int64_t>(0, box.lo[static_cast<std::size_t>(a)] - margin);
    hi[a] = std::min<std::int64_t>(v.grid.dim(static_cast<std::size_t>(a)),
                                   box.hi[static_cast<std::size_t>(a)] + margin);
  }

  PreprocessResult out;
  out.crop_origin = lo;
  out.volume.id = v.id;
  out.volume.spacing = v.spacing;
  out.volume.grid = crop_region(v.grid, lo, hi);
  if (mask) {
    LabelMask m;
    m.id = mask->id;
    m.labels = crop_region(mask->labels, lo, hi);
    out.mask = std::move(m);
  }

  Tensor& g = out.volume.grid;
  double mean = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) mean += g[i];
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = g[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(g.size());
  if (var < 1e-24) {
    g.zero();
    out.degenerate_constant = true;
  } else {
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (g[i] - mean) * inv_std;
  }
  return out;
}

CropResult random_crop(const Tensor& volume, const Tensor* mask,
                       const std::array<std::int64_t, 3>& patch_shape, Rng& rng) {
  if (volume.rank() != 3) throw ShapeError("random_crop: volume must be 3D");
  if (mask && mask->shape() != volume.shape())
    throw ShapeError("random_crop: mask shape mismatch");
  std::array<std::int64_t, 3> corner{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t extent = volume.dim(static_cast<std::size_t>(a));
    const std::int64_t patch = patch_shape[static_cast<std::size_t>(a)];
    if (patch > extent)
      throw ShapeError("random_crop: patch extent " + std::to_string(patch) + " exceeds volume " +
                       std::to_string(extent) + " on axis " + std::to_string(a));
    corner[static_cast<std::size_t>(a)] = rng.uniform_int(extent - patch + 1);
  }
  CropResult out;
  out.corner = corner;
  const std::array<std::int64_t, 3> hi = {corner[0] + patch_shape[0], corner[1] + patch_shape[1],
                                          corner[2] + patch_shape[2]};
  out.volume = crop_region(volume, corner, hi);
  if (mask) out.mask = crop_region(*mask, corner, hi);
  return out;
}

bool single_connected_component(const Tensor& mask) {
  const std::int64_t H = mask.dim(0), W = mask.dim(1), D = mask.dim(2);
  std::int64_t total = 0, start = -1;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(mask.size()); ++i)
    if (mask[static_cast<std::size_t>(i)] != 0.0) {
      ++total;
      if (start < 0) start = i;
    }
  if (total == 0) return false;
  std::vector<char> seen(mask.size(), 0);
  std::deque<std::int64_t> queue{start};
  seen[static_cast<std::size_t>(start)] = 1;
  std::int64_t count = 0;
  while (!queue.empty()) {
    const std::int64_t idx = queue.front();
    queue.pop_front();
    ++count;
    const std::int64_t h = idx / (W * D), w = (idx / D) % W, d = idx % D;
    const std::int64_t nb[6][3] = {{h - 1, w, d}, {h + 1, w, d}, {h, w - 1, d},
                                   {h, w + 1, d}, {h, w, d - 1}, {h, w, d + 1}};
    for (const auto& n : nb) {
      if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W || n[2] < 0 || n[2] >= D) continue;
      const std::int64_t ni = (n[0] * W + n[1]) * D + n[2];
      if (!seen[static_cast<std::size_t>(ni)] && mask[static_cast<std::size_t>(ni)] != 0.0) {
        seen[static_cast<std::size_t>(ni)] = 1;
        queue.push_back(ni);
      }
    }
  }
  return count == total;
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;
  std::array<std::array<double, 3>, 3> rot;  // row-major rotation matrix

  double q(double h, double w, double d) const {
    const double x = h - center[0], y = w - center[1], z = d - center[2];
    double s = 0.0;
    for (int r = 0; r < 3; ++r) {
      const double proj = rot[static_cast<std::size_t>(r)][0] * x +
                          rot[static_cast<std::size_t>(r)][1] * y +
                          rot[static_cast<std::size_t>(r)][2] * z;
      const double t = proj / semi[static_cast<std::size_t>(r)];
      s += t * t;
    }
    return s;
  }
};

std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
  // Unit quaternion from four normals.
  double q0 = rng.normal(), q1 = rng.normal(), q2 = rng.normal(), q3 = rng.normal();
  const double n = std::sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3);
  q0 /= n;
  q1 /= n;
  q2 /= n;
  q3 /= n;
  return {{{1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)},
           {2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)},
           {2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)}}};
}

constexpr std::array<std::array<double, 3>, 3> kIdentity = {
    {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};

}  // namespace

std::vector<std::pair<Volume, LabelMask>> generate_synthetic(int count, std::int64_t grid_size,
                                                             std::uint64_t seed,
                                                             const SyntheticParams& params) {
  if (count < 0) throw ConfigError("generate_synthetic: count must be >= 0");
  if (grid_size < 8) throw ConfigError("generate_synthetic: grid_size must be >= 8");
  const double G = static_cast<double>(grid_size);
  std::vector<std::pair<Volume, LabelMask>> out;
  out.reserve(static_cast<std::size_t>(count));

  for (int index = 0; index < count; ++index) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt >= 64)
        throw DataError("generate_synthetic: no acceptable sample after 64 attempts");
      Rng rng(stream_seed(seed, Stream::kSyntheticSample,
                          {static_cast<std::uint64_t>(index), attempt}));

      std::vector<Ellipsoid> parts;
      Ellipsoid main;
      for (int a = 0; a < 3; ++a) {
        main.center[static_cast<std::size_t>(a)] = G * (0.5 + 0.12 * (2.0 * rng.uniform() - 1.0));
        main.semi[static_cast<std::size_t>(a)] = G * (0.18 + 0.14 * rng.uniform());
      }
      main.rot = random_rotation(rng);
      parts.push_back(main);

      const int lobes = 1 + static_cast<int>(rng.uniform_int(3));
      for (int l = 0; l < lobes; ++l) {
        // Direction to a point on the main surface; the lobe center sits just
        // inside it so the union stays connected.
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        const double dn = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-12;
        dx /= dn;
        dy /= dn;
        dz /= dn;
        Ellipsoid lobe;
        lobe.center = {main.center[0] + 0.9 * dx * main.semi[0],
                       main.center[1] + 0.9 * dy * main.semi[1],
                       main.center[2] + 0.9 * dz * main.semi[2]};
        for (int a = 0; a < 3; ++a)
          lobe.semi[static_cast<std::size_t>(a)] = G * (0.08 + 0.06 * rng.uniform());
        lobe.rot = kIdentity;
        parts.push_back(lobe);
      }

      double bias[7];
      for (double& b : bias) b = params.bias_amplitude * (2.0 * rng.uniform() - 1.0);

      Volume vol;
      vol.grid = Tensor({grid_size, grid_size, grid_size});
      LabelMask mask;
      mask.labels = Tensor({grid_size, grid_size, grid_size});

      std::int64_t fg = 0;
      std::size_t i = 0;
      for (std::int64_t h = 0; h < grid_size; ++h)
        for (std::int64_t w = 0; w < grid_size; ++w)
          for (std::int64_t d = 0; d < grid_size; ++d, ++i) {
            double s = 1e30;
            for (const auto& part : parts)
              s = std::min(s, part.q(static_cast<double>(h), static_cast<double>(w),
                                     static_cast<double>(d)));
            if (s < 1.0) {
              mask.labels[i] = 1.0;
              ++fg;
            }
            const double profile = 1.0 / (1.0 + std::exp((s - 1.0) / params.edge_width));
            const double u = static_cast<double>(h) / G - 0.5;
            const double v = static_cast<double>(w) / G - 0.5;
            const double t = static_cast<double>(d) / G - 0.5;
            const double b = bias[0] + bias[1] * u + bias[2] * v + bias[3] * t +
                             bias[4] * u * v + bias[5] * v * t + bias[6] * u * t;
            vol.grid[i] = params.contrast * profile + b + params.noise_sigma * rng.normal();
          }

      const double frac = static_cast<double>(fg) / static_cast<double>(mask.labels.size());
      if (frac < 0.02 || frac > 0.40) continue;
      if (!single_connected_component(mask.labels)) continue;

      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "case_%04d", index);
      vol.id = idbuf;
      mask.id = idbuf;
      out.emplace_back(std::move(vol), std::move(mask));
      break;
    }
  }
  return out;
}

void DatasetSplit::validate() const {
  std::set<std::string> all;
  std::size_t total = 0;
  for (const auto* part : {&labeled, &unlabeled, &test}) {
    total += part->size();
    all.insert(part->begin(), part->end());
  }
  if (all.size() != total) throw DataError("DatasetSplit: id sets are not disjoint");
}

DatasetSplit make_split(std::vector<std::string> ids, int labeled_n, int unlabeled_n, int test_n,
                        std::uint64_t seed) {
  if (labeled_n < 0 || unlabeled_n < 0 || test_n < 0)
    throw ConfigError("make_split: negative partition size");
  if (static_cast<std::size_t>(labeled_n) + unlabeled_n + test_n > ids.size())
    throw DataError("make_split: partitions need " +
                    std::to_string(labeled_n + unlabeled_n + test_n) + " ids, have " +
                    std::to_string(ids.size()));
  Rng rng(stream_seed(seed, Stream::kSplit));
  rng.shuffle(ids);
  DatasetSplit s;
  s.seed = seed;
  auto it = ids.begin();
  s.labeled.assign(it, it + labeled_n);
  it += labeled_n;
  s.unlabeled.assign(it, it + unlabeled_n);
  it += unlabeled_n;
  s.test.assign(it, it + test_n);
  s.validate();
  return s;
}

void save_split(const std::filesystem::path& path, const DatasetSplit& split) {
  split.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file: " + path.string());
  out << "# dataset split (seed=" << split.seed << ")\n";
  out << "[labeled]\n";
  for (const auto& id : split.labeled) out << id << "\n";
  out << "[unlabeled]\n";
  for (const auto& id : split.unlabeled) out << id << "\n";
  out << "[test]\n";
  for (const auto& id : split.test) out << id << "\n";
  if (!out) throw IoError("short write: " + path.string());
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file: " + path.string());
  DatasetSplit s;
  std::vector<std::string>* section = nullptr;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line == "[labeled]") {
      section = &s.labeled;
    } else if (line == "[unlabeled]") {
      section = &s.unlabeled;
    } else if (line == "[test]") {
      section = &s.test;
    } else if (line[0] == '[') {
      throw DataError("unknown split section '" + line + "' in " + path.string());
    } else {
      if (!section) throw DataError("id before any section in " + path.string());
      section->push_back(line);
    }
  }
  s.validate();
  return s;
}

}  // namespace hcmt
