#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "hcmt/data.hpp"
#include "oracles.hpp"

using namespace hcmt;
using namespace hcmt::test;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hcmt_data_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Flood fill written independently of data.cpp's implementation.
bool one_component_oracle(const Tensor& mask) {
  const std::int64_t H = mask.dim(0), W = mask.dim(1), D = mask.dim(2);
  std::vector<char> seen(mask.size(), 0);
  std::int64_t total = 0;
  std::int64_t seed = -1;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(mask.size()); ++i)
    if (mask[static_cast<std::size_t>(i)] != 0.0) {
      ++total;
      seed = i;
    }
  if (total == 0) return false;
  std::vector<std::int64_t> stack{seed};
  seen[static_cast<std::size_t>(seed)] = 1;
  std::int64_t visited = 0;
  while (!stack.empty()) {
    const std::int64_t i = stack.back();
    stack.pop_back();
    ++visited;
    const std::int64_t h = i / (W * D), w = (i / D) % W, d = i % D;
    auto push = [&](std::int64_t hh, std::int64_t ww, std::int64_t dd) {
      if (hh < 0 || hh >= H || ww < 0 || ww >= W || dd < 0 || dd >= D) return;
      const std::int64_t j = (hh * W + ww) * D + dd;
      if (!seen[static_cast<std::size_t>(j)] && mask[static_cast<std::size_t>(j)] != 0.0) {
        seen[static_cast<std::size_t>(j)] = 1;
        stack.push_back(j);
      }
    };
    push(h - 1, w, d);
    push(h + 1, w, d);
    push(h, w - 1, d);
    push(h, w + 1, d);
    push(h, w, d - 1);
    push(h, w, d + 1);
  }
  return visited == total;
}
}  // namespace

TEST_CASE("volume round-trips bit-identically through every container") {
  TempDir tmp;
  Rng rng(71);
  Volume v;
  v.grid = random_tensor({16, 16, 16}, rng, -3.0, 3.0);
  v.spacing = {0.625, 0.625, 1.25};  // exactly representable in float
  v.id = "roundtrip";

  for (const char* name : {"vol.rawvol", "vol.nii", "vol.nii.gz", "vol.nrrd"}) {
    const fs::path p = tmp.path / name;
    save_volume(p, v);
    Volume r = load_volume(p);
    REQUIRE(r.grid.shape() == v.grid.shape());
    for (std::size_t i = 0; i < v.grid.size(); ++i) CHECK(r.grid[i] == v.grid[i]);
    CHECK(r.spacing[0] == v.spacing[0]);
    CHECK(r.spacing[1] == v.spacing[1]);
    CHECK(r.spacing[2] == v.spacing[2]);
  }
}

TEST_CASE("masks validate binariness on load") {
  TempDir tmp;
  Volume v;
  v.grid = Tensor({4, 4, 4});
  v.grid[5] = 2.0;  // not binary
  v.id = "badmask";
  const fs::path p = tmp.path / "mask.rawvol";
  save_volume(p, v);
  CHECK_THROWS_AS(load_mask(p), DataError);

  v.grid[5] = 1.0;
  save_volume(p, v);
  CHECK_NOTHROW(load_mask(p));
}

TEST_CASE("image/mask alignment is enforced") {
  TempDir tmp;
  Volume v;
  v.grid = Tensor({4, 4, 4});
  save_volume(tmp.path / "img.rawvol", v);
  Volume m;
  m.grid = Tensor({4, 4, 5});
  save_volume(tmp.path / "msk.rawvol", m);
  CHECK_THROWS_AS(load_case(tmp.path / "img.rawvol", tmp.path / "msk.rawvol"), DataError);
}

TEST_CASE("corrupt and missing files raise ingestion errors with the path") {
  TempDir tmp;
  CHECK_THROWS_AS(load_volume(tmp.path / "missing.nii"), IoError);
  const fs::path junk = tmp.path / "junk.nii";
  {
    std::ofstream out(junk);
    out << "not a nifti";
  }
  try {
    load_volume(junk);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("junk.nii") != std::string::npos);
  }
  CHECK_THROWS_AS(load_volume(tmp.path / "wrong.xyz"), IoError);
}

TEST_CASE("preprocess: crop, z-score, degenerate input, boundary clipping") {
  Rng rng(31);
  Volume v;
  v.grid = random_tensor({20, 22, 24}, rng, 10.0, 30.0);
  v.id = "pp";
  LabelMask m;
  m.labels = Tensor({20, 22, 24});
  // mask touching the low boundary on axis 0
  for (std::int64_t h = 0; h < 3; ++h)
    for (std::int64_t w = 6; w < 10; ++w)
      for (std::int64_t d = 8; d < 12; ++d)
        m.labels[static_cast<std::size_t>((h * 22 + w) * 24 + d)] = 1.0;

  auto res = preprocess(v, m, 4);
  CHECK(res.crop_origin == std::array<std::int64_t, 3>{0, 2, 4});
  CHECK(res.volume.grid.shape() == Shape{7, 12, 12});  // clipped at 0 on axis 0
  REQUIRE(res.mask.has_value());
  CHECK(res.mask->labels.shape() == res.volume.grid.shape());

  double mean = 0.0, var = 0.0;
  const Tensor& g = res.volume.grid;
  for (std::size_t i = 0; i < g.size(); ++i) mean += g[i];
  mean /= static_cast<double>(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) var += (g[i] - mean) * (g[i] - mean);
  var /= static_cast<double>(g.size());
  CHECK(std::abs(mean) < 1e-3);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-3);

  // idempotence: preprocessing its own output is a near-identity
  auto res2 = preprocess(res.volume, res.mask, 4);
  REQUIRE(res2.volume.grid.shape() == res.volume.grid.shape());
  double rms = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = res2.volume.grid[i] - g[i];
    rms += d * d;
  }
  rms = std::sqrt(rms / static_cast<double>(g.size()));
  CHECK(rms < 1e-6);

  // constant input degenerates to zeros with the warning flag
  Volume flat;
  flat.grid = Tensor({8, 8, 8}, 5.0);
  auto resf = preprocess(flat, std::nullopt, 25);
  CHECK(resf.degenerate_constant);
  for (std::size_t i = 0; i < resf.volume.grid.size(); ++i) CHECK(resf.volume.grid[i] == 0.0);

  // empty mask is a data error
  LabelMask empty;
  empty.labels = Tensor({20, 22, 24});
  CHECK_THROWS_AS(preprocess(v, empty, 4), DataError);
}

TEST_CASE("random crop: identity, determinism, and near-uniform corners") {
  Rng rng(3);
  Tensor vol = random_tensor({8, 8, 8}, rng);
  Tensor mask = random_binary_mask({8, 8, 8}, rng);

  Rng crop_rng(42);
  auto full = random_crop(vol, &mask, {8, 8, 8}, crop_rng);
  CHECK(full.corner == std::array<std::int64_t, 3>{0, 0, 0});
  for (std::size_t i = 0; i < vol.size(); ++i) CHECK(full.volume[i] == vol[i]);

  Rng a(7), b(7);
  auto ca = random_crop(vol, nullptr, {4, 4, 4}, a);
  auto cb = random_crop(vol, nullptr, {4, 4, 4}, b);
  CHECK(ca.corner == cb.corner);

  CHECK_THROWS_AS(random_crop(vol, nullptr, {9, 4, 4}, a), ShapeError);

  // 1e4 draws, 5 corner positions per axis: chi-square should stay small
  Rng u(123);
  std::array<std::array<int, 5>, 3> hist{};
  for (int i = 0; i < 10000; ++i) {
    auto c = random_crop(vol, nullptr, {4, 4, 4}, u);
    for (int axis = 0; axis < 3; ++axis)
      hist[static_cast<std::size_t>(axis)][static_cast<std::size_t>(
          c.corner[static_cast<std::size_t>(axis)])]++;
  }
  for (int axis = 0; axis < 3; ++axis) {
    double chi2 = 0.0;
    for (int bin = 0; bin < 5; ++bin) {
      const double o = hist[static_cast<std::size_t>(axis)][static_cast<std::size_t>(bin)];
      chi2 += (o - 2000.0) * (o - 2000.0) / 2000.0;
    }
    CHECK(chi2 < 25.0);  // 4 dof; p ~ 5e-5 false-failure rate
  }
}

TEST_CASE("synthetic generator: determinism and the mask contract") {
  auto a = generate_synthetic(4, 24, 2024);
  auto b = generate_synthetic(4, 24, 2024);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first.id == b[i].first.id);
    for (std::size_t j = 0; j < a[i].first.grid.size(); ++j)
      CHECK(a[i].first.grid[j] == b[i].first.grid[j]);
    for (std::size_t j = 0; j < a[i].second.labels.size(); ++j)
      CHECK(a[i].second.labels[j] == b[i].second.labels[j]);
  }
  auto c = generate_synthetic(2, 24, 2025);
  bool differs = false;
  for (std::size_t j = 0; j < c[0].first.grid.size(); ++j)
    differs |= c[0].first.grid[j] != a[0].first.grid[j];
  CHECK(differs);

  for (const auto& [vol, mask] : generate_synthetic(12, 20, 99)) {
    std::int64_t fg = 0;
    for (std::size_t j = 0; j < mask.labels.size(); ++j) fg += mask.labels[j] != 0.0;
    const double frac = static_cast<double>(fg) / static_cast<double>(mask.labels.size());
    CHECK(fg > 0);
    CHECK(frac >= 0.02);
    CHECK(frac <= 0.40);
    CHECK(one_component_oracle(mask.labels));
    CHECK(vol.grid.all_finite());
  }
}

TEST_CASE("splits: determinism, disjointness, file round-trip") {
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back("case_" + std::to_string(i));
  auto s1 = make_split(ids, 4, 16, 10, 5);
  auto s2 = make_split(ids, 4, 16, 10, 5);
  CHECK(s1.labeled == s2.labeled);
  CHECK(s1.unlabeled == s2.unlabeled);
  CHECK(s1.test == s2.test);
  CHECK(s1.labeled.size() == 4);
  CHECK(s1.unlabeled.size() == 16);
  CHECK(s1.test.size() == 10);
  CHECK_NOTHROW(s1.validate());
  CHECK_THROWS_AS(make_split(ids, 20, 16, 10, 5), DataError);

  auto s3 = make_split(ids, 4, 16, 10, 6);
  CHECK(s3.labeled != s1.labeled);

  TempDir tmp;
  save_split(tmp.path / "split.txt", s1);
  auto r = load_split(tmp.path / "split.txt");
  CHECK(r.labeled == s1.labeled);
  CHECK(r.unlabeled == s1.unlabeled);
  CHECK(r.test == s1.test);

  DatasetSplit overlap;
  overlap.labeled = {"a", "b"};
  overlap.test = {"b"};
  CHECK_THROWS_AS(overlap.validate(), DataError);
}
