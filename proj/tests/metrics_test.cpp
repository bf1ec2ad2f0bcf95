#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hcmt/metrics.hpp"
#include "oracles.hpp"

using namespace hcmt;
using namespace hcmt::test;

namespace {
Tensor box_mask(const Shape& shape, const Voxel& lo, const Voxel& hi) {
  Tensor m(shape);
  for (std::int64_t h = lo[0]; h < hi[0]; ++h)
    for (std::int64_t w = lo[1]; w < hi[1]; ++w)
      for (std::int64_t d = lo[2]; d < hi[2]; ++d)
        m[static_cast<std::size_t>((h * shape[1] + w) * shape[2] + d)] = 1.0;
  return m;
}

// random blobby mask: a few random boxes unioned
Tensor random_boxes_mask(const Shape& shape, Rng& rng) {
  Tensor m(shape);
  const int boxes = 1 + static_cast<int>(rng.uniform_int(3));
  for (int b = 0; b < boxes; ++b) {
    Voxel lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[static_cast<std::size_t>(a)] = rng.uniform_int(shape[static_cast<std::size_t>(a)]);
      hi[static_cast<std::size_t>(a)] =
          lo[static_cast<std::size_t>(a)] +
          1 + rng.uniform_int(shape[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)]);
    }
    for (std::int64_t h = lo[0]; h < hi[0]; ++h)
      for (std::int64_t w = lo[1]; w < hi[1]; ++w)
        for (std::int64_t d = lo[2]; d < hi[2]; ++d)
          m[static_cast<std::size_t>((h * shape[1] + w) * shape[2] + d)] = 1.0;
  }
  return m;
}
}  // namespace

TEST_CASE("dice and jaccard: identical, disjoint, and counted overlap") {
  Tensor a = box_mask({6, 6, 6}, {1, 1, 1}, {3, 3, 3});
  auto [d1, j1] = dice_jaccard(a, a);
  CHECK(d1 == 100.0);
  CHECK(j1 == 100.0);

  Tensor b = box_mask({6, 6, 6}, {4, 4, 4}, {6, 6, 6});
  auto [d2, j2] = dice_jaccard(a, b);
  CHECK(d2 == 0.0);
  CHECK(j2 == 0.0);

  // |P|=|G|=4, overlap 2 -> dice 50, jaccard 100/3
  Tensor p({1, 1, 8});
  Tensor g({1, 1, 8});
  for (int i = 0; i < 4; ++i) p[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 2; i < 6; ++i) g[static_cast<std::size_t>(i)] = 1.0;
  auto [d3, j3] = dice_jaccard(p, g);
  CHECK(d3 == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(j3 == doctest::Approx(100.0 / 3.0).epsilon(1e-12));

  // both empty scores (100, 100)
  Tensor e1({4, 4, 4}), e2({4, 4, 4});
  auto [d4, j4] = dice_jaccard(e1, e2);
  CHECK(d4 == 100.0);
  CHECK(j4 == 100.0);

  CHECK_THROWS_AS(dice_jaccard(a, p), ShapeError);
}

TEST_CASE("jaccard follows from dice: J = D/(2-D) in fractional units") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor p = random_boxes_mask({9, 8, 7}, rng);
    Tensor g = random_boxes_mask({9, 8, 7}, rng);
    auto [dice, jaccard] = dice_jaccard(p, g);
    const double df = dice / 100.0, jf = jaccard / 100.0;
    CHECK(std::abs(jf - df / (2.0 - df)) < 1e-9);
    CHECK(jaccard <= dice + 1e-12);
  }
}

TEST_CASE("surface extraction: single voxel, cube shell, full grid") {
  Tensor single({5, 5, 5});
  single[static_cast<std::size_t>((2 * 5 + 2) * 5 + 2)] = 1.0;
  auto s1 = extract_surface(single);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0] == Voxel{2, 2, 2});

  // solid 3x3x3 cube inside a larger grid: 26 surface voxels
  Tensor cube = box_mask({7, 7, 7}, {2, 2, 2}, {5, 5, 5});
  CHECK(extract_surface(cube).size() == 26);

  // full grid: the border shell
  Tensor full({5, 6, 7}, 1.0);
  const std::size_t shell = 5 * 6 * 7 - 3 * 4 * 5;
  CHECK(extract_surface(full).size() == shell);

  Tensor empty({4, 4, 4});
  CHECK(extract_surface(empty).empty());
}

TEST_CASE("surface distances: identical masks, axial voxel pair, offset cubes") {
  Tensor a = box_mask({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
  auto d0 = surface_distances(a, a);
  CHECK(d0.asd == 0.0);
  CHECK(d0.hd95 == 0.0);

  Tensor p({9, 9, 9}), g({9, 9, 9});
  p[static_cast<std::size_t>((4 * 9 + 4) * 9 + 1)] = 1.0;
  g[static_cast<std::size_t>((4 * 9 + 4) * 9 + 4)] = 1.0;
  auto d1 = surface_distances(p, g);
  CHECK(d1.asd == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(d1.hd95 == doctest::Approx(3.0).epsilon(1e-12));

  Tensor c1 = box_mask({12, 12, 12}, {2, 2, 2}, {6, 6, 6});
  Tensor c2 = box_mask({12, 12, 12}, {4, 2, 2}, {8, 6, 6});
  auto fast = surface_distances(c1, c2);
  auto oracle = brute_force_surface_distances(c1, c2);
  CHECK(fast.asd == doctest::Approx(oracle.asd).epsilon(1e-12));
  CHECK(fast.hd95 == doctest::Approx(oracle.hd95).epsilon(1e-12));

  Tensor empty({12, 12, 12});
  CHECK_THROWS_AS(surface_distances(c1, empty), DataError);
}

TEST_CASE("distance transform route equals the brute-force oracle on random masks") {
  Rng rng(2718);
  for (int trial = 0; trial < 40; ++trial) {
    const Shape shape = {3 + rng.uniform_int(10), 3 + rng.uniform_int(10),
                         3 + rng.uniform_int(10)};
    Tensor p = random_boxes_mask(shape, rng);
    Tensor g = random_boxes_mask(shape, rng);
    if (extract_surface(p).empty() || extract_surface(g).empty()) continue;
    auto fast = surface_distances(p, g);
    auto oracle = brute_force_surface_distances(p, g);
    CHECK(std::abs(fast.asd - oracle.asd) < 1e-9);
    CHECK(std::abs(fast.hd95 - oracle.hd95) < 1e-9);

    // symmetry
    auto rev = surface_distances(g, p);
    CHECK(fast.asd == rev.asd);
    CHECK(fast.hd95 == rev.hd95);
  }
}

TEST_CASE("metrics are translation invariant") {
  Rng rng(5);
  Tensor p = random_boxes_mask({8, 8, 8}, rng);
  Tensor g = random_boxes_mask({8, 8, 8}, rng);
  // embed both in a larger grid at two offsets
  auto embed = [](const Tensor& m, const Voxel& off) {
    Tensor out({14, 14, 14});
    for (std::int64_t h = 0; h < 8; ++h)
      for (std::int64_t w = 0; w < 8; ++w)
        for (std::int64_t d = 0; d < 8; ++d)
          out[static_cast<std::size_t>(((h + off[0]) * 14 + w + off[1]) * 14 + d + off[2])] =
              m[static_cast<std::size_t>((h * 8 + w) * 8 + d)];
    return out;
  };
  const auto p0 = embed(p, {1, 1, 1}), g0 = embed(g, {1, 1, 1});
  const auto p1 = embed(p, {4, 3, 2}), g1 = embed(g, {4, 3, 2});
  auto [dd0, jj0] = dice_jaccard(p0, g0);
  auto [dd1, jj1] = dice_jaccard(p1, g1);
  CHECK(dd0 == dd1);
  CHECK(jj0 == jj1);
  if (!extract_surface(p0).empty() && !extract_surface(g0).empty()) {
    auto s0 = surface_distances(p0, g0);
    auto s1 = surface_distances(p1, g1);
    CHECK(s0.asd == doctest::Approx(s1.asd).epsilon(1e-12));
    CHECK(s0.hd95 == doctest::Approx(s1.hd95).epsilon(1e-12));
  }
}

TEST_CASE("percentile uses linear interpolation") {
  std::vector<double> v = {0.0, 1.0, 2.0, 3.0};
  CHECK(percentile_linear(v, 0.5) == doctest::Approx(1.5));
  CHECK(percentile_linear(v, 0.95) == doctest::Approx(2.85));
  CHECK(percentile_linear(v, 0.0) == 0.0);
  CHECK(percentile_linear(v, 1.0) == 3.0);
  CHECK(percentile_linear({7.0}, 0.95) == 7.0);
}

TEST_CASE("sliding window fusion: tiling, constant output, overlap averaging") {
  // stub predictor: probability depends on the window's first input value
  const int C = 2;
  auto stub = [&](double fg_prob) {
    return [fg_prob](const Tensor& in) {
      Tensor out({1, C, in.dim(2), in.dim(3), in.dim(4)});
      const std::int64_t V = in.dim(2) * in.dim(3) * in.dim(4);
      for (std::int64_t v = 0; v < V; ++v) {
        out[static_cast<std::size_t>(v)] = 1.0 - fg_prob;
        out[static_cast<std::size_t>(V + v)] = fg_prob;
      }
      return out;
    };
  };

  // constant predictor -> constant mask regardless of stride
  Tensor vol({6, 6, 6}, 0.0);
  for (const std::int64_t s : {2L, 3L, 4L}) {
    auto res = sliding_window_predict(stub(0.8), C, vol, {4, 4, 4}, {s, s, s});
    for (std::size_t i = 0; i < res.mask.size(); ++i) CHECK(res.mask[i] == 1.0);
    for (std::size_t i = 0; i < vol.size(); ++i)
      CHECK(res.prob[vol.size() + i] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(!res.padded);
  }

  // two overlapping windows along one axis with fg probs 0.4 / 0.8: the
  // overlap fuses to 0.6
  int call = 0;
  auto alternating = [&call, C](const Tensor& in) {
    const double fg = (call++ == 0) ? 0.4 : 0.8;
    Tensor out({1, C, in.dim(2), in.dim(3), in.dim(4)});
    const std::int64_t V = in.dim(2) * in.dim(3) * in.dim(4);
    for (std::int64_t v = 0; v < V; ++v) {
      out[static_cast<std::size_t>(v)] = 1.0 - fg;
      out[static_cast<std::size_t>(V + v)] = fg;
    }
    return out;
  };
  Tensor vol2({2, 2, 6});
  auto res = sliding_window_predict(alternating, C, vol2, {2, 2, 4}, {2, 2, 2});
  REQUIRE(call == 2);  // windows at d=0 and d=2
  const std::size_t fg_plane = vol2.size();
  // voxels covered only by window 0 (d<2): 0.4; overlap (2<=d<4): 0.6; only window 1: 0.8
  CHECK(res.prob[fg_plane + 0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(res.prob[fg_plane + 2] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(res.prob[fg_plane + 5] == doctest::Approx(0.8).epsilon(1e-12));

  // volume smaller than patch: reflection pad, flagged, original shape kept
  Tensor small({3, 6, 6});
  auto padded = sliding_window_predict(stub(0.9), C, small, {4, 4, 4}, {4, 4, 4});
  CHECK(padded.padded);
  CHECK(padded.mask.shape() == small.shape());

  CHECK_THROWS_AS(sliding_window_predict(stub(0.5), C, vol, {4, 4, 4}, {5, 4, 4}),
                  ConfigError);
}

TEST_CASE("sliding window with a real network covers every voxel with probabilities") {
  NetworkSpec spec;
  spec.base_channels = 2;
  spec.num_scales = 1;
  spec.encoder_depths = {1, 1};
  auto net = build_network(spec, 11);
  Rng rng(1);
  Tensor vol = random_tensor({6, 6, 6}, rng);
  auto res = sliding_window_predict(*net, vol, {4, 4, 4}, {2, 2, 2});
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const double p0 = res.prob[i], p1 = res.prob[vol.size() + i];
    CHECK(p0 >= 0.0);
    CHECK(p1 >= 0.0);
    CHECK(std::abs(p0 + p1 - 1.0) < 1e-5);
    CHECK((res.mask[i] == 0.0 || res.mask[i] == 1.0));
  }
}

TEST_CASE("score_case flags undefined distances on empty predictions") {
  Tensor gt = box_mask({6, 6, 6}, {1, 1, 1}, {4, 4, 4});
  Tensor empty({6, 6, 6});
  auto s = score_case("c1", empty, gt);
  CHECK(s.dice == 0.0);
  CHECK(!s.distances_defined);
  CHECK(std::isnan(s.asd));

  auto good = score_case("c2", gt, gt);
  CHECK(good.dice == 100.0);
  CHECK(good.distances_defined);

  auto mean = mean_scores({s, good});
  CHECK(mean.cases == 2);
  CHECK(mean.distance_cases == 1);
  CHECK(mean.dice == doctest::Approx(50.0));
  CHECK(mean.asd == doctest::Approx(good.asd));
}
