#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hcmt/losses.hpp"
#include "oracles.hpp"

using namespace hcmt;
using namespace hcmt::test;

TEST_CASE("dice loss: perfect overlap, disjoint masks, and the 4-voxel worked value") {
  Tensor g({4});
  g[0] = 1.0, g[1] = 1.0;
  Tensor p = g;
  CHECK(dice_loss(p, g) == doctest::Approx(0.0).epsilon(1e-4));

  Tensor q({4});
  q[2] = 1.0, q[3] = 1.0;
  CHECK(dice_loss(q, g) == doctest::Approx(1.0).epsilon(1e-4));

  // p = 0.5 everywhere, 2 of 4 voxels foreground, eps -> 0: dice = 2/3
  Tensor half({4}, 0.5);
  CHECK(dice_loss(half, g, 1e-300) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  Tensor wrong({5});
  CHECK_THROWS_AS(dice_loss(wrong, g), ShapeError);
  Tensor nan_in({4});
  nan_in[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(dice_loss(nan_in, g), NumericError);
}

TEST_CASE("dice loss stays in [0,1] on random inputs") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p = random_tensor({30}, rng, 0.0, 1.0);
    Tensor g = random_binary_mask({30}, rng, rng.uniform());
    const double loss = dice_loss(p, g);
    CHECK(loss >= 0.0);
    CHECK(loss <= 1.0);
  }
}

TEST_CASE("cross entropy: closed-form evaluations") {
  // probability 1 on the true class -> 0
  Tensor probs({2, 4});
  Tensor target({4});
  for (int v = 0; v < 4; ++v) probs[static_cast<std::size_t>(v)] = 1.0;  // class 0 everywhere
  CHECK(cross_entropy_loss(probs, target) == doctest::Approx(0.0).epsilon(1e-12));

  // uniform 2-class -> ln 2
  probs.fill(0.5);
  CHECK(cross_entropy_loss(probs, target) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // probability 0.9 on the true class -> -ln 0.9
  for (int v = 0; v < 4; ++v) {
    probs[static_cast<std::size_t>(v)] = 0.9;
    probs[static_cast<std::size_t>(4 + v)] = 0.1;
  }
  CHECK(cross_entropy_loss(probs, target) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));

  target[2] = 5.0;
  CHECK_THROWS_AS(cross_entropy_loss(probs, target), std::out_of_range);
}

TEST_CASE("rampup weight: paper schedule values and monotonicity") {
  RampSchedule s;
  s.lambda_max = 0.1;
  s.t_max = 6000;
  s.t = 6000;
  CHECK(rampup_weight(s) == doctest::Approx(0.1).epsilon(1e-12));
  s.t = 0;
  CHECK(rampup_weight(s) == doctest::Approx(0.1 * std::exp(-5.0)).epsilon(1e-9));
  s.t = 3000;
  CHECK(rampup_weight(s) == doctest::Approx(0.1 * std::exp(-1.25)).epsilon(1e-9));

  double prev = 0.0;
  for (std::int64_t t = 0; t <= 6000; t += 40) {
    s.t = t;
    const double l = rampup_weight(s);
    CHECK(l >= prev);
    CHECK(l > 0.0);
    CHECK(l <= 0.1);
    prev = l;
  }
  s.t = 9000;  // past t_max: clamped
  CHECK(rampup_weight(s) == doctest::Approx(0.1));
}

TEST_CASE("total objective composes sup + lambda(t)*unsup") {
  RampSchedule s;
  s.t_max = 6000;
  s.t = 0;
  CHECK(total_objective(1.0, 2.0, s) ==
        doctest::Approx(1.0 + 0.1 * std::exp(-5.0) * 2.0).epsilon(1e-12));
  s.t = 6000;
  CHECK(total_objective(0.26, 0.017, s) == doctest::Approx(0.2617).epsilon(1e-12));
  CHECK(total_objective(0.7, 0.0, s) == doctest::Approx(0.7));
  CHECK_THROWS_AS(total_objective(std::numeric_limits<double>::quiet_NaN(), 0.0, s),
                  NumericError);
}

TEST_CASE("hierarchical supervised loss: degeneracies and oracle equivalence") {
  Rng rng(101);
  const std::int64_t N = 3, C = 2, H = 3, W = 4, D = 2;
  PredictionPyramid pyr;
  for (int s = 0; s < 4; ++s) pyr.maps.push_back(random_probability_map(N, C, H, W, D, rng));
  Tensor labels({2, H, W, D});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;

  ScaleWeights w;  // default {0.5, 0.4, 0.05, 0.05}
  const double loss = hierarchical_supervised_loss(pyr, labels, 2, w);
  const double oracle = brute_force_supervised(pyr, labels, 2, w.alphas);
  CHECK(loss == doctest::Approx(oracle).epsilon(1e-12));

  // weights {1,0,0,0} reduce exactly to (dice+ce)/2 of scale 0
  const ScaleWeights only0 = ScaleWeights::final_scale_only(4);
  double expect = 0.0;
  for (std::int64_t i = 0; i < 2; ++i) {
    Tensor item = pyr.maps[0].item(i);
    Tensor fg({H, W, D});
    std::copy(item.data() + H * W * D, item.data() + 2 * H * W * D, fg.data());
    Tensor lab = labels.item(i);
    expect += 0.5 * (dice_loss(fg, lab) + cross_entropy_loss(item, lab)) / 2.0;
  }
  CHECK(hierarchical_supervised_loss(pyr, labels, 2, only0) ==
        doctest::Approx(expect).epsilon(1e-12));

  // perfect prediction at every scale -> ~0
  PredictionPyramid perfect;
  Tensor one_hot({1, C, H, W, D});
  Tensor lab1({1, H, W, D});
  for (std::int64_t v = 0; v < H * W * D; ++v) {
    const bool fg = rng.uniform() < 0.5;
    lab1[static_cast<std::size_t>(v)] = fg ? 1.0 : 0.0;
    one_hot[static_cast<std::size_t>(v)] = fg ? 0.0 : 1.0;
    one_hot[static_cast<std::size_t>(H * W * D + v)] = fg ? 1.0 : 0.0;
  }
  for (int s = 0; s < 4; ++s) perfect.maps.push_back(one_hot);
  CHECK(hierarchical_supervised_loss(perfect, lab1, 1, w) < 1e-4);

  ScaleWeights bad;
  bad.alphas = {1.0, 0.0};
  CHECK_THROWS_AS(hierarchical_supervised_loss(pyr, labels, 2, bad), ConfigError);
}

TEST_CASE("worked weighting arithmetic: alpha = {0.5,0.4,0.05,0.05}") {
  // per-scale (dice+ce)/2 values {0.2,0.3,0.4,0.4} -> 0.26; per-scale MSEs
  // {0.01,0.02,0.04,0.04} -> 0.017
  const std::vector<double> alphas = {0.5, 0.4, 0.05, 0.05};
  const std::vector<double> sup = {0.2, 0.3, 0.4, 0.4};
  const std::vector<double> mse = {0.01, 0.02, 0.04, 0.04};
  double weighted_sup = 0.0, weighted_mse = 0.0;
  for (std::size_t s = 0; s < 4; ++s) {
    weighted_sup += alphas[s] * sup[s];
    weighted_mse += alphas[s] * mse[s];
  }
  CHECK(weighted_sup == doctest::Approx(0.26).epsilon(1e-12));
  CHECK(weighted_mse == doctest::Approx(0.017).epsilon(1e-12));

  // drive 0.017 through the real consistency function: student/teacher maps
  // with per-scale pointwise offsets sqrt(mse_s)
  Rng rng(7);
  PredictionPyramid student, teacher;
  for (std::size_t s = 0; s < 4; ++s) {
    Tensor m = random_probability_map(2, 2, 2, 2, 2, rng);
    Tensor t = m;
    const double off = std::sqrt(mse[s]);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += off;
    student.maps.push_back(std::move(m));
    teacher.maps.push_back(std::move(t));
  }
  ScaleWeights w;
  CHECK(hierarchical_consistency_loss(student, teacher, w) ==
        doctest::Approx(0.017).epsilon(1e-9));
}

TEST_CASE("hierarchical consistency loss: zero at equality, worked value, oracle") {
  Rng rng(13);
  PredictionPyramid a, b;
  for (int s = 0; s < 2; ++s) {
    a.maps.push_back(random_probability_map(2, 2, 3, 3, 3, rng));
    b.maps.push_back(a.maps.back());
  }
  ScaleWeights w;
  w.alphas = {0.7, 0.3};
  CHECK(hierarchical_consistency_loss(a, b, w) <= 1e-12);

  // single scale, alpha 0.5, pointwise difference 0.1 -> 0.5 * 0.01 = 0.005
  PredictionPyramid s1, t1;
  s1.maps.push_back(Tensor({1, 2, 2, 2, 2}, 0.4));
  t1.maps.push_back(Tensor({1, 2, 2, 2, 2}, 0.5));
  ScaleWeights w1;
  w1.alphas = {0.5};
  CHECK(hierarchical_consistency_loss(s1, t1, w1) == doctest::Approx(0.005).epsilon(1e-12));

  // random pyramids against the brute-force recomputation
  PredictionPyramid c;
  for (int s = 0; s < 2; ++s) c.maps.push_back(random_probability_map(2, 2, 3, 3, 3, rng));
  CHECK(hierarchical_consistency_loss(a, c, w) ==
        doctest::Approx(brute_force_consistency(a, c, w.alphas)).epsilon(1e-12));
}

TEST_CASE("zero-weight scales contribute nothing") {
  Rng rng(19);
  PredictionPyramid pyr;
  pyr.maps.push_back(random_probability_map(1, 2, 2, 2, 2, rng));
  pyr.maps.push_back(random_probability_map(1, 2, 2, 2, 2, rng));
  Tensor labels = random_binary_mask({1, 2, 2, 2}, rng);
  ScaleWeights w;
  w.alphas = {1.0, 0.0};
  const double before = hierarchical_supervised_loss(pyr, labels, 1, w);
  pyr.maps[1] = random_probability_map(1, 2, 2, 2, 2, rng);  // arbitrary change at scale 1
  CHECK(hierarchical_supervised_loss(pyr, labels, 1, w) == doctest::Approx(before).epsilon(1e-15));

  PredictionPyramid t = pyr;
  t.maps[1] = random_probability_map(1, 2, 2, 2, 2, rng);
  CHECK(hierarchical_consistency_loss(pyr, t, w) <= 1e-12);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(23);
  const std::int64_t H = 2, W = 3, D = 2;

  SUBCASE("dice") {
    Tensor p = random_tensor({H, W, D}, rng, 0.05, 0.95);
    Tensor g = random_binary_mask({H, W, D}, rng);
    Tensor grad(p.shape());
    dice_loss(p, g, 1e-5, &grad);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double fd = central_diff(&p[i], 1e-7, [&]() { return dice_loss(p, g); });
      CHECK(rel_err(grad[i], fd) < 1e-6);
    }
  }

  SUBCASE("cross entropy") {
    Tensor p = random_probability_map(1, 2, H, W, D, rng);
    Tensor p2({2, H, W, D});
    std::copy(p.data(), p.data() + p.size(), p2.data());
    Tensor g = random_binary_mask({H, W, D}, rng);
    Tensor grad(p2.shape());
    cross_entropy_loss(p2, g, &grad);
    for (std::size_t i = 0; i < p2.size(); ++i) {
      const double fd = central_diff(&p2[i], 1e-7, [&]() { return cross_entropy_loss(p2, g); });
      CHECK(rel_err(grad[i], fd) < 1e-6);
    }
  }

  SUBCASE("hierarchical supervised and consistency, combined") {
    PredictionPyramid pyr;
    pyr.maps.push_back(random_probability_map(2, 2, H, W, D, rng));
    pyr.maps.push_back(random_probability_map(2, 2, H, W, D, rng));
    PredictionPyramid teacher;
    teacher.maps.push_back(random_probability_map(2, 2, H, W, D, rng));
    teacher.maps.push_back(random_probability_map(2, 2, H, W, D, rng));
    Tensor labels = random_binary_mask({1, H, W, D}, rng);
    ScaleWeights w;
    w.alphas = {0.6, 0.4};
    const double lambda = 0.08;

    std::vector<Tensor> grads;
    for (const auto& m : pyr.maps) grads.emplace_back(m.shape());
    hierarchical_supervised_loss(pyr, labels, 1, w, &grads, 1.0);
    hierarchical_consistency_loss(pyr, teacher, w, &grads, lambda);

    auto objective = [&]() {
      return hierarchical_supervised_loss(pyr, labels, 1, w) +
             lambda * hierarchical_consistency_loss(pyr, teacher, w);
    };
    for (std::size_t s = 0; s < pyr.maps.size(); ++s)
      for (std::size_t i = 0; i < pyr.maps[s].size(); i += 3) {
        const double fd = central_diff(&pyr.maps[s][i], 1e-6, objective);
        CHECK(rel_err(grads[s][i], fd) < 1e-5);
      }
  }
}
