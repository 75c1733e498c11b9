#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "neurbf/field.hpp"
#include "neurbf/pipeline.hpp"
#include "test_util.hpp"

using namespace neurbf;
using neurbf::testing::random_points;
using neurbf::testing::random_spd;

namespace {

template <int D>
HybridField<D> small_field(TaskKind task, bool with_rbf, std::uint64_t seed) {
  Rng rng(seed);
  std::optional<RbfEncoding<D>> rbf;
  if (with_rbf) {
    const auto centers = random_points<D>(12, rng);
    std::vector<SymMatrix<D>> inv;
    for (int i = 0; i < 12; ++i) inv.push_back(random_spd<D>(rng, 3.0, 2.0));
    rbf.emplace(centers, inv, freq_ladder(0.5, 16.0, 4), RbfOptions{4, true, true});
  }
  DecoderConfig dec;
  dec.width = 16;
  dec.freq_low = 1.0;
  dec.freq_high = 50.0;
  HybridField<D> f(task, std::move(rbf), HashGrid<D>(HashGridConfig{3, 2, 6, 3, 12}), dec, 1e-2, 1e-2);
  f.init_params(rng, 0.5, 0.5);
  return f;
}

template <int D>
Batch<D> random_batch(std::size_t n, int outputs, Rng& rng) {
  Batch<D> b;
  b.points = random_points<D>(n, rng);
  for (std::size_t i = 0; i < n * static_cast<std::size_t>(outputs); ++i) b.targets.push_back(rng.uniform(0.05, 0.95));
  return b;
}

RunConfig tiny_image_config() {
  RunConfig c = RunConfig::defaults(TaskKind::image);
  c.budget = 1000;
  c.rbf.features = 4;
  c.rbf.freq_low = 0.5;
  c.rbf.freq_high = 16.0;
  c.grid.levels = 2;
  c.grid.res_min = 2;
  c.grid.res_max = 8;
  c.decoder.width = 16;
  c.decoder.freq_high = 50.0;
  c.train.steps = 400;
  c.train.batch = 64;
  c.train.eval_every = 100;
  c.train.lr_features = 2e-2;
  c.train.lr_mlp = 5e-3;
  c.rbf.init_scale = 0.1;
  c.grid.init_scale = 0.1;
  return c;
}

ImageBuffer two_tone(int n) {
  ImageBuffer img(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = c < n / 2 ? 0.2 : 0.8;
  return img;
}

}  // namespace

TEST(Loss, Examples) {
  const std::vector<double> p{0.1}, t{0.0};
  EXPECT_NEAR(loss_l2(p, t).value, 0.01, 1e-15);
  EXPECT_NEAR(loss_l2(p, t).grad[0], 0.2, 1e-15);
  const std::vector<double> p2{2.0}, t2{1.0};
  EXPECT_NEAR(loss_mape(p2, t2).value, 1.0 / 1.01, 1e-15);
  EXPECT_NEAR(loss_mape(p2, t2).value, 0.9901, 1e-4);
  const std::vector<double> same{0.3, -0.4};
  EXPECT_EQ(loss_l2(same, same).value, 0.0);
  EXPECT_EQ(loss_mape(same, same).value, 0.0);
  EXPECT_EQ(loss_mape(same, same).grad[1], 0.0);
}

TEST(Loss, MeanOverEntries) {
  const std::vector<double> p{1.0, 0.0, 0.5, 0.5}, t{0.0, 0.0, 0.5, 0.0};
  EXPECT_NEAR(loss_l2(p, t).value, (1.0 + 0.25) / 4.0, 1e-15);
  EXPECT_NEAR(loss_mape(p, t).value, (100.0 + 0.0 + 0.0 + 50.0) / 4.0, 1e-12);
}

TEST(HybridField, GradientCheckPerSegmentImage) {
  auto f = small_field<2>(TaskKind::image, true, 80);
  Rng rng(81);
  const auto batch = random_batch<2>(64, 3, rng);
  LossEval eval = [&](bool g) { return f.loss(batch, LossKind::l2, g); };
  for (const auto& seg : f.store().segments()) {
    Rng probe(82);
    const auto r = finite_diff_check_segment(eval, f.store(), seg.name, 12, 1e-6, probe);
    EXPECT_LT(r.max_rel_error, 1e-4) << seg.name;
  }
}

TEST(HybridField, GradientCheckPerSegmentSdf) {
  auto f = small_field<3>(TaskKind::sdf, true, 83);
  Rng rng(84);
  auto batch = random_batch<3>(48, 1, rng);
  for (double& t : batch.targets) t -= 0.5;
  LossEval eval = [&](bool g) { return f.loss(batch, LossKind::l2, g); };
  for (const auto& seg : f.store().segments()) {
    Rng probe(85);
    const auto r = finite_diff_check_segment(eval, f.store(), seg.name, 12, 1e-6, probe);
    EXPECT_LT(r.max_rel_error, 1e-4) << seg.name;
  }
}

TEST(HybridField, GridOnlyVariant) {
  auto f = small_field<2>(TaskKind::image, false, 86);
  EXPECT_FALSE(f.has_rbf());
  EXPECT_EQ(f.input_dim(), 6);
  Rng rng(87);
  const auto batch = random_batch<2>(32, 3, rng);
  LossEval eval = [&](bool g) { return f.loss(batch, LossKind::l2, g); };
  Rng probe(88);
  EXPECT_LT(finite_diff_check(eval, f.store(), 40, 1e-6, probe).max_rel_error, 1e-4);
}

TEST(HybridField, ThreadCountDoesNotChangeResults) {
  auto f = small_field<2>(TaskKind::image, true, 89);
  Rng rng(90);
  const auto batch = random_batch<2>(3001, 3, rng);
  f.set_threads(1);
  f.store().zero_grads();
  const double l1 = f.loss(batch, LossKind::l2, true);
  const std::vector<double> g1(f.store().grads().begin(), f.store().grads().end());
  f.set_threads(4);
  f.store().zero_grads();
  const double l4 = f.loss(batch, LossKind::l2, true);
  EXPECT_EQ(l1, l4);
  for (std::size_t i = 0; i < g1.size(); ++i) ASSERT_EQ(g1[i], f.store().grads()[i]);
}

TEST(HybridField, BatchingIsTransparent) {
  auto f = small_field<2>(TaskKind::image, true, 91);
  Rng rng(92);
  const auto pts = random_points<2>(700, rng);
  const auto all = f.predict(pts);
  for (std::size_t s = 0; s < pts.size(); s += 37) {
    const auto one = f.predict(std::span<const Point<2>>(&pts[s], 1));
    for (int o = 0; o < 3; ++o) ASSERT_NEAR(one[static_cast<std::size_t>(o)], all[s * 3 + static_cast<std::size_t>(o)], 1e-12);
  }
}

TEST(HybridField, CachedNeighborhoodsMatchFreshOnes) {
  auto f = small_field<2>(TaskKind::image, true, 93);
  Rng rng(94);
  auto batch = random_batch<2>(500, 3, rng);
  const double fresh = f.loss(batch, LossKind::l2, false);
  f.precompute_neighborhoods(batch.points, batch.nb_index, batch.nb_weight);
  EXPECT_EQ(f.loss(batch, LossKind::l2, false), fresh);
}

TEST(HybridField, ImageOutputsStayInUnitRange) {
  auto f = small_field<2>(TaskKind::image, true, 95);
  Rng rng(96);
  for (double v : f.predict(random_points<2>(1000, rng))) {
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Train, NonFiniteLossAborts) {
  auto f = small_field<2>(TaskKind::image, true, 97);
  Adam adam(f.store().size());
  BatchSource<2> bad = [](std::int64_t step, Rng& rng, Batch<2>& b) {
    b = Batch<2>{};
    b.points = random_points<2>(8, rng);
    b.targets.assign(24, step == 3 ? std::nan("") : 0.5);
  };
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch = 8;
  try {
    train<2>(f, adam, bad, cfg, {});
    FAIL() << "expected a training error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::training);
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
  }
  EXPECT_EQ(adam.step_count(), 3);
}

TEST(Train, MetricCurveIncludesEndpoints) {
  auto f = small_field<2>(TaskKind::image, true, 98);
  Adam adam(f.store().size());
  Rng data(99);
  const auto fixed = random_batch<2>(32, 3, data);
  BatchSource<2> src = [&](std::int64_t, Rng&, Batch<2>& b) { b = fixed; };
  TrainConfig cfg;
  cfg.steps = 25;
  cfg.batch = 32;
  cfg.eval_every = 10;
  int calls = 0;
  const auto rep = train<2>(f, adam, src, cfg, [&] { return static_cast<double>(calls++); });
  ASSERT_EQ(rep.metric.size(), 4u);
  EXPECT_EQ(rep.metric[0].step, 0);
  EXPECT_EQ(rep.metric[1].step, 10);
  EXPECT_EQ(rep.metric[2].step, 20);
  EXPECT_EQ(rep.metric[3].step, 25);
  EXPECT_EQ(rep.loss.size(), 25u);
  EXPECT_LT(rep.loss.back(), rep.loss.front());
}

TEST(ImageFit, OverfitsTwoToneImage) {
  ImageFit fit(two_tone(8), tiny_image_config());
  EXPECT_GE(fit.plan().rbf_count, 4u);
  const auto rep = fit.train();
  EXPECT_GT(fit.evaluate().psnr, 40.0);
  EXPECT_EQ(rep.metric.back().value, fit.evaluate().psnr);
}

TEST(ImageFit, SameSeedIsBitIdentical) {
  auto c = tiny_image_config();
  c.train.steps = 60;
  ImageFit a(two_tone(8), c), b(two_tone(8), c);
  const auto ra = a.train(), rb = b.train();
  EXPECT_EQ(ra.loss, rb.loss);
  c.seed = 1;
  ImageFit d(two_tone(8), c);
  EXPECT_NE(d.train().loss, ra.loss);
}

TEST(Budget, DefaultImagePlan) {
  const auto plan = plan_budget<2>(RunConfig::defaults(TaskKind::image));
  EXPECT_EQ(plan.log2_table, 11);
  EXPECT_EQ(plan.grid_params, 24802u);
  EXPECT_EQ(plan.decoder_params, 7491u);
  EXPECT_EQ(plan.rbf_count, 2585u);
  EXPECT_EQ(plan.trainable_params, 115045u);
  // Total bookkeeping never exceeds the budget.
  EXPECT_LE(plan.grid_params + plan.decoder_params + plan.rbf_params, 128000u);
}

TEST(Budget, NeverExceedsBudget) {
  for (std::int64_t P : {20000, 50000, 128000, 300000, 1000000}) {
    for (bool rbf : {true, false}) {
      auto c = RunConfig::defaults(TaskKind::image);
      c.budget = P;
      c.rbf.enabled = rbf;
      const auto plan = plan_budget<2>(c);
      EXPECT_LE(plan.grid_params + plan.decoder_params + plan.rbf_params, static_cast<std::size_t>(P));
      if (rbf) EXPECT_LE(static_cast<double>(plan.grid_params), 0.3 * static_cast<double>(P));
    }
  }
}

TEST(Budget, TooSmallForNeighborhoodIsConfigError) {
  auto c = RunConfig::defaults(TaskKind::image);
  c.budget = 9000;
  try {
    plan_budget<2>(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("neighborhood"), std::string::npos);
  }
}
