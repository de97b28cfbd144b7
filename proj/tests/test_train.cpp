#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gmae;

TEST(Schedule, Endpoints) {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.end_lr = 1e-9;
  c.warmup_steps = 10;
  c.total_steps = 110;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(9, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(10, c), 1e-3);
  EXPECT_NEAR(lr_at(60, c), (1e-3 + 1e-9) / 2.0, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at(110, c), 1e-9);
  EXPECT_DOUBLE_EQ(lr_at(5000, c), 1e-9);
  for (std::uint64_t s = 0; s + 1 < 10; ++s) EXPECT_LT(lr_at(s, c), lr_at(s + 1, c));
  for (std::uint64_t s = 10; s < 110; ++s) EXPECT_GT(lr_at(s, c), lr_at(s + 1, c));
}

TEST(Schedule, AutoTotalAndValidation) {
  TrainConfig c;
  c.max_epochs = 100;
  c.batch_size = 32;
  c.warmup_steps = 10;
  EXPECT_EQ(c.resolved(188).total_steps, 600u);
  c.warmup_steps = 600;
  try {
    (void)c.resolved(188);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("--warmup"), std::string::npos);
  }
  TrainConfig bad;
  bad.total_steps = 100;
  bad.warmup_steps = 5;
  bad.end_lr = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(EarlyStop, StopsPatienceEpochsAfterBest) {
  EarlyStopper s;
  s.patience = 50;
  std::size_t stopped = 0;
  for (std::size_t e = 0; e < 1000; ++e) {
    s.update(e, e <= 10 ? 10.0 - static_cast<double>(e) : 0.0);
    if (s.should_stop()) {
      stopped = e;
      break;
    }
  }
  EXPECT_EQ(s.best_epoch, 10u);
  EXPECT_EQ(stopped, 60u);
}

TEST(EarlyStop, TinyImprovementsDoNotReset) {
  EarlyStopper s;
  s.patience = 5;
  s.min_rel_improvement = 1e-3;
  s.update(0, 1.0);
  for (std::size_t e = 1; e <= 5; ++e) EXPECT_FALSE(s.update(e, 1.0 - 1e-5 * static_cast<double>(e)));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best, 1.0);
}

TEST(Rng, StateRoundTrip) {
  std::mt19937_64 a(7);
  a.discard(123);
  auto b = rng_from_state(rng_state(a));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
  EXPECT_THROW(rng_from_state("not a state"), CheckpointError);
}

TEST(Pretrain, LossDecreasesAndBestIsKept) {
  const auto ds = testutil::rings_and_stars(16);
  Pretrainer t(ds, testutil::small_model(), testutil::short_training(40));
  t.run();
  const auto& h = t.state().history;
  ASSERT_EQ(h.size(), 40u);
  EXPECT_EQ(h.back().step, 80u);
  const auto& st = t.state().stopper;
  EXPECT_LT(st.best, 0.9 * h.front().loss);
  EXPECT_EQ(h[st.best_epoch].loss, st.best);
  EXPECT_TRUE(t.finished());
  EXPECT_FALSE(t.run_epoch());
}

TEST(Pretrain, SameSeedSameHistory) {
  const auto ds = testutil::rings_and_stars(12);
  auto cfg = testutil::short_training(5);
  cfg.seed = 3;
  const auto [pa, ha] = pretrain(ds, testutil::small_model(), cfg);
  const auto [pb, hb] = pretrain(ds, testutil::small_model(), cfg);
  EXPECT_EQ(ha, hb);
  const auto la = pa.parameters(), lb = pb.parameters();
  for (std::size_t i = 0; i < la.size(); ++i) {
    EXPECT_EQ(testutil::max_abs_diff(la[i].tensor.data(), lb[i].tensor.data()), 0.0) << la[i].name;
  }
  cfg.seed = 4;
  const auto [pc, hc] = pretrain(ds, testutil::small_model(), cfg);
  EXPECT_NE(ha.back().loss, hc.back().loss);
}

TEST(Pretrain, SingleNodeGraphsAreSkipped) {
  auto ds = testutil::rings_and_stars(6);
  Graph lone;
  lone.num_nodes = 1;
  lone.node_labels = {0};
  lone.target = std::int64_t{0};
  ds.graphs.push_back(lone);
  Pretrainer t(ds, testutil::small_model(), testutil::short_training(6));
  t.run();
  // 6 usable graphs, batch 8: one step per epoch
  EXPECT_EQ(t.state().step, 6u);
}

TEST(Pretrain, EarlyStopEndsTraining) {
  const auto ds = testutil::rings_and_stars(8);
  auto cfg = testutil::short_training(500);
  cfg.patience = 3;
  cfg.min_rel_improvement = 0.5;  // nothing after the first epoch counts
  Pretrainer t(ds, testutil::small_model(), cfg);
  t.run();
  EXPECT_EQ(t.state().history.size(), 4u);
}

TEST(Finetune, LearnsRingsVersusStars) {
  const auto ds = testutil::rings_and_stars(20);
  const auto params = ModelParams::init(testutil::small_model(), FeatureSchema::of(ds), 1);
  const auto head = TaskHead::for_dataset(ds, 8, 1);
  FinetuneConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 1e-2;
  cfg.batch_size = 8;
  const auto before = params.encoder.tables.centrality.clone();
  const auto r = finetune(params, ds, head, cfg, &ds);
  EXPECT_EQ(r.history.size(), 40u);
  EXPECT_EQ(r.history.back().train_metric, 1.0);
  EXPECT_EQ(r.history.back().val_metric, 1.0);
  EXPECT_EQ(testutil::max_abs_diff(before.data(), params.encoder.tables.centrality.data()), 0.0);
  EXPECT_GT(testutil::max_abs_diff(before.data(), r.params.encoder.tables.centrality.data()), 0.0);
}

TEST(Finetune, FrozenEncoderOnlyMovesHead) {
  const auto ds = testutil::rings_and_stars(10);
  const auto params = ModelParams::init(testutil::small_model(), FeatureSchema::of(ds), 2);
  FinetuneConfig cfg;
  cfg.epochs = 5;
  cfg.freeze_encoder = true;
  const auto head = TaskHead::for_dataset(ds, 8, 2);
  const auto r = finetune(params, ds, head, cfg);
  const auto a = params.encoder_parameters(), b = r.params.encoder_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(testutil::max_abs_diff(a[i].tensor.data(), b[i].tensor.data()), 0.0);
  EXPECT_GT(testutil::max_abs_diff(head.weight.data(), r.head.weight.data()), 0.0);
}

TEST(Finetune, RegressionReducesMae) {
  auto ds = testutil::rings_and_stars(12);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.graphs[i].target = i % 2 ? 2.5 : -1.0;
  finalize_schema(ds);
  ASSERT_EQ(ds.target_kind, TargetKind::regression);
  const auto params = ModelParams::init(testutil::small_model(), FeatureSchema::of(ds), 3);
  FinetuneConfig cfg;
  cfg.epochs = 60;
  cfg.lr = 1e-2;
  const auto r = finetune(params, ds, TaskHead::for_dataset(ds, 8, 3), cfg);
  EXPECT_LT(r.history.back().train_metric, 0.5 * r.history.front().train_metric);
}

TEST(Finetune, HeadMismatchIsConfigError) {
  const auto ds = testutil::rings_and_stars(4);
  const auto params = ModelParams::init(testutil::small_model(), FeatureSchema::of(ds), 4);
  EXPECT_THROW(finetune(params, ds, TaskHead::init(HeadKind::classification, 8, 3, 0)), ConfigError);
  EXPECT_THROW(finetune(params, ds, TaskHead::init(HeadKind::regression, 8, 1, 0)), ConfigError);
  EXPECT_THROW(finetune(params, ds, TaskHead::init(HeadKind::classification, 4, 2, 0)), ConfigError);
}
