#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "dtq/errors.hpp"
#include "dtq/trading_env.hpp"
#include "dtq/training.hpp"
#include "fixtures.hpp"

using namespace dtq;
using namespace dtq::testing;

namespace {

struct Scalar {
  Tensor w = Tensor({1}, {0.0}, true);
  std::vector<ParamRef> refs() { return {{"w", &w}}; }
};

std::vector<Trajectory> momentum_data(std::size_t tickers, std::size_t days, std::uint64_t seed) {
  const FeaturePanel p = synthetic_features(tickers, days, seed);
  return {scripted_expert(ExpertKind::kMomentum, p, EnvConfig{}).trajectory};
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Scalar s;
  s.w.mutable_data()[0] = 1.0;
  OptimState opt;
  TrainConfig c;
  c.weight_decay = 0;
  const std::vector<std::vector<double>> g{{1.0}};
  adam_step(s.refs(), g, opt, c);
  EXPECT_NEAR(s.w.data()[0], 1.0 - c.learning_rate, 1e-10);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Scalar s;
  s.w.mutable_data()[0] = 2.5;
  OptimState opt;
  TrainConfig c;
  c.weight_decay = 0;
  const std::vector<std::vector<double>> g{{0.0}};
  for (int i = 0; i < 5; ++i) adam_step(s.refs(), g, opt, c);
  EXPECT_EQ(s.w.data()[0], 2.5);
}

TEST(Adam, ConvergesOnQuadratic) {
  Scalar s;
  OptimState opt;
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0;
  for (int i = 0; i < 100; ++i) {
    const std::vector<std::vector<double>> g{{2.0 * (s.w.data()[0] - 3.0)}};
    adam_step(s.refs(), g, opt, c);
  }
  EXPECT_LT(std::abs(s.w.data()[0] - 3.0), 0.1);
}

TEST(Adam, NanGradientNamesParameter) {
  Scalar s;
  OptimState opt;
  const std::vector<std::vector<double>> g{{std::numeric_limits<double>::quiet_NaN()}};
  try {
    adam_step(s.refs(), g, opt, TrainConfig{});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
}

TEST(Adam, FrozenParameterUntouched) {
  Scalar s;
  s.w.set_requires_grad(false);
  OptimState opt;
  const std::vector<std::vector<double>> g{{1.0}};
  adam_step(s.refs(), g, opt, TrainConfig{});
  EXPECT_EQ(s.w.data()[0], 0.0);
}

TEST(Clip, ScalesToMaxNorm) {
  std::vector<std::vector<double>> g{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<std::vector<double>> h{{0.1}};
  clip_global_norm(h, 1.0);
  EXPECT_EQ(h[0][0], 0.1);
}

TEST(Counts, ExpectedMatchesBuiltModel) {
  for (bool with_lora : {true, false}) {
    DecisionTransformer m = toy_model(7, 3, 1, 8, with_lora);
    std::optional<LoRAConfig> l;
    if (with_lora) l = m.adapters()->config();
    const TrainableCounts want = expected_trainable_count(m.backbone().config, m.config(), l);
    const TrainableCounts got = m.trainable_param_count();
    EXPECT_EQ(got.lora, want.lora);
    EXPECT_EQ(got.embedders, want.embedders);
    EXPECT_EQ(got.head, want.head);
    EXPECT_EQ(got.backbone, want.backbone);
  }
}

TEST(BC, BudgetWithinTenPercent) {
  const DTConfig dt = toy_dt(175, 29, 20);
  const TrainableCounts c = expected_trainable_count(GPTConfig::gpt2_small(), dt, LoRAConfig{});
  for (std::size_t target : {c.lora, c.lora + c.head, c.total()}) {
    const std::size_t h = BCModel::hidden_for_budget(175, 29, target);
    const double n = static_cast<double>(BCModel::count_for(175, 29, h));
    EXPECT_LT(std::abs(n / static_cast<double>(target) - 1.0), 0.1) << target;
  }
}

TEST(BC, IgnoresReturnAndHistoryByConstruction) {
  BCModel m(4, 2, 16, 1);
  const Tensor s({1, 4}, {0.1, -0.2, 0.3, 0.0});
  const Tensor a = m.forward(s), b = m.forward(s);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), 2 * sizeof(double)), 0);
  EXPECT_EQ(m.param_count(), BCModel::count_for(4, 2, 16));
}

TEST(BC, OverfitsSingleTrajectory) {
  const auto data = momentum_data(3, 120, 4);
  const NormStats stats = fit_normalizer(data);
  BCModel m(data[0].state_dim(), data[0].action_dim(), 64, 2);
  TrainConfig c;
  c.iterations = 1500;
  c.seed = 3;
  const TrainResult r = train_bc(m, data, stats, c);
  EXPECT_LT(r.final_loss, 1e-2);
}

TEST(TrainDT, LossFallsAndBackboneStaysFrozen) {
  const auto data = momentum_data(2, 80, 5);
  const NormStats stats = fit_normalizer(data);
  DecisionTransformer m = toy_model(data[0].state_dim(), data[0].action_dim(), 6);
  std::vector<Tensor> before;
  m.backbone().visit([&](const std::string&, const Tensor& t) { before.push_back(t.clone()); });
  TrainConfig c;
  c.iterations = 60;
  c.batch_size = 16;
  c.seed = 1;
  const double start = dataset_action_mse(m, data, stats);
  const TrainResult r = train_dt(m, data, stats, c);
  EXPECT_EQ(r.losses.size(), 60u);
  EXPECT_LT(r.final_loss, start);
  std::size_t i = 0;
  m.backbone().visit([&](const std::string& name, const Tensor& t) {
    EXPECT_EQ(std::memcmp(t.data().data(), before[i].data().data(), t.numel() * sizeof(double)), 0) << name;
    ++i;
  });
}

TEST(TrainDT, SameSeedSameWeights) {
  const auto data = momentum_data(2, 60, 5);
  const NormStats stats = fit_normalizer(data);
  TrainConfig c;
  c.iterations = 10;
  c.batch_size = 8;
  c.seed = 20742;
  auto run = [&] {
    DecisionTransformer m = toy_model(data[0].state_dim(), data[0].action_dim(), 6);
    train_dt(m, data, stats, c);
    TensorContainer out;
    m.export_to(out);
    return out;
  };
  const TensorContainer a = run(), b = run();
  for (const auto& name : a.names()) {
    const Tensor& x = a.get(name);
    EXPECT_EQ(std::memcmp(x.data().data(), b.get(name).data().data(), x.numel() * sizeof(double)), 0) << name;
  }
}

TEST(TrainDT, DivergenceAborts) {
  const auto data = momentum_data(2, 60, 5);
  NormStats stats = fit_normalizer(data);
  DecisionTransformer m = toy_model(data[0].state_dim(), data[0].action_dim(), 6);
  // Huge head weights saturate tanh; large targets then push the loss past the limit.
  std::vector<Trajectory> bad = data;
  for (auto& a : bad[0].actions)
    for (double& x : a) x = 2e3;
  TrainConfig c;
  c.iterations = 2;
  c.batch_size = 4;
  EXPECT_THROW(train_dt(m, bad, stats, c), TrainingError);
}

TEST(Checkpoint, ReloadGivesIdenticalPredictions) {
  const auto dir = scratch_dir("ckpt");
  const auto data = momentum_data(2, 50, 5);
  Checkpoint ck;
  ck.dt = toy_model(data[0].state_dim(), data[0].action_dim(), 6);
  randomize_lora_b(*ck.dt, 3);
  ck.lora = ck.dt->adapters()->config();
  ck.stats = fit_normalizer(data);
  ck.env = EnvConfig{}.to_json();
  ck.init = "random";
  ck.expert = "momentum";
  ck.save(dir);
  const Checkpoint back = Checkpoint::load(dir);
  std::mt19937_64 rng(1);
  const WindowBatch batch = random_batch(3, 8, data[0].state_dim(), data[0].action_dim(), rng, {0, 2, 5});
  const Tensor x = ck.dt->predict_actions(batch), y = back.dt->predict_actions(batch);
  EXPECT_EQ(std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(double)), 0);
  back.save(dir / "again");
  EXPECT_EQ(file_bytes(dir / "model.bin"), file_bytes(dir / "again" / "model.bin"));
  EXPECT_EQ(file_bytes(dir / "model.json"), file_bytes(dir / "again" / "model.json"));
}

TEST(Checkpoint, MissingDirectoryIsIoError) { EXPECT_THROW(Checkpoint::load("/nonexistent/ckpt"), IoError); }
