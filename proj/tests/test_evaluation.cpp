#include <gtest/gtest.h>

#include "dtq/errors.hpp"
#include "dtq/evaluation.hpp"
#include "fixtures.hpp"
#include "metric_oracles.hpp"

using namespace dtq;
using namespace dtq::testing;

namespace {

EquityCurve curve(std::vector<double> v) { return EquityCurve{{}, std::move(v)}; }

Checkpoint tiny_checkpoint(const std::vector<Trajectory>& data, std::uint64_t seed) {
  Checkpoint ck;
  ck.dt = toy_model(data[0].state_dim(), data[0].action_dim(), seed);
  randomize_lora_b(*ck.dt, seed + 1, 0.2);
  ck.lora = ck.dt->adapters()->config();
  ck.stats = fit_normalizer(data);
  ck.env = EnvConfig{}.to_json();
  ck.init = "random";
  ck.expert = "momentum";
  ck.eval_target_return = data[0].rtg.front();
  return ck;
}

}  // namespace

TEST(Metrics, CumulativeReturnExamples) {
  EXPECT_NEAR(cumulative_return(curve({1'000'000, 1'346'900})), 34.69, 1e-9);
  EXPECT_EQ(cumulative_return(curve({5, 5, 5})), 0.0);
  EXPECT_NEAR(cumulative_return(curve({100, 110, 121})), 21.0, 1e-12);
}

TEST(Metrics, DrawdownExamples) {
  EXPECT_NEAR(max_drawdown(curve({100, 120, 90, 110})), -25.0, 1e-12);
  EXPECT_EQ(max_drawdown(curve({1, 2, 3, 4})), 0.0);
}

TEST(Metrics, SharpeExamples) {
  // Returns +1%, -1%, +1%, -1% have zero mean.
  const double a = 100, b = a * 1.01, c = b * 0.99, d = c * 1.01, e = d * 0.99;
  EXPECT_NEAR(sharpe_ratio(curve({a, b, c, d, e})), 0.0, 1e-12);
  EXPECT_THROW(sharpe_ratio(curve({100, 101, 102.01, 103.0301})), UndefinedMetricError);
  EXPECT_THROW(sharpe_ratio(curve({100, 101})), ContractError);
}

TEST(Metrics, RandomCurvesMatchOracles) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const EquityCurve c = random_curve(rng);
    EXPECT_LT(rel_gap(max_drawdown(c), mdd_all_pairs(c.values)), 1e-12);
    EXPECT_LT(rel_gap(cumulative_return(c), cumulative_return_oracle(c.values)), 1e-9);
    EXPECT_LT(rel_gap(sharpe_ratio(c), sharpe_oracle(c.values)), 1e-9);
  }
}

TEST(Metrics, InvariantToCurrencyScale) {
  std::mt19937_64 rng(2);
  EquityCurve c = random_curve(rng);
  EquityCurve s = c;
  for (double& v : s.values) v *= 37.5;
  EXPECT_NEAR(cumulative_return(c), cumulative_return(s), 1e-9);
  EXPECT_NEAR(max_drawdown(c), max_drawdown(s), 1e-9);
  EXPECT_NEAR(sharpe_ratio(c), sharpe_ratio(s), 1e-9);
}

TEST(Metrics, RiskFreeShiftsMean) {
  std::mt19937_64 rng(3);
  const EquityCurve c = random_curve(rng);
  EXPECT_LT(rel_gap(sharpe_ratio(c, 1e-4, 252), sharpe_oracle(c.values, 1e-4, 252)), 1e-9);
}

TEST(Report, UndefinedSharpeStoredAsNull) {
  MetricsReport r;
  r.rows.push_back(compute_metrics(1, curve({100, 101, 102.01})));
  r.rows.push_back(compute_metrics(2, curve({100, 99, 101})));
  r.aggregate();
  EXPECT_FALSE(r.rows[0].sharpe.has_value());
  EXPECT_EQ(r.sharpe.count, 1u);
  const Json j = r.to_json();
  EXPECT_TRUE(j["per_seed"][0]["sharpe"].is_null());
  const MetricsReport back = MetricsReport::from_json(j);
  EXPECT_EQ(back.sharpe.count, 1u);
  EXPECT_EQ(back.cumulative_return_pct.mean, r.cumulative_return_pct.mean);
}

TEST(Report, MeanStdIsPopulation) {
  const std::vector<double> v{1, 3};
  const MeanStd m = mean_std(v);
  EXPECT_EQ(m.mean, 2.0);
  EXPECT_EQ(m.std, 1.0);
}

TEST(Evaluate, DeterministicAcrossSeedsAndRebuildable) {
  const auto dir = scratch_dir("evaluate");
  const FeaturePanel p = synthetic_features(2, 50, 7);
  const std::vector<Trajectory> data{scripted_expert(ExpertKind::kMomentum, p, EnvConfig{}).trajectory};
  const Checkpoint ck = tiny_checkpoint(data, 3);
  const std::vector<std::uint64_t> seeds{20742, 55230, 85125, 96921, 67851};
  const Evaluation ev = evaluate_checkpoint(ck, p, EnvConfig{}, seeds, dir);
  ASSERT_EQ(ev.report.rows.size(), 5u);
  EXPECT_EQ(ev.report.cumulative_return_pct.std, 0.0);
  EXPECT_EQ(ev.report.mdd_pct.std, 0.0);
  const MetricsReport rebuilt = report_from_equity_csvs(dir / "report.json");
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(rebuilt.rows[i].cumulative_return_pct, ev.report.rows[i].cumulative_return_pct, 1e-9);
    EXPECT_NEAR(rebuilt.rows[i].mdd_pct, ev.report.rows[i].mdd_pct, 1e-9);
  }
  EXPECT_EQ(ev.report.metadata["date_range"][0], p.prices.dates.front());
}

TEST(Evaluate, SingleSeedEqualsItsAggregate) {
  const FeaturePanel p = synthetic_features(2, 40, 8);
  const std::vector<Trajectory> data{scripted_expert(ExpertKind::kMomentum, p, EnvConfig{}).trajectory};
  const std::vector<std::uint64_t> seeds{1};
  const Evaluation ev = evaluate_checkpoint(tiny_checkpoint(data, 4), p, EnvConfig{}, seeds);
  EXPECT_EQ(ev.report.cumulative_return_pct.mean, ev.report.rows[0].cumulative_return_pct);
  EXPECT_EQ(ev.report.cumulative_return_pct.std, 0.0);
}

TEST(Evaluate, WrongPanelWidthThrows) {
  const FeaturePanel p = synthetic_features(2, 40, 8);
  const std::vector<Trajectory> data{scripted_expert(ExpertKind::kMomentum, p, EnvConfig{}).trajectory};
  const std::vector<std::uint64_t> seeds{1};
  EXPECT_THROW(evaluate_checkpoint(tiny_checkpoint(data, 4), synthetic_features(3, 40, 8), EnvConfig{}, seeds),
               DimensionError);
}

TEST(DTPolicy, ReconstructsReturnsToGoFromRewards) {
  // With the expert's own history, the window the policy builds at step t
  // must equal the training window at anchor t (except the current action).
  const FeaturePanel p = synthetic_features(2, 40, 9);
  const RolloutResult expert = scripted_expert(ExpertKind::kMomentum, p, EnvConfig{});
  const Trajectory& traj = expert.trajectory;
  const NormStats stats = fit_normalizer(std::vector<Trajectory>{traj});
  const std::size_t t = 12;
  const WindowSample w = sample_window(traj, t, 8, stats);
  // The remaining target after t steps is the trajectory's rtg at t.
  double remaining = traj.rtg.front();
  for (std::size_t j = 0; j < t; ++j) remaining -= traj.rewards[j];
  EXPECT_NEAR(remaining, traj.rtg[t], 1e-9);
  std::vector<double> target(t + 1);
  target[t] = remaining;
  for (std::size_t j = t; j-- > t - 7;) target[j] = target[j + 1] + traj.rewards[j];
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(target[t - 7 + k] / stats.rtg_scale, w.rtg[k], 1e-9);
}

TEST(Table, GroupedLayout) {
  MetricsReport r;
  r.rows.push_back(compute_metrics(1, curve({100, 110, 105})));
  r.aggregate();
  const std::vector<ComparisonRow> rows{{"momentum", "pretrained", r}, {"momentum", "random", r}};
  const std::string t = format_comparison_table(rows);
  EXPECT_NE(t.find("pretrained"), std::string::npos);
  EXPECT_NE(t.find("5.00 ± 0.00"), std::string::npos);
  EXPECT_NE(t.find("cum_return_%"), std::string::npos);
}
