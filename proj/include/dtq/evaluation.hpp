#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtq/trading_env.hpp"
#include "dtq/training.hpp"
#include "dtq/util.hpp"

namespace dtq {

struct EquityCurve {
  std::vector<std::string> dates;
  std::vector<double> values;

  std::vector<double> returns() const;  // value[i]/value[i-1] - 1
  void validate() const;
};

// (final/initial - 1) * 100
double cumulative_return(const EquityCurve& curve);
// min_t (value[t]/max_{s<=t} value[s] - 1) * 100, always <= 0
double max_drawdown(const EquityCurve& curve);
// sqrt(periods) * mean(r - rf) / sample_std(r). Zero variance throws
// UndefinedMetricError.
double sharpe_ratio(const EquityCurve& curve, double risk_free_daily = 0.0, int periods_per_year = 252);

void write_equity_csv(const std::filesystem::path& path, const EquityCurve& curve);
EquityCurve read_equity_csv(const std::filesystem::path& path);

struct SeedMetrics {
  std::uint64_t seed = 0;
  double cumulative_return_pct = 0.0;
  double mdd_pct = 0.0;
  std::optional<double> sharpe;  // empty when undefined
  std::string equity_csv;        // file name relative to the report
};

SeedMetrics compute_metrics(std::uint64_t seed, const EquityCurve& curve);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std over the rows where the metric is defined
  std::size_t count = 0;
};

MeanStd mean_std(std::span<const double> values);

struct MetricsReport {
  std::vector<SeedMetrics> rows;
  MeanStd cumulative_return_pct, mdd_pct, sharpe;
  Json metadata = Json::object();

  // Recomputes the aggregate block from rows.
  void aggregate();
  Json to_json() const;
  static MetricsReport from_json(const Json& j);
};

// Decision Transformer conditioned on a return target that is decremented by
// every collected reward.
class DTPolicy : public Policy {
 public:
  DTPolicy(const DecisionTransformer& model, const NormStats& stats) : model_(model), stats_(stats) {}
  std::vector<double> act(const PolicyContext& ctx) override;
  std::string name() const override { return "decision_transformer"; }

 private:
  const DecisionTransformer& model_;
  const NormStats& stats_;
};

class BCPolicy : public Policy {
 public:
  BCPolicy(const BCModel& model, const NormStats& stats) : model_(model), stats_(stats) {}
  std::vector<double> act(const PolicyContext& ctx) override;
  std::string name() const override { return "bc"; }

 private:
  const BCModel& model_;
  const NormStats& stats_;
};

struct Evaluation {
  MetricsReport report;
  std::vector<EquityCurve> curves;  // one per seed
};

// Rolls the checkpoint's policy over `panel` once per seed. When out_dir is
// given, writes report.json and equity_<seed>.csv there.
Evaluation evaluate_checkpoint(const Checkpoint& checkpoint, const FeaturePanel& panel, const EnvConfig& env,
                               std::span<const std::uint64_t> seeds,
                               const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Rebuilds a report from the equity CSVs named in an existing report.
MetricsReport report_from_equity_csvs(const std::filesystem::path& report_path);

// Grouped table text: one line per (group, init) with mean ± std columns.
struct ComparisonRow {
  std::string group;
  std::string variant;
  MetricsReport report;
};
std::string format_comparison_table(std::span<const ComparisonRow> rows);

}  // namespace dtq
