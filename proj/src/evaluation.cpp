#include "dtq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dtq/errors.hpp"

namespace dtq {

void EquityCurve::validate() const {
  if (values.size() < 2) throw ContractError("equity curve needs at least two values");
  if (!dates.empty() && dates.size() != values.size()) throw DataError("equity curve dates and values differ in length");
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("equity curve holds a non-finite value");
  }
}

std::vector<double> EquityCurve::returns() const {
  std::vector<double> r;
  for (std::size_t i = 1; i < values.size(); ++i) r.push_back(values[i] / values[i - 1] - 1.0);
  return r;
}

double cumulative_return(const EquityCurve& curve) {
  curve.validate();
  if (!(curve.values.front() > 0.0)) throw ContractError("initial equity must be positive");
  return (curve.values.back() / curve.values.front() - 1.0) * 100.0;
}

double max_drawdown(const EquityCurve& curve) {
  curve.validate();
  double peak = curve.values.front(), worst = 0.0;
  for (double v : curve.values) {
    peak = std::max(peak, v);
    worst = std::min(worst, v / peak - 1.0);
  }
  return worst * 100.0;
}

double sharpe_ratio(const EquityCurve& curve, double risk_free_daily, int periods_per_year) {
  curve.validate();
  if (curve.values.size() < 3) throw ContractError("Sharpe ratio needs at least three equity values");
  const std::vector<double> r = curve.returns();
  const double n = static_cast<double>(r.size());
  double mean = 0.0;
  for (double x : r) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : r) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw UndefinedMetricError("Sharpe ratio undefined: daily returns have zero variance");
  return std::sqrt(static_cast<double>(periods_per_year)) * (mean - risk_free_daily) / sd;
}

void write_equity_csv(const std::filesystem::path& path, const EquityCurve& curve) {
  std::ostringstream os;
  os << "date,value\n";
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    os << (curve.dates.empty() ? std::to_string(i) : curve.dates[i]) << ',' << format_double(curve.values[i]) << '\n';
  }
  write_text(path, os.str());
}

EquityCurve read_equity_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("date,value", 0) != 0) {
    throw DataError(path.string() + ": expected header 'date,value'");
  }
  EquityCurve curve;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + " line " + std::to_string(line_no) + ": missing value");
    curve.dates.push_back(line.substr(0, comma));
    try {
      std::size_t used = 0;
      const std::string field = line.substr(comma + 1);
      curve.values.push_back(std::stod(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": malformed value");
    }
  }
  curve.validate();
  return curve;
}

SeedMetrics compute_metrics(std::uint64_t seed, const EquityCurve& curve) {
  SeedMetrics m;
  m.seed = seed;
  m.cumulative_return_pct = cumulative_return(curve);
  m.mdd_pct = max_drawdown(curve);
  try {
    m.sharpe = sharpe_ratio(curve);
  } catch (const UndefinedMetricError& e) {
    spdlog::warn("seed {}: {}", seed, e.what());
  }
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.count = values.size();
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

void MetricsReport::aggregate() {
  std::vector<double> cr, mdd, sh;
  for (const SeedMetrics& r : rows) {
    cr.push_back(r.cumulative_return_pct);
    mdd.push_back(r.mdd_pct);
    if (r.sharpe) sh.push_back(*r.sharpe);
  }
  cumulative_return_pct = mean_std(cr);
  mdd_pct = mean_std(mdd);
  sharpe = mean_std(sh);
}

namespace {

Json mean_std_json(const MeanStd& m) {
  if (m.count == 0) return {{"mean", nullptr}, {"std", nullptr}, {"count", 0}};
  return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}};
}

}  // namespace

Json MetricsReport::to_json() const {
  Json per_seed = Json::array();
  for (const SeedMetrics& r : rows) {
    Json row = {{"seed", r.seed},
                {"cumulative_return_pct", r.cumulative_return_pct},
                {"mdd_pct", r.mdd_pct},
                {"sharpe", r.sharpe ? Json(*r.sharpe) : Json(nullptr)},
                {"equity_csv", r.equity_csv}};
    if (!r.sharpe) row["sharpe_error"] = "undefined: zero return variance";
    per_seed.push_back(row);
  }
  return {{"per_seed", per_seed},
          {"aggregate",
           {{"cumulative_return_pct", mean_std_json(cumulative_return_pct)},
            {"mdd_pct", mean_std_json(mdd_pct)},
            {"sharpe", mean_std_json(sharpe)}}},
          {"metadata", metadata}};
}

MetricsReport MetricsReport::from_json(const Json& j) {
  MetricsReport rep;
  try {
    for (const Json& row : j.at("per_seed")) {
      SeedMetrics m;
      m.seed = row.at("seed").get<std::uint64_t>();
      m.cumulative_return_pct = row.at("cumulative_return_pct").get<double>();
      m.mdd_pct = row.at("mdd_pct").get<double>();
      if (!row.at("sharpe").is_null()) m.sharpe = row.at("sharpe").get<double>();
      m.equity_csv = row.value("equity_csv", "");
      rep.rows.push_back(m);
    }
    rep.metadata = j.value("metadata", Json::object());
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  rep.aggregate();
  return rep;
}

std::vector<double> DTPolicy::act(const PolicyContext& ctx) {
  const DTConfig& dc = model_.config();
  const std::size_t K = dc.context_len, ds = dc.state_dim, da = dc.action_dim;
  const std::size_t t = ctx.step;
  const std::size_t real = std::min(K, t + 1), first = t + 1 - real;

  // Target still to collect at each past step j: remaining + rewards[j..t-1].
  std::vector<double> target(t + 1);
  target[t] = ctx.remaining_target;
  for (std::size_t j = t; j-- > first;) target[j] = target[j + 1] + ctx.rewards[j];

  WindowSample w;
  w.context = K;
  w.rtg.assign(K, 0.0);
  w.states.assign(K * ds, 0.0);
  w.actions.assign(K * da, 0.0);
  w.timesteps.assign(K, 0);
  w.padded.assign(K, 1);
  for (std::size_t j = 0; j < real; ++j) {
    const std::size_t slot = K - real + j, step = first + j;
    w.padded[slot] = 0;
    w.timesteps[slot] = step;
    w.rtg[slot] = target[step] / stats_.rtg_scale;
    const std::vector<double> s = stats_.normalize_state(ctx.states[step]);
    std::copy(s.begin(), s.end(), w.states.begin() + static_cast<std::ptrdiff_t>(slot * ds));
    if (step < t) {
      std::copy(ctx.actions[step].begin(), ctx.actions[step].end(),
                w.actions.begin() + static_cast<std::ptrdiff_t>(slot * da));
    }
  }
  const WindowSample one[] = {w};
  const Tensor pred = model_.predict_actions(make_batch(one, ds, da));
  const auto last = pred.data().subspan((K - 1) * da, da);
  std::vector<double> action(last.begin(), last.end());
  for (double& a : action) a = std::clamp(a, -1.0, 1.0);
  return action;
}

std::vector<double> BCPolicy::act(const PolicyContext& ctx) {
  const std::vector<double> s = stats_.normalize_state(ctx.states.back());
  const Tensor pred = model_.forward(Tensor({1, s.size()}, s));
  std::vector<double> action(pred.data().begin(), pred.data().end());
  for (double& a : action) a = std::clamp(a, -1.0, 1.0);
  return action;
}

Evaluation evaluate_checkpoint(const Checkpoint& checkpoint, const FeaturePanel& panel, const EnvConfig& env,
                               std::span<const std::uint64_t> seeds,
                               const std::optional<std::filesystem::path>& out_dir) {
  if (seeds.empty()) throw ConfigError("evaluation needs at least one seed");
  const std::size_t ds = state_dim_for(panel.num_tickers());
  if (ds != checkpoint.stats.state_mean.size()) {
    throw DimensionError("test panel gives state width " + std::to_string(ds) + ", checkpoint expects " +
                         std::to_string(checkpoint.stats.state_mean.size()));
  }
  Evaluation ev;
  for (std::uint64_t seed : seeds) {
    std::unique_ptr<Policy> policy;
    if (checkpoint.kind == ModelKind::kDecisionTransformer) {
      policy = std::make_unique<DTPolicy>(*checkpoint.dt, checkpoint.stats);
    } else {
      policy = std::make_unique<BCPolicy>(*checkpoint.bc, checkpoint.stats);
    }
    const RolloutResult res = rollout(*policy, panel, env, checkpoint.eval_target_return, seed);
    EquityCurve curve{res.trajectory.dates, res.equity};
    SeedMetrics m = compute_metrics(seed, curve);
    m.equity_csv = "equity_" + std::to_string(seed) + ".csv";
    if (out_dir) write_equity_csv(*out_dir / m.equity_csv, curve);
    ev.report.rows.push_back(m);
    ev.curves.push_back(std::move(curve));
  }
  ev.report.aggregate();
  ev.report.metadata = {{"model_kind", checkpoint.kind == ModelKind::kDecisionTransformer ? "decision_transformer" : "bc"},
                        {"expert", checkpoint.expert},
                        {"init", checkpoint.init},
                        {"eval_target_return", checkpoint.eval_target_return},
                        {"date_range", {panel.prices.dates.front(), panel.prices.dates.back()}},
                        {"env_config", env.to_json()}};
  if (out_dir) write_json(*out_dir / "report.json", ev.report.to_json());
  return ev;
}

MetricsReport report_from_equity_csvs(const std::filesystem::path& report_path) {
  const MetricsReport stored = MetricsReport::from_json(read_json(report_path));
  MetricsReport rebuilt;
  rebuilt.metadata = stored.metadata;
  for (const SeedMetrics& row : stored.rows) {
    if (row.equity_csv.empty()) throw DataError("report row for seed " + std::to_string(row.seed) + " names no CSV");
    SeedMetrics m = compute_metrics(row.seed, read_equity_csv(report_path.parent_path() / row.equity_csv));
    m.equity_csv = row.equity_csv;
    rebuilt.rows.push_back(m);
  }
  rebuilt.aggregate();
  return rebuilt;
}

std::string format_comparison_table(std::span<const ComparisonRow> rows) {
  auto cell = [](const MeanStd& m) {
    if (m.count == 0) return std::string("undefined");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %-11s %-20s %-20s %-16s %s\n", "expert", "init", "cum_return_%",
                "mdd_%", "sharpe", "seeds");
  os << line;
  for (const ComparisonRow& r : rows) {
    std::snprintf(line, sizeof line, "%-18s %-11s %-20s %-20s %-16s %zu\n", r.group.c_str(), r.variant.c_str(),
                  cell(r.report.cumulative_return_pct).c_str(), cell(r.report.mdd_pct).c_str(),
                  cell(r.report.sharpe).c_str(), r.report.rows.size());
    os << line;
  }
  return os.str();
}

}  // namespace dtq
