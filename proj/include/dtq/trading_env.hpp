#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtq/market_data.hpp"
#include "dtq/trajectory.hpp"
#include "dtq/util.hpp"

namespace dtq {

struct EnvConfig {
  double initial_balance = 1'000'000.0;
  std::int64_t hmax = 100;
  double transaction_cost_rate = 0.001;
  double reward_scale = 1e-4;
  // Kept for completeness of the MDP tuple; returns-to-go are undiscounted.
  double gamma = 1.0;

  void validate() const;
  Json to_json() const;
  static EnvConfig from_json(const Json& j);
  std::string hash() const;
};

// Flattened layout: [cash, prices(M), holdings(M), indicators grouped by
// indicator (4M)], so d_s = 1 + 2M + 4M.
struct PortfolioState {
  std::size_t day = 0;
  double cash = 0.0;
  std::vector<double> prices;
  std::vector<std::int64_t> holdings;
  std::vector<double> indicators;

  double value() const;
  std::vector<double> flatten() const;
};

std::size_t state_dim_for(std::size_t num_assets);

struct StepResult {
  PortfolioState next_state;
  double reward = 0.0;      // reward_scale * raw_reward
  double raw_reward = 0.0;  // value(next) - value(current)
  bool done = false;
};

// Daily portfolio MDP over the tickers of a feature panel. Actions in [-1,1]
// per asset map to round(a * hmax) shares; sells fill before buys, sells are
// capped at holdings and buys at the cash available after fees.
class TradingEnv {
 public:
  TradingEnv(const FeaturePanel& panel, EnvConfig config);

  PortfolioState reset() const;
  StepResult step(const PortfolioState& state, std::span<const double> action) const;

  std::size_t num_assets() const { return panel_->num_tickers(); }
  std::size_t num_steps() const { return panel_->num_days() - 1; }
  std::size_t state_dim() const { return state_dim_for(num_assets()); }
  const FeaturePanel& panel() const { return *panel_; }
  const EnvConfig& config() const { return config_; }

 private:
  PortfolioState observe(std::size_t day, double cash, std::vector<std::int64_t> holdings) const;

  const FeaturePanel* panel_;
  EnvConfig config_;
};

// What a policy sees at each decision: the full history so far.
struct PolicyContext {
  const TradingEnv& env;
  std::size_t step = 0;
  const PortfolioState& state;
  const std::vector<std::vector<double>>& states;   // flattened, includes current
  const std::vector<std::vector<double>>& actions;  // previous actions
  const std::vector<double>& rewards;               // previous scaled rewards
  double remaining_target = 0.0;                    // scaled return still to collect
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<double> act(const PolicyContext& ctx) = 0;
  virtual std::string name() const = 0;
};

struct RolloutResult {
  Trajectory trajectory;
  std::vector<double> equity;       // account value per day, T+1 entries
  std::vector<double> raw_rewards;  // unscaled per-step value changes
};

// Runs the policy over the whole panel. The conditioning target is decremented
// by each scaled reward after every step.
RolloutResult rollout(Policy& policy, const FeaturePanel& panel, const EnvConfig& config, double target_return,
                      std::uint64_t seed);

enum class ExpertKind { kBuyAndHold, kMomentum, kOracleLookahead };

std::string expert_name(ExpertKind kind);
ExpertKind parse_expert(const std::string& name);

class ScriptedExpert : public Policy {
 public:
  explicit ScriptedExpert(ExpertKind kind) : kind_(kind) {}
  std::vector<double> act(const PolicyContext& ctx) override;
  std::string name() const override { return expert_name(kind_); }

  // momentum: tanh(kMomentumGain * MACD / close) per asset.
  static constexpr double kMomentumGain = 50.0;

 private:
  ExpertKind kind_;
};

RolloutResult scripted_expert(ExpertKind kind, const FeaturePanel& panel, const EnvConfig& config);

}  // namespace dtq
