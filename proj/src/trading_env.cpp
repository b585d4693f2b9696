#include "dtq/trading_env.hpp"

#include <cmath>

#include "dtq/errors.hpp"

namespace dtq {

void EnvConfig::validate() const {
  if (!(initial_balance > 0.0)) throw ConfigError("initial_balance must be positive");
  if (hmax <= 0) throw ConfigError("hmax must be positive");
  if (!(transaction_cost_rate >= 0.0 && transaction_cost_rate < 1.0)) {
    throw ConfigError("transaction_cost_rate must lie in [0, 1)");
  }
  if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
}

Json EnvConfig::to_json() const {
  return {{"initial_balance", initial_balance},
          {"hmax", hmax},
          {"transaction_cost_rate", transaction_cost_rate},
          {"reward_scale", reward_scale},
          {"gamma", gamma}};
}

EnvConfig EnvConfig::from_json(const Json& j) {
  EnvConfig c;
  c.initial_balance = j.value("initial_balance", c.initial_balance);
  c.hmax = j.value("hmax", c.hmax);
  c.transaction_cost_rate = j.value("transaction_cost_rate", c.transaction_cost_rate);
  c.reward_scale = j.value("reward_scale", c.reward_scale);
  c.gamma = j.value("gamma", c.gamma);
  c.validate();
  return c;
}

std::string EnvConfig::hash() const { return sha256_hex(to_json().dump()).substr(0, 16); }

double PortfolioState::value() const {
  double v = cash;
  for (std::size_t i = 0; i < prices.size(); ++i) v += prices[i] * static_cast<double>(holdings[i]);
  return v;
}

std::vector<double> PortfolioState::flatten() const {
  std::vector<double> out;
  out.reserve(1 + prices.size() * 2 + indicators.size());
  out.push_back(cash);
  out.insert(out.end(), prices.begin(), prices.end());
  for (std::int64_t h : holdings) out.push_back(static_cast<double>(h));
  out.insert(out.end(), indicators.begin(), indicators.end());
  return out;
}

std::size_t state_dim_for(std::size_t num_assets) { return 1 + 2 * num_assets + kNumIndicators * num_assets; }

TradingEnv::TradingEnv(const FeaturePanel& panel, EnvConfig config) : panel_(&panel), config_(config) {
  config_.validate();
  if (panel.num_days() == 0 || panel.num_tickers() == 0) throw DataError("trading environment needs a non-empty panel");
}

PortfolioState TradingEnv::observe(std::size_t day, double cash, std::vector<std::int64_t> holdings) const {
  const std::size_t m = num_assets();
  PortfolioState s;
  s.day = day;
  s.cash = cash;
  s.holdings = std::move(holdings);
  s.prices.resize(m);
  s.indicators.resize(kNumIndicators * m);
  for (std::size_t k = 0; k < m; ++k) {
    s.prices[k] = panel_->close(day, k);
    for (std::size_t i = 0; i < kNumIndicators; ++i) s.indicators[i * m + k] = panel_->indicators[day][k][i];
  }
  return s;
}

PortfolioState TradingEnv::reset() const {
  return observe(0, config_.initial_balance, std::vector<std::int64_t>(num_assets(), 0));
}

StepResult TradingEnv::step(const PortfolioState& state, std::span<const double> action) const {
  const std::size_t m = num_assets();
  if (action.size() != m) {
    throw ContractError("action has " + std::to_string(action.size()) + " components, expected " + std::to_string(m));
  }
  for (double a : action) {
    if (!(a >= -1.0 && a <= 1.0)) throw ContractError("action component " + std::to_string(a) + " outside [-1, 1]");
  }
  if (state.day >= num_steps()) throw ContractError("step called after the final trading day");

  const double fee = config_.transaction_cost_rate;
  double cash = state.cash;
  std::vector<std::int64_t> holdings = state.holdings;
  std::vector<std::int64_t> orders(m);
  for (std::size_t k = 0; k < m; ++k) orders[k] = std::llround(action[k] * static_cast<double>(config_.hmax));

  for (std::size_t k = 0; k < m; ++k) {
    if (orders[k] >= 0) continue;
    const std::int64_t shares = std::min(-orders[k], holdings[k]);
    cash += static_cast<double>(shares) * state.prices[k] * (1.0 - fee);
    holdings[k] -= shares;
  }
  for (std::size_t k = 0; k < m; ++k) {
    if (orders[k] <= 0) continue;
    const double unit_cost = state.prices[k] * (1.0 + fee);
    std::int64_t shares = std::min<std::int64_t>(orders[k], static_cast<std::int64_t>(std::floor(cash / unit_cost)));
    while (shares > 0 && static_cast<double>(shares) * unit_cost > cash) --shares;
    if (shares <= 0) continue;
    cash -= static_cast<double>(shares) * unit_cost;
    holdings[k] += shares;
  }

  StepResult result;
  result.next_state = observe(state.day + 1, cash, std::move(holdings));
  result.raw_reward = result.next_state.value() - state.value();
  result.reward = config_.reward_scale * result.raw_reward;
  result.done = result.next_state.day == num_steps();
  return result;
}

RolloutResult rollout(Policy& policy, const FeaturePanel& panel, const EnvConfig& config, double target_return,
                      std::uint64_t seed) {
  const TradingEnv env(panel, config);
  if (env.num_steps() == 0) throw DataError("rollout needs at least two trading days");
  RolloutResult out;
  Trajectory& traj = out.trajectory;
  PortfolioState state = env.reset();
  traj.states.push_back(state.flatten());
  traj.dates.push_back(panel.prices.dates[0]);
  out.equity.push_back(state.value());
  double remaining = target_return;
  for (std::size_t t = 0; t < env.num_steps(); ++t) {
    const PolicyContext ctx{env, t, state, traj.states, traj.actions, traj.rewards, remaining};
    std::vector<double> action = policy.act(ctx);
    StepResult res = env.step(state, action);
    traj.actions.push_back(std::move(action));
    traj.rewards.push_back(res.reward);
    out.raw_rewards.push_back(res.raw_reward);
    remaining -= res.reward;
    state = std::move(res.next_state);
    traj.states.push_back(state.flatten());
    traj.dates.push_back(panel.prices.dates[state.day]);
    out.equity.push_back(state.value());
  }
  traj.meta = {policy.name(), config.hash(), seed};
  traj.refresh_rtg();
  return out;
}

std::string expert_name(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::kBuyAndHold: return "buy_and_hold";
    case ExpertKind::kMomentum: return "momentum";
    case ExpertKind::kOracleLookahead: return "oracle_lookahead";
  }
  return "?";
}

ExpertKind parse_expert(const std::string& name) {
  for (ExpertKind k : {ExpertKind::kBuyAndHold, ExpertKind::kMomentum, ExpertKind::kOracleLookahead}) {
    if (expert_name(k) == name) return k;
  }
  throw ConfigError("unknown expert '" + name + "' (buy_and_hold | momentum | oracle_lookahead)");
}

std::vector<double> ScriptedExpert::act(const PolicyContext& ctx) {
  const std::size_t m = ctx.env.num_assets();
  const FeaturePanel& panel = ctx.env.panel();
  const std::size_t day = ctx.state.day;
  std::vector<double> action(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    switch (kind_) {
      case ExpertKind::kBuyAndHold:
        action[k] = 1.0;
        break;
      case ExpertKind::kMomentum:
        action[k] = std::tanh(kMomentumGain * panel.indicators[day][k][0] / panel.close(day, k));
        break;
      case ExpertKind::kOracleLookahead: {
        // Offline dataset generation only: peeks at the next close.
        const double now = panel.close(day, k), next = panel.close(day + 1, k);
        action[k] = next > now ? 1.0 : next < now ? -1.0 : 0.0;
        break;
      }
    }
  }
  return action;
}

RolloutResult scripted_expert(ExpertKind kind, const FeaturePanel& panel, const EnvConfig& config) {
  ScriptedExpert expert(kind);
  return rollout(expert, panel, config, 0.0, 0);
}

}  // namespace dtq
