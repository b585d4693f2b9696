#include "dtq/offline_dataset.hpp"

#include <algorithm>
#include <cmath>

#include "dtq/errors.hpp"

namespace dtq {

std::vector<double> NormStats::normalize_state(std::span<const double> state) const {
  if (state.size() != state_mean.size()) {
    throw DimensionError("state has width " + std::to_string(state.size()) + ", normalizer expects " +
                         std::to_string(state_mean.size()));
  }
  std::vector<double> out(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) out[i] = (state[i] - state_mean[i]) / state_std[i];
  return out;
}

std::vector<double> NormStats::denormalize_state(std::span<const double> state) const {
  if (state.size() != state_mean.size()) throw DimensionError("state width does not match normalizer");
  std::vector<double> out(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) out[i] = state[i] * state_std[i] + state_mean[i];
  return out;
}

Json NormStats::to_json() const {
  return {{"state_mean", state_mean}, {"state_std", state_std}, {"rtg_scale", rtg_scale}};
}

NormStats NormStats::from_json(const Json& j) {
  NormStats s;
  try {
    s.state_mean = j.at("state_mean").get<std::vector<double>>();
    s.state_std = j.at("state_std").get<std::vector<double>>();
    s.rtg_scale = j.at("rtg_scale").get<double>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed normalizer: ") + e.what());
  }
  if (s.state_mean.size() != s.state_std.size()) throw ConfigError("normalizer mean/std widths differ");
  for (double v : s.state_std) {
    if (!(v > 0.0)) throw ConfigError("normalizer std must be positive");
  }
  if (!(s.rtg_scale > 0.0)) throw ConfigError("normalizer rtg_scale must be positive");
  return s;
}

double power_of_ten_ceil(double max_abs) {
  if (!(max_abs > 0.0)) return 1.0;
  double p = std::pow(10.0, std::ceil(std::log10(max_abs)));
  while (p < max_abs) p *= 10.0;
  while (p / 10.0 >= max_abs) p /= 10.0;
  return p;
}

NormStats fit_normalizer(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw DataError("cannot fit a normalizer without trajectories");
  const std::size_t ds = trajectories.front().state_dim();
  NormStats stats;
  stats.state_mean.assign(ds, 0.0);
  stats.state_std.assign(ds, 0.0);
  std::size_t rows = 0;
  double max_rtg = 0.0;
  for (const Trajectory& traj : trajectories) {
    if (traj.state_dim() != ds) throw DataError("trajectories have different state widths");
    for (const auto& s : traj.states) {
      for (std::size_t i = 0; i < ds; ++i) stats.state_mean[i] += s[i];
      ++rows;
    }
    for (double r : returns_to_go(traj.rewards)) max_rtg = std::max(max_rtg, std::abs(r));
  }
  for (double& m : stats.state_mean) m /= static_cast<double>(rows);
  for (const Trajectory& traj : trajectories) {
    for (const auto& s : traj.states) {
      for (std::size_t i = 0; i < ds; ++i) {
        const double d = s[i] - stats.state_mean[i];
        stats.state_std[i] += d * d;
      }
    }
  }
  for (double& v : stats.state_std) v = std::max(std::sqrt(v / static_cast<double>(rows)), NormStats::kStdFloor);
  stats.rtg_scale = power_of_ten_ceil(max_rtg);
  return stats;
}

WindowSample sample_window(const Trajectory& traj, std::size_t t, std::size_t context, const NormStats& stats) {
  const std::size_t T = traj.length();
  if (t >= T) throw RangeError("window anchor " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  if (context == 0) throw ConfigError("window context must be positive");
  const std::size_t ds = traj.state_dim(), da = traj.action_dim();
  const std::vector<double> rtg = traj.rtg.size() == T ? traj.rtg : returns_to_go(traj.rewards);

  WindowSample w;
  w.context = context;
  w.rtg.assign(context, 0.0);
  w.states.assign(context * ds, 0.0);
  w.actions.assign(context * da, 0.0);
  w.timesteps.assign(context, 0);
  w.padded.assign(context, 1);
  const std::size_t real = std::min(context, t + 1);
  const std::size_t first = t + 1 - real;
  for (std::size_t j = 0; j < real; ++j) {
    const std::size_t slot = context - real + j, step = first + j;
    w.padded[slot] = 0;
    w.timesteps[slot] = step;
    w.rtg[slot] = rtg[step] / stats.rtg_scale;
    const std::vector<double> s = stats.normalize_state(traj.states[step]);
    std::copy(s.begin(), s.end(), w.states.begin() + static_cast<std::ptrdiff_t>(slot * ds));
    std::copy(traj.actions[step].begin(), traj.actions[step].end(),
              w.actions.begin() + static_cast<std::ptrdiff_t>(slot * da));
  }
  return w;
}

WindowBatch make_batch(std::span<const WindowSample> samples, std::size_t state_dim, std::size_t action_dim) {
  if (samples.empty()) throw ContractError("cannot build an empty batch");
  const std::size_t B = samples.size(), K = samples.front().context;
  std::vector<double> rtg, states, actions;
  rtg.reserve(B * K);
  states.reserve(B * K * state_dim);
  actions.reserve(B * K * action_dim);
  WindowBatch batch;
  batch.batch = B;
  batch.context = K;
  batch.pad_mask = PadMask(B, K);
  for (std::size_t b = 0; b < B; ++b) {
    const WindowSample& w = samples[b];
    if (w.context != K || w.states.size() != K * state_dim || w.actions.size() != K * action_dim) {
      throw DimensionError("window samples in a batch must share context and widths");
    }
    rtg.insert(rtg.end(), w.rtg.begin(), w.rtg.end());
    states.insert(states.end(), w.states.begin(), w.states.end());
    actions.insert(actions.end(), w.actions.begin(), w.actions.end());
    batch.timesteps.insert(batch.timesteps.end(), w.timesteps.begin(), w.timesteps.end());
    for (std::size_t k = 0; k < K; ++k) batch.pad_mask.set(b, k, w.padded[k] != 0);
  }
  batch.rtg = Tensor({B, K, 1}, std::move(rtg));
  batch.states = Tensor({B, K, state_dim}, std::move(states));
  batch.actions = Tensor({B, K, action_dim}, std::move(actions));
  return batch;
}

WindowSampler::WindowSampler(std::span<const Trajectory> trajectories, std::size_t context, NormStats stats,
                             std::uint64_t seed)
    : trajectories_(trajectories), context_(context), stats_(std::move(stats)), rng_(seed) {
  if (trajectories.empty()) throw DataError("window sampler needs at least one trajectory");
  offsets_.push_back(0);
  for (const Trajectory& t : trajectories) offsets_.push_back(offsets_.back() + t.length());
  if (offsets_.back() == 0) throw DataError("window sampler needs at least one transition");
}

std::pair<std::size_t, std::size_t> WindowSampler::draw() {
  std::uniform_int_distribution<std::size_t> pick(0, offsets_.back() - 1);
  const std::size_t flat = pick(rng_);
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
  const std::size_t traj = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {traj, flat - offsets_[traj]};
}

WindowBatch WindowSampler::next_batch(std::size_t batch_size) {
  std::vector<WindowSample> samples;
  samples.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto [traj, t] = draw();
    samples.push_back(sample_window(trajectories_[traj], t, context_, stats_));
  }
  const Trajectory& first = trajectories_.front();
  return make_batch(samples, first.state_dim(), first.action_dim());
}

}  // namespace dtq
