#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dtq/util.hpp"

namespace dtq {

struct TrajectoryMeta {
  std::string expert;
  std::string config_hash;
  std::uint64_t seed = 0;
};

// One episode: T transitions, T+1 states (the last is terminal).
struct Trajectory {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;
  std::vector<double> rtg;  // derived: suffix sums of rewards
  std::vector<std::string> dates;
  TrajectoryMeta meta;

  std::size_t length() const { return rewards.size(); }
  std::size_t state_dim() const { return states.empty() ? 0 : states.front().size(); }
  std::size_t action_dim() const { return actions.empty() ? 0 : actions.front().size(); }
  void refresh_rtg();
  void validate() const;
};

// Undiscounted suffix sums: out[t] = rewards[t] + out[t+1].
std::vector<double> returns_to_go(std::span<const double> rewards);

// JSON-lines: one episode per line with keys states, actions, rewards, dates,
// meta{expert, config_hash, seed}.
Json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const Json& j);
void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> trajectories);
std::vector<Trajectory> read_trajectories(const std::filesystem::path& path);

}  // namespace dtq
