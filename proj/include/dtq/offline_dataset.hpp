#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dtq/dt_policy.hpp"
#include "dtq/trajectory.hpp"
#include "dtq/util.hpp"

namespace dtq {

struct NormStats {
  std::vector<double> state_mean;
  std::vector<double> state_std;  // floored at kStdFloor
  double rtg_scale = 1.0;

  static constexpr double kStdFloor = 1e-8;

  std::vector<double> normalize_state(std::span<const double> state) const;
  std::vector<double> denormalize_state(std::span<const double> state) const;
  Json to_json() const;
  static NormStats from_json(const Json& j);
};

// Smallest power of ten >= max_abs (1 when max_abs is 0).
double power_of_ten_ceil(double max_abs);

// Population mean/std over every state row, including terminal states.
NormStats fit_normalizer(std::span<const Trajectory> trajectories);

// One K-step window ending at anchor t. Slots before the episode start are
// zero filled and flagged padded; timesteps hold absolute episode positions.
struct WindowSample {
  std::size_t context = 0;
  std::vector<double> rtg;      // [K]
  std::vector<double> states;   // [K*d_s]
  std::vector<double> actions;  // [K*d_a]
  std::vector<std::size_t> timesteps;
  std::vector<std::uint8_t> padded;
};

WindowSample sample_window(const Trajectory& traj, std::size_t t, std::size_t context, const NormStats& stats);

WindowBatch make_batch(std::span<const WindowSample> samples, std::size_t state_dim, std::size_t action_dim);

// Uniform over all (trajectory, anchor) pairs.
class WindowSampler {
 public:
  WindowSampler(std::span<const Trajectory> trajectories, std::size_t context, NormStats stats, std::uint64_t seed);

  std::pair<std::size_t, std::size_t> draw();
  WindowBatch next_batch(std::size_t batch_size);
  std::size_t num_anchors() const { return offsets_.back(); }

 private:
  std::span<const Trajectory> trajectories_;
  std::size_t context_;
  NormStats stats_;
  std::vector<std::size_t> offsets_;  // prefix sums of trajectory lengths
  Rng rng_;
};

}  // namespace dtq
