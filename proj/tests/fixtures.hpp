#pragma once

// Small shared builders for tests: toy models, hand-made panels, random
// windows.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dtq/dt_policy.hpp"
#include "dtq/market_data.hpp"
#include "dtq/offline_dataset.hpp"
#include "dtq/util.hpp"

namespace dtq::testing {

inline GPTConfig toy_gpt(std::size_t context_len = 8) {
  GPTConfig c;
  c.n_layer = 2;
  c.n_head = 4;
  c.d_model = 64;
  c.max_seq_len = 3 * context_len;
  return c;
}

inline DTConfig toy_dt(std::size_t state_dim, std::size_t action_dim, std::size_t context_len = 8) {
  DTConfig c;
  c.context_len = context_len;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  c.max_ep_len = 512;
  return c;
}

// LoRA B is zero at creation, which hides every A gradient; give it values.
inline void randomize_lora_b(DecisionTransformer& model, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  if (!model.adapters()) return;
  for (auto& [_, pair] : model.adapters()->pairs()) {
    for (double& x : pair.b.mutable_data()) x = dist(rng);
  }
}

inline DecisionTransformer toy_model(std::size_t state_dim, std::size_t action_dim, std::uint64_t seed,
                                     std::size_t context_len = 8, bool with_lora = true) {
  std::optional<LoRAConfig> lora;
  if (with_lora) {
    LoRAConfig l;
    l.rank = 4;
    lora = l;
  }
  return DecisionTransformer::create(init_random(toy_gpt(context_len), seed), toy_dt(state_dim, action_dim, context_len),
                                     lora, seed);
}

// Random window batch with left padding of `pads[b]` slots per row.
inline WindowBatch random_batch(std::size_t batch, std::size_t context, std::size_t state_dim, std::size_t action_dim,
                                std::mt19937_64& rng, const std::vector<std::size_t>& pads = {}) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> start(0, 400);
  std::vector<WindowSample> samples;
  for (std::size_t b = 0; b < batch; ++b) {
    WindowSample w;
    w.context = context;
    w.rtg.resize(context);
    w.states.resize(context * state_dim);
    w.actions.resize(context * action_dim);
    w.timesteps.resize(context);
    w.padded.assign(context, 0);
    const std::size_t pad = pads.empty() ? 0 : pads[b];
    const std::size_t t0 = start(rng);
    for (std::size_t k = 0; k < context; ++k) {
      w.timesteps[k] = k < pad ? 0 : t0 + k;
      w.padded[k] = k < pad ? 1 : 0;
    }
    for (std::size_t k = 0; k < context; ++k) {
      const bool pad_slot = k < pad;
      w.rtg[k] = pad_slot ? 0.0 : dist(rng);
      for (std::size_t i = 0; i < state_dim; ++i) w.states[k * state_dim + i] = pad_slot ? 0.0 : dist(rng);
      for (std::size_t i = 0; i < action_dim; ++i) w.actions[k * action_dim + i] = pad_slot ? 0.0 : std::tanh(dist(rng));
    }
    samples.push_back(std::move(w));
  }
  return make_batch(samples, state_dim, action_dim);
}

// Feature panel from explicit closes; indicators zero, OHLC all equal close.
inline FeaturePanel panel_from_closes(const std::vector<std::vector<double>>& closes_by_day) {
  FeaturePanel p;
  const std::size_t m = closes_by_day.front().size();
  for (std::size_t k = 0; k < m; ++k) p.prices.tickers.push_back("T" + std::to_string(k));
  std::string date = "2020-01-06";
  for (const auto& row : closes_by_day) {
    p.prices.dates.push_back(date);
    std::vector<Bar> bars;
    for (double c : row) bars.push_back({c, c, c, c, 1000.0});
    p.prices.bars.push_back(bars);
    p.indicators.push_back(std::vector<std::array<double, kNumIndicators>>(m, {0.0, 50.0, 0.0, 0.0}));
    date = add_days(date, 1);
  }
  return p;
}

inline FeaturePanel synthetic_features(std::size_t tickers, std::size_t days, std::uint64_t seed,
                                       SynthKind kind = SynthKind::kRandomWalk) {
  SynthOptions o;
  o.kind = kind;
  o.tickers = tickers;
  o.days = days + kIndicatorWindow;
  o.seed = seed;
  return compute_indicators(synth_panel(o));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dtq_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string file_bytes(const std::filesystem::path& p) { return read_text(p); }

}  // namespace dtq::testing
