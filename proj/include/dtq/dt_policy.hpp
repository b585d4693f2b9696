#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtq/gpt2.hpp"
#include "dtq/lora.hpp"

namespace dtq {

struct DTConfig {
  std::size_t context_len = 20;  // K timesteps, 3K tokens
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t max_ep_len = 4096;

  void validate(const GPTConfig& backbone) const;
  std::size_t token_len() const { return 3 * context_len; }
};

// y = lift(x); Embed(x) = y + out(gelu(fc(y))), all at width d_model.
struct ResidualEmbedder {
  Tensor lift_weight, lift_bias;
  Tensor fc_weight, fc_bias;
  Tensor out_weight, out_bias;

  Tensor forward(const Tensor& x) const;
};

struct EmbedderSet {
  ResidualEmbedder rtg, state, action;
  Tensor timestep_table;        // [max_ep_len, d_model]
  Tensor ln_gain, ln_bias;      // shared post-sum LayerNorm
  Tensor head_weight, head_bias;  // [d_a, d_model], [d_a]

  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

EmbedderSet init_embedders(const DTConfig& config, std::size_t d_model, std::uint64_t seed);

// One training/inference batch of K-step windows, left padded.
struct WindowBatch {
  std::size_t batch = 0;
  std::size_t context = 0;
  Tensor rtg;      // [B,K,1]
  Tensor states;   // [B,K,d_s]
  Tensor actions;  // [B,K,d_a]
  std::vector<std::size_t> timesteps;  // [B*K]
  PadMask pad_mask;                    // [B,K]
};

struct EmbeddedWindow {
  Tensor hidden;           // [B,3K,d_model]
  PadMask token_pad_mask;  // [B,3K]
};

struct TrainableCounts {
  std::size_t lora = 0;
  std::size_t embedders = 0;
  std::size_t head = 0;
  std::size_t backbone = 0;  // unfrozen backbone tensors, if any

  std::size_t total() const { return lora + embedders + head + backbone; }
};

class DecisionTransformer {
 public:
  DecisionTransformer(GPTParams backbone, std::optional<LoRAAdapters> adapters, EmbedderSet embedders,
                      DTConfig config);

  // Builds embedders and (optionally) attaches LoRA to `backbone`.
  static DecisionTransformer create(GPTParams backbone, const DTConfig& config,
                                    const std::optional<LoRAConfig>& lora, std::uint64_t seed);

  EmbeddedWindow embed_window(const WindowBatch& batch) const;
  // [B,K,d_a]; entry t is read off the state token of timestep t.
  Tensor predict_actions(const WindowBatch& batch) const;

  void visit_trainable(const std::function<void(const std::string&, Tensor&)>& fn);
  TrainableCounts trainable_param_count() const;

  void export_to(TensorContainer& container) const;
  void import_from(const TensorContainer& container);

  const DTConfig& config() const { return config_; }
  const GPTParams& backbone() const { return backbone_; }
  GPTParams& backbone() { return backbone_; }
  const std::optional<LoRAAdapters>& adapters() const { return adapters_; }
  std::optional<LoRAAdapters>& adapters() { return adapters_; }
  const EmbedderSet& embedders() const { return embedders_; }
  EmbedderSet& embedders() { return embedders_; }

 private:
  GPTParams backbone_;
  std::optional<LoRAAdapters> adapters_;
  EmbedderSet embedders_;
  DTConfig config_;
};

// Mean squared error over unpadded (batch, timestep) cells and all action
// components.
Tensor action_loss(const Tensor& pred, const Tensor& target, const PadMask& pad_mask);

}  // namespace dtq
