#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dtq/gpt2.hpp"

namespace dtq {

struct LoRAConfig {
  std::size_t rank = 16;
  // Effective update is (alpha / rank) * B * A. alpha <= 0 means alpha = rank.
  double alpha = 0.0;
  std::vector<MatrixRole> targets{MatrixRole::kAttnQkv, MatrixRole::kAttnProj};

  double scaling() const { return alpha > 0.0 ? alpha / static_cast<double>(rank) : 1.0; }
};

// Low-rank update of one frozen matrix W0[d,k]: W = W0 + scale * B[d,r] A[r,k].
struct LoRAPair {
  Tensor a;
  Tensor b;
  Tensor base;
  double scale = 1.0;
  std::string base_name;

  std::size_t param_count() const { return a.numel() + b.numel(); }
};

Tensor effective_weight(const LoRAPair& pair);

class LoRAAdapters : public WeightProvider {
 public:
  LoRAAdapters() = default;
  explicit LoRAAdapters(LoRAConfig config) : config_(std::move(config)) {}

  Tensor weight(std::size_t layer, MatrixRole role, const Tensor& base) const override;

  const LoRAConfig& config() const { return config_; }
  std::map<std::pair<std::size_t, MatrixRole>, LoRAPair>& pairs() { return pairs_; }
  const std::map<std::pair<std::size_t, MatrixRole>, LoRAPair>& pairs() const { return pairs_; }
  std::size_t param_count() const;
  void zero_b();

  // Entries are named "<base_name>.lora_A" / "<base_name>.lora_B".
  void export_to(TensorContainer& container) const;
  void import_from(const TensorContainer& container);

 private:
  LoRAConfig config_;
  std::map<std::pair<std::size_t, MatrixRole>, LoRAPair> pairs_;
};

// Freezes the whole backbone and wraps every targeted matrix. A ~ N(0, 0.02),
// B = 0, so the adapted model starts out identical to the base.
LoRAAdapters attach_lora(GPTParams& params, const LoRAConfig& config, std::uint64_t seed);

}  // namespace dtq
