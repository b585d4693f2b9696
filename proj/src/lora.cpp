#include "dtq/lora.hpp"

#include <algorithm>

#include "dtq/errors.hpp"
#include "dtq/util.hpp"

namespace dtq {

Tensor effective_weight(const LoRAPair& pair) {
  if (pair.b.dim(0) != pair.base.dim(0) || pair.a.dim(1) != pair.base.dim(1) || pair.b.dim(1) != pair.a.dim(0)) {
    throw DimensionError("LoRA pair shapes B " + shape_str(pair.b.shape()) + " A " + shape_str(pair.a.shape()) +
                         " do not fit base " + shape_str(pair.base.shape()));
  }
  return ops::add(pair.base, ops::scale(ops::matmul(pair.b, pair.a), pair.scale));
}

Tensor LoRAAdapters::weight(std::size_t layer, MatrixRole role, const Tensor& base) const {
  auto it = pairs_.find({layer, role});
  if (it == pairs_.end()) return base;
  return effective_weight(it->second);
}

std::size_t LoRAAdapters::param_count() const {
  std::size_t n = 0;
  for (const auto& [_, pair] : pairs_) n += pair.param_count();
  return n;
}

void LoRAAdapters::zero_b() {
  for (auto& [_, pair] : pairs_) std::fill(pair.b.mutable_data().begin(), pair.b.mutable_data().end(), 0.0);
}

void LoRAAdapters::export_to(TensorContainer& container) const {
  for (const auto& [_, pair] : pairs_) {
    container.put(pair.base_name + ".lora_A", pair.a);
    container.put(pair.base_name + ".lora_B", pair.b);
  }
}

void LoRAAdapters::import_from(const TensorContainer& container) {
  for (auto& [_, pair] : pairs_) {
    for (auto [suffix, slot] : {std::pair{".lora_A", &pair.a}, std::pair{".lora_B", &pair.b}}) {
      const Tensor& found = container.get(pair.base_name + suffix);
      if (found.shape() != slot->shape()) {
        throw ImportError("tensor '" + pair.base_name + suffix + "' has shape " + shape_str(found.shape()) +
                          ", expected " + shape_str(slot->shape()));
      }
      *slot = found.clone();
      slot->set_requires_grad(true);
    }
  }
}

LoRAAdapters attach_lora(GPTParams& params, const LoRAConfig& config, std::uint64_t seed) {
  if (config.rank == 0) throw ConfigError("LoRA rank must be positive");
  if (config.targets.empty()) throw ConfigError("LoRA target set is empty");
  for (MatrixRole role : config.targets) {
    if (role != MatrixRole::kAttnQkv && role != MatrixRole::kAttnProj) {
      throw ConfigError("LoRA target role '" + role_name(role) + "' is not an attention projection");
    }
  }
  if (params.blocks.empty()) throw ConfigError("LoRA target roles absent: backbone has no blocks");

  params.set_frozen(true);
  Rng rng(seed);
  LoRAAdapters adapters(config);
  for (std::size_t layer = 0; layer < params.blocks.size(); ++layer) {
    for (MatrixRole role : config.targets) {
      const Tensor& base = params.blocks[layer].matrix(role);
      const std::size_t d = base.dim(0), k = base.dim(1);
      if (config.rank >= std::min(d, k)) {
        throw ConfigError("LoRA rank " + std::to_string(config.rank) + " is not below min" + shape_str(base.shape()));
      }
      LoRAPair pair;
      pair.base = base;
      pair.base_name = matrix_name(layer, role);
      pair.scale = config.scaling();
      pair.a = normal_tensor({config.rank, k}, 0.0, 0.02, rng);
      pair.a.set_requires_grad(true);
      pair.b = Tensor::zeros({d, config.rank}, true);
      adapters.pairs().emplace(std::make_pair(layer, role), std::move(pair));
    }
  }
  return adapters;
}

}  // namespace dtq
