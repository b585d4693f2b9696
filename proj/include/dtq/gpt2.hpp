#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtq/container.hpp"
#include "dtq/ops.hpp"
#include "dtq/tensor.hpp"

namespace dtq {

struct GPTConfig {
  std::size_t n_layer = 12;
  std::size_t n_head = 12;
  std::size_t d_model = 768;
  std::size_t max_seq_len = 1024;
  // Native token table rows; 0 means no token table is held.
  std::size_t vocab_size = 0;
  bool use_native_positional_embeddings = false;
  double layer_norm_eps = 1e-5;

  static GPTConfig gpt2_small();
  void validate() const;
  // Parameter count including native embedding tables when present.
  std::size_t param_count() const;
};

enum class MatrixRole { kAttnQkv, kAttnProj, kMlpFc, kMlpProj };

std::string role_name(MatrixRole role);
MatrixRole parse_role(const std::string& name);

struct GPTBlock {
  Tensor ln1_gain, ln1_bias;
  Tensor attn_qkv_weight, attn_qkv_bias;    // [3d, d], [3d]
  Tensor attn_proj_weight, attn_proj_bias;  // [d, d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_fc_weight, mlp_fc_bias;        // [4d, d], [4d]
  Tensor mlp_proj_weight, mlp_proj_bias;    // [d, 4d], [d]

  Tensor& matrix(MatrixRole role);
  const Tensor& matrix(MatrixRole role) const;
};

// Backbone parameters. A tensor is frozen exactly when requires_grad() is
// false.
struct GPTParams {
  GPTConfig config;
  std::vector<GPTBlock> blocks;
  Tensor final_ln_gain, final_ln_bias;
  std::optional<Tensor> token_embedding;     // [vocab, d]
  std::optional<Tensor> position_embedding;  // [max_seq_len, d]

  // Container-style names, e.g. "h.3.attn.c_attn.weight".
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t param_count() const;
  void set_frozen(bool frozen);
};

std::string matrix_name(std::size_t layer, MatrixRole role);

// Supplies the weight used for a projection; the LoRA adapter set implements
// this to substitute W0 + BA.
class WeightProvider {
 public:
  virtual ~WeightProvider() = default;
  virtual Tensor weight(std::size_t layer, MatrixRole role, const Tensor& base) const = 0;
};

GPTParams init_random(const GPTConfig& config, std::uint64_t seed);

// Binds every named tensor, validating shapes; all imported tensors frozen.
GPTParams import_weights(const std::filesystem::path& container_path, const GPTConfig& config);
GPTParams import_weights(const TensorContainer& container, const GPTConfig& config);
void export_weights(const GPTParams& params, TensorContainer& container);

// H[B,L,d] -> O[B,L,d]. Native position embeddings are added only when the
// config asks for them.
Tensor gpt_forward(const Tensor& hidden, const PadMask& pad_mask, const GPTParams& params,
                   const WeightProvider* adapters = nullptr);

}  // namespace dtq
