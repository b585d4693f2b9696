#include "dtq/gpt2.hpp"

#include <random>

#include "dtq/errors.hpp"
#include "dtq/util.hpp"

namespace dtq {

GPTConfig GPTConfig::gpt2_small() {
  GPTConfig c;
  c.n_layer = 12;
  c.n_head = 12;
  c.d_model = 768;
  c.max_seq_len = 1024;
  c.vocab_size = 50257;
  return c;
}

void GPTConfig::validate() const {
  if (n_layer == 0 || n_head == 0 || d_model == 0 || max_seq_len == 0) {
    throw ConfigError("GPT config sizes must be positive");
  }
  if (d_model % n_head != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_head " + std::to_string(n_head));
  }
}

std::size_t GPTConfig::param_count() const {
  const std::size_t d = d_model;
  const std::size_t per_block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d);
  std::size_t total = n_layer * per_block + 2 * d;
  if (vocab_size > 0) total += vocab_size * d + max_seq_len * d;
  else if (use_native_positional_embeddings) total += max_seq_len * d;
  return total;
}

std::string role_name(MatrixRole role) {
  switch (role) {
    case MatrixRole::kAttnQkv: return "attn_qkv";
    case MatrixRole::kAttnProj: return "attn_proj";
    case MatrixRole::kMlpFc: return "mlp_fc";
    case MatrixRole::kMlpProj: return "mlp_proj";
  }
  return "?";
}

MatrixRole parse_role(const std::string& name) {
  for (MatrixRole r : {MatrixRole::kAttnQkv, MatrixRole::kAttnProj, MatrixRole::kMlpFc, MatrixRole::kMlpProj}) {
    if (role_name(r) == name) return r;
  }
  throw ConfigError("unknown matrix role '" + name + "'");
}

Tensor& GPTBlock::matrix(MatrixRole role) {
  switch (role) {
    case MatrixRole::kAttnQkv: return attn_qkv_weight;
    case MatrixRole::kAttnProj: return attn_proj_weight;
    case MatrixRole::kMlpFc: return mlp_fc_weight;
    case MatrixRole::kMlpProj: return mlp_proj_weight;
  }
  throw ConfigError("unknown matrix role");
}

const Tensor& GPTBlock::matrix(MatrixRole role) const {
  return const_cast<GPTBlock*>(this)->matrix(role);
}

std::string matrix_name(std::size_t layer, MatrixRole role) {
  const std::string prefix = "h." + std::to_string(layer) + ".";
  switch (role) {
    case MatrixRole::kAttnQkv: return prefix + "attn.c_attn.weight";
    case MatrixRole::kAttnProj: return prefix + "attn.c_proj.weight";
    case MatrixRole::kMlpFc: return prefix + "mlp.c_fc.weight";
    case MatrixRole::kMlpProj: return prefix + "mlp.c_proj.weight";
  }
  return prefix;
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string h = "h." + std::to_string(i) + ".";
    fn(h + "ln_1.weight", b.ln1_gain);
    fn(h + "ln_1.bias", b.ln1_bias);
    fn(h + "attn.c_attn.weight", b.attn_qkv_weight);
    fn(h + "attn.c_attn.bias", b.attn_qkv_bias);
    fn(h + "attn.c_proj.weight", b.attn_proj_weight);
    fn(h + "attn.c_proj.bias", b.attn_proj_bias);
    fn(h + "ln_2.weight", b.ln2_gain);
    fn(h + "ln_2.bias", b.ln2_bias);
    fn(h + "mlp.c_fc.weight", b.mlp_fc_weight);
    fn(h + "mlp.c_fc.bias", b.mlp_fc_bias);
    fn(h + "mlp.c_proj.weight", b.mlp_proj_weight);
    fn(h + "mlp.c_proj.bias", b.mlp_proj_bias);
  }
  fn("ln_f.weight", p.final_ln_gain);
  fn("ln_f.bias", p.final_ln_bias);
  if (p.token_embedding) fn("wte.weight", *p.token_embedding);
  if (p.position_embedding) fn("wpe.weight", *p.position_embedding);
}

// Expected shape of every named slot, in visit order.
std::vector<std::pair<std::string, Shape>> expected_layout(const GPTConfig& c, bool with_wte, bool with_wpe) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> out;
  for (std::size_t i = 0; i < c.n_layer; ++i) {
    const std::string h = "h." + std::to_string(i) + ".";
    out.push_back({h + "ln_1.weight", {d}});
    out.push_back({h + "ln_1.bias", {d}});
    out.push_back({h + "attn.c_attn.weight", {3 * d, d}});
    out.push_back({h + "attn.c_attn.bias", {3 * d}});
    out.push_back({h + "attn.c_proj.weight", {d, d}});
    out.push_back({h + "attn.c_proj.bias", {d}});
    out.push_back({h + "ln_2.weight", {d}});
    out.push_back({h + "ln_2.bias", {d}});
    out.push_back({h + "mlp.c_fc.weight", {4 * d, d}});
    out.push_back({h + "mlp.c_fc.bias", {4 * d}});
    out.push_back({h + "mlp.c_proj.weight", {d, 4 * d}});
    out.push_back({h + "mlp.c_proj.bias", {d}});
  }
  out.push_back({"ln_f.weight", {d}});
  out.push_back({"ln_f.bias", {d}});
  if (with_wte) out.push_back({"wte.weight", {c.vocab_size, d}});
  if (with_wpe) out.push_back({"wpe.weight", {c.max_seq_len, d}});
  return out;
}

}  // namespace

void GPTParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) { visit_params(*this, fn); }

void GPTParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t GPTParams::param_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

void GPTParams::set_frozen(bool frozen) {
  visit([frozen](const std::string&, Tensor& t) { t.set_requires_grad(!frozen); });
}

GPTParams init_random(const GPTConfig& config, std::uint64_t seed) {
  config.validate();
  const bool with_wte = config.vocab_size > 0;
  const bool with_wpe = with_wte || config.use_native_positional_embeddings;
  Rng rng(seed);
  GPTParams p;
  p.config = config;
  p.blocks.resize(config.n_layer);
  if (with_wte) p.token_embedding = Tensor();
  if (with_wpe) p.position_embedding = Tensor();
  const auto layout = expected_layout(config, with_wte, with_wpe);
  std::size_t slot = 0;
  p.visit([&](const std::string& name, Tensor& t) {
    const Shape& shape = layout[slot++].second;
    const bool is_gain = name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight";
    if (shape.size() == 2) {
      t = normal_tensor(shape, 0.0, 0.02, rng);
    } else {
      t = Tensor::full(shape, is_gain ? 1.0 : 0.0);
    }
    t.set_requires_grad(true);
  });
  return p;
}

GPTParams import_weights(const TensorContainer& container, const GPTConfig& config) {
  config.validate();
  const bool with_wte = container.contains("wte.weight") && config.vocab_size > 0;
  const bool with_wpe = container.contains("wpe.weight") || config.use_native_positional_embeddings;
  GPTParams p;
  p.config = config;
  p.blocks.resize(config.n_layer);
  if (with_wte) p.token_embedding = Tensor();
  if (with_wpe) p.position_embedding = Tensor();
  const auto layout = expected_layout(config, with_wte, with_wpe);
  std::size_t slot = 0;
  p.visit([&](const std::string& name, Tensor& t) {
    const Shape& expected = layout[slot++].second;
    if (!container.contains(name)) throw ImportError("missing tensor '" + name + "' in weight container");
    const Tensor& found = container.get(name);
    if (found.shape() != expected) {
      throw ImportError("tensor '" + name + "' has shape " + shape_str(found.shape()) + ", expected " +
                        shape_str(expected));
    }
    t = found.clone();
    t.set_requires_grad(false);
  });
  return p;
}

GPTParams import_weights(const std::filesystem::path& container_path, const GPTConfig& config) {
  return import_weights(TensorContainer::read(container_path), config);
}

void export_weights(const GPTParams& params, TensorContainer& container) {
  params.visit([&](const std::string& name, const Tensor& t) { container.put(name, t); });
}

Tensor gpt_forward(const Tensor& hidden, const PadMask& pad_mask, const GPTParams& params,
                   const WeightProvider* adapters) {
  const GPTConfig& c = params.config;
  if (hidden.rank() != 3 || hidden.dim(2) != c.d_model) {
    throw DimensionError("gpt_forward: expected [B, L, " + std::to_string(c.d_model) + "], got " +
                         shape_str(hidden.shape()));
  }
  const std::size_t B = hidden.dim(0), L = hidden.dim(1), d = c.d_model, h = c.n_head, dk = d / h;
  if (L > c.max_seq_len) {
    throw RangeError("sequence length " + std::to_string(L) + " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  if (pad_mask.batch != B || pad_mask.length != L) {
    throw DimensionError("gpt_forward: pad mask does not match input " + shape_str(hidden.shape()));
  }

  auto weight = [&](std::size_t layer, MatrixRole role) {
    const Tensor& base = params.blocks[layer].matrix(role);
    return adapters ? adapters->weight(layer, role, base) : base;
  };
  auto heads = [&](const Tensor& x) { return ops::swap_axes_12(ops::reshape(x, {B, L, h, dk})); };

  Tensor x = hidden;
  if (c.use_native_positional_embeddings) {
    if (!params.position_embedding) throw ConfigError("native positional embeddings requested but not loaded");
    std::vector<std::size_t> positions(B * L);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % L;
    x = ops::add(x, ops::reshape(ops::embedding(*params.position_embedding, positions), {B, L, d}));
  }
  for (std::size_t layer = 0; layer < params.blocks.size(); ++layer) {
    const GPTBlock& blk = params.blocks[layer];
    const Tensor a = ops::layer_norm(x, blk.ln1_gain, blk.ln1_bias, c.layer_norm_eps);
    const Tensor qkv = ops::linear(a, weight(layer, MatrixRole::kAttnQkv), &blk.attn_qkv_bias);
    const Tensor q = heads(ops::slice_last(qkv, 0, d));
    const Tensor k = heads(ops::slice_last(qkv, d, d));
    const Tensor v = heads(ops::slice_last(qkv, 2 * d, d));
    const Tensor att = ops::reshape(ops::swap_axes_12(ops::causal_softmax_attention(q, k, v, pad_mask)), {B, L, d});
    x = ops::add(x, ops::linear(att, weight(layer, MatrixRole::kAttnProj), &blk.attn_proj_bias));
    const Tensor m = ops::layer_norm(x, blk.ln2_gain, blk.ln2_bias, c.layer_norm_eps);
    const Tensor fc = ops::gelu(ops::linear(m, weight(layer, MatrixRole::kMlpFc), &blk.mlp_fc_bias));
    x = ops::add(x, ops::linear(fc, weight(layer, MatrixRole::kMlpProj), &blk.mlp_proj_bias));
  }
  return ops::layer_norm(x, params.final_ln_gain, params.final_ln_bias, c.layer_norm_eps);
}

}  // namespace dtq
