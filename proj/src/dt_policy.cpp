#include "dtq/dt_policy.hpp"

#include "dtq/errors.hpp"
#include "dtq/util.hpp"

namespace dtq {

void DTConfig::validate(const GPTConfig& backbone) const {
  if (context_len == 0 || state_dim == 0 || action_dim == 0 || max_ep_len == 0) {
    throw ConfigError("DT config sizes must be positive");
  }
  if (token_len() > backbone.max_seq_len) {
    throw ConfigError("3K = " + std::to_string(token_len()) + " tokens exceed backbone max_seq_len " +
                      std::to_string(backbone.max_seq_len));
  }
}

Tensor ResidualEmbedder::forward(const Tensor& x) const {
  const Tensor y = ops::linear(x, lift_weight, &lift_bias);
  const Tensor hidden = ops::gelu(ops::linear(y, fc_weight, &fc_bias));
  return ops::add(y, ops::linear(hidden, out_weight, &out_bias));
}

namespace {

template <typename Set, typename Fn>
void visit_embedders(Set& s, Fn&& fn) {
  auto embedder = [&fn](const std::string& prefix, auto& e) {
    fn(prefix + ".lift.weight", e.lift_weight);
    fn(prefix + ".lift.bias", e.lift_bias);
    fn(prefix + ".fc.weight", e.fc_weight);
    fn(prefix + ".fc.bias", e.fc_bias);
    fn(prefix + ".out.weight", e.out_weight);
    fn(prefix + ".out.bias", e.out_bias);
  };
  embedder("dt.embed_rtg", s.rtg);
  embedder("dt.embed_state", s.state);
  embedder("dt.embed_action", s.action);
  fn("dt.embed_timestep.weight", s.timestep_table);
  fn("dt.embed_ln.weight", s.ln_gain);
  fn("dt.embed_ln.bias", s.ln_bias);
  fn("dt.predict_action.weight", s.head_weight);
  fn("dt.predict_action.bias", s.head_bias);
}

bool is_head(const std::string& name) { return name.starts_with("dt.predict_action"); }

ResidualEmbedder make_embedder(std::size_t in, std::size_t d, Rng& rng) {
  ResidualEmbedder e;
  e.lift_weight = normal_tensor({d, in}, 0.0, 0.02, rng);
  e.lift_bias = Tensor::zeros({d});
  e.fc_weight = normal_tensor({d, d}, 0.0, 0.02, rng);
  e.fc_bias = Tensor::zeros({d});
  e.out_weight = normal_tensor({d, d}, 0.0, 0.02, rng);
  e.out_bias = Tensor::zeros({d});
  return e;
}

}  // namespace

void EmbedderSet::visit(const std::function<void(const std::string&, Tensor&)>& fn) { visit_embedders(*this, fn); }

void EmbedderSet::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_embedders(*this, fn);
}

EmbedderSet init_embedders(const DTConfig& config, std::size_t d_model, std::uint64_t seed) {
  Rng rng(seed);
  EmbedderSet s;
  s.rtg = make_embedder(1, d_model, rng);
  s.state = make_embedder(config.state_dim, d_model, rng);
  s.action = make_embedder(config.action_dim, d_model, rng);
  s.timestep_table = normal_tensor({config.max_ep_len, d_model}, 0.0, 0.02, rng);
  s.ln_gain = Tensor::full({d_model}, 1.0);
  s.ln_bias = Tensor::zeros({d_model});
  s.head_weight = normal_tensor({config.action_dim, d_model}, 0.0, 0.02, rng);
  s.head_bias = Tensor::zeros({config.action_dim});
  s.visit([](const std::string&, Tensor& t) { t.set_requires_grad(true); });
  return s;
}

DecisionTransformer::DecisionTransformer(GPTParams backbone, std::optional<LoRAAdapters> adapters,
                                         EmbedderSet embedders, DTConfig config)
    : backbone_(std::move(backbone)),
      adapters_(std::move(adapters)),
      embedders_(std::move(embedders)),
      config_(config) {
  config_.validate(backbone_.config);
}

DecisionTransformer DecisionTransformer::create(GPTParams backbone, const DTConfig& config,
                                                const std::optional<LoRAConfig>& lora, std::uint64_t seed) {
  config.validate(backbone.config);
  std::optional<LoRAAdapters> adapters;
  if (lora) adapters = attach_lora(backbone, *lora, seed ^ 0x4c6f5241ULL);
  EmbedderSet embedders = init_embedders(config, backbone.config.d_model, seed);
  return DecisionTransformer(std::move(backbone), std::move(adapters), std::move(embedders), config);
}

EmbeddedWindow DecisionTransformer::embed_window(const WindowBatch& batch) const {
  const std::size_t B = batch.batch, K = batch.context, d = backbone_.config.d_model;
  if (K != config_.context_len) {
    throw DimensionError("window has " + std::to_string(K) + " steps, model expects " +
                         std::to_string(config_.context_len));
  }
  if (batch.rtg.shape() != Shape{B, K, 1} || batch.states.shape() != Shape{B, K, config_.state_dim} ||
      batch.actions.shape() != Shape{B, K, config_.action_dim} || batch.timesteps.size() != B * K ||
      batch.pad_mask.batch != B || batch.pad_mask.length != K) {
    throw DimensionError("window batch shapes do not match the DT config");
  }
  for (std::size_t t : batch.timesteps) {
    if (t >= config_.max_ep_len) {
      throw RangeError("timestep " + std::to_string(t) + " outside embedding table of " +
                       std::to_string(config_.max_ep_len));
    }
  }
  const EmbedderSet& e = embedders_;
  const Tensor pos = ops::embedding(e.timestep_table, batch.timesteps);  // [B*K, d]
  auto token = [&](const ResidualEmbedder& embedder, const Tensor& x, std::size_t width) {
    const Tensor emb = embedder.forward(ops::reshape(x, {B * K, width}));
    const Tensor h = ops::layer_norm(ops::add(emb, pos), e.ln_gain, e.ln_bias, backbone_.config.layer_norm_eps);
    return ops::reshape(h, {B, K, d});
  };
  const std::vector<Tensor> parts{token(e.rtg, batch.rtg, 1), token(e.state, batch.states, config_.state_dim),
                                  token(e.action, batch.actions, config_.action_dim)};
  return {ops::interleave(parts), batch.pad_mask.repeat_each(3)};
}

Tensor DecisionTransformer::predict_actions(const WindowBatch& batch) const {
  const EmbeddedWindow window = embed_window(batch);
  const Tensor out = gpt_forward(window.hidden, window.token_pad_mask, backbone_,
                                 adapters_ ? &*adapters_ : nullptr);
  std::vector<std::size_t> state_positions(batch.context);
  for (std::size_t t = 0; t < batch.context; ++t) state_positions[t] = 3 * t + 1;
  const Tensor states = ops::gather_positions(out, state_positions);
  return ops::tanh(ops::linear(states, embedders_.head_weight, &embedders_.head_bias));
}

void DecisionTransformer::visit_trainable(const std::function<void(const std::string&, Tensor&)>& fn) {
  embedders_.visit([&fn](const std::string& name, Tensor& t) {
    if (t.requires_grad()) fn(name, t);
  });
  if (adapters_) {
    for (auto& [_, pair] : adapters_->pairs()) {
      if (pair.a.requires_grad()) fn(pair.base_name + ".lora_A", pair.a);
      if (pair.b.requires_grad()) fn(pair.base_name + ".lora_B", pair.b);
    }
  }
  backbone_.visit([&fn](const std::string& name, Tensor& t) {
    if (t.requires_grad()) fn(name, t);
  });
}

TrainableCounts DecisionTransformer::trainable_param_count() const {
  TrainableCounts counts;
  embedders_.visit([&counts](const std::string& name, const Tensor& t) {
    if (!t.requires_grad()) return;
    (is_head(name) ? counts.head : counts.embedders) += t.numel();
  });
  if (adapters_) {
    for (const auto& [_, pair] : adapters_->pairs()) {
      if (pair.a.requires_grad()) counts.lora += pair.a.numel();
      if (pair.b.requires_grad()) counts.lora += pair.b.numel();
    }
  }
  backbone_.visit([&counts](const std::string&, const Tensor& t) {
    if (t.requires_grad()) counts.backbone += t.numel();
  });
  return counts;
}

void DecisionTransformer::export_to(TensorContainer& container) const {
  export_weights(backbone_, container);
  if (adapters_) adapters_->export_to(container);
  embedders_.visit([&container](const std::string& name, const Tensor& t) { container.put(name, t); });
}

void DecisionTransformer::import_from(const TensorContainer& container) {
  backbone_.visit([&container](const std::string& name, Tensor& t) {
    const Tensor& found = container.get(name);
    if (found.shape() != t.shape()) throw ImportError("tensor '" + name + "' has shape " + shape_str(found.shape()));
    const bool trainable = t.requires_grad();
    t = found.clone();
    t.set_requires_grad(trainable);
  });
  if (adapters_) {
    for (auto& [key, pair] : adapters_->pairs()) pair.base = backbone_.blocks[key.first].matrix(key.second);
    adapters_->import_from(container);
  }
  embedders_.visit([&container](const std::string& name, Tensor& t) {
    const Tensor& found = container.get(name);
    if (found.shape() != t.shape()) throw ImportError("tensor '" + name + "' has shape " + shape_str(found.shape()));
    t = found.clone();
    t.set_requires_grad(true);
  });
}

Tensor action_loss(const Tensor& pred, const Tensor& target, const PadMask& pad_mask) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("action_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  if (pred.rank() != 3 || pad_mask.batch != pred.dim(0) || pad_mask.length != pred.dim(1)) {
    throw DimensionError("action_loss: pad mask does not match " + shape_str(pred.shape()));
  }
  const std::size_t cells = pad_mask.count_unpadded();
  if (cells == 0) throw ContractError("action_loss: every cell is padded");
  const std::size_t da = pred.dim(2);
  std::vector<double> weights(pred.numel());
  for (std::size_t cell = 0; cell < pad_mask.padded.size(); ++cell) {
    const double w = pad_mask.padded[cell] ? 0.0 : 1.0;
    std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>(cell * da), da, w);
  }
  const Tensor diff = ops::sub(pred, target);
  const Tensor weighted = ops::mul(ops::mul(diff, diff), Tensor(pred.shape(), std::move(weights)));
  return ops::scale(ops::sum(weighted), 1.0 / static_cast<double>(cells * da));
}

}  // namespace dtq
