#include "dtq/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dtq/errors.hpp"

namespace dtq {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative (0 disables)");
}

Json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay}, {"batch_size", batch_size},
          {"iterations", iterations},       {"seed", seed},                 {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

void adam_step(std::span<const ParamRef> params, std::span<const std::vector<double>> grads, OptimState& opt,
               const TrainConfig& config) {
  if (params.size() != grads.size()) throw ContractError("adam_step: gradient list does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i].tensor;
    if (grads[i].size() != p.numel()) {
      throw DimensionError("adam_step: gradient for '" + params[i].name + "' has " + std::to_string(grads[i].size()) +
                           " entries, parameter has " + std::to_string(p.numel()));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + params[i].name + "'");
    }
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t), c2 = 1.0 - std::pow(opt.beta2, t);
  const double lr = config.learning_rate, wd = config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (!p.requires_grad()) continue;
    auto& m = opt.m[params[i].name];
    auto& v = opt.v[params[i].name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    std::span<double> w = p.mutable_data();
    const std::vector<double>& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + wd * w[k]);
    }
  }
}

double clip_global_norm(std::span<std::vector<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g) x *= factor;
    }
  }
  return norm;
}

std::vector<ParamRef> trainable_params(DecisionTransformer& model) {
  std::vector<ParamRef> out;
  model.visit_trainable([&out](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

TrainableCounts expected_trainable_count(const GPTConfig& gpt, const DTConfig& dt,
                                         const std::optional<LoRAConfig>& lora) {
  const std::size_t d = gpt.d_model;
  auto embedder = [d](std::size_t in) { return in * d + d + 2 * (d * d + d); };
  TrainableCounts c;
  c.embedders = embedder(1) + embedder(dt.state_dim) + embedder(dt.action_dim) + dt.max_ep_len * d + 2 * d;
  c.head = dt.action_dim * d + dt.action_dim;
  if (lora) {
    for (MatrixRole role : lora->targets) {
      const std::size_t rows = role == MatrixRole::kAttnQkv ? 3 * d : d;
      c.lora += gpt.n_layer * lora->rank * (rows + d);
    }
  } else {
    c.backbone = gpt.param_count();
  }
  return c;
}

namespace {

// One optimisation step shared by the DT and BC loops.
template <typename LossFn>
double train_step(std::span<const ParamRef> params, OptimState& opt, const TrainConfig& config, std::size_t iteration,
                  LossFn&& compute_loss) {
  Tape tape;
  for (const ParamRef& p : params) tape.watch(*p.tensor);
  const Tensor loss = compute_loss();
  const double value = loss.item();
  if (!std::isfinite(value) || value > kDivergenceLoss) {
    throw TrainingError("training diverged at iteration " + std::to_string(iteration) + " (loss " +
                        std::to_string(value) + ")");
  }
  const Gradients grads = tape.backward(loss);
  std::vector<std::vector<double>> g;
  g.reserve(params.size());
  for (const ParamRef& p : params) {
    const Tensor gt = grads.of(*p.tensor);
    g.emplace_back(gt.data().begin(), gt.data().end());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double x : g[i]) {
      if (!std::isfinite(x)) throw TrainingError("non-finite gradient in parameter '" + params[i].name + "'");
    }
  }
  clip_global_norm(g, config.grad_clip);
  adam_step(params, g, opt, config);
  return value;
}

void check_dataset(std::span<const Trajectory> data, std::size_t state_dim, std::size_t action_dim) {
  if (data.empty()) throw DataError("training dataset is empty");
  for (const Trajectory& t : data) {
    if (t.state_dim() != state_dim || t.action_dim() != action_dim) {
      throw DimensionError("trajectory widths (" + std::to_string(t.state_dim()) + ", " +
                           std::to_string(t.action_dim()) + ") do not match the model (" + std::to_string(state_dim) +
                           ", " + std::to_string(action_dim) + ")");
    }
  }
}

constexpr std::size_t kEvalChunk = 256;

}  // namespace

TrainResult train_dt(DecisionTransformer& model, std::span<const Trajectory> data, const NormStats& stats,
                     const TrainConfig& config, const LossCallback& on_step) {
  config.validate();
  const DTConfig& dc = model.config();
  check_dataset(data, dc.state_dim, dc.action_dim);
  WindowSampler sampler(data, dc.context_len, stats, config.seed);
  const std::vector<ParamRef> params = trainable_params(model);
  if (params.empty()) throw ConfigError("model has no trainable parameters");
  OptimState opt;
  TrainResult result;
  result.losses.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const WindowBatch batch = sampler.next_batch(config.batch_size);
    const double loss = train_step(params, opt, config, it, [&] {
      return action_loss(model.predict_actions(batch), batch.actions, batch.pad_mask);
    });
    result.losses.push_back(loss);
    if (on_step) on_step(it, loss);
    if ((it + 1) % 100 == 0) spdlog::debug("dt iteration {} loss {:.6g}", it + 1, loss);
  }
  result.final_loss = dataset_action_mse(model, data, stats);
  return result;
}

double dataset_action_mse(const DecisionTransformer& model, std::span<const Trajectory> data, const NormStats& stats) {
  const DTConfig& dc = model.config();
  double sq = 0.0;
  std::size_t count = 0;
  std::vector<WindowSample> chunk;
  std::vector<std::pair<std::size_t, std::size_t>> anchors;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t t = 0; t < data[i].length(); ++t) anchors.emplace_back(i, t);
  }
  for (std::size_t start = 0; start < anchors.size(); start += kEvalChunk) {
    chunk.clear();
    const std::size_t end = std::min(anchors.size(), start + kEvalChunk);
    for (std::size_t j = start; j < end; ++j) {
      chunk.push_back(sample_window(data[anchors[j].first], anchors[j].second, dc.context_len, stats));
    }
    const WindowBatch batch = make_batch(chunk, dc.state_dim, dc.action_dim);
    const Tensor pred = model.predict_actions(batch);
    // Only the anchor (last slot) of each window is scored, so every
    // transition counts exactly once.
    const std::size_t K = dc.context_len, da = dc.action_dim;
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (std::size_t c = 0; c < da; ++c) {
        const std::size_t idx = (b * K + K - 1) * da + c;
        const double d = pred.data()[idx] - batch.actions.data()[idx];
        sq += d * d;
        ++count;
      }
    }
  }
  return sq / static_cast<double>(count);
}

BCModel::BCModel(std::size_t state_dim, std::size_t action_dim, std::size_t hidden, std::uint64_t seed)
    : state_dim_(state_dim), action_dim_(action_dim), hidden_(hidden) {
  if (state_dim == 0 || action_dim == 0 || hidden == 0) throw ConfigError("BC model sizes must be positive");
  Rng rng(seed);
  // He-style scaling keeps the hidden activations O(1) for normalized states.
  auto weight = [&rng](std::size_t out, std::size_t in) {
    Tensor w = normal_tensor({out, in}, 0.0, std::sqrt(2.0 / static_cast<double>(in)), rng);
    w.set_requires_grad(true);
    return w;
  };
  w1_ = weight(hidden, state_dim);
  b1_ = Tensor::zeros({hidden}, true);
  w2_ = weight(hidden, hidden);
  b2_ = Tensor::zeros({hidden}, true);
  w3_ = weight(action_dim, hidden);
  b3_ = Tensor::zeros({action_dim}, true);
}

Tensor BCModel::forward(const Tensor& states) const {
  const Tensor h1 = ops::gelu(ops::linear(states, w1_, &b1_));
  const Tensor h2 = ops::gelu(ops::linear(h1, w2_, &b2_));
  return ops::tanh(ops::linear(h2, w3_, &b3_));
}

std::vector<ParamRef> BCModel::params() {
  return {{"bc.fc1.weight", &w1_}, {"bc.fc1.bias", &b1_}, {"bc.fc2.weight", &w2_},
          {"bc.fc2.bias", &b2_},   {"bc.out.weight", &w3_}, {"bc.out.bias", &b3_}};
}

std::size_t BCModel::param_count() const { return count_for(state_dim_, action_dim_, hidden_); }

std::size_t BCModel::count_for(std::size_t ds, std::size_t da, std::size_t h) {
  return ds * h + h + h * h + h + h * da + da;
}

std::size_t BCModel::hidden_for_budget(std::size_t ds, std::size_t da, std::size_t target) {
  // h^2 + (ds + da + 2) h + da = target
  const double b = static_cast<double>(ds + da + 2);
  const double c = static_cast<double>(da) - static_cast<double>(target);
  const double root = (-b + std::sqrt(b * b - 4.0 * c)) / 2.0;
  std::size_t best = 1;
  auto gap = [&](std::size_t h) {
    const double n = static_cast<double>(count_for(ds, da, h));
    return std::abs(n - static_cast<double>(target));
  };
  for (std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(root) - 1);
       h <= static_cast<std::size_t>(std::max(root, 0.0)) + 2; ++h) {
    if (gap(h) < gap(best)) best = h;
  }
  return best;
}

void BCModel::export_to(TensorContainer& container) const {
  for (const ParamRef& p : const_cast<BCModel*>(this)->params()) container.put(p.name, *p.tensor);
}

void BCModel::import_from(const TensorContainer& container) {
  for (const ParamRef& p : params()) {
    const Tensor& found = container.get(p.name);
    if (found.shape() != p.tensor->shape()) {
      throw ImportError("tensor '" + p.name + "' has shape " + shape_str(found.shape()) + ", expected " +
                        shape_str(p.tensor->shape()));
    }
    *p.tensor = found.clone();
    p.tensor->set_requires_grad(true);
  }
}

namespace {

Tensor state_rows(std::span<const Trajectory> data, std::span<const std::pair<std::size_t, std::size_t>> picks,
                  const NormStats& stats, std::size_t ds) {
  std::vector<double> rows;
  rows.reserve(picks.size() * ds);
  for (const auto& [i, t] : picks) {
    const std::vector<double> s = stats.normalize_state(data[i].states[t]);
    rows.insert(rows.end(), s.begin(), s.end());
  }
  return Tensor({picks.size(), ds}, std::move(rows));
}

Tensor action_rows(std::span<const Trajectory> data, std::span<const std::pair<std::size_t, std::size_t>> picks,
                   std::size_t da) {
  std::vector<double> rows;
  rows.reserve(picks.size() * da);
  for (const auto& [i, t] : picks) rows.insert(rows.end(), data[i].actions[t].begin(), data[i].actions[t].end());
  return Tensor({picks.size(), da}, std::move(rows));
}

}  // namespace

TrainResult train_bc(BCModel& model, std::span<const Trajectory> data, const NormStats& stats,
                     const TrainConfig& config, const LossCallback& on_step) {
  config.validate();
  check_dataset(data, model.state_dim(), model.action_dim());
  WindowSampler sampler(data, 1, stats, config.seed);
  const std::vector<ParamRef> params = model.params();
  OptimState opt;
  TrainResult result;
  std::vector<std::pair<std::size_t, std::size_t>> picks(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (auto& p : picks) p = sampler.draw();
    const Tensor x = state_rows(data, picks, stats, model.state_dim());
    const Tensor y = action_rows(data, picks, model.action_dim());
    const double loss = train_step(params, opt, config, it, [&] {
      const Tensor d = ops::sub(model.forward(x), y);
      return ops::mean(ops::mul(d, d));
    });
    result.losses.push_back(loss);
    if (on_step) on_step(it, loss);
  }
  result.final_loss = dataset_action_mse(model, data, stats);
  return result;
}

double dataset_action_mse(const BCModel& model, std::span<const Trajectory> data, const NormStats& stats) {
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t t = 0; t < data[i].length(); ++t) picks.emplace_back(i, t);
  }
  const Tensor pred = model.forward(state_rows(data, picks, stats, model.state_dim()));
  const Tensor y = action_rows(data, picks, model.action_dim());
  double sq = 0.0;
  for (std::size_t k = 0; k < y.numel(); ++k) {
    const double d = pred.data()[k] - y.data()[k];
    sq += d * d;
  }
  return sq / static_cast<double>(y.numel());
}

Json gpt_config_to_json(const GPTConfig& c) {
  return {{"n_layer", c.n_layer},
          {"n_head", c.n_head},
          {"d_model", c.d_model},
          {"max_seq_len", c.max_seq_len},
          {"vocab_size", c.vocab_size},
          {"use_native_positional_embeddings", c.use_native_positional_embeddings},
          {"layer_norm_eps", c.layer_norm_eps}};
}

GPTConfig gpt_config_from_json(const Json& j) {
  GPTConfig c;
  c.n_layer = j.value("n_layer", c.n_layer);
  c.n_head = j.value("n_head", c.n_head);
  c.d_model = j.value("d_model", c.d_model);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.use_native_positional_embeddings = j.value("use_native_positional_embeddings", c.use_native_positional_embeddings);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.validate();
  return c;
}

Json dt_config_to_json(const DTConfig& c) {
  return {{"context_len", c.context_len},
          {"state_dim", c.state_dim},
          {"action_dim", c.action_dim},
          {"max_ep_len", c.max_ep_len}};
}

DTConfig dt_config_from_json(const Json& j) {
  DTConfig c;
  c.context_len = j.value("context_len", c.context_len);
  c.state_dim = j.value("state_dim", c.state_dim);
  c.action_dim = j.value("action_dim", c.action_dim);
  c.max_ep_len = j.value("max_ep_len", c.max_ep_len);
  return c;
}

Json lora_config_to_json(const LoRAConfig& c) {
  Json targets = Json::array();
  for (MatrixRole r : c.targets) targets.push_back(role_name(r));
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", targets}};
}

LoRAConfig lora_config_from_json(const Json& j) {
  LoRAConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("targets")) {
    c.targets.clear();
    for (const auto& t : j.at("targets")) c.targets.push_back(parse_role(t.get<std::string>()));
  }
  return c;
}

namespace {

constexpr const char* kModelFile = "model.bin";
constexpr const char* kSidecarFile = "model.json";

std::string kind_name(ModelKind k) { return k == ModelKind::kDecisionTransformer ? "decision_transformer" : "bc"; }

}  // namespace

Json Checkpoint::sidecar() const {
  Json j;
  j["model_kind"] = kind_name(kind);
  if (kind == ModelKind::kDecisionTransformer) {
    j["gpt_config"] = gpt_config_to_json(dt->backbone().config);
    j["dt_config"] = dt_config_to_json(dt->config());
    j["lora_config"] = lora ? lora_config_to_json(*lora) : Json(nullptr);
    const TrainableCounts c = dt->trainable_param_count();
    j["trainable_parameters"] = {{"lora", c.lora},           {"embedders", c.embedders}, {"head", c.head},
                                 {"backbone", c.backbone},   {"total", c.total()}};
  } else {
    j["bc_config"] = {{"state_dim", bc->state_dim()}, {"action_dim", bc->action_dim()}, {"hidden", bc->hidden()}};
    j["trainable_parameters"] = {{"total", bc->param_count()}};
  }
  j["normalizer"] = stats.to_json();
  j["train_config"] = train.to_json();
  j["env_config"] = env;
  j["init"] = init;
  j["expert"] = expert;
  j["seed"] = train.seed;
  j["iterations"] = train.iterations;
  j["eval_target_return"] = eval_target_return;
  j["final_loss"] = final_loss;
  return j;
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  TensorContainer container;
  if (kind == ModelKind::kDecisionTransformer) {
    dt->export_to(container);
  } else {
    bc->export_to(container);
  }
  container.write(dir / kModelFile);
  write_json(dir / kSidecarFile, sidecar());
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / kSidecarFile)) {
    throw IoError("checkpoint not found: " + (dir / kSidecarFile).string());
  }
  const Json j = read_json(dir / kSidecarFile);
  const TensorContainer container = TensorContainer::read(dir / kModelFile);
  Checkpoint ck;
  try {
    const std::string kind = j.at("model_kind").get<std::string>();
    ck.stats = NormStats::from_json(j.at("normalizer"));
    ck.train = TrainConfig::from_json(j.at("train_config"));
    ck.env = j.value("env_config", Json::object());
    ck.init = j.value("init", "random");
    ck.expert = j.value("expert", "");
    ck.eval_target_return = j.value("eval_target_return", 0.0);
    ck.final_loss = j.value("final_loss", 0.0);
    if (kind == kind_name(ModelKind::kDecisionTransformer)) {
      ck.kind = ModelKind::kDecisionTransformer;
      const GPTConfig gc = gpt_config_from_json(j.at("gpt_config"));
      const DTConfig dc = dt_config_from_json(j.at("dt_config"));
      if (!j.at("lora_config").is_null()) ck.lora = lora_config_from_json(j.at("lora_config"));
      // Shapes come from the configs; every value is then overwritten.
      ck.dt = DecisionTransformer::create(init_random(gc, 0), dc, ck.lora, 0);
      ck.dt->import_from(container);
    } else if (kind == kind_name(ModelKind::kBehaviorCloning)) {
      ck.kind = ModelKind::kBehaviorCloning;
      const Json& bc = j.at("bc_config");
      ck.bc = BCModel(bc.at("state_dim").get<std::size_t>(), bc.at("action_dim").get<std::size_t>(),
                      bc.at("hidden").get<std::size_t>(), 0);
      ck.bc->import_from(container);
    } else {
      throw ConfigError("unknown model_kind '" + kind + "' in " + (dir / kSidecarFile).string());
    }
  } catch (const Json::exception& e) {
    throw ConfigError("malformed checkpoint sidecar " + (dir / kSidecarFile).string() + ": " + e.what());
  }
  return ck;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
  std::ostringstream os;
  os << "iteration,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << format_double(losses[i]) << '\n';
  write_text(path, os.str());
}

}  // namespace dtq
