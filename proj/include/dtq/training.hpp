#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtq/dt_policy.hpp"
#include "dtq/offline_dataset.hpp"
#include "dtq/trajectory.hpp"
#include "dtq/util.hpp"

namespace dtq {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;  // decoupled
  std::size_t batch_size = 64;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  double grad_clip = 0.25;  // global L2 norm; 0 disables

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

// Bias-corrected Adam with decoupled weight decay. Parameters that do not
// require grad are skipped. A non-finite gradient throws TrainingError naming
// the parameter.
void adam_step(std::span<const ParamRef> params, std::span<const std::vector<double>> grads, OptimState& opt,
               const TrainConfig& config);

// Scales grads in place so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(std::span<std::vector<double>> grads, double max_norm);

std::vector<ParamRef> trainable_params(DecisionTransformer& model);

// Trainable parameters a DT with these configs would have, without building
// it. Without LoRA the whole backbone trains.
TrainableCounts expected_trainable_count(const GPTConfig& gpt, const DTConfig& dt,
                                         const std::optional<LoRAConfig>& lora);

// Called after every iteration with (iteration index, batch loss).
using LossCallback = std::function<void(std::size_t, double)>;

struct TrainResult {
  std::vector<double> losses;
  double final_loss = 0.0;  // action MSE over every anchor of the dataset
};

constexpr double kDivergenceLoss = 1e6;

TrainResult train_dt(DecisionTransformer& model, std::span<const Trajectory> data, const NormStats& stats,
                     const TrainConfig& config, const LossCallback& on_step = {});

// Action MSE over every (trajectory, anchor) pair, evaluated in batches.
double dataset_action_mse(const DecisionTransformer& model, std::span<const Trajectory> data, const NormStats& stats);

// s -> gelu(W1 s) -> gelu(W2 h) -> tanh(W3 h), states normalized.
class BCModel {
 public:
  BCModel() = default;
  BCModel(std::size_t state_dim, std::size_t action_dim, std::size_t hidden, std::uint64_t seed);

  Tensor forward(const Tensor& states) const;  // [N,d_s] -> [N,d_a]
  std::vector<ParamRef> params();
  std::size_t param_count() const;
  void export_to(TensorContainer& container) const;
  void import_from(const TensorContainer& container);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t hidden() const { return hidden_; }

  static std::size_t count_for(std::size_t state_dim, std::size_t action_dim, std::size_t hidden);
  // Width whose parameter count is closest to target.
  static std::size_t hidden_for_budget(std::size_t state_dim, std::size_t action_dim, std::size_t target);

 private:
  std::size_t state_dim_ = 0, action_dim_ = 0, hidden_ = 0;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

TrainResult train_bc(BCModel& model, std::span<const Trajectory> data, const NormStats& stats,
                     const TrainConfig& config, const LossCallback& on_step = {});

double dataset_action_mse(const BCModel& model, std::span<const Trajectory> data, const NormStats& stats);

Json gpt_config_to_json(const GPTConfig& c);
GPTConfig gpt_config_from_json(const Json& j);
Json dt_config_to_json(const DTConfig& c);
DTConfig dt_config_from_json(const Json& j);
Json lora_config_to_json(const LoRAConfig& c);
LoRAConfig lora_config_from_json(const Json& j);

enum class ModelKind { kDecisionTransformer, kBehaviorCloning };

// A checkpoint directory holds model.bin (named-tensor container) and
// model.json (configs, normalizer, provenance of the run).
struct Checkpoint {
  ModelKind kind = ModelKind::kDecisionTransformer;
  std::optional<DecisionTransformer> dt;
  std::optional<BCModel> bc;
  std::optional<LoRAConfig> lora;
  NormStats stats;
  TrainConfig train;
  Json env;             // trading environment config the data was generated with
  std::string init;     // "random" | "pretrained"
  std::string expert;   // expert that produced the training data
  double eval_target_return = 0.0;
  double final_loss = 0.0;

  Json sidecar() const;
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);

}  // namespace dtq
