#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dtq/errors.hpp"
#include "dtq/evaluation.hpp"
#include "dtq/market_data.hpp"
#include "dtq/trading_env.hpp"
#include "dtq/training.hpp"

namespace fs = std::filesystem;

namespace dtq::cli {

namespace {

constexpr int kSchemaVersion = 1;
const std::vector<std::uint64_t> kPaperSeeds{20742, 55230, 85125, 96921, 67851};

Json prop(const char* type) { return {{"type", type}}; }
Json positive_int() { return {{"type", "integer"}, {"minimum", 1}}; }

Json object_of(Json properties) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"additionalProperties", false}};
}

}  // namespace

Json config_schema() {
  Json env = object_of({{"initial_balance", prop("number")},
                        {"hmax", positive_int()},
                        {"transaction_cost_rate", prop("number")},
                        {"reward_scale", prop("number")},
                        {"gamma", prop("number")}});
  Json gpt = object_of({{"n_layer", positive_int()},
                        {"n_head", positive_int()},
                        {"d_model", positive_int()},
                        {"max_seq_len", positive_int()},
                        {"vocab_size", {{"type", "integer"}, {"minimum", 0}}},
                        {"use_native_positional_embeddings", prop("boolean")},
                        {"layer_norm_eps", prop("number")}});
  Json dt = object_of({{"context_len", positive_int()}, {"max_ep_len", positive_int()}});
  Json lora = object_of({{"rank", positive_int()},
                         {"alpha", prop("number")},
                         {"targets", {{"type", "array"}, {"items", {{"type", "string"}, {"enum", {"attn_qkv", "attn_proj"}}}}}}});
  lora["type"] = {"object", "null"};
  Json train = object_of({{"learning_rate", prop("number")},
                          {"weight_decay", prop("number")},
                          {"batch_size", positive_int()},
                          {"iterations", positive_int()},
                          {"grad_clip", prop("number")}});
  Json bc = object_of({{"hidden", {{"type", "integer"}, {"minimum", 0}}}});
  Json split = object_of({{"train_end", prop("string")}, {"test_end", prop("string")}});
  Json synth = object_of({{"kind", {{"type", "string"}, {"enum", {"random_walk", "gbm", "mean_reverting", "ou"}}}},
                          {"tickers", positive_int()},
                          {"days", positive_int()},
                          {"start_date", prop("string")},
                          {"drift", prop("number")},
                          {"volatility", prop("number")},
                          {"reversion", prop("number")}});
  Json ingest = object_of({{"max_missing_fraction", prop("number")}});
  Json root = object_of({{"schema_version", {{"type", "integer"}, {"enum", {kSchemaVersion}}}},
                         {"env", env},
                         {"gpt", gpt},
                         {"dt", dt},
                         {"lora", lora},
                         {"train", train},
                         {"bc", bc},
                         {"split", split},
                         {"synth", synth},
                         {"ingest", ingest}});
  root["required"] = {"schema_version"};
  return root;
}

namespace {

bool has_type(const Json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  return false;
}

void check(const Json& value, const Json& schema, const std::string& where) {
  if (schema.contains("type")) {
    const Json& t = schema["type"];
    bool ok = false;
    if (t.is_array()) {
      for (const auto& alt : t) ok = ok || has_type(value, alt.get<std::string>());
    } else {
      ok = has_type(value, t.get<std::string>());
    }
    if (!ok) throw ConfigError("config " + where + ": expected " + t.dump() + ", got " + value.dump());
  }
  if (schema.contains("enum")) {
    const Json& options = schema["enum"];
    if (std::find(options.begin(), options.end(), value) == options.end()) {
      throw ConfigError("config " + where + ": value " + value.dump() + " not in " + options.dump());
    }
  }
  if (schema.contains("minimum") && value.is_number() && value.get<double>() < schema["minimum"].get<double>()) {
    throw ConfigError("config " + where + ": " + value.dump() + " is below the minimum " + schema["minimum"].dump());
  }
  if (value.is_object() && schema.contains("properties")) {
    const Json& props = schema["properties"];
    for (const auto& [key, child] : value.items()) {
      if (!props.contains(key)) throw ConfigError("config " + where + ": unknown key '" + key + "'");
      check(child, props[key], where + "." + key);
    }
    for (const auto& req : schema.value("required", Json::array())) {
      if (!value.contains(req.get<std::string>())) {
        throw ConfigError("config " + where + ": missing required key '" + req.get<std::string>() + "'");
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i) check(value[i], schema["items"], where + "[" + std::to_string(i) + "]");
  }
}

}  // namespace

void validate_config(const Json& config) { check(config, config_schema(), "$"); }

namespace {

// Everything a command needs from --config, with defaults filled in.
struct Settings {
  Json raw = Json::object();
  EnvConfig env;
  GPTConfig gpt;
  std::size_t context_len = 20;
  std::size_t max_ep_len = 4096;
  std::optional<LoRAConfig> lora = LoRAConfig{};
  TrainConfig train;
  std::size_t bc_hidden = 0;
  std::string train_end, test_end;
  SynthOptions synth;
  LoadOptions ingest;

  Json resolved() const {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["env"] = env.to_json();
    j["gpt"] = gpt_config_to_json(gpt);
    j["dt"] = {{"context_len", context_len}, {"max_ep_len", max_ep_len}};
    j["lora"] = lora ? lora_config_to_json(*lora) : Json(nullptr);
    j["train"] = train.to_json();
    j["bc"] = {{"hidden", bc_hidden}};
    j["split"] = {{"train_end", train_end}, {"test_end", test_end}};
    return j;
  }
};

Settings load_settings(const std::string& path) {
  Settings s;
  if (path.empty()) return s;
  const Json raw = read_json(path);
  validate_config(raw);
  s.raw = raw;
  const Json empty = Json::object();
  s.env = EnvConfig::from_json(raw.value("env", empty));
  s.gpt = gpt_config_from_json(raw.value("gpt", empty));
  const Json dt = raw.value("dt", empty);
  s.context_len = dt.value("context_len", s.context_len);
  s.max_ep_len = dt.value("max_ep_len", s.max_ep_len);
  if (raw.contains("lora")) {
    if (raw["lora"].is_null()) {
      s.lora.reset();
    } else {
      s.lora = lora_config_from_json(raw["lora"]);
    }
  }
  s.train = TrainConfig::from_json(raw.value("train", empty));
  s.bc_hidden = raw.value("bc", empty).value("hidden", std::size_t{0});
  const Json split = raw.value("split", empty);
  s.train_end = split.value("train_end", "");
  s.test_end = split.value("test_end", "");
  const Json synth = raw.value("synth", empty);
  if (synth.contains("kind")) s.synth.kind = parse_synth_kind(synth["kind"].get<std::string>());
  s.synth.tickers = synth.value("tickers", s.synth.tickers);
  s.synth.days = synth.value("days", s.synth.days);
  s.synth.start_date = synth.value("start_date", s.synth.start_date);
  s.synth.drift = synth.value("drift", s.synth.drift);
  s.synth.volatility = synth.value("volatility", s.synth.volatility);
  s.synth.reversion = synth.value("reversion", s.synth.reversion);
  s.ingest.max_missing_fraction = raw.value("ingest", empty).value("max_missing_fraction", s.ingest.max_missing_fraction);
  return s;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One manifest per artifact-producing command.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed) : command_(std::move(command)), seed_(seed), started_(utc_now()) {}

  void input(const fs::path& path) {
    if (fs::is_directory(path)) {
      for (const char* name : {"model.bin", "model.json"}) {
        if (fs::exists(path / name)) inputs_[(path / name).string()] = sha256_file(path / name);
      }
    } else {
      inputs_[path.string()] = sha256_file(path);
    }
  }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }
  void config(Json resolved) { config_ = std::move(resolved); }

  void write(const fs::path& where) const {
    Json j;
    j["command"] = command_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["seed"] = seed_;
    j["timestamps"] = {{"started", started_}, {"finished", utc_now()}};
    write_json(where, j);
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  std::string started_;
  Json config_ = Json::object();
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const std::string& s : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("seed '" + s + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

double total_return(const Trajectory& t) {
  double total = 0.0;
  for (double r : t.rewards) total += r;
  return total;
}

double best_total_return(std::span<const Trajectory> data) {
  double best = total_return(data.front());
  for (const Trajectory& t : data) best = std::max(best, total_return(t));
  return best;
}

DTConfig dt_config_for(const Settings& s, const Trajectory& sample) {
  DTConfig dc;
  dc.context_len = s.context_len;
  dc.max_ep_len = s.max_ep_len;
  dc.state_dim = sample.state_dim();
  dc.action_dim = sample.action_dim();
  return dc;
}

// Split used when neither config nor flags give dates: first 70% of days
// train, the rest test.
std::pair<FeaturePanel, FeaturePanel> split_panel(const FeaturePanel& panel, const Settings& s) {
  if (!s.train_end.empty() && !s.test_end.empty()) {
    PanelSplit p = split_by_date(panel, s.train_end, s.test_end);
    return {std::move(p.train), std::move(p.test)};
  }
  const std::size_t cut = panel.num_days() * 7 / 10;
  if (cut < 2 || panel.num_days() - cut < 2) throw DataError("panel too short to split into train and test periods");
  return {slice_days(panel, 0, cut), slice_days(panel, cut, panel.num_days())};
}

struct TrainedDT {
  Checkpoint checkpoint;
  TrainResult result;
};

TrainedDT train_dt_checkpoint(const Settings& s, std::span<const Trajectory> data, const std::string& init,
                              const std::string& backbone_path, std::uint64_t seed) {
  const DTConfig dc = dt_config_for(s, data.front());
  GPTParams backbone;
  if (init == "pretrained") {
    if (backbone_path.empty()) throw ConfigError("--init pretrained needs --backbone <container>");
    backbone = import_weights(backbone_path, s.gpt);
  } else if (init == "random") {
    backbone = init_random(s.gpt, seed);
  } else {
    throw ConfigError("unknown init '" + init + "' (random | pretrained)");
  }
  DecisionTransformer model = DecisionTransformer::create(std::move(backbone), dc, s.lora, seed);
  const NormStats stats = fit_normalizer(data);
  TrainConfig tc = s.train;
  tc.seed = seed;
  const TrainableCounts counts = model.trainable_param_count();
  spdlog::info("DT trainable parameters: lora {} embedders {} head {} backbone {} total {}", counts.lora,
               counts.embedders, counts.head, counts.backbone, counts.total());
  TrainResult result = train_dt(model, data, stats, tc);
  TrainedDT out;
  Checkpoint& ck = out.checkpoint;
  ck.kind = ModelKind::kDecisionTransformer;
  ck.dt = std::move(model);
  ck.lora = s.lora;
  ck.stats = stats;
  ck.train = tc;
  ck.env = s.env.to_json();
  ck.init = init;
  ck.expert = data.front().meta.expert;
  ck.eval_target_return = best_total_return(data);
  ck.final_loss = result.final_loss;
  out.result = std::move(result);
  return out;
}

struct Context {
  std::string config_path;
  std::uint64_t seed = 0;
  std::map<const CLI::App*, std::uint64_t> seeds;  // per subcommand
};

void add_config(CLI::App* cmd, Context& ctx) {
  cmd->add_option("--config", ctx.config_path, "JSON config (schema_version 1)")->check(CLI::ExistingFile);
}

void add_seed(CLI::App* cmd, Context& ctx, std::uint64_t fallback) {
  std::uint64_t& seed = ctx.seeds[cmd];
  seed = fallback;
  cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  configure_logging();
  CLI::App app{"Decision Transformer trading pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Context ctx;

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic OHLCV panel");
  std::string synth_out, synth_kind, synth_start;
  std::size_t synth_tickers = 0, synth_days = 0;
  synth->add_option("--out", synth_out, "Output OHLCV CSV")->required();
  synth->add_option("--kind", synth_kind, "random_walk | mean_reverting");
  synth->add_option("--tickers", synth_tickers, "Number of tickers");
  synth->add_option("--days", synth_days, "Number of business days");
  synth->add_option("--start", synth_start, "First date (YYYY-MM-DD)");
  add_config(synth, ctx);
  add_seed(synth, ctx, 0);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Align an OHLCV CSV and compute indicators");
  std::string ingest_in, ingest_out;
  double max_missing = -1.0;
  ingest->add_option("--input", ingest_in, "OHLCV CSV (date,ticker,open,high,low,close,volume)")->required();
  ingest->add_option("--out", ingest_out, "Feature CSV")->required();
  ingest->add_option("--max-missing", max_missing, "Largest tolerated fraction of missing dates per ticker");
  add_config(ingest, ctx);

  // gen-expert
  auto* gen = app.add_subcommand("gen-expert", "Roll out scripted experts into a trajectory file");
  std::string gen_data, gen_experts = "momentum", gen_out, gen_start, gen_end;
  gen->add_option("--data", gen_data, "Feature CSV")->required();
  gen->add_option("--expert", gen_experts, "buy_and_hold | momentum | oracle_lookahead (comma list)")->capture_default_str();
  gen->add_option("--out", gen_out, "Trajectory JSONL")->required();
  gen->add_option("--start", gen_start, "First date to use");
  gen->add_option("--end", gen_end, "Last date to use (defaults to the config train period)");
  add_config(gen, ctx);
  add_seed(gen, ctx, 0);

  // train-dt
  auto* tdt = app.add_subcommand("train-dt", "Train a Decision Transformer checkpoint");
  std::string tdt_data, tdt_out, tdt_init = "random", tdt_backbone;
  std::size_t iterations = 0;
  tdt->add_option("--data", tdt_data, "Trajectory JSONL")->required();
  tdt->add_option("--out", tdt_out, "Checkpoint directory")->required();
  tdt->add_option("--init", tdt_init, "random | pretrained")->capture_default_str();
  tdt->add_option("--backbone", tdt_backbone, "Backbone container for --init pretrained");
  tdt->add_option("--iterations", iterations, "Override train.iterations");
  add_config(tdt, ctx);
  add_seed(tdt, ctx, kPaperSeeds.front());

  // train-bc
  auto* tbc = app.add_subcommand("train-bc", "Train the parameter-matched behavior cloning baseline");
  std::string tbc_data, tbc_out;
  tbc->add_option("--data", tbc_data, "Trajectory JSONL")->required();
  tbc->add_option("--out", tbc_out, "Checkpoint directory")->required();
  tbc->add_option("--iterations", iterations, "Override train.iterations");
  add_config(tbc, ctx);
  add_seed(tbc, ctx, kPaperSeeds.front());

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Deploy a checkpoint on the test period");
  std::string ev_ckpt, ev_data, ev_out, ev_start, ev_end, ev_seeds = "20742,55230,85125,96921,67851";
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", ev_data, "Feature CSV")->required();
  eval->add_option("--out", ev_out, "Report directory")->required();
  eval->add_option("--start", ev_start, "First test date (defaults to the config split)");
  eval->add_option("--end", ev_end, "Last test date");
  eval->add_option("--seeds", ev_seeds, "Comma-separated seeds")->capture_default_str();
  add_config(eval, ctx);

  // report
  auto* report = app.add_subcommand("report", "Rebuild a report from its equity CSVs");
  std::string rep_in, rep_out;
  report->add_option("--report", rep_in, "report.json written by evaluate")->required()->check(CLI::ExistingFile);
  report->add_option("--out", rep_out, "Where to write the rebuilt report");

  // compare-init
  auto* cmp = app.add_subcommand("compare-init", "Pretrained vs random backbone, per expert, over seeds");
  std::string cmp_data, cmp_experts = "momentum,oracle_lookahead", cmp_backbone, cmp_out;
  std::size_t cmp_seeds = 5;
  cmp->add_option("--data", cmp_data, "Feature CSV")->required();
  cmp->add_option("--experts", cmp_experts, "Comma-separated experts")->capture_default_str();
  cmp->add_option("--seeds", cmp_seeds, "How many of the standard seeds to run")->capture_default_str()->check(
      CLI::Range(std::size_t{1}, kPaperSeeds.size()));
  cmp->add_option("--backbone", cmp_backbone, "Pretrained backbone container")->required();
  cmp->add_option("--out", cmp_out, "Output directory")->required();
  cmp->add_option("--iterations", iterations, "Override train.iterations");
  add_config(cmp, ctx);

  // init-backbone
  auto* initb = app.add_subcommand("init-backbone", "Write a randomly initialised backbone container");
  std::string initb_out;
  initb->add_option("--out", initb_out, "Container path")->required();
  add_config(initb, ctx);
  add_seed(initb, ctx, 0);

  auto* schema = app.add_subcommand("schema", "Print the config JSON schema");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (const auto& [cmd, seed] : ctx.seeds) {
    if (cmd->parsed()) ctx.seed = seed;
  }

  try {
    Settings s = load_settings(ctx.config_path);
    if (iterations > 0) s.train.iterations = iterations;

    if (*schema) {
      std::cout << config_schema().dump(2) << '\n';
      return 0;
    }

    if (*synth) {
      SynthOptions opt = s.synth;
      if (!synth_kind.empty()) opt.kind = parse_synth_kind(synth_kind);
      if (synth_tickers > 0) opt.tickers = synth_tickers;
      if (synth_days > 0) opt.days = synth_days;
      if (!synth_start.empty()) opt.start_date = synth_start;
      opt.seed = ctx.seed;
      Manifest m("synth-data", ctx.seed);
      if (!ctx.config_path.empty()) m.input(ctx.config_path);
      m.config({{"kind", opt.kind == SynthKind::kRandomWalk ? "random_walk" : "mean_reverting"},
                {"tickers", opt.tickers},
                {"days", opt.days},
                {"start_date", opt.start_date},
                {"drift", opt.drift},
                {"volatility", opt.volatility},
                {"reversion", opt.reversion}});
      ensure_parent(synth_out);
      write_ohlcv(synth_panel(opt), synth_out);
      m.output(synth_out);
      m.write(manifest_for_file(synth_out));
      spdlog::info("wrote {} tickers x {} days to {}", opt.tickers, opt.days, synth_out);
      return 0;
    }

    if (*ingest) {
      LoadOptions opt = s.ingest;
      if (max_missing >= 0.0) opt.max_missing_fraction = max_missing;
      Manifest m("ingest", 0);
      m.input(ingest_in);
      m.config({{"max_missing_fraction", opt.max_missing_fraction}});
      const FeaturePanel fp = compute_indicators(load_ohlcv(ingest_in, opt));
      ensure_parent(ingest_out);
      write_features(fp, ingest_out);
      m.output(ingest_out);
      m.write(manifest_for_file(ingest_out));
      std::cout << "features: " << fp.num_tickers() << " tickers, " << fp.num_days() << " days ("
                << fp.prices.dates.front() << " .. " << fp.prices.dates.back() << ")\n";
      return 0;
    }

    if (*gen) {
      const FeaturePanel full = load_features(gen_data);
      const std::string last = !gen_end.empty() ? gen_end : s.train_end.empty() ? "" : add_days(s.train_end, -1);
      const FeaturePanel panel = slice_dates(full, gen_start, last);
      Manifest m("gen-expert", ctx.seed);
      m.input(gen_data);
      Json resolved = s.resolved();
      resolved["experts"] = split_list(gen_experts);
      resolved["date_range"] = {panel.prices.dates.front(), panel.prices.dates.back()};
      m.config(resolved);
      std::vector<Trajectory> trajs;
      for (const std::string& name : split_list(gen_experts)) {
        RolloutResult r = scripted_expert(parse_expert(name), panel, s.env);
        r.trajectory.meta.seed = ctx.seed;
        EquityCurve curve{r.trajectory.dates, r.equity};
        std::cout << name << ": " << r.trajectory.length() << " steps, cumulative return "
                  << format_double(cumulative_return(curve)) << "%, total scaled reward "
                  << format_double(total_return(r.trajectory)) << '\n';
        trajs.push_back(std::move(r.trajectory));
      }
      ensure_parent(gen_out);
      write_trajectories(gen_out, trajs);
      m.output(gen_out);
      m.write(manifest_for_file(gen_out));
      return 0;
    }

    if (*tdt) {
      const std::vector<Trajectory> data = read_trajectories(tdt_data);
      Manifest m("train-dt", ctx.seed);
      m.input(tdt_data);
      if (!tdt_backbone.empty()) m.input(tdt_backbone);
      TrainedDT trained = train_dt_checkpoint(s, data, tdt_init, tdt_backbone, ctx.seed);
      trained.checkpoint.save(tdt_out);
      write_loss_csv(fs::path(tdt_out) / "loss.csv", trained.result.losses);
      Json resolved = s.resolved();
      resolved["init"] = tdt_init;
      m.config(resolved);
      for (const char* f : {"model.bin", "model.json", "loss.csv"}) m.output(fs::path(tdt_out) / f);
      m.write(fs::path(tdt_out) / "manifest.json");
      const TrainableCounts c = trained.checkpoint.dt->trainable_param_count();
      std::cout << "trainable parameters: lora " << c.lora << ", embedders " << c.embedders << ", head " << c.head
                << ", backbone " << c.backbone << ", total " << c.total() << '\n'
                << "final training action MSE " << format_double(trained.result.final_loss) << '\n';
      return 0;
    }

    if (*tbc) {
      const std::vector<Trajectory> data = read_trajectories(tbc_data);
      const DTConfig dc = dt_config_for(s, data.front());
      const std::size_t dt_count = expected_trainable_count(s.gpt, dc, s.lora).total();
      const std::size_t hidden =
          s.bc_hidden > 0 ? s.bc_hidden : BCModel::hidden_for_budget(dc.state_dim, dc.action_dim, dt_count);
      BCModel model(dc.state_dim, dc.action_dim, hidden, ctx.seed);
      const double ratio = static_cast<double>(model.param_count()) / static_cast<double>(dt_count);
      if (std::abs(ratio - 1.0) > 0.10) {
        spdlog::warn("BC has {} parameters, {:.1f}% of the DT's {}", model.param_count(), 100.0 * ratio, dt_count);
      }
      Manifest m("train-bc", ctx.seed);
      m.input(tbc_data);
      const NormStats stats = fit_normalizer(data);
      TrainConfig tc = s.train;
      tc.seed = ctx.seed;
      TrainResult result = train_bc(model, data, stats, tc);
      Checkpoint ck;
      ck.kind = ModelKind::kBehaviorCloning;
      ck.bc = std::move(model);
      ck.stats = stats;
      ck.train = tc;
      ck.env = s.env.to_json();
      ck.init = "random";
      ck.expert = data.front().meta.expert;
      ck.eval_target_return = best_total_return(data);
      ck.final_loss = result.final_loss;
      ck.save(tbc_out);
      write_loss_csv(fs::path(tbc_out) / "loss.csv", result.losses);
      Json resolved = s.resolved();
      resolved["bc"]["hidden"] = hidden;
      m.config(resolved);
      for (const char* f : {"model.bin", "model.json", "loss.csv"}) m.output(fs::path(tbc_out) / f);
      m.write(fs::path(tbc_out) / "manifest.json");
      std::cout << "BC hidden width " << hidden << ", parameters " << ck.bc->param_count() << " (DT " << dt_count
                << ")\nfinal training action MSE " << format_double(result.final_loss) << '\n';
      return 0;
    }

    if (*eval) {
      const Checkpoint ck = Checkpoint::load(ev_ckpt);
      const FeaturePanel full = load_features(ev_data);
      const std::string first = !ev_start.empty() ? ev_start : s.train_end;
      const std::string last = !ev_end.empty() ? ev_end : s.test_end;
      const FeaturePanel panel = slice_dates(full, first, last);
      const EnvConfig env = ctx.config_path.empty() ? EnvConfig::from_json(ck.env) : s.env;
      const std::vector<std::uint64_t> seeds = parse_seed_list(ev_seeds);
      Manifest m("evaluate", seeds.front());
      m.input(ev_ckpt);
      m.input(ev_data);
      Json resolved = {{"env", env.to_json()}, {"seeds", seeds}, {"date_range", {panel.prices.dates.front(), panel.prices.dates.back()}}};
      m.config(resolved);
      fs::create_directories(ev_out);
      Evaluation ev = evaluate_checkpoint(ck, panel, env, seeds, fs::path(ev_out));
      ev.report.metadata["checkpoint_sha256"] = sha256_file(fs::path(ev_ckpt) / "model.bin");
      write_json(fs::path(ev_out) / "report.json", ev.report.to_json());
      m.output(fs::path(ev_out) / "report.json");
      for (const SeedMetrics& r : ev.report.rows) m.output(fs::path(ev_out) / r.equity_csv);
      m.write(fs::path(ev_out) / "manifest.json");
      const ComparisonRow row{ck.expert, ck.init, ev.report};
      std::cout << format_comparison_table(std::span(&row, 1));
      return 0;
    }

    if (*report) {
      const MetricsReport rebuilt = report_from_equity_csvs(rep_in);
      const MetricsReport stored = MetricsReport::from_json(read_json(rep_in));
      double worst = 0.0;
      for (std::size_t i = 0; i < rebuilt.rows.size(); ++i) {
        worst = std::max(worst, std::abs(rebuilt.rows[i].cumulative_return_pct - stored.rows[i].cumulative_return_pct));
        worst = std::max(worst, std::abs(rebuilt.rows[i].mdd_pct - stored.rows[i].mdd_pct));
        if (rebuilt.rows[i].sharpe && stored.rows[i].sharpe) {
          worst = std::max(worst, std::abs(*rebuilt.rows[i].sharpe - *stored.rows[i].sharpe));
        }
      }
      if (!rep_out.empty()) {
        ensure_parent(rep_out);
        write_json(rep_out, rebuilt.to_json());
      }
      const ComparisonRow row{rebuilt.metadata.value("expert", ""), rebuilt.metadata.value("init", ""), rebuilt};
      std::cout << format_comparison_table(std::span(&row, 1)) << "max deviation from stored report: "
                << format_double(worst) << '\n';
      return 0;
    }

    if (*cmp) {
      const FeaturePanel full = load_features(cmp_data);
      const auto [train_panel, test_panel] = split_panel(full, s);
      const std::vector<std::uint64_t> seeds(kPaperSeeds.begin(), kPaperSeeds.begin() + static_cast<std::ptrdiff_t>(cmp_seeds));
      Manifest m("compare-init", seeds.front());
      m.input(cmp_data);
      m.input(cmp_backbone);
      Json resolved = s.resolved();
      resolved["experts"] = split_list(cmp_experts);
      resolved["seeds"] = seeds;
      resolved["train_range"] = {train_panel.prices.dates.front(), train_panel.prices.dates.back()};
      resolved["test_range"] = {test_panel.prices.dates.front(), test_panel.prices.dates.back()};
      m.config(resolved);
      const fs::path out(cmp_out);
      fs::create_directories(out);
      std::vector<ComparisonRow> rows;
      Json table = Json::array();
      for (const std::string& expert : split_list(cmp_experts)) {
        const RolloutResult demo = scripted_expert(parse_expert(expert), train_panel, s.env);
        const std::vector<Trajectory> data{demo.trajectory};
        for (const std::string init : {"pretrained", "random"}) {
          MetricsReport agg;
          for (std::uint64_t seed : seeds) {
            const fs::path run_dir = out / expert / init / ("seed_" + std::to_string(seed));
            TrainedDT trained = train_dt_checkpoint(s, data, init, cmp_backbone, seed);
            trained.checkpoint.save(run_dir / "checkpoint");
            const std::uint64_t one[] = {seed};
            fs::create_directories(run_dir / "eval");
            Evaluation ev = evaluate_checkpoint(trained.checkpoint, test_panel, s.env, one, run_dir / "eval");
            SeedMetrics row = ev.report.rows.front();
            row.equity_csv = (fs::path(expert) / init / ("seed_" + std::to_string(seed)) / "eval" / row.equity_csv).string();
            agg.rows.push_back(row);
            m.output(run_dir);
          }
          agg.aggregate();
          agg.metadata = {{"expert", expert}, {"init", init}};
          table.push_back(agg.to_json());
          rows.push_back({expert, init, std::move(agg)});
        }
      }
      const std::string text = format_comparison_table(rows);
      write_text(out / "comparison.txt", text);
      write_json(out / "comparison.json", table);
      m.output(out / "comparison.txt");
      m.output(out / "comparison.json");
      m.write(out / "manifest.json");
      std::cout << text;
      return 0;
    }

    if (*initb) {
      Manifest m("init-backbone", ctx.seed);
      m.config({{"gpt", gpt_config_to_json(s.gpt)}});
      TensorContainer c;
      export_weights(init_random(s.gpt, ctx.seed), c);
      ensure_parent(initb_out);
      c.write(initb_out);
      m.output(initb_out);
      m.write(manifest_for_file(initb_out));
      std::cout << "backbone: " << c.size() << " tensors, " << c.total_elements() << " parameters\n";
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 2;
}

}  // namespace dtq::cli
