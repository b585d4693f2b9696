// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   dtq_acceptance [--workdir DIR] [--only NAME[,NAME...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dt_checks.hpp"
#include "dtq/evaluation.hpp"
#include "dtq/lora.hpp"
#include "dtq/training.hpp"
#include "env_checks.hpp"
#include "fixtures.hpp"
#include "metric_oracles.hpp"
#include "op_catalog.hpp"

using namespace dtq;
using namespace dtq::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;  // wall-clock limit, 0 for none
  std::function<Outcome(const fs::path&)> run;
};

std::string fmt(double x) {
  std::ostringstream o;
  o.precision(3);
  o << x;
  return o.str();
}

constexpr std::uint64_t kSeeds[] = {20742, 55230, 85125, 96921, 67851};

// ---- gradients -------------------------------------------------------------

Outcome gradient_fidelity(const fs::path&) {
  std::mt19937_64 rng(1);
  double worst = 0;
  std::string worst_op;
  std::size_t instances = 0;
  for (const OpCase& op : op_catalog()) {
    for (int i = 0; i < 100; ++i) {
      OpInstance inst = op.make(rng);
      const double e = gradcheck(inst.f, inst.inputs);
      ++instances;
      if (e > worst) {
        worst = e;
        worst_op = op.name;
      }
    }
  }
  std::mt19937_64 brng(2);
  const WindowBatch batch = random_batch(2, 8, 7, 3, brng, {0, 3});
  DecisionTransformer lora = toy_model(7, 3, 3, 8, true);
  randomize_lora_b(lora, 4);
  const ParamGradReport a = dt_param_gradcheck(lora, batch, 4, 5);
  DecisionTransformer full = toy_model(7, 3, 6, 8, false);
  const ParamGradReport b = dt_param_gradcheck(full, batch, 3, 7);
  const bool pass = worst < 1e-5 && a.worst < 1e-5 && b.worst < 1e-5;
  return {pass, std::to_string(instances) + " op instances, worst " + fmt(worst) + " (" + worst_op + "); lora DT " +
                    fmt(a.worst) + " over " + std::to_string(a.coordinates) + " coords; full DT " + fmt(b.worst) +
                    " over " + std::to_string(b.coordinates) + " coords"};
}

Outcome causality(const fs::path&) {
  CausalityReport report;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const std::size_t ds = 1 + rng() % 9, da = 1 + rng() % 4;
    DecisionTransformer m = toy_model(ds, da, 100 + i, 8, i % 2 == 0);
    randomize_lora_b(m, 200 + i, 0.2);
    std::vector<std::size_t> pads{0, rng() % 8, rng() % 8};
    const WindowBatch batch = random_batch(3, 8, ds, da, rng, pads);
    check_causality(m, batch, rng, report);
  }
  return {report.ok, std::to_string(report.comparisons) + " prefix comparisons" +
                         (report.ok ? "" : ", first violation " + report.first_violation)};
}

// ---- LoRA ------------------------------------------------------------------

std::string backbone_digest(const GPTParams& p) {
  std::string bytes;
  p.visit([&](const std::string& name, const Tensor& t) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  });
  return sha256_hex(bytes);
}

Outcome lora_accounting(const fs::path&) {
  GPTConfig g = GPTConfig::gpt2_small();
  g.vocab_size = 0;
  g.max_seq_len = 6;
  GPTParams base = init_random(g, 1);
  LoRAConfig l;
  l.rank = 16;
  LoRAAdapters adapters = attach_lora(base, l, 2);
  const std::size_t n_lora = adapters.param_count();
  const std::size_t oracle = g.n_layer * (l.rank * (g.d_model + 3 * g.d_model) + l.rank * (g.d_model + g.d_model));

  // B = 0 must leave the forward untouched.
  std::mt19937_64 rng(3);
  const Tensor h = random_tensor({1, 6, g.d_model}, rng).detach();
  const PadMask mask(1, 6);
  const Tensor plain = gpt_forward(h, mask, base);
  const Tensor adapted = gpt_forward(h, mask, base, &adapters);
  const bool identical = std::memcmp(plain.data().data(), adapted.data().data(), plain.numel() * sizeof(double)) == 0;

  // 100 optimizer steps must not touch the frozen base.
  DTConfig dt;
  dt.context_len = 2;
  dt.state_dim = 19;
  dt.action_dim = 3;
  dt.max_ep_len = 256;
  DecisionTransformer model = DecisionTransformer::create(std::move(base), dt, l, 4);
  const std::string before = backbone_digest(model.backbone());
  const FeaturePanel panel = synthetic_features(3, 60, 5);
  const std::vector<Trajectory> data{scripted_expert(ExpertKind::kMomentum, panel, EnvConfig{}).trajectory};
  TrainConfig c;
  c.iterations = 100;
  c.batch_size = 1;
  c.seed = 6;
  const TrainResult r = train_dt(model, data, fit_normalizer(data), c);
  const std::string after = backbone_digest(model.backbone());
  const std::size_t after_count = model.adapters()->param_count();

  const bool pass = n_lora == 884'736 && oracle == 884'736 && after_count == n_lora && identical && before == after &&
                    r.losses.size() == 100;
  return {pass, "lora params " + std::to_string(n_lora) + " (oracle " + std::to_string(oracle) + "), B=0 forward " +
                    (identical ? "identical" : "differs") + ", backbone after 100 steps " +
                    (before == after ? "unchanged" : "changed")};
}

// ---- metrics and data ------------------------------------------------------

Outcome metric_oracles(const fs::path&) {
  std::mt19937_64 rng(17);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const EquityCurve c = random_curve(rng);
    worst = std::max(worst, rel_gap(max_drawdown(c), mdd_all_pairs(c.values)));
    worst = std::max(worst, rel_gap(cumulative_return(c), cumulative_return_oracle(c.values)));
    worst = std::max(worst, rel_gap(sharpe_ratio(c), sharpe_oracle(c.values)));
  }
  const double example = max_drawdown(EquityCurve{{}, {100, 120, 90, 110}});
  return {worst < 1e-9 && std::abs(example + 25.0) < 1e-12,
          "1000 curves, worst gap " + fmt(worst) + "; [100,120,90,110] mdd " + fmt(example)};
}

Outcome returns_to_go_check(const fs::path&) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> d(0.0, 1.0);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> r(1 + rng() % 300);
    for (double& x : r) x = d(rng);
    const std::vector<double> got = returns_to_go(r);
    for (std::size_t t = 0; t < r.size(); ++t) {
      double want = 0;
      for (std::size_t j = t; j < r.size(); ++j) want += r[j];
      worst = std::max(worst, std::abs(got[t] - want));
    }
  }
  const std::vector<double> ex = returns_to_go(std::vector<double>{1, 2, 3});
  const bool example = ex == std::vector<double>{6, 5, 3};
  return {worst <= 1e-12 && example, "200 random reward vectors, worst gap " + fmt(worst) + "; [1,2,3] -> " +
                                         (example ? "[6,5,3]" : "wrong")};
}

Outcome environment(const fs::path&) {
  std::size_t ok = 0;
  std::string fail;
  for (const LedgerCase& c : ledger_cases()) {
    const LedgerOutcome o = run_ledger_case(c);
    if (o.ok)
      ++ok;
    else if (fail.empty())
      fail = o.detail;
  }
  const TelescopeOutcome t = telescoping_rollouts(100, 23);
  const bool pass = ok == ledger_cases().size() && t.worst_gap <= 1e-6 && t.invariants;
  return {pass, std::to_string(ok) + "/" + std::to_string(ledger_cases().size()) + " ledger cases" +
                    (fail.empty() ? "" : " (" + fail + ")") + "; 100 rollouts, worst telescoping gap " +
                    fmt(t.worst_gap) + (t.invariants ? "" : ", invariant broken")};
}

// ---- training --------------------------------------------------------------

Outcome toy_overfit(const fs::path&) {
  const FeaturePanel panel = synthetic_features(3, 250, 29);
  const EnvConfig env;
  const RolloutResult expert = scripted_expert(ExpertKind::kMomentum, panel, env);
  const std::vector<Trajectory> data{expert.trajectory};
  const NormStats stats = fit_normalizer(data);
  LoRAConfig l;
  l.rank = 16;
  DecisionTransformer model = DecisionTransformer::create(
      init_random(toy_gpt(8), 31), toy_dt(data[0].state_dim(), data[0].action_dim(), 8), l, 31);
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 64;
  c.learning_rate = 1e-3;
  c.seed = 37;
  const TrainResult r = train_dt(model, data, stats, c);

  DTPolicy policy(model, stats);
  const RolloutResult deployed = rollout(policy, panel, env, expert.trajectory.rtg.front(), 0);
  const double cr_dt = cumulative_return(EquityCurve{{}, deployed.equity});
  const double cr_ex = cumulative_return(EquityCurve{{}, expert.equity});
  const bool pass = r.final_loss < 1e-2 && std::abs(cr_dt - cr_ex) <= 5.0;
  return {pass, "dataset MSE " + fmt(r.final_loss) + ", deployed return " + fmt(cr_dt) + "% vs expert " +
                    fmt(cr_ex) + "%"};
}

// ---- CLI -------------------------------------------------------------------

// Subcommand tables would drown the PASS/FAIL lines.
int run_cli(std::vector<std::string> args) {
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::run(args);
  std::cout.rdbuf(saved);
  return rc;
}

void prepare_cli_data(const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "toy.json", R"({"schema_version": 1,
    "gpt": {"n_layer": 2, "n_head": 4, "d_model": 64},
    "dt": {"context_len": 8, "max_ep_len": 512},
    "lora": {"rank": 4},
    "train": {"iterations": 40, "batch_size": 16}})");
  if (fs::exists(dir / "f.csv")) return;
  run_cli({"synth-data", "--out", (dir / "p.csv").string(), "--tickers", "3", "--days", "160", "--seed", "41"});
  run_cli({"ingest", "--input", (dir / "p.csv").string(), "--out", (dir / "f.csv").string()});
  run_cli({"gen-expert", "--data", (dir / "f.csv").string(), "--expert", "momentum", "--out",
           (dir / "t.jsonl").string()});
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "cli";
  prepare_cli_data(dir);
  std::size_t same = 0, runs = 0;
  std::string first_diff;
  for (std::uint64_t seed : kSeeds) {
    std::string prev_model, prev_report;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path ck = dir / ("ck_" + std::to_string(seed) + "_" + std::to_string(rep));
      const fs::path ev = dir / ("ev_" + std::to_string(seed) + "_" + std::to_string(rep));
      fs::remove_all(ck);
      fs::remove_all(ev);
      const int a = run_cli({"train-dt", "--data", (dir / "t.jsonl").string(), "--config", (dir / "toy.json").string(),
                             "--seed", std::to_string(seed), "--out", ck.string()});
      const int b = run_cli({"evaluate", "--ckpt", ck.string(), "--data", (dir / "f.csv").string(), "--out",
                             ev.string(), "--seeds", std::to_string(seed)});
      if (a != 0 || b != 0) return {false, "cli failed for seed " + std::to_string(seed)};
      const std::string model = file_bytes(ck / "model.bin") + file_bytes(ck / "model.json") + file_bytes(ck / "loss.csv");
      const std::string report = file_bytes(ev / "report.json") + file_bytes(ev / ("equity_" + std::to_string(seed) + ".csv"));
      if (rep == 1) {
        ++runs;
        if (model == prev_model && report == prev_report)
          ++same;
        else if (first_diff.empty())
          first_diff = std::to_string(seed);
      }
      prev_model = model;
      prev_report = report;
    }
  }
  return {same == runs && runs == 5, std::to_string(same) + "/" + std::to_string(runs) +
                                         " seeds byte-identical across repeated train+evaluate" +
                                         (first_diff.empty() ? "" : ", first mismatch seed " + first_diff)};
}

Outcome compare_init(const fs::path& work) {
  const fs::path dir = work / "cli";
  prepare_cli_data(dir);
  const fs::path out = dir / "compare";
  fs::remove_all(out);
  if (run_cli({"init-backbone", "--out", (dir / "bb.bin").string(), "--config", (dir / "toy.json").string(), "--seed",
               "43"}) != 0)
    return {false, "init-backbone failed"};
  if (run_cli({"compare-init", "--data", (dir / "f.csv").string(), "--backbone", (dir / "bb.bin").string(),
               "--config", (dir / "toy.json").string(), "--seeds", "5", "--iterations", "20", "--experts",
               "momentum,buy_and_hold", "--out", out.string()}) != 0)
    return {false, "compare-init failed"};
  const Json table = read_json(out / "comparison.json");
  const std::string text = file_bytes(out / "comparison.txt");
  std::size_t good = 0;
  for (const std::string expert : {"momentum", "buy_and_hold"}) {
    for (const std::string init : {"pretrained", "random"}) {
      for (const Json& row : table) {
        if (row["metadata"]["expert"] == expert && row["metadata"]["init"] == init && row["per_seed"].size() == 5) ++good;
      }
    }
  }
  const bool pass = good == 4 && text.find("±") != std::string::npos && fs::exists(out / "manifest.json");
  return {pass, std::to_string(good) + "/4 (expert, init) rows with 5 seeds each"};
}

std::vector<Criterion> criteria() {
  return {
      {"gradient_fidelity", 120, gradient_fidelity},
      {"causal_masking", 60, causality},
      {"lora_parameter_accounting", 0, lora_accounting},
      {"metric_oracles", 30, metric_oracles},
      {"returns_to_go", 0, returns_to_go_check},
      {"environment_accounting", 0, environment},
      {"toy_overfit", 600, toy_overfit},
      {"seed_determinism", 0, determinism},
      {"compare_init_end_to_end", 0, compare_init},
  };
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "dtq_acceptance";
  std::vector<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string s; std::getline(ss, s, ',');) only.push_back(s);
    } else {
      std::cerr << "usage: dtq_acceptance [--workdir DIR] [--only NAME[,NAME...]]\n";
      return 2;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);
  setenv("DTQ_LOG_LEVEL", "warn", 0);
  configure_logging();

  int failures = 0;
  for (const Criterion& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over time budget of " + fmt(c.budget_s) + " s";
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << fmt(secs) << " s): " << o.detail << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
