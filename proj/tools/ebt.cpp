#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebt/bench.hpp"
#include "ebt/config.hpp"
#include "ebt/gradcheck.hpp"
#include "ebt/listops.hpp"
#include "ebt/train.hpp"
#include "ebt/tree_search.hpp"

namespace {

ebt::Config load_config(const std::string& path) {
  return path.empty() ? ebt::Config{} : ebt::Config::load(path);
}

int cmd_gen(const std::string& config_path, uint64_t seed, int count,
            const std::string& out) {
  ebt::Config cfg = load_config(config_path);
  ebt::listops::GenConfig gen;
  gen.max_depth = cfg.get_int("max_depth", gen.max_depth);
  gen.max_args = cfg.get_int("max_args", gen.max_args);
  gen.max_length = cfg.get_int("max_length", gen.max_length);
  gen.nest_prob = cfg.get_double("nest_prob", gen.nest_prob);
  gen.seed = seed;
  gen.validate();
  auto samples =
      ebt::listops::generate_dataset(gen, count, /*with_traces=*/true);
  ebt::listops::write_dataset(out, samples);
  std::printf("wrote %d samples to %s\n", count, out.c_str());
  return 0;
}

ebt::ModelConfig model_config(const ebt::Config& cfg) {
  ebt::ModelConfig mc;
  mc.variant = ebt::variant_from_name(cfg.get("variant", "ebt-grc"));
  mc.d = cfg.get_int("d", mc.d);
  mc.d_cell = cfg.get_int("d_cell", mc.d_cell);
  mc.d_s = cfg.get_int("d_s", mc.d_s);
  mc.d_emb = cfg.get_int("d_emb", mc.d_emb);
  mc.beam_size = cfg.get_int("beam_size", mc.beam_size);
  mc.slice = cfg.get_bool("slice", mc.slice);
  mc.gumbel_temperature =
      cfg.get_double("gumbel_temperature", mc.gumbel_temperature);
  mc.gau_iterations = cfg.get_int("gau_iterations", mc.gau_iterations);
  mc.gau_head = cfg.get_int("gau_head", mc.gau_head);
  mc.pos_max_dist = cfg.get_int("pos_max_dist", mc.pos_max_dist);
  mc.gau_dropout = cfg.get_double("gau_dropout", mc.gau_dropout);
  mc.fill_defaults();
  return mc;
}

int cmd_train(const std::string& config_path, uint64_t seed,
              const std::string& data_path, const std::string& val_path,
              const std::string& out) {
  ebt::Config cfg = load_config(config_path);
  ebt::Model model = ebt::Model::init(model_config(cfg), seed);
  auto train_data = ebt::listops::read_dataset(data_path);
  std::vector<ebt::listops::Sample> val_data;
  if (!val_path.empty()) val_data = ebt::listops::read_dataset(val_path);

  int epochs = cfg.get_int("epochs", 10);
  int batch_size = cfg.get_int("batch_size", 32);
  ebt::AdamConfig ac;
  ac.lr = cfg.get_double("lr", ac.lr);
  std::vector<ebt::Tensor> params;
  for (auto& [name, p] : model.named_params()) params.push_back(p);
  ebt::Adam opt(params, ac);
  std::mt19937_64 rng(seed + 1);

  for (int epoch = 1; epoch <= epochs; epoch++) {
    auto metrics = ebt::train_epoch(model, train_data, batch_size, opt, rng);
    std::printf("epoch %d loss %.6f train_acc %.4f", epoch, metrics.mean_loss,
                metrics.accuracy);
    if (!val_data.empty())
      std::printf(" val_acc %.4f", ebt::evaluate(model, val_data));
    std::printf("\n");
    std::fflush(stdout);
  }
  if (!out.empty()) {
    ebt::save_checkpoint(model, out);
    std::printf("saved checkpoint to %s\n", out.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path) {
  ebt::Model model = ebt::load_checkpoint(ckpt);
  auto data = ebt::listops::read_dataset(data_path);
  std::printf("val_acc %.4f\n", ebt::evaluate(model, data));
  return 0;
}

int cmd_bench(const std::string& config_path, uint64_t seed,
              const std::string& out) {
  ebt::Config cfg = load_config(config_path);
  ebt::bench::BenchConfig bc;
  bc.lengths = cfg.get_int_list("lengths", bc.lengths);
  if (cfg.has("variants")) {
    bc.variants.clear();
    std::istringstream in(cfg.get("variants", ""));
    std::string tok;
    while (std::getline(in, tok, ','))
      if (!tok.empty()) bc.variants.push_back(tok);
  }
  bc.d = cfg.get_int("d", bc.d);
  bc.d_cell = cfg.get_int("d_cell", bc.d_cell);
  bc.d_s = cfg.get_int("d_s", bc.d_s);
  bc.beam_size = cfg.get_int("beam_size", bc.beam_size);
  bc.repetitions = cfg.get_int("repetitions", bc.repetitions);
  bc.scalar_budget = cfg.get_int("scalar_budget", 0);
  bc.seed = seed;
  auto rows = ebt::bench::bench_run(bc);
  std::fputs(ebt::bench::format_table(rows).c_str(), stdout);
  if (!out.empty()) {
    std::ofstream f(out);
    f << ebt::bench::format_csv(rows);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  auto entries = ebt::gradcheck_suite(seed);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-20s max rel err %.3e\n", e.name.c_str(), e.max_rel_err);
    if (!(e.max_rel_err < 1e-4)) ok = false;
  }
  std::printf("%s\n", ok ? "all ops pass (< 1e-4)" : "FAILED (>= 1e-4)");
  return ok ? 0 : 2;
}

int cmd_oracle(int n, int k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  int d = 8;
  ebt::GRCParams cell = ebt::GRCParams::init(d, 4 * d, rng);
  ebt::ScorerParams scorer = ebt::ScorerParams::init(d, 4, true, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<ebt::Tensor> x;
  for (int i = 0; i < n; i++) {
    std::vector<double> v(d);
    for (auto& e : v) e = gauss(rng);
    x.push_back(ebt::Tensor::from({d}, std::move(v)));
  }
  auto oracle = ebt::exhaustive_merge_oracle(x, cell, scorer,
                                             ebt::ScoreMode::disentangled);
  auto res = ebt::beam_encode(x, k, cell, scorer, ebt::ScoreMode::disentangled,
                              /*noise=*/false, rng);
  double max_dev = 0.0;
  size_t matched = 0;
  for (size_t bi = 0; bi < res.traces.size(); bi++) {
    for (const auto& entry : oracle) {
      if (entry.trace != res.traces[bi]) continue;
      matched++;
      max_dev = std::max(max_dev,
                         std::abs(entry.score - res.scores[bi].item()));
      for (int64_t i = 0; i < entry.root.size(); i++)
        max_dev = std::max(max_dev, std::abs(entry.root.values()[i] -
                                             res.roots[bi].values()[i]));
      break;
    }
  }
  if (matched != res.traces.size()) {
    std::fprintf(stderr, "oracle: %zu of %zu beam traces unmatched\n",
                 res.traces.size() - matched, res.traces.size());
    return 2;
  }
  std::printf("n=%d k=%d beams=%zu max deviation %.3e\n", n, k,
              res.traces.size(), max_dev);
  return max_dev < 1e-9 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beam-tree recursive encoder toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, data_path, val_path, ckpt;
  uint64_t seed = 0;
  int count = 1000, oracle_n = 4, oracle_k = 6;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--seed", seed, "RNG seed (all randomness derives here)");
    sub->add_option("--out", out, "output path");
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--count", count, "number of samples");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data_path, "training dataset")->required();
  train->add_option("--val", val_path, "validation dataset");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--data", data_path, "dataset")->required();

  auto* bench = app.add_subcommand("bench", "memory/time benchmark");
  add_common(bench);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference suite");
  add_common(gradcheck);

  auto* oracle =
      app.add_subcommand("oracle", "beam vs exhaustive-search agreement");
  add_common(oracle);
  oracle->add_option("--n", oracle_n, "sequence length (<= 6)");
  oracle->add_option("--k", oracle_k, "beam size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen(config_path, seed, count,
                     out.empty() ? "dataset.tsv" : out);
    if (train->parsed())
      return cmd_train(config_path, seed, data_path, val_path, out);
    if (eval->parsed()) return cmd_eval(ckpt, data_path);
    if (bench->parsed()) return cmd_bench(config_path, seed, out);
    if (gradcheck->parsed()) return cmd_gradcheck(seed);
    if (oracle->parsed()) return cmd_oracle(oracle_n, oracle_k, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
