#include "ebt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>

#include "ebt/memtrack.hpp"
#include "ebt/tree_search.hpp"

namespace ebt::bench {

VariantSpec parse_variant(const std::string& name) {
  if (name == "bt-grc") return {name, true, true};
  if (name == "ebt-grc") return {name, false, true};
  if (name == "ebt-grc-noslice") return {name, false, false};
  throw contract_error("unknown bench variant \"" + name + "\"");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<BenchRow> bench_run(const BenchConfig& cfg) {
  if (cfg.lengths.empty() || cfg.variants.empty())
    throw contract_error("bench_run: empty lengths or variants");
  if (cfg.repetitions < 1) throw contract_error("bench_run: repetitions < 1");
  int d_cell = cfg.d_cell > 0 ? cfg.d_cell : 4 * cfg.d;

  std::vector<int> lengths = cfg.lengths;
  std::sort(lengths.begin(), lengths.end());

  std::vector<BenchRow> rows;
  for (const auto& vname : cfg.variants) {
    VariantSpec spec = parse_variant(vname);
    std::mt19937_64 rng(cfg.seed);
    GRCParams cell = GRCParams::init(cfg.d, d_cell, rng);
    ScorerParams scorer = ScorerParams::init(cfg.d, cfg.d_s, spec.slice, rng);
    ScoreMode mode =
        spec.entangled ? ScoreMode::entangled : ScoreMode::disentangled;

    bool busted = false;
    for (int n : lengths) {
      BenchRow row;
      row.variant = vname;
      row.length = n;
      if (busted) {
        row.over_budget = true;
        rows.push_back(row);
        continue;
      }
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<Tensor> x;
      x.reserve(n);
      for (int i = 0; i < n; i++) {
        std::vector<double> v(cfg.d);
        for (auto& e : v) e = gauss(rng);
        x.push_back(Tensor::from({cfg.d}, std::move(v), true));
      }

      std::vector<double> times;
      int64_t peak = 0;
      for (int rep = 0; rep < cfg.repetitions; rep++) {
        std::mt19937_64 noise_rng(cfg.seed + 1);  // unused: noise off
        auto t0 = std::chrono::steady_clock::now();
        auto stats = memtrack::track(vname, [&] {
          Tape tape;
          EncodeResult res = beam_encode(x, cfg.beam_size, cell, scorer, mode,
                                         /*noise=*/false, noise_rng);
          backward(sum(marginalize_roots(res.roots, res.scores)));
        });
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
        peak = stats.peak_scalars;
        for (Tensor p : {cell.w1, cell.b1, cell.w2, cell.b2, cell.ln_gain,
                         cell.ln_bias, scorer.legacy_wv, scorer.ws1,
                         scorer.bs1, scorer.ws2, scorer.bs2})
          p.zero_grad();
        for (auto& xi : x) xi.zero_grad();
      }
      row.median_ms = median(times);
      row.peak_scalars = peak;
      if (cfg.scalar_budget > 0 && peak > cfg.scalar_budget) {
        row.over_budget = true;
        busted = true;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-18s %8s %14s %14s\n", "variant",
                "length", "time (ms)", "peak scalars");
  out << line;
  for (const auto& r : rows) {
    if (r.over_budget)
      std::snprintf(line, sizeof(line), "%-18s %8d %14s %14s\n",
                    r.variant.c_str(), r.length, "-", "over budget");
    else
      std::snprintf(line, sizeof(line), "%-18s %8d %14.2f %14lld\n",
                    r.variant.c_str(), r.length, r.median_ms,
                    static_cast<long long>(r.peak_scalars));
    out << line;
  }
  return out.str();
}

std::string format_csv(const std::vector<BenchRow>& rows, bool include_time) {
  std::ostringstream out;
  out << "variant,length," << (include_time ? "time_ms," : "")
      << "peak_scalars,over_budget\n";
  char num[64];
  for (const auto& r : rows) {
    out << r.variant << ',' << r.length << ',';
    if (include_time) {
      std::snprintf(num, sizeof(num), "%.3f", r.median_ms);
      out << num << ',';
    }
    out << r.peak_scalars << ',' << (r.over_budget ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace ebt::bench
