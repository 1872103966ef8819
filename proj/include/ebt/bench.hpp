#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ebt::bench {

// A bench variant is an encoder configuration: search strategy plus the
// scorer's slice switch. "-noslice" suffixed names disable slicing.
struct VariantSpec {
  std::string name;  // bt-grc | ebt-grc | ebt-grc-noslice
  bool entangled = false;
  bool slice = true;
};
VariantSpec parse_variant(const std::string& name);

struct BenchConfig {
  std::vector<int> lengths = {50, 100, 200};
  std::vector<std::string> variants = {"bt-grc", "ebt-grc"};
  int d = 128;
  int d_cell = 0;  // 0 -> 4*d
  int d_s = 64;
  int beam_size = 5;
  int repetitions = 3;
  int64_t scalar_budget = 0;  // 0 -> unlimited
  uint64_t seed = 0;
};

struct BenchRow {
  std::string variant;
  int length = 0;
  double median_ms = 0.0;
  int64_t peak_scalars = 0;
  bool over_budget = false;
};

// Forward+backward of each variant's encoder over random inputs per length
// bucket; medians over repetitions. A variant whose peak exceeds the budget
// is reported over budget and skipped at larger lengths.
std::vector<BenchRow> bench_run(const BenchConfig& cfg);

std::string format_table(const std::vector<BenchRow>& rows);
std::string format_csv(const std::vector<BenchRow>& rows,
                       bool include_time = true);

}  // namespace ebt::bench
