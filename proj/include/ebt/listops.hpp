#pragma once

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebt::listops {

struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct vocab_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed 15-symbol vocabulary: 4 operators, close bracket, 10 digits.
extern const std::vector<std::string> kVocab;
constexpr int kVocabSize = 15;
constexpr int kNumClasses = 10;

struct Sample {
  std::vector<std::string> tokens;
  int label = 0;
  std::optional<std::vector<int>> gold_trace;
};

struct GenConfig {
  int max_depth = 4;
  int max_args = 3;
  int max_length = 50;
  double nest_prob = 0.35;
  uint64_t seed = 0;

  void validate() const;
};

Sample generate_sample(const GenConfig& cfg, std::mt19937_64& rng);
std::vector<Sample> generate_dataset(const GenConfig& cfg, int count,
                                     bool with_traces);

// Recursive evaluation of a well-formed token sequence (label in 0..9).
// MED takes the lower-middle element for even argument counts; SM is the
// sum modulo 10.
int evaluate_expression(const std::vector<std::string>& tokens);

// Bottom-up binarized merge order: each operator's scope is fully merged
// innermost-first, left-branching across its argument list, with brackets
// merged into their scope as ordinary tokens.
std::vector<int> gold_trace(const Sample& sample);

std::vector<int> tokenize(const std::vector<std::string>& tokens);
std::vector<std::string> detokenize(const std::vector<int>& ids);

void write_dataset(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::string& path);

}  // namespace ebt::listops
