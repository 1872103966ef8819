#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ebt/listops.hpp"
#include "ebt/parent_attention.hpp"

using namespace ebt::listops;

namespace {

// Independent stack-machine evaluator used as an oracle against the
// recursive evaluator.
int stack_evaluate(const std::vector<std::string>& tokens) {
  std::vector<std::vector<int>> args_stack;
  std::vector<std::string> op_stack;
  std::vector<int> cur;
  for (const auto& t : tokens) {
    if (t == "[MAX" || t == "[MIN" || t == "[MED" || t == "[SM") {
      op_stack.push_back(t);
      args_stack.push_back(std::move(cur));
      cur.clear();
    } else if (t == "]") {
      std::string op = op_stack.back();
      op_stack.pop_back();
      int value;
      if (op == "[MAX")
        value = *std::max_element(cur.begin(), cur.end());
      else if (op == "[MIN")
        value = *std::min_element(cur.begin(), cur.end());
      else if (op == "[MED") {
        std::vector<int> s = cur;
        std::sort(s.begin(), s.end());
        value = s[(s.size() - 1) / 2];
      } else {
        int acc = 0;
        for (int v : cur) acc = (acc + v) % 10;
        value = acc;
      }
      cur = std::move(args_stack.back());
      args_stack.pop_back();
      cur.push_back(value);
    } else {
      cur.push_back(std::stoi(t));
    }
  }
  return cur.back();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  for (char c : s) {
    if (c == ' ') {
      if (!tok.empty()) out.push_back(tok);
      tok.clear();
    } else {
      tok.push_back(c);
    }
  }
  if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

TEST_CASE("evaluator closed-form cases") {
  CHECK(evaluate_expression(split("[MAX 3 7 ]")) == 7);
  CHECK(evaluate_expression(split("[SM 4 9 ]")) == 3);
  CHECK(evaluate_expression(split("[MIN 8 2 5 ]")) == 2);
  // MED takes the lower middle on even counts
  CHECK(evaluate_expression(split("[MED 1 2 3 4 ]")) == 2);
  CHECK(evaluate_expression(split("[MED 9 1 5 ]")) == 5);
  CHECK(evaluate_expression(split("[MIN [MAX 1 2 ] 0 ]")) == 0);
}

TEST_CASE("generator respects bounds and matches the stack oracle") {
  GenConfig cfg;
  cfg.max_depth = 3;
  cfg.max_args = 3;
  cfg.max_length = 30;
  cfg.seed = 42;
  cfg.validate();

  std::mt19937_64 rng(cfg.seed);
  for (int i = 0; i < 1000; i++) {
    Sample s = generate_sample(cfg, rng);
    CHECK(s.tokens.size() <= 30);
    CHECK(s.label >= 0);
    CHECK(s.label <= 9);
    CHECK(s.label == stack_evaluate(s.tokens));
    CHECK(s.label == evaluate_expression(s.tokens));

    int depth = 0, max_depth = 0;
    for (const auto& t : s.tokens) {
      if (t[0] == '[') max_depth = std::max(max_depth, ++depth);
      if (t == "]") depth--;
    }
    CHECK(depth == 0);
    CHECK(max_depth <= 3);
  }

  GenConfig bad;
  bad.max_length = 3;  // too small for "[OP a b ]"
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("generation is deterministic in the seed") {
  GenConfig cfg;
  cfg.seed = 7;
  auto a = generate_dataset(cfg, 50, true);
  auto b = generate_dataset(cfg, 50, true);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); i++) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].gold_trace == b[i].gold_trace);
  }
}

TEST_CASE("gold traces") {
  Sample flat;
  flat.tokens = split("[MAX 3 7 ]");
  flat.label = 7;
  auto trace = gold_trace(flat);
  CHECK(trace.size() == flat.tokens.size() - 1);  // n-1 merges

  // nested: the inner MAX scope merges before the outer merge consumes it
  Sample nested;
  nested.tokens = split("[MIN [MAX 1 2 ] 0 ]");
  auto ntrace = gold_trace(nested);
  CHECK(ntrace.size() == nested.tokens.size() - 1);
  // replay: the inner scope [MAX 1 2 ] spans positions 1..4; all merges
  // inside it must complete while those five tokens are still contiguous
  {
    int len = static_cast<int>(nested.tokens.size());
    std::vector<int> sizes(len, 1);  // token-count of each working node
    bool inner_done = false;
    for (int j : ntrace) {
      REQUIRE(j >= 0);
      REQUIRE(j + 1 < static_cast<int>(sizes.size()));
      sizes[j] += sizes[j + 1];
      sizes.erase(sizes.begin() + j + 1);
      if (!inner_done)
        for (int sz : sizes)
          if (sz == 5) inner_done = true;  // the whole inner scope
      // the outer scope only completes at the very end
      if (sizes.size() > 1)
        for (int sz : sizes) CHECK(sz < len);
    }
    CHECK(inner_done);
    CHECK(sizes.size() == 1);
  }

  // random traces: every merge index stays in range during replay
  GenConfig cfg;
  cfg.seed = 11;
  std::mt19937_64 rng(cfg.seed);
  for (int i = 0; i < 200; i++) {
    Sample s = generate_sample(cfg, rng);
    auto t = gold_trace(s);
    REQUIRE(t.size() == s.tokens.size() - 1);
    int len = static_cast<int>(s.tokens.size());
    for (int j : t) {
      CHECK(j >= 0);
      CHECK(j < len - 1);
      len--;
    }
  }

  Sample malformed;
  malformed.tokens = split("[MAX 3 7");
  CHECK_THROWS_AS(gold_trace(malformed), parse_error);
}

TEST_CASE("gold trace replays into a full tree record") {
  ebt::GRCParams cell;
  std::mt19937_64 rng(3);
  cell = ebt::GRCParams::init(2, 8, rng);
  GenConfig cfg;
  cfg.seed = 5;
  std::mt19937_64 gen_rng(cfg.seed);
  Sample s = generate_sample(cfg, gen_rng);
  std::vector<ebt::Tensor> terms;
  std::normal_distribution<double> gauss;
  for (size_t i = 0; i < s.tokens.size(); i++)
    terms.push_back(ebt::Tensor::from({2}, {gauss(rng), gauss(rng)}));
  auto rec = ebt::record_tree(gold_trace(s), terms, cell);
  CHECK(rec.l() == static_cast<int64_t>(s.tokens.size()) - 1);
}

TEST_CASE("tokenize roundtrip and vocabulary") {
  CHECK(kVocab.size() == 15);
  GenConfig cfg;
  cfg.seed = 9;
  std::mt19937_64 rng(cfg.seed);
  for (int i = 0; i < 100; i++) {
    Sample s = generate_sample(cfg, rng);
    auto ids = tokenize(s.tokens);
    CHECK(detokenize(ids) == s.tokens);
    for (int id : ids) {
      CHECK(id >= 0);
      CHECK(id < 15);
    }
  }
  CHECK_THROWS_AS(tokenize({"FOO"}), vocab_error);
}

TEST_CASE("dataset file IO") {
  std::string path = "listops_io_test.tsv";
  auto samples = generate_dataset([] {
    GenConfig c;
    c.seed = 21;
    return c;
  }(), 100, true);
  write_dataset(path, samples);
  auto back = read_dataset(path);
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < samples.size(); i++) {
    CHECK(back[i].tokens == samples[i].tokens);
    CHECK(back[i].label == samples[i].label);
    CHECK(back[i].gold_trace == samples[i].gold_trace);
  }

  // absent trace column parses
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("[MAX 3 7 ]\t7\n", f);
    std::fclose(f);
    auto one = read_dataset(path);
    REQUIRE(one.size() == 1);
    CHECK(one[0].label == 7);
    CHECK(!one[0].gold_trace.has_value());
  }

  // truncated line names its line number
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("[MAX 3 7 ]\t7\n[MIN 1 2 ]\n", f);
    std::fclose(f);
    try {
      read_dataset(path);
      FAIL("expected parse_error");
    } catch (const parse_error& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
  std::remove(path.c_str());
}
