#include "ebt/listops.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace ebt::listops {

const std::vector<std::string> kVocab = {
    "[MAX", "[MIN", "[MED", "[SM", "]",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};

void GenConfig::validate() const {
  if (max_length < 4)
    throw config_error("gen config: max_length must be >= 4 (one operator "
                       "with two arguments)");
  if (max_args < 2) throw config_error("gen config: max_args must be >= 2");
  if (max_depth < 1) throw config_error("gen config: max_depth must be >= 1");
  if (nest_prob < 0.0 || nest_prob >= 1.0)
    throw config_error("gen config: nest_prob must be in [0,1)");
}

namespace {

int apply_op(const std::string& op, std::vector<int> args) {
  if (op == "[MAX") return *std::max_element(args.begin(), args.end());
  if (op == "[MIN") return *std::min_element(args.begin(), args.end());
  if (op == "[MED") {
    std::sort(args.begin(), args.end());
    return args[(args.size() - 1) / 2];  // lower-middle on even counts
  }
  if (op == "[SM") {
    int s = 0;
    for (int a : args) s += a;
    return s % 10;
  }
  throw parse_error("unknown operator " + op);
}

bool is_operator(const std::string& tok) {
  return tok == "[MAX" || tok == "[MIN" || tok == "[MED" || tok == "[SM";
}

bool is_digit_tok(const std::string& tok) {
  return tok.size() == 1 && tok[0] >= '0' && tok[0] <= '9';
}

void gen_expr(const GenConfig& cfg, std::mt19937_64& rng, int depth,
              int budget, std::vector<std::string>& out) {
  std::uniform_int_distribution<int> op_pick(0, 3);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  out.push_back(kVocab[op_pick(rng)]);
  int max_here = std::min(cfg.max_args, budget - 2);
  std::uniform_int_distribution<int> arg_pick(2, max_here);
  int nargs = arg_pick(rng);
  int spare = budget - 2 - nargs;  // tokens beyond one per argument
  for (int a = 0; a < nargs; a++) {
    bool can_nest = depth < cfg.max_depth && spare >= 3;
    if (can_nest && coin(rng) < cfg.nest_prob) {
      std::uniform_int_distribution<int> extra_pick(3, spare);
      int extra = extra_pick(rng);
      spare -= extra;
      gen_expr(cfg, rng, depth + 1, 1 + extra, out);
    } else {
      std::uniform_int_distribution<int> digit(0, 9);
      out.push_back(std::to_string(digit(rng)));
    }
  }
  out.push_back("]");
}

struct Parser {
  const std::vector<std::string>& toks;
  size_t pos = 0;

  explicit Parser(const std::vector<std::string>& t) : toks(t) {}

  int parse_value() {
    if (pos >= toks.size()) throw parse_error("unexpected end of expression");
    const std::string& t = toks[pos];
    if (is_digit_tok(t)) {
      pos++;
      return t[0] - '0';
    }
    if (!is_operator(t)) throw parse_error("unexpected token " + t);
    std::string op = t;
    pos++;
    std::vector<int> args;
    while (pos < toks.size() && toks[pos] != "]")
      args.push_back(parse_value());
    if (pos >= toks.size()) throw parse_error("missing closing bracket");
    pos++;  // consume "]"
    if (args.size() < 2)
      throw parse_error("operator " + op + " needs at least two arguments");
    return apply_op(op, std::move(args));
  }
};

// Parse tree with original token indices, used for gold-trace replay.
struct PNode {
  bool is_expr = false;
  int token = -1;             // leaf: original token index
  int open = -1, close = -1;  // expr: bracket token indices
  std::vector<PNode> children;
};

PNode parse_node(const std::vector<std::string>& toks, size_t& pos) {
  if (pos >= toks.size()) throw parse_error("unexpected end of expression");
  if (is_digit_tok(toks[pos])) {
    PNode leaf;
    leaf.token = static_cast<int>(pos++);
    return leaf;
  }
  if (!is_operator(toks[pos]))
    throw parse_error("unexpected token " + toks[pos]);
  PNode node;
  node.is_expr = true;
  node.open = static_cast<int>(pos++);
  while (pos < toks.size() && toks[pos] != "]")
    node.children.push_back(parse_node(toks, pos));
  if (pos >= toks.size()) throw parse_error("missing closing bracket");
  node.close = static_cast<int>(pos++);
  return node;
}

// After emit() an expression occupies one working-list slot represented by
// its opening-bracket token index.
void emit_trace(const PNode& node, std::vector<int>& work,
                std::vector<int>& trace) {
  if (!node.is_expr) return;
  for (const auto& c : node.children) emit_trace(c, work, trace);
  auto it = std::find(work.begin(), work.end(), node.open);
  int i = static_cast<int>(it - work.begin());
  // opener + |children| argument slots + closer, merged left-branching
  for (size_t m = 0; m < node.children.size() + 1; m++) {
    trace.push_back(i);
    work.erase(work.begin() + i + 1);
  }
}

}  // namespace

int evaluate_expression(const std::vector<std::string>& tokens) {
  Parser p(tokens);
  int v = p.parse_value();
  if (p.pos != tokens.size())
    throw parse_error("trailing tokens after expression");
  return v;
}

Sample generate_sample(const GenConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_int_distribution<int> budget_pick(4, cfg.max_length);
  Sample s;
  gen_expr(cfg, rng, 1, budget_pick(rng), s.tokens);
  s.label = evaluate_expression(s.tokens);
  return s;
}

std::vector<Sample> generate_dataset(const GenConfig& cfg, int count,
                                     bool with_traces) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; i++) {
    out.push_back(generate_sample(cfg, rng));
    if (with_traces) out.back().gold_trace = gold_trace(out.back());
  }
  return out;
}

std::vector<int> gold_trace(const Sample& sample) {
  size_t pos = 0;
  PNode root = parse_node(sample.tokens, pos);
  if (pos != sample.tokens.size())
    throw parse_error("trailing tokens after expression");
  std::vector<int> work(sample.tokens.size());
  for (size_t i = 0; i < work.size(); i++) work[i] = static_cast<int>(i);
  std::vector<int> trace;
  emit_trace(root, work, trace);
  return trace;
}

std::vector<int> tokenize(const std::vector<std::string>& tokens) {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    for (size_t i = 0; i < kVocab.size(); i++) m[kVocab[i]] = i;
    return m;
  }();
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = index.find(t);
    if (it == index.end()) throw vocab_error("unknown token \"" + t + "\"");
    ids.push_back(it->second);
  }
  return ids;
}

std::vector<std::string> detokenize(const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= kVocabSize)
      throw vocab_error("token id " + std::to_string(id) + " out of range");
    out.push_back(kVocab[id]);
  }
  return out;
}

void write_dataset(const std::string& path,
                   const std::vector<Sample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw parse_error("cannot open " + path + " for writing");
  for (const auto& s : samples) {
    for (size_t i = 0; i < s.tokens.size(); i++)
      f << (i ? " " : "") << s.tokens[i];
    f << '\t' << s.label;
    if (s.gold_trace) {
      f << '\t';
      for (size_t i = 0; i < s.gold_trace->size(); i++)
        f << (i ? "," : "") << (*s.gold_trace)[i];
    }
    f << '\n';
  }
}

std::vector<Sample> read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parse_error("cannot open " + path);
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    lineno++;
    auto fail = [&](const std::string& why) {
      throw parse_error(path + ":" + std::to_string(lineno) + ": " + why);
    };
    if (line.empty()) fail("empty line");
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3)
      fail("expected 2 or 3 tab-separated fields, got " +
           std::to_string(fields.size()));
    Sample s;
    std::istringstream ts(fields[0]);
    std::string tok;
    while (ts >> tok) s.tokens.push_back(tok);
    if (s.tokens.empty()) fail("no tokens");
    tokenize(s.tokens);  // vocabulary check
    try {
      size_t used = 0;
      s.label = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      fail("bad label \"" + fields[1] + "\"");
    }
    if (s.label < 0 || s.label >= kNumClasses) fail("label out of range");
    if (fields.size() == 3 && !fields[2].empty()) {
      std::vector<int> trace;
      std::istringstream cs(fields[2]);
      std::string item;
      while (std::getline(cs, item, ',')) {
        try {
          trace.push_back(std::stoi(item));
        } catch (const std::exception&) {
          fail("bad trace entry \"" + item + "\"");
        }
      }
      s.gold_trace = std::move(trace);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ebt::listops
