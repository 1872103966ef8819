#include "ebt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ebt {

using nlohmann::json;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::gold_tree: return "goldtree-grc";
    case Variant::gt: return "gt-grc";
    case Variant::egt: return "egt-grc";
    case Variant::bt: return "bt-grc";
    case Variant::ebt: return "ebt-grc";
    case Variant::ebt_ctx: return "ebt-grc-ctx";
  }
  throw contract_error("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::gold_tree, Variant::gt, Variant::egt, Variant::bt,
                    Variant::ebt, Variant::ebt_ctx})
    if (variant_name(v) == name) return v;
  throw contract_error("unknown variant \"" + name + "\"");
}

void ModelConfig::fill_defaults() {
  if (d_cell == 0) d_cell = 4 * d;
  if (d_emb == 0) d_emb = d;
}

ClassifierHead ClassifierHead::init(int d, int classes, std::mt19937_64& rng) {
  ClassifierHead h;
  h.w1 = kaiming_uniform(d, {d, d}, rng);
  h.b1 = Tensor::zeros({d}, true);
  h.w2 = kaiming_uniform(d, {d, classes}, rng);
  h.b2 = Tensor::zeros({classes}, true);
  return h;
}

Tensor classify(const Tensor& pooled, const ClassifierHead& head) {
  return linear(gelu(linear(pooled, head.w1, head.b1)), head.w2, head.b2);
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw contract_error("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(logits.size()) +
                         " classes");
  return neg(pick(log_softmax(logits), label));
}

Model Model::init(const ModelConfig& cfg_in, uint64_t seed) {
  ModelConfig cfg = cfg_in;
  cfg.fill_defaults();
  std::mt19937_64 rng(seed);
  Model m;
  m.cfg = cfg;
  m.embedding = kaiming_uniform(cfg.d_emb, {cfg.vocab, cfg.d_emb}, rng);
  m.init_tf = InitTransform::init(cfg.d_emb, cfg.d, rng);
  m.cell = GRCParams::init(cfg.d, cfg.d_cell, rng);
  m.scorer = ScorerParams::init(cfg.d, cfg.d_s, cfg.slice, rng);
  if (cfg.variant == Variant::ebt_ctx) {
    m.gau = GAUParams::init(cfg.d, cfg.gau_head, cfg.pos_max_dist, rng);
    m.gau.dropout = cfg.gau_dropout;
    m.pool_w1 = kaiming_uniform(cfg.d, {cfg.d, cfg.d}, rng);
    m.pool_b1 = Tensor::zeros({cfg.d}, true);
    m.pool_w2 = kaiming_uniform(cfg.d, {cfg.d, 1}, rng);
    m.pool_b2 = Tensor::zeros({1}, true);
  }
  m.head = ClassifierHead::init(cfg.d, cfg.num_classes, rng);
  return m;
}

Tensor Model::forward(const std::vector<int>& token_ids,
                      const std::vector<int>* gold, bool training,
                      std::mt19937_64& rng) const {
  if (token_ids.empty()) throw contract_error("forward: empty token sequence");
  std::vector<int64_t> ids(token_ids.begin(), token_ids.end());
  Tensor terminals = init_transform(gather_rows(embedding, ids), init_tf);
  int n = static_cast<int>(token_ids.size());
  std::vector<Tensor> seq;
  seq.reserve(n);
  for (int i = 0; i < n; i++) seq.push_back(row(terminals, i));

  switch (cfg.variant) {
    case Variant::gold_tree: {
      if (gold == nullptr)
        throw contract_error("forward: gold_tree variant needs a gold trace");
      for (int j : *gold) {
        if (j < 0 || j + 1 >= static_cast<int>(seq.size()))
          throw trace_error("forward: invalid gold trace index " +
                            std::to_string(j));
        seq[j] = grc_compose(seq[j], seq[j + 1], cell);
        seq.erase(seq.begin() + j + 1);
      }
      if (seq.size() != 1)
        throw trace_error("forward: gold trace did not reduce to a root");
      return classify(seq[0], head);
    }
    case Variant::gt:
    case Variant::egt: {
      ScoreMode mode = cfg.variant == Variant::gt ? ScoreMode::entangled
                                                  : ScoreMode::disentangled;
      SteOptions ste{cfg.gumbel_temperature, true, &rng};
      while (seq.size() > 1)
        seq = greedy_reduce_step(seq, cell, scorer, mode,
                                 training ? &ste : nullptr);
      return classify(seq[0], head);
    }
    case Variant::bt:
    case Variant::ebt: {
      ScoreMode mode = cfg.variant == Variant::bt ? ScoreMode::entangled
                                                  : ScoreMode::disentangled;
      EncodeResult res =
          beam_encode(seq, cfg.beam_size, cell, scorer, mode, training, rng);
      return classify(marginalize_roots(res.roots, res.scores), head);
    }
    case Variant::ebt_ctx: {
      EncodeResult res = beam_encode(seq, cfg.beam_size, cell, scorer,
                                     ScoreMode::disentangled, training, rng);
      std::vector<TreeRecord> records;
      records.reserve(res.traces.size());
      for (const auto& trace : res.traces)
        records.push_back(record_tree(trace, seq, cell));
      Tensor ctx =
          contextualize_tokens(terminals, records, res.scores, gau,
                               cfg.gau_iterations, training, &rng);
      Tensor pooled = attention_pool(ctx, pool_w1, pool_b1, pool_w2, pool_b2);
      return classify(pooled, head);
    }
  }
  throw contract_error("forward: unknown variant");
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"embedding", embedding},
      {"init.w", init_tf.w},
      {"init.b", init_tf.b},
      {"init.ln_gain", init_tf.ln_gain},
      {"init.ln_bias", init_tf.ln_bias},
      {"cell.w1", cell.w1},
      {"cell.b1", cell.b1},
      {"cell.w2", cell.w2},
      {"cell.b2", cell.b2},
      {"cell.ln_gain", cell.ln_gain},
      {"cell.ln_bias", cell.ln_bias},
      {"scorer.legacy_wv", scorer.legacy_wv},
      {"scorer.ws1", scorer.ws1},
      {"scorer.bs1", scorer.bs1},
      {"scorer.ws2", scorer.ws2},
      {"scorer.bs2", scorer.bs2},
      {"head.w1", head.w1},
      {"head.b1", head.b1},
      {"head.w2", head.w2},
      {"head.b2", head.b2},
  };
  if (cfg.variant == Variant::ebt_ctx) {
    out.insert(out.end(), {{"gau.w_init", gau.w_init},
                           {"gau.b_init", gau.b_init},
                           {"gau.w_u", gau.w_u},
                           {"gau.b_u", gau.b_u},
                           {"gau.w_v", gau.w_v},
                           {"gau.b_v", gau.b_v},
                           {"gau.w_z", gau.w_z},
                           {"gau.b_z", gau.b_z},
                           {"gau.z_q", gau.z_q},
                           {"gau.zb_q", gau.zb_q},
                           {"gau.z_k", gau.z_k},
                           {"gau.zb_k", gau.zb_k},
                           {"gau.w_o", gau.w_o},
                           {"gau.b_o", gau.b_o},
                           {"gau.w_gate", gau.w_gate},
                           {"gau.b_gate", gau.b_gate},
                           {"gau.pos_table", gau.pos_table},
                           {"pool.w1", pool_w1},
                           {"pool.b1", pool_b1},
                           {"pool.w2", pool_w2},
                           {"pool.b2", pool_b2}});
  }
  return out;
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  t_++;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); pi++) {
    Tensor& p = params_[pi];
    std::vector<double> g = p.grad();
    auto& vals = p.mutable_values();
    for (int64_t i = 0; i < p.size(); i++) {
      m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g[i];
      v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m_[pi][i] / bc1;
      double vhat = v_[pi][i] / bc2;
      vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

EpochMetrics train_epoch(Model& model, const std::vector<listops::Sample>& data,
                         int batch_size, Adam& opt, std::mt19937_64& rng) {
  if (data.empty()) throw contract_error("train_epoch: empty dataset");
  if (batch_size < 1) throw contract_error("train_epoch: bad batch size");
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  auto params = model.named_params();
  double total_loss = 0;
  int64_t correct = 0;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    size_t end = std::min(order.size(), start + batch_size);
    for (size_t i = start; i < end; i++) {
      const auto& sample = data[order[i]];
      std::vector<int> ids = listops::tokenize(sample.tokens);
      std::vector<int> trace;
      const std::vector<int>* gold = nullptr;
      if (model.cfg.variant == Variant::gold_tree) {
        trace = sample.gold_trace ? *sample.gold_trace
                                  : listops::gold_trace(sample);
        gold = &trace;
      }
      Tape tape;
      Tensor logits = model.forward(ids, gold, /*training=*/true, rng);
      Tensor loss = cross_entropy(logits, sample.label);
      backward(loss);
      total_loss += loss.item();
      int pred = 0;
      for (int64_t c = 1; c < logits.size(); c++)
        if (logits.values()[c] > logits.values()[pred])
          pred = static_cast<int>(c);
      if (pred == sample.label) correct++;
    }
    double inv = 1.0 / static_cast<double>(end - start);
    for (auto& [name, p] : params)
      if (!p.node()->grad.empty())
        for (auto& g : p.node()->grad) g *= inv;
    opt.step();
  }
  return EpochMetrics{total_loss / static_cast<double>(data.size()),
                      static_cast<double>(correct) /
                          static_cast<double>(data.size())};
}

double evaluate(const Model& model, const std::vector<listops::Sample>& data) {
  std::mt19937_64 rng(0);  // unused: evaluation runs noise- and dropout-free
  int64_t correct = 0;
  for (const auto& sample : data) {
    std::vector<int> ids = listops::tokenize(sample.tokens);
    std::vector<int> trace;
    const std::vector<int>* gold = nullptr;
    if (model.cfg.variant == Variant::gold_tree) {
      trace = sample.gold_trace ? *sample.gold_trace
                                : listops::gold_trace(sample);
      gold = &trace;
    }
    Tensor logits = model.forward(ids, gold, /*training=*/false, rng);
    int pred = 0;
    for (int64_t c = 1; c < logits.size(); c++)
      if (logits.values()[c] > logits.values()[pred]) pred = static_cast<int>(c);
    if (pred == sample.label) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---- checkpointing ------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'B', 'T', 'R'};
constexpr uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"variant", variant_name(c.variant)},
              {"d", c.d},
              {"d_cell", c.d_cell},
              {"d_s", c.d_s},
              {"d_emb", c.d_emb},
              {"beam_size", c.beam_size},
              {"slice", c.slice},
              {"gumbel_temperature", c.gumbel_temperature},
              {"gau_iterations", c.gau_iterations},
              {"gau_head", c.gau_head},
              {"pos_max_dist", c.pos_max_dist},
              {"gau_dropout", c.gau_dropout},
              {"num_classes", c.num_classes},
              {"vocab", c.vocab}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.d = j.at("d").get<int>();
  c.d_cell = j.at("d_cell").get<int>();
  c.d_s = j.at("d_s").get<int>();
  c.d_emb = j.at("d_emb").get<int>();
  c.beam_size = j.at("beam_size").get<int>();
  c.slice = j.at("slice").get<bool>();
  c.gumbel_temperature = j.at("gumbel_temperature").get<double>();
  c.gau_iterations = j.at("gau_iterations").get<int>();
  c.gau_head = j.at("gau_head").get<int>();
  c.pos_max_dist = j.at("pos_max_dist").get<int>();
  c.gau_dropout = j.at("gau_dropout").get<double>();
  c.num_classes = j.at("num_classes").get<int>();
  c.vocab = j.at("vocab").get<int>();
  return c;
}

static_assert(sizeof(double) == 8);

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  auto params = model.named_params();
  json manifest = json::array();
  int64_t offset = 0;
  for (const auto& [name, p] : params) {
    manifest.push_back(
        {{"name", name}, {"shape", p.shape()}, {"offset", offset}});
    offset += p.size();
  }
  json header{{"variant", variant_name(model.cfg.variant)},
              {"config", config_to_json(model.cfg)},
              {"tensors", manifest}};
  std::string header_text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw checkpoint_error("cannot open " + path + " for writing");
  f.write(kMagic, 4);
  uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t hlen = header_text.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header_text.data(), static_cast<std::streamsize>(hlen));
  for (const auto& [name, p] : params)
    f.write(reinterpret_cast<const char*>(p.values().data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!f) throw checkpoint_error("write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw checkpoint_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw checkpoint_error(path + ": bad magic, not a checkpoint");
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!f || version != kVersion)
    throw checkpoint_error(path + ": unsupported checkpoint version " +
                           std::to_string(version));
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_text(hlen, '\0');
  f.read(header_text.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw checkpoint_error(path + ": truncated header");
  json header = json::parse(header_text);
  Model model = Model::init(config_from_json(header.at("config")), 0);

  std::vector<double> payload;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
    payload.resize(raw.size() / sizeof(double));
    std::memcpy(payload.data(), raw.data(), payload.size() * sizeof(double));
  }

  auto params = model.named_params();
  const json& manifest = header.at("tensors");
  if (manifest.size() != params.size())
    throw checkpoint_error(path + ": manifest has " +
                           std::to_string(manifest.size()) + " tensors, model " +
                           variant_name(model.cfg.variant) + " expects " +
                           std::to_string(params.size()));
  for (auto& [name, p] : params) {
    const json* entry = nullptr;
    for (const auto& e : manifest)
      if (e.at("name").get<std::string>() == name) {
        entry = &e;
        break;
      }
    if (entry == nullptr)
      throw checkpoint_error(path + ": missing tensor \"" + name + "\"");
    Shape shape = entry->at("shape").get<Shape>();
    if (shape != p.shape())
      throw checkpoint_error(path + ": tensor \"" + name + "\" has shape " +
                             shape_str(shape) + ", expected " +
                             shape_str(p.shape()));
    int64_t offset = entry->at("offset").get<int64_t>();
    if (offset + p.size() > static_cast<int64_t>(payload.size()))
      throw checkpoint_error(path + ": payload truncated for \"" + name +
                             "\"");
    std::copy_n(payload.begin() + offset, p.size(),
                p.mutable_values().begin());
  }
  return model;
}

}  // namespace ebt
