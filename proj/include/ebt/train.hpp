#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ebt/listops.hpp"
#include "ebt/parent_attention.hpp"
#include "ebt/rvnn.hpp"
#include "ebt/tensor.hpp"
#include "ebt/tree_search.hpp"

namespace ebt {

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Variant { gold_tree, gt, egt, bt, ebt, ebt_ctx };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::ebt;
  int d = 128;
  int d_cell = 0;  // 0 -> 4*d
  int d_s = 64;
  int d_emb = 0;   // 0 -> d
  int beam_size = 5;
  bool slice = true;
  double gumbel_temperature = 1.0;
  int gau_iterations = 2;
  int gau_head = 128;
  int pos_max_dist = 10;
  double gau_dropout = 0.1;
  int num_classes = listops::kNumClasses;
  int vocab = listops::kVocabSize;

  void fill_defaults();
};

struct ClassifierHead {
  Tensor w1, b1;  // d x d, d
  Tensor w2, b2;  // d x C, C
  static ClassifierHead init(int d, int classes, std::mt19937_64& rng);
};

Tensor classify(const Tensor& pooled, const ClassifierHead& head);
Tensor cross_entropy(const Tensor& logits, int label);

struct Model {
  ModelConfig cfg;
  Tensor embedding;  // vocab x d_emb
  InitTransform init_tf;
  GRCParams cell;
  ScorerParams scorer;
  GAUParams gau;             // ebt_ctx only
  Tensor pool_w1, pool_b1;   // ebt_ctx attention-pooling head
  Tensor pool_w2, pool_b2;
  ClassifierHead head;

  static Model init(const ModelConfig& cfg, uint64_t seed);

  // logits for one sample; gold_trace required by the gold_tree variant.
  Tensor forward(const std::vector<int>& token_ids,
                 const std::vector<int>* gold, bool training,
                 std::mt19937_64& rng) const;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  // Applies one bias-corrected update from the gradients currently
  // accumulated on the parameters, then clears them.
  void step();
  int64_t t() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

EpochMetrics train_epoch(Model& model, const std::vector<listops::Sample>& data,
                         int batch_size, Adam& opt, std::mt19937_64& rng);
double evaluate(const Model& model, const std::vector<listops::Sample>& data);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace ebt
