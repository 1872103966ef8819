#include <random>

#include "ebt/gradcheck.hpp"
#include "ebt/parent_attention.hpp"
#include "ebt/rvnn.hpp"
#include "ebt/train.hpp"

namespace ebt {

namespace {

Tensor randt(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = gauss(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckEntry> out;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                   const std::vector<Tensor>& params) {
    out.push_back({name, finite_diff_check(f, params)});
  };

  Tensor a = randt({3, 4}, rng);
  Tensor b = randt({3, 4}, rng);
  check("sigmoid", [&] { return sum(sigmoid(a)); }, {a});
  check("gelu", [&] { return sum(gelu(a)); }, {a});
  check("silu", [&] { return sum(silu(a)); }, {a});
  check("add", [&] { return sum(add(a, b)); }, {a, b});
  check("sub", [&] { return sum(sub(a, b)); }, {a, b});
  check("mul", [&] { return sum(mul(a, b)); }, {a, b});
  check("scale", [&] { return sum(scale(a, -1.7)); }, {a});
  check("neg", [&] { return sum(neg(a)); }, {a});

  Tensor m1 = randt({3, 4}, rng);
  Tensor m2 = randt({4, 5}, rng);
  Tensor m3 = randt({2, 4}, rng);
  Tensor bias = randt({5}, rng);
  check("matmul", [&] { return sum(matmul(m1, m2)); }, {m1, m2});
  check("matmul_nt", [&] { return sum(matmul_nt(m1, m3)); }, {m1, m3});
  check("linear", [&] { return sum(linear(m1, m2, bias)); }, {m1, m2, bias});

  Tensor v1 = randt({5}, rng);
  Tensor v2 = randt({3}, rng);
  check("concat", [&] { return sum(mul(concat(v1, v2), concat(v1, v2))); },
        {v1, v2});
  Tensor sl_w = randt({3, 2}, rng);
  check("slice_last", [&] { return sum(mul(slice_last(a, 1, 2), sl_w)); },
        {a});
  check("slice_prefix", [&] { return sum(mul(slice_prefix(v1, 3), v2)); },
        {v1});
  check("concat_prefix",
        [&] {
          Tensor c = concat_prefix(v1, v1, 3);
          return sum(mul(c, c));
        },
        {v1});

  Tensor logits = randt({3, 4}, rng);
  Tensor mask = Tensor::from({3, 4}, {1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0});
  check("softmax_masked",
        [&] { return sum(mul(softmax_masked(logits, mask), a)); }, {logits});
  check("log_softmax", [&] { return sum(mul(log_softmax(v1), v1)); }, {v1});
  check("softmax_vec", [&] { return sum(mul(softmax_vec(v1), v1)); }, {v1});

  Tensor gain = randt({4}, rng);
  Tensor bias2 = randt({4}, rng);
  check("layer_norm",
        [&] { return sum(mul(layer_norm(a, gain, bias2), b)); },
        {a, gain, bias2});

  check("sum", [&] { return sum(mul(a, a)); }, {a});
  check("pick", [&] { return pick(v1, 2); }, {v1});
  check("row", [&] { return sum(mul(row(a, 1), bias2)); }, {a});
  check("reshape",
        [&] { return sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); },
        {a});
  check("stack_scalars",
        [&] {
          Tensor s = stack_scalars({pick(v1, 0), pick(v1, 4), sum(v2)});
          return sum(mul(s, v2));
        },
        {v1, v2});
  Tensor rows_w = randt({2, 5}, rng);
  check("stack_rows", [&] { return sum(mul(stack_rows({v1, v1}), rows_w)); },
        {v1});

  Tensor table = randt({6, 4}, rng);
  check("gather_rows",
        [&] { return sum(mul(gather_rows(table, {1, 4, 1}), a)); }, {table});
  check("gather_entries",
        [&] {
          Tensor g = gather_entries(reshape(table, {24}), {0, 5, 5, 7}, {4});
          return sum(mul(g, bias2));
        },
        {table});
  check("weighted_sum",
        [&] {
          Tensor w = stack_scalars({pick(v2, 0), pick(v2, 1)});
          return sum(mul(weighted_sum({v1, neg(v1)}, w), v1));
        },
        {v1, v2});
  check("scale_by", [&] { return sum(scale_by(v1, sum(v2))); }, {v1, v2});
  check("affine_rows",
        [&] { return sum(mul(affine_rows(a, gain, bias2), b)); },
        {a, gain, bias2});

  Tensor gates = randt({8}, rng);
  Tensor cl = randt({2}, rng);
  Tensor cr = randt({2}, rng);
  check("gated_combine",
        [&] {
          Tensor g = gated_combine(gates, cl, cr);
          return sum(mul(g, g));
        },
        {gates, cl, cr});

  Tensor fw1 = randt({5, 3}, rng);
  Tensor fb1 = randt({3}, rng);
  Tensor fw2 = randt({3, 1}, rng);
  Tensor fb2 = randt({1}, rng);
  check("mlp_score", [&] { return mlp_score(v1, fw1, fb1, fw2, fb2); },
        {v1, fw1, fb1, fw2, fb2});

  check("dropout",
        [&] {
          std::mt19937_64 drop_rng(7);
          return sum(mul(dropout(a, 0.4, drop_rng), b));
        },
        {a});

  // composed blocks
  int d = 4, d_cell = 8, d_s = 3;
  GRCParams cell = GRCParams::init(d, d_cell, rng);
  ScorerParams scorer = ScorerParams::init(d, d_s, true, rng);
  Tensor hl = randt({d}, rng);
  Tensor hr = randt({d}, rng);
  Tensor grc_w = randt({d}, rng);
  check("grc_compose",
        [&] { return sum(mul(grc_compose(hl, hr, cell), grc_w)); },
        {hl, hr, cell.w1, cell.b1, cell.w2, cell.b2, cell.ln_gain,
         cell.ln_bias});
  check("disentangled_score", [&] { return disentangled_score(hl, hr, scorer); },
        {hl, hr, scorer.ws1, scorer.bs1, scorer.ws2, scorer.bs2});
  check("legacy_score",
        [&] { return legacy_score(grc_compose(hl, hr, cell), scorer); },
        {hl, hr, scorer.legacy_wv});

  int n = 3, l = 2, d_h = 3;
  GAUParams gau = GAUParams::init(d, d_h, 5, rng);
  Tensor x = randt({n, d}, rng);
  Tensor p = randt({l, d}, rng);
  Tensor gmask = Tensor::from({static_cast<int64_t>(n), static_cast<int64_t>(l)},
                              {1, 1, 0, 1, 1, 1});
  Tensor pos = randt({n, l}, rng, 0.1);
  std::vector<Tensor> gau_params = {x,        p,        gau.w_init, gau.b_init,
                                    gau.w_u,  gau.b_u,  gau.w_v,    gau.b_v,
                                    gau.w_z,  gau.b_z,  gau.z_q,    gau.zb_q,
                                    gau.z_k,  gau.zb_k, gau.w_o,    gau.b_o,
                                    gau.w_gate, gau.b_gate, pos};
  Tensor gau_w = randt({n, d}, rng);
  check("gau_block",
        [&] { return sum(mul(gau_block(x, p, gmask, gau, pos), gau_w)); },
        gau_params);

  Tensor pw1 = randt({d, d}, rng);
  Tensor pb1 = randt({d}, rng);
  Tensor pw2 = randt({d, 1}, rng);
  Tensor pb2 = randt({1}, rng);
  Tensor pool_w = randt({d}, rng);
  check("attention_pool",
        [&] { return sum(mul(attention_pool(x, pw1, pb1, pw2, pb2), pool_w)); },
        {x, pw1, pb1, pw2, pb2});

  ClassifierHead head = ClassifierHead::init(d, 3, rng);
  Tensor cls_w = randt({3}, rng);
  check("classify",
        [&] { return sum(mul(classify(hl, head), cls_w)); },
        {hl, head.w1, head.b1, head.w2, head.b2});
  check("cross_entropy", [&] { return cross_entropy(classify(hl, head), 1); },
        {hl, head.w1, head.b1, head.w2, head.b2});

  return out;
}

}  // namespace ebt
