#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ebt/gradcheck.hpp"
#include "ebt/memtrack.hpp"
#include "ebt/rvnn.hpp"

using namespace ebt;

namespace {

Tensor randt(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = gauss(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

GRCParams zero_cell(int d) {
  GRCParams p;
  p.d = d;
  p.d_cell = 4 * d;
  p.w1 = Tensor::zeros({2 * d, 4 * d}, true);
  p.b1 = Tensor::zeros({4 * d}, true);
  p.w2 = Tensor::zeros({4 * d, 4 * d}, true);
  p.b2 = Tensor::zeros({4 * d}, true);
  p.ln_gain = Tensor::full({d}, 1.0, true);
  p.ln_bias = Tensor::zeros({d}, true);
  return p;
}

}  // namespace

TEST_CASE("init_transform") {
  std::mt19937_64 rng(1);
  InitTransform p = InitTransform::init(4, 6, rng);
  Tensor one = randt({1, 4}, rng);
  CHECK(init_transform(one, p).shape() == Shape{1, 6});

  // zero weight: every row is layer_norm(b), i.e. identical rows
  InitTransform pz = p;
  pz.w = Tensor::zeros({4, 6}, true);
  pz.b = randt({6}, rng);
  Tensor rows = init_transform(randt({3, 4}, rng), pz);
  for (int i = 1; i < 3; i++)
    for (int j = 0; j < 6; j++)
      CHECK(rows.values()[i * 6 + j] == rows.values()[j]);

  Tensor x = randt({3, 4}, rng);
  Tensor weight = randt({3, 6}, rng);
  CHECK(finite_diff_check(
            [&] { return sum(mul(init_transform(x, p), weight)); },
            {x, p.w, p.b, p.ln_gain, p.ln_bias}) < 1e-4);
}

TEST_CASE("grc_compose zero-parameter closed forms") {
  int d = 5;
  std::mt19937_64 rng(2);
  GRCParams p = zero_cell(d);
  Tensor cl = randt({d}, rng);
  Tensor cr = randt({d}, rng);

  // all-zero weights: every gate pre-activation is 0, h = 0, so the gated
  // sum is 0.5*cl + 0.5*cr
  Tensor out = grc_compose(cl, cr, p);
  std::vector<double> mix(d);
  for (int i = 0; i < d; i++)
    mix[i] = 0.5 * (cl.values()[i] + cr.values()[i]);
  Tensor expect = layer_norm(Tensor::from({d}, mix), p.ln_gain, p.ln_bias);
  for (int i = 0; i < d; i++)
    CHECK(out.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));

  // equal children reduce to LN(c)
  Tensor same = grc_compose(cl, cl, p);
  Tensor lnc = layer_norm(cl, p.ln_gain, p.ln_bias);
  for (int i = 0; i < d; i++)
    CHECK(same.values()[i] == doctest::Approx(lnc.values()[i]).epsilon(1e-12));
}

TEST_CASE("grc_compose gradients and param count") {
  int d = 4;
  std::mt19937_64 rng(3);
  GRCParams p = GRCParams::init(d, 4 * d, rng);
  Tensor cl = randt({d}, rng);
  Tensor cr = randt({d}, rng);
  Tensor w = randt({d}, rng);
  CHECK(finite_diff_check(
            [&] { return sum(mul(grc_compose(cl, cr, p), w)); },
            {cl, cr, p.w1, p.b1, p.w2, p.b2, p.ln_gain, p.ln_bias}) < 1e-4);

  int dc = 4 * d;
  CHECK(p.param_count() == 2 * d * dc + dc + dc * 4 * d + 4 * d + 2 * d);
}

TEST_CASE("legacy scorer") {
  int d = 6;
  std::mt19937_64 rng(4);
  ScorerParams s = ScorerParams::init(d, 4, true, rng);
  Tensor v = randt({d}, rng);

  ScorerParams sz = s;
  sz.legacy_wv = Tensor::zeros({d, 1}, true);
  CHECK(legacy_score(v, sz).item() == 0.0);

  double one = legacy_score(v, s).item();
  double two = legacy_score(scale(v, 2.0), s).item();
  CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-12));

  double dot = 0;
  for (int i = 0; i < d; i++) dot += s.legacy_wv.values()[i] * v.values()[i];
  CHECK(one == doctest::Approx(dot).epsilon(1e-12));
}

TEST_CASE("entangled candidate scores") {
  int d = 4;
  std::mt19937_64 rng(5);
  GRCParams cell = GRCParams::init(d, 4 * d, rng);
  ScorerParams s = ScorerParams::init(d, 3, true, rng);

  std::vector<Tensor> two = {randt({d}, rng), randt({d}, rng)};
  auto [parents2, scores2] = entangled_candidate_scores(two, cell, s);
  CHECK(parents2.size() == 1);
  CHECK(scores2.size() == 1);

  std::vector<Tensor> h;
  for (int i = 0; i < 5; i++) h.push_back(randt({d}, rng));
  auto [parents, scores] = entangled_candidate_scores(h, cell, s);
  REQUIRE(parents.size() == 4);
  for (int i = 0; i < 4; i++) {
    Tensor standalone = grc_compose(h[i], h[i + 1], cell);
    CHECK(parents[i].values() == standalone.values());
    CHECK(scores[i].item() == legacy_score(standalone, s).item());
  }

  CHECK_THROWS_AS(entangled_candidate_scores({randt({d}, rng)}, cell, s),
                  contract_error);
}

TEST_CASE("entangled path dominates one composition's memory") {
  int d = 16;
  std::mt19937_64 rng(6);
  GRCParams cell = GRCParams::init(d, 4 * d, rng);
  ScorerParams s = ScorerParams::init(d, 8, true, rng);
  std::vector<Tensor> h;
  for (int i = 0; i < 10; i++) h.push_back(randt({d}, rng));

  auto single = memtrack::track("one", [&] {
    Tape tape;
    grc_compose(h[0], h[1], cell);
  });
  auto all = memtrack::track("nine", [&] {
    Tape tape;
    entangled_candidate_scores(h, cell, s);
  });
  CHECK(all.peak_scalars >= 9 * single.peak_scalars);
}

TEST_CASE("disentangled scorer slicing") {
  int d = 128, d_s = 64;
  std::mt19937_64 rng(7);
  ScorerParams s = ScorerParams::init(d, d_s, true, rng);

  ScorerParams sz = s;
  sz.ws1 = Tensor::zeros({2 * d_s, d_s}, true);
  sz.bs1 = Tensor::zeros({d_s}, true);
  sz.ws2 = Tensor::zeros({d_s, 1}, true);
  sz.bs2 = Tensor::from({1}, {0.25}, true);
  Tensor a = randt({d}, rng);
  Tensor b = randt({d}, rng);
  CHECK(disentangled_score(a, b, sz).item() == 0.25);

  // coordinates past d_s never matter
  double base = disentangled_score(a, b, s).item();
  for (int trial = 0; trial < 20; trial++) {
    std::uniform_int_distribution<int> idx(d_s, d - 1);
    Tensor a2 = Tensor::from({d}, a.values(), true);
    a2.mutable_values()[idx(rng)] += 17.5;
    Tensor b2 = Tensor::from({d}, b.values(), true);
    b2.mutable_values()[idx(rng)] -= 3.25;
    CHECK(disentangled_score(a2, b2, s).item() == base);
  }

  // and their gradients are exactly zero
  {
    Tape tape;
    backward(disentangled_score(a, b, s));
    auto ga = a.grad(), gb = b.grad();
    for (int i = d_s; i < d; i++) {
      CHECK(ga[i] == 0.0);
      CHECK(gb[i] == 0.0);
    }
    a.zero_grad();
    b.zero_grad();
    for (Tensor t : {s.ws1, s.bs1, s.ws2, s.bs2}) t.zero_grad();
  }

  // d < d_s: the min rule uses full vectors
  int dsmall = 32;
  ScorerParams small = ScorerParams::init(dsmall, d_s, true, rng);
  CHECK(small.input_width() == dsmall);
  CHECK(small.ws1.shape() == Shape{2 * dsmall, d_s});
  Tensor sa = randt({dsmall}, rng);
  Tensor sb = randt({dsmall}, rng);
  double sbase = disentangled_score(sa, sb, small).item();
  Tensor sa2 = Tensor::from({dsmall}, sa.values(), true);
  sa2.mutable_values()[dsmall - 1] += 1.0;
  CHECK(disentangled_score(sa2, sb, small).item() != sbase);

  // scorer_new parameter count
  CHECK(s.scorer_param_count() == 2 * 64 * 64 + 64 + 64 + 1);
}

TEST_CASE("disentangled scorer gradcheck and no cell call") {
  int d = 6, d_s = 4;
  std::mt19937_64 rng(8);
  ScorerParams s = ScorerParams::init(d, d_s, true, rng);
  Tensor a = randt({d}, rng);
  Tensor b = randt({d}, rng);
  CHECK(finite_diff_check([&] { return disentangled_score(a, b, s); },
                          {a, b, s.ws1, s.bs1, s.ws2, s.bs2}) < 1e-4);

  counters().reset();
  disentangled_score(a, b, s);
  CHECK(counters().grc_compose == 0);
  CHECK(counters().disentangled_score == 1);
}
