#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fev/data.hpp"
#include "fev/explain.hpp"
#include "fev/model.hpp"

using namespace fev;

namespace {

Vocab toy_vocab(int n_words) {
  Vocab v;
  v.words.push_back("[MASK]");
  for (int i = 1; i < n_words; ++i) v.words.push_back("w" + std::to_string(i));
  return v;
}

// Shapley values by direct enumeration of all coalitions, weighted by
// |S|! (M-1-|S|)! / M!. Independent of the least-squares route under test.
std::vector<double> brute_shapley(const AttentionClassifier& model, const TokenSequence& seq,
                                  int cls) {
  std::vector<int> players;
  for (std::size_t t = 0; t < seq.size(); ++t)
    if (!seq.masked[t]) players.push_back(static_cast<int>(t));
  const int M = static_cast<int>(players.size());
  auto value = [&](unsigned coalition) {
    TokenSequence s = seq;
    for (int i = 0; i < M; ++i)
      if (!((coalition >> i) & 1u)) s.masked[players[i]] = true;
    return forward(model, s).logits(cls);
  };
  std::vector<double> factorial(M + 1, 1.0);
  for (int i = 1; i <= M; ++i) factorial[i] = factorial[i - 1] * i;
  std::vector<double> phi(seq.size(), 0.0);
  for (int i = 0; i < M; ++i) {
    for (unsigned s = 0; s < (1u << M); ++s) {
      if ((s >> i) & 1u) continue;
      int size = 0;
      for (int b = 0; b < M; ++b) size += (s >> b) & 1u;
      double weight = factorial[size] * factorial[M - 1 - size] / factorial[M];
      phi[players[i]] += weight * (value(s | (1u << i)) - value(s));
    }
  }
  return phi;
}

}  // namespace

TEST_CASE("gradient norms agree across the three p-norms") {
  auto model = init_attention(toy_vocab(8), 4, 2, 3);
  TokenSequence seq{{2, 5, 1, 7}, {false, false, false, false}};
  auto g = grad_input(model, seq, 1);
  auto l1 = explain_gradient(model, seq, 1, PNorm::L1);
  auto l2 = explain_gradient(model, seq, 1, PNorm::L2);
  auto li = explain_gradient(model, seq, 1, PNorm::Linf);
  for (int t = 0; t < 4; ++t) {
    CHECK(l1.scores[t] == doctest::Approx(g.row(t).lpNorm<1>()));
    CHECK(l2.scores[t] == doctest::Approx(g.row(t).norm()));
    CHECK(li.scores[t] == doctest::Approx(g.row(t).lpNorm<Eigen::Infinity>()));
    CHECK(li.scores[t] <= l2.scores[t] + 1e-12);
    CHECK(l2.scores[t] <= l1.scores[t] + 1e-12);
  }
  CHECK(l2.kind == ScoreKind::Absolute);
  CHECK(l2.method == "gradient-l2");
}

TEST_CASE("tabular gradient explanation is the weight norm per feature") {
  LinearModel m;
  m.w = Eigen::Vector3d(2.0, -3.0, 0.0);
  m.b = 0.1;
  Eigen::Vector3d x(1.0, 1.0, 1.0);
  // One-dimensional per-feature gradient: all norms collapse to |w_j| times
  // the probability slope.
  auto e = explain_gradient(m, x, 1, PNorm::L2);
  double p = m.probabilities(x)(1);
  double slope = p * (1 - p);
  CHECK(e.scores[0] == doctest::Approx(2.0 * slope));
  CHECK(e.scores[1] == doctest::Approx(3.0 * slope));
  CHECK(e.scores[2] == doctest::Approx(0.0));
}

TEST_CASE("input-times-gradient is the embedding/gradient inner product") {
  auto model = init_attention(toy_vocab(8), 4, 2, 13);
  TokenSequence seq{{2, 5, 1}, {false, true, false}};
  auto g = grad_input(model, seq, 0);
  auto e = embed(model, seq);
  auto sgn = explain_input_x_grad(model, seq, 0, ScoreKind::Signed);
  auto abs = explain_input_x_grad(model, seq, 0, ScoreKind::Absolute);
  for (int t = 0; t < 3; ++t) {
    CHECK(sgn.scores[t] == doctest::Approx(e.row(t).dot(g.row(t))));
    CHECK(abs.scores[t] == doctest::Approx(std::abs(sgn.scores[t])));
  }
  CHECK(sgn.kind == ScoreKind::Signed);
}

TEST_CASE("integrated gradients satisfy completeness and converge with steps") {
  auto model = init_attention(toy_vocab(10), 5, 2, 21);
  TokenSequence seq{{3, 7, 2, 9, 4, 1}, {false, false, false, false, false, false}};
  TokenSequence baseline = seq;
  for (std::size_t t = 0; t < baseline.size(); ++t) baseline.masked[t] = true;
  const int cls = 1;
  double target = forward(model, seq).logits(cls) - forward(model, baseline).logits(cls);

  double prev_residual = -1.0;
  for (int k : {32, 64, 128, 256, 512}) {
    auto ig = explain_integrated_gradient(model, seq, cls, k, ScoreKind::Signed);
    double sum = 0.0;
    for (double s : ig.scores) sum += s;
    double residual = std::abs(sum - target);
    if (prev_residual >= 0.0) CHECK(residual < prev_residual);
    prev_residual = residual;
  }
  CHECK(prev_residual < 1e-3);

  // Positions already masked sit on the baseline for the whole path.
  TokenSequence partial = seq;
  partial.masked[2] = true;
  auto ig = explain_integrated_gradient(model, partial, cls, 64, ScoreKind::Signed);
  CHECK(ig.scores[2] == 0.0);
  CHECK_THROWS_AS(explain_integrated_gradient(model, seq, cls, 0, ScoreKind::Signed),
                  std::invalid_argument);
}

TEST_CASE("tabular integrated gradients are exact for the linear logit") {
  LinearModel m;
  m.w = Eigen::Vector3d(1.5, -0.5, 2.0);
  m.b = -0.3;
  Eigen::Vector3d x(0.4, -1.0, 0.25);
  for (int k : {1, 7, 50}) {
    auto ig = explain_integrated_gradient(m, x, 1, k, ScoreKind::Signed);
    for (int j = 0; j < 3; ++j) CHECK(ig.scores[j] == doctest::Approx(x(j) * m.w(j)));
  }
}

TEST_CASE("leave-one-out equals hand-computed logit drops") {
  auto model = init_attention(toy_vocab(9), 4, 3, 8);
  TokenSequence seq{{4, 8, 3, 6}, {false, false, true, false}};
  const int cls = 2;
  auto loo = explain_leave_one_out(model, seq, cls, ScoreKind::Signed);
  double full = forward(model, seq).logits(cls);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    TokenSequence occ = seq;
    occ.masked[t] = true;
    CHECK(loo.scores[t] == doctest::Approx(full - forward(model, occ).logits(cls)));
  }
  // Occluding an already-masked token changes nothing.
  CHECK(loo.scores[2] == doctest::Approx(0.0));
}

TEST_CASE("attention scores are the forward-pass attention weights") {
  auto model = init_attention(toy_vocab(7), 4, 2, 4);
  TokenSequence seq{{1, 6, 2, 3}, {false, false, false, false}};
  auto e = explain_attention(model, seq);
  auto fwd = forward(model, seq);
  for (int t = 0; t < 4; ++t) CHECK(e.scores[t] == fwd.attention(t));

  LinearModel lin;
  lin.w = Eigen::Vector2d(1, 1);
  CHECK_THROWS_AS(explain_attention(lin, Eigen::Vector2d(1, 1)), std::invalid_argument);
}

TEST_CASE("random scores are uniform draws, reproducible per seed") {
  TokenSequence seq{{1, 2, 3, 4, 5}, std::vector<bool>(5, false)};
  Rng a(6), b(6), c(7);
  auto ea = explain_random(seq, a);
  auto eb = explain_random(seq, b);
  auto ec = explain_random(seq, c);
  CHECK(ea.scores == eb.scores);
  CHECK(ea.scores != ec.scores);
  for (double s : ea.scores) {
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("surrogate fit puts the planted keyword on top") {
  auto kw = gen_keyword_sentiment(256, 6, 15);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 15;
  auto trained = train(init_attention(kw.vocab, 8, 2, 15), kw.split, cfg).model;

  int checked = 0;
  for (const auto& ex : kw.split.test) {
    Rng rng(100 + checked);
    auto lime = explain_lime(trained, ex.seq, ex.gold, 512, 0.01, rng);
    std::size_t best = 0;
    for (std::size_t t = 1; t < lime.scores.size(); ++t)
      if (std::abs(lime.scores[t]) > std::abs(lime.scores[best])) best = t;
    int tok = ex.seq.tokens[best];
    CHECK((tok == kw.positive_keyword || tok == kw.negative_keyword));
    if (++checked == 5) break;
  }
}

TEST_CASE("surrogate fit is deterministic and flags degenerate neighborhoods") {
  auto model = init_attention(toy_vocab(8), 4, 2, 18);
  TokenSequence seq{{3, 1, 6, 2}, std::vector<bool>(4, false)};
  Rng a(9), b(9);
  auto ea = explain_lime(model, seq, 1, 128, 0.01, a);
  auto eb = explain_lime(model, seq, 1, 128, 0.01, b);
  CHECK(ea.scores == eb.scores);
  CHECK(ea.note.empty());

  // A constant model yields identical soft labels everywhere; the fit is
  // degenerate and must say so instead of returning arbitrary weights.
  auto constant = model;
  constant.head.setZero();
  Rng c(9);
  auto ec = explain_lime(constant, seq, 1, 128, 0.01, c);
  CHECK_FALSE(ec.note.empty());
  for (double s : ec.scores) CHECK(s == 0.0);

  Rng d(9);
  CHECK_THROWS_AS(explain_lime(model, seq, 1, 2, 0.01, d), std::invalid_argument);
  CHECK_THROWS_AS(explain_lime(model, seq, 1, 128, -1.0, d), std::invalid_argument);
}

TEST_CASE("heavy l1 penalty drives every surrogate weight to zero") {
  auto model = init_attention(toy_vocab(8), 4, 2, 19);
  TokenSequence seq{{3, 1, 6, 2}, std::vector<bool>(4, false)};
  Rng rng(11);
  auto e = explain_lime(model, seq, 1, 256, 1e6, rng);
  for (double s : e.scores) CHECK(s == 0.0);
}

TEST_CASE("exact kernel shap equals enumerated Shapley values") {
  auto model = init_attention(toy_vocab(9), 4, 2, 25);
  TokenSequence seq{{2, 7, 4, 1, 8}, {false, false, true, false, false}};
  Rng rng(1);
  auto shap = explain_kernel_shap(model, seq, 1, ShapMode::Exact(), rng);
  auto brute = brute_shapley(model, seq, 1);
  for (std::size_t t = 0; t < seq.size(); ++t)
    CHECK(shap.scores[t] == doctest::Approx(brute[t]).epsilon(1e-9));
  CHECK(shap.scores[2] == 0.0);  // masked position is not a player

  // Efficiency: attributions sum to full minus empty coalition value.
  TokenSequence empty = seq;
  for (std::size_t t = 0; t < empty.size(); ++t) empty.masked[t] = true;
  double total = forward(model, seq).logits(1) - forward(model, empty).logits(1);
  double sum = 0.0;
  for (double s : shap.scores) sum += s;
  CHECK(sum == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("kernel shap respects symmetry and dummy players") {
  auto model = init_attention(toy_vocab(6), 4, 2, 30);
  // Positions 0 and 2 hold the same token: exchangeable players.
  // Token 5's embedding is forced to the mask row, making position 3 a dummy.
  model.E.row(5) = model.E.row(kMaskToken);
  TokenSequence seq{{4, 2, 4, 5}, std::vector<bool>(4, false)};
  Rng rng(1);
  auto shap = explain_kernel_shap(model, seq, 1, ShapMode::Exact(), rng);
  CHECK(shap.scores[0] == doctest::Approx(shap.scores[2]).epsilon(1e-9));
  CHECK(shap.scores[3] == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("shapley kernel weights match the closed form") {
  // m! style closed form: (m-1) / (C(m,s) s (m-s)).
  CHECK(shap_kernel_weight(4, 1) == doctest::Approx(3.0 / (4.0 * 1 * 3)));
  CHECK(shap_kernel_weight(4, 2) == doctest::Approx(3.0 / (6.0 * 2 * 2)));
  CHECK(shap_kernel_weight(5, 1) == doctest::Approx(4.0 / (5.0 * 1 * 4)));
}

TEST_CASE("tabular kernel shap recovers linear attributions exactly") {
  LinearModel m;
  m.w = Eigen::Vector4d(1.0, -2.0, 0.5, 0.0);
  m.b = 0.7;
  Eigen::Vector4d x(2.0, 1.0, -1.0, 3.0);
  Rng rng(2);
  auto shap = explain_kernel_shap(m, x, 1, ShapMode::Exact(), rng);
  // Linear value function: phi_j = w_j x_j regardless of coalition structure.
  for (int j = 0; j < 4; ++j) CHECK(shap.scores[j] == doctest::Approx(m.w(j) * x(j)).epsilon(1e-9));
}

TEST_CASE("measure registry resolves names and absolute variants") {
  auto model = init_attention(toy_vocab(8), 4, 2, 33);
  TokenSequence seq{{3, 5, 1, 7}, std::vector<bool>(4, false)};
  auto rng = std::make_shared<Rng>(77);

  auto signed_ixg = make_token_importance("input-x-gradient", rng)(model, seq, 1);
  auto abs_ixg = make_token_importance("input-x-gradient-abs", rng)(model, seq, 1);
  for (std::size_t t = 0; t < seq.size(); ++t)
    CHECK(abs_ixg.scores[t] == doctest::Approx(std::abs(signed_ixg.scores[t])));

  for (const char* name :
       {"gradient-l1", "gradient-l2", "gradient-linf", "integrated-gradient", "loo",
        "loo-abs", "attention", "random", "lime", "kernel-shap"}) {
    auto e = make_token_importance(name, rng)(model, seq, 1);
    CHECK(e.scores.size() == seq.size());
  }
  CHECK_THROWS(make_token_importance("no-such-measure", rng));

  // Seeded reproducibility for the stochastic entries.
  auto r1 = make_token_importance("random", std::make_shared<Rng>(5))(model, seq, 1);
  auto r2 = make_token_importance("random", std::make_shared<Rng>(5))(model, seq, 1);
  CHECK(r1.scores == r2.scores);
}
