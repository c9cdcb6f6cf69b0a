#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "fev/data.hpp"
#include "fev/model.hpp"

using namespace fev;

namespace {

Vocab toy_vocab(int n_words) {
  Vocab v;
  v.words.push_back("[MASK]");
  for (int i = 1; i < n_words; ++i) v.words.push_back("w" + std::to_string(i));
  return v;
}

// Central finite difference of p(cls) with respect to one embedding entry.
double fd_prob(const AttentionClassifier& model, Eigen::MatrixXd embeds, int cls, int i, int j,
               double h) {
  embeds(i, j) += h;
  double up = forward_embeds(model, embeds).probabilities(cls);
  embeds(i, j) -= 2 * h;
  double down = forward_embeds(model, embeds).probabilities(cls);
  return (up - down) / (2 * h);
}

double fd_logit(const AttentionClassifier& model, Eigen::MatrixXd embeds, int cls, int i, int j,
                double h) {
  embeds(i, j) += h;
  double up = forward_embeds(model, embeds).logits(cls);
  embeds(i, j) -= 2 * h;
  double down = forward_embeds(model, embeds).logits(cls);
  return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("linear model follows the softmax of (0, w.x + b)") {
  LinearModel m;
  m.w = Eigen::Vector3d(1.0, -2.0, 0.5);
  m.b = 0.25;
  Eigen::Vector3d x(0.2, 0.1, -0.4);
  double logit = m.w.dot(x) + m.b;
  auto l = m.logits(x);
  CHECK(l(0) == doctest::Approx(0.0));
  CHECK(l(1) == doctest::Approx(logit));
  auto p = m.probabilities(x);
  CHECK(p(1) == doctest::Approx(1.0 / (1.0 + std::exp(-logit))));
  CHECK(p(0) + p(1) == doctest::Approx(1.0));
  CHECK(m.predict(x) == (logit > 0 ? 1 : 0));
  CHECK(m.grad_logit(0).isZero());
  CHECK(m.grad_logit(1) == m.w);
}

TEST_CASE("attention initialization is deterministic with a silent mask row") {
  auto v = toy_vocab(6);
  auto a = init_attention(v, 5, 3, 42);
  auto b = init_attention(v, 5, 3, 42);
  auto c = init_attention(v, 5, 3, 43);
  CHECK(a.E == b.E);
  CHECK(a.W == b.W);
  CHECK(a.E != c.E);
  CHECK(a.E.rows() == 6);
  CHECK(a.E.cols() == 5);
  CHECK(a.E.row(kMaskToken).isZero());
  CHECK(a.head.rows() == 3);
}

TEST_CASE("forward pass produces normalized attention and mask-row embeddings") {
  auto model = init_attention(toy_vocab(8), 4, 2, 1);
  TokenSequence seq{{3, 1, 5, 2}, {false, true, false, false}};
  auto out = forward(model, seq);
  CHECK(out.attention.size() == 4);
  CHECK(out.attention.sum() == doctest::Approx(1.0));
  CHECK(out.attention.minCoeff() > 0.0);
  CHECK(out.probabilities.sum() == doctest::Approx(1.0));
  REQUIRE(out.embeddings.size() == 2);
  CHECK(out.embeddings[0].rows() == 4);

  // Masked position 1 uses the mask embedding, not its token's row.
  auto e = embed(model, seq);
  CHECK(e.row(1) == model.E.row(kMaskToken));
  CHECK(e.row(0) == model.E.row(3));
  CHECK(out.embeddings[0] == e);
  // Layer 1 holds the post-tanh attention keys.
  Eigen::VectorXd u0 = ((model.W * e.row(0).transpose() + model.b).array().tanh()).matrix();
  CHECK(out.embeddings[1].row(0).transpose().isApprox(u0));
}

TEST_CASE("probability and logit input gradients match finite differences") {
  auto model = init_attention(toy_vocab(9), 4, 3, 7);
  TokenSequence seq{{3, 1, 5, 2, 7}, {false, false, true, false, false}};
  auto embeds = embed(model, seq);
  const double h = 1e-5;
  for (int cls = 0; cls < 3; ++cls) {
    auto gp = grad_prob_embeds(model, embeds, cls);
    auto gl = grad_logit_embeds(model, embeds, cls);
    auto gi = grad_input(model, seq, cls);
    CHECK(gp == gi);
    for (int i = 0; i < embeds.rows(); ++i)
      for (int j = 0; j < embeds.cols(); ++j) {
        CHECK(gp(i, j) == doctest::Approx(fd_prob(model, embeds, cls, i, j, h)).epsilon(1e-5));
        CHECK(gl(i, j) == doctest::Approx(fd_logit(model, embeds, cls, i, j, h)).epsilon(1e-5));
      }
  }
}

TEST_CASE("parameter gradients of the batch loss match finite differences") {
  auto model = init_attention(toy_vocab(7), 3, 2, 11);
  std::vector<LabeledExample> batch = {
      {TokenSequence{{1, 4, 2}, {false, false, false}}, 0},
      {TokenSequence{{5, 3, 6}, {false, true, false}}, 1},
      {TokenSequence{{2, 2, 1}, {false, false, false}}, 1},
  };
  double loss = 0.0;
  auto g = loss_gradients(model, batch, &loss);
  CHECK(loss > 0.0);

  const double h = 1e-6;
  auto fd = [&](auto set, double analytic) {
    auto m = model;
    set(m, h);
    double up;
    loss_gradients(m, batch, &up);
    m = model;
    set(m, -h);
    double down;
    loss_gradients(m, batch, &down);
    CHECK(analytic == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
  };
  for (int i = 0; i < model.E.rows(); ++i)
    for (int j = 0; j < model.E.cols(); ++j)
      fd([&](AttentionClassifier& m, double d) { m.E(i, j) += d; }, g.E(i, j));
  for (int i = 0; i < model.W.rows(); ++i)
    for (int j = 0; j < model.W.cols(); ++j)
      fd([&](AttentionClassifier& m, double d) { m.W(i, j) += d; }, g.W(i, j));
  for (int i = 0; i < model.b.size(); ++i)
    fd([&](AttentionClassifier& m, double d) { m.b(i) += d; }, g.b(i));
  for (int i = 0; i < model.v.size(); ++i)
    fd([&](AttentionClassifier& m, double d) { m.v(i) += d; }, g.v(i));
  for (int i = 0; i < model.head.rows(); ++i)
    for (int j = 0; j < model.head.cols(); ++j)
      fd([&](AttentionClassifier& m, double d) { m.head(i, j) += d; }, g.head(i, j));
}

TEST_CASE("training solves the keyword toy and is reproducible") {
  auto kw = gen_keyword_sentiment(256, 8, 5);
  auto init = init_attention(kw.vocab, 8, 2, 5);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 5;
  auto r1 = train(init, kw.split, cfg);
  auto r2 = train(init, kw.split, cfg);
  CHECK(r1.history == r2.history);
  CHECK(r1.model.E == r2.model.E);
  REQUIRE(r1.history.size() == 15);
  CHECK(r1.history[r1.best_epoch] >= 0.95);
  for (double acc : r1.history) CHECK(r1.history[r1.best_epoch] >= acc);

  // The returned model reproduces the best validation score.
  std::vector<int> preds, golds;
  for (const auto& ex : kw.split.validation) {
    preds.push_back(
        forward(r1.model, ex.seq).probabilities(1) > 0.5 ? 1 : 0);
    golds.push_back(ex.gold);
  }
  CHECK(evaluate_metric(MetricKind::Accuracy, preds, golds, 2) ==
        doctest::Approx(r1.history[r1.best_epoch]));
}

TEST_CASE("masked fine-tuning mode trains through and handles masked inputs") {
  auto kw = gen_keyword_sentiment(256, 8, 9);
  auto init = init_attention(kw.vocab, 8, 2, 9);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 9;
  cfg.masking = MaskingMode::MaskedFineTuning;
  cfg.validation = ValidationMode::Dual;
  auto r = train(init, kw.split, cfg);
  CHECK(r.history[r.best_epoch] > 0.7);
}

TEST_CASE("divergent training reports the epoch instead of emitting NaNs") {
  auto kw = gen_keyword_sentiment(64, 6, 2);
  auto init = init_attention(kw.vocab, 4, 2, 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e30;
  cfg.epochs = 40;
  CHECK_THROWS_AS(train(init, kw.split, cfg), TrainingError);
}

TEST_CASE("logistic fit satisfies the first-order optimality conditions") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss;
  const int n = 200, d = 5;
  Eigen::MatrixXd X(n, d);
  std::vector<int> y(n);
  Eigen::VectorXd w_true(d);
  for (int j = 0; j < d; ++j) w_true(j) = gauss(rng);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = gauss(rng);
    double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(w_true)));
    y[i] = std::uniform_real_distribution<double>(0, 1)(rng) < p ? 1 : 0;
  }
  const double l2 = 0.5;
  auto m = fit_logreg(X, y, l2);
  // Stationarity of nll + l2/2 ||w||^2: X^T (mu - y) + l2 w = 0, sum(mu - y) = 0.
  Eigen::VectorXd mu(n);
  for (int i = 0; i < n; ++i) mu(i) = 1.0 / (1.0 + std::exp(-(X.row(i).dot(m.w) + m.b)));
  Eigen::VectorXd target(n);
  for (int i = 0; i < n; ++i) target(i) = y[i];
  Eigen::VectorXd grad_w = X.transpose() * (mu - target) + l2 * m.w;
  CHECK(grad_w.norm() < 1e-6);
  CHECK(std::abs((mu - target).sum()) < 1e-6);

  CHECK_THROWS_AS(fit_logreg(Eigen::MatrixXd(0, 3), std::vector<int>{}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("logistic fit recovers a symmetric decision rule") {
  // Perfectly symmetric data: +x labeled 1, -x labeled 0 forces b = 0 and w
  // proportional to the separating direction.
  Eigen::MatrixXd X(4, 2);
  X << 1, 0, -1, 0, 2, 1, -2, -1;
  std::vector<int> y = {1, 0, 1, 0};
  auto m = fit_logreg(X, y, 1.0);
  CHECK(std::abs(m.b) < 1e-8);
  CHECK(m.w(0) > 0.0);
  for (int i = 0; i < 4; ++i) CHECK(m.predict(X.row(i)) == y[i]);
}

TEST_CASE("checkpoints round-trip every parameter exactly") {
  auto model = init_attention(toy_vocab(5), 3, 2, 77);
  const std::string path = "model-roundtrip.json";
  save_checkpoint(path, model, 123, "masked-fine-tuning");
  std::uint64_t seed = 0;
  std::string mode;
  auto loaded = load_checkpoint(path, &seed, &mode);
  CHECK(seed == 123);
  CHECK(mode == "masked-fine-tuning");
  CHECK(loaded.E == model.E);
  CHECK(loaded.W == model.W);
  CHECK(loaded.b == model.b);
  CHECK(loaded.v == model.v);
  CHECK(loaded.head == model.head);
  CHECK(loaded.vocab.words == model.vocab.words);
  std::remove(path.c_str());
  CHECK_THROWS(load_checkpoint("no-such-checkpoint.json"));
}
