#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fev {

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::VectorXd shifted = z.array() - z.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

}  // namespace

Eigen::Vector2d LinearModel::logits(const Eigen::VectorXd& x) const {
  return {0.0, w.dot(x) + b};
}

Eigen::Vector2d LinearModel::probabilities(const Eigen::VectorXd& x) const {
  return softmax(logits(x));
}

int LinearModel::predict(const Eigen::VectorXd& x) const {
  return w.dot(x) + b > 0.0 ? 1 : 0;
}

Eigen::VectorXd LinearModel::grad_logit(int cls) const {
  return cls == 1 ? w : Eigen::VectorXd::Zero(w.size()).eval();
}

AttentionClassifier init_attention(const Vocab& vocab, int dim, int num_classes,
                                   std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double param_scale = 1.0 / std::sqrt(static_cast<double>(dim));

  AttentionClassifier m;
  m.vocab = vocab;
  m.dim = dim;
  m.num_classes = num_classes;
  m.E.resize(vocab.size(), dim);
  for (int r = 0; r < vocab.size(); ++r)
    for (int c = 0; c < dim; ++c) m.E(r, c) = r == kMaskToken ? 0.0 : 0.5 * normal(rng);
  m.W.resize(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) m.W(r, c) = param_scale * normal(rng);
  m.b = Eigen::VectorXd::Zero(dim);
  m.v.resize(dim);
  for (int c = 0; c < dim; ++c) m.v(c) = normal(rng);
  m.head.resize(num_classes, dim);
  for (int r = 0; r < num_classes; ++r)
    for (int c = 0; c < dim; ++c) m.head(r, c) = param_scale * normal(rng);
  return m;
}

Eigen::MatrixXd embed(const AttentionClassifier& model, const TokenSequence& seq) {
  Eigen::MatrixXd e(seq.size(), model.dim);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    int token = seq.masked[t] ? kMaskToken : seq.tokens[t];
    if (token < 0 || token >= model.vocab.size())
      throw std::out_of_range("forward: token id outside vocabulary");
    e.row(t) = model.E.row(token);
  }
  return e;
}

ModelOutput forward_embeds(const AttentionClassifier& model, const Eigen::MatrixXd& embeds) {
  const auto T = embeds.rows();
  Eigen::MatrixXd u =
      ((embeds * model.W.transpose()).rowwise() + model.b.transpose()).array().tanh();
  Eigen::VectorXd scores = u * model.v;
  Eigen::VectorXd alpha = softmax(scores);
  Eigen::VectorXd h = embeds.transpose() * alpha;

  ModelOutput out;
  out.logits = model.head * h;
  out.probabilities = softmax(out.logits);
  out.attention = alpha;
  out.embeddings = {embeds, u};
  (void)T;
  return out;
}

ModelOutput forward(const AttentionClassifier& model, const TokenSequence& seq) {
  return forward_embeds(model, embed(model, seq));
}

namespace {

// Gradient of g_y . logits with respect to the input embeddings, for a fixed
// cotangent g_y over the logits.
Eigen::MatrixXd grad_embeds_from_logit_cotangent(const AttentionClassifier& model,
                                                 const Eigen::MatrixXd& embeds,
                                                 const Eigen::VectorXd& g_y) {
  const auto T = embeds.rows();
  Eigen::MatrixXd u =
      ((embeds * model.W.transpose()).rowwise() + model.b.transpose()).array().tanh();
  Eigen::VectorXd scores = u * model.v;
  Eigen::VectorXd alpha = softmax(scores);
  Eigen::VectorXd h = embeds.transpose() * alpha;

  Eigen::VectorXd g_h = model.head.transpose() * g_y;
  Eigen::VectorXd g_alpha = embeds * g_h;                     // dL/dalpha_i = g_h . e_i
  double mix = alpha.dot(g_alpha);
  Eigen::VectorXd g_s = alpha.array() * (g_alpha.array() - mix);  // softmax backward

  Eigen::MatrixXd grad(T, embeds.cols());
  for (Eigen::Index i = 0; i < T; ++i) {
    // ds_i/de_i = W^T ((1 - u_i^2) .* v)
    Eigen::VectorXd w_i =
        model.W.transpose() * ((1.0 - u.row(i).array().square()) * model.v.transpose().array())
                                  .matrix()
                                  .transpose();
    grad.row(i) = (alpha(i) * g_h + g_s(i) * w_i).transpose();
  }
  return grad;
}

}  // namespace

Eigen::MatrixXd grad_prob_embeds(const AttentionClassifier& model,
                                 const Eigen::MatrixXd& embeds, int cls) {
  if (cls < 0 || cls >= model.num_classes)
    throw std::out_of_range("grad_prob_embeds: class outside label set");
  ModelOutput out = forward_embeds(model, embeds);
  // d p_c / d logits = p_c (1_c - p)
  Eigen::VectorXd g_y = -out.probabilities(cls) * out.probabilities;
  g_y(cls) += out.probabilities(cls);
  return grad_embeds_from_logit_cotangent(model, embeds, g_y);
}

Eigen::MatrixXd grad_logit_embeds(const AttentionClassifier& model,
                                  const Eigen::MatrixXd& embeds, int cls) {
  if (cls < 0 || cls >= model.num_classes)
    throw std::out_of_range("grad_logit_embeds: class outside label set");
  Eigen::VectorXd g_y = Eigen::VectorXd::Zero(model.num_classes);
  g_y(cls) = 1.0;
  return grad_embeds_from_logit_cotangent(model, embeds, g_y);
}

Eigen::MatrixXd grad_input(const AttentionClassifier& model, const TokenSequence& seq,
                           int cls) {
  return grad_prob_embeds(model, embed(model, seq), cls);
}

AttentionGradients loss_gradients(const AttentionClassifier& model,
                                  const std::vector<LabeledExample>& batch,
                                  double* loss_out) {
  AttentionGradients g;
  g.E = Eigen::MatrixXd::Zero(model.E.rows(), model.E.cols());
  g.W = Eigen::MatrixXd::Zero(model.W.rows(), model.W.cols());
  g.head = Eigen::MatrixXd::Zero(model.head.rows(), model.head.cols());
  g.b = Eigen::VectorXd::Zero(model.b.size());
  g.v = Eigen::VectorXd::Zero(model.v.size());

  double loss = 0.0;
  for (const auto& ex : batch) {
    Eigen::MatrixXd embeds = embed(model, ex.seq);
    const auto T = embeds.rows();
    Eigen::MatrixXd u =
        ((embeds * model.W.transpose()).rowwise() + model.b.transpose()).array().tanh();
    Eigen::VectorXd scores = u * model.v;
    Eigen::VectorXd alpha = softmax(scores);
    Eigen::VectorXd h = embeds.transpose() * alpha;
    Eigen::VectorXd logits = model.head * h;
    Eigen::VectorXd probs = softmax(logits);
    loss += -std::log(std::max(probs(ex.gold), 1e-300));

    Eigen::VectorXd g_y = probs;
    g_y(ex.gold) -= 1.0;

    g.head += g_y * h.transpose();
    Eigen::VectorXd g_h = model.head.transpose() * g_y;
    Eigen::VectorXd g_alpha = embeds * g_h;
    double mix = alpha.dot(g_alpha);
    Eigen::VectorXd g_s = alpha.array() * (g_alpha.array() - mix);
    g.v += u.transpose() * g_s;

    for (Eigen::Index i = 0; i < T; ++i) {
      Eigen::VectorXd g_u = g_s(i) * model.v;
      Eigen::VectorXd g_a =
          ((1.0 - u.row(i).array().square()).transpose() * g_u.array()).matrix();
      g.W += g_a * embeds.row(i);
      g.b += g_a;

      Eigen::VectorXd g_e = alpha(i) * g_h + model.W.transpose() * g_a;
      int token = ex.seq.masked[i] ? kMaskToken : ex.seq.tokens[i];
      g.E.row(token) += g_e.transpose();
    }
  }

  double inv = 1.0 / static_cast<double>(batch.size());
  g.E *= inv;
  g.W *= inv;
  g.head *= inv;
  g.b *= inv;
  g.v *= inv;
  if (loss_out) *loss_out = loss * inv;
  return g;
}

namespace {

std::vector<int> predict_all(const AttentionClassifier& model,
                             const std::vector<LabeledExample>& data) {
  std::vector<int> preds;
  preds.reserve(data.size());
  for (const auto& ex : data) {
    ModelOutput out = forward(model, ex.seq);
    Eigen::Index best;
    out.probabilities.maxCoeff(&best);
    preds.push_back(static_cast<int>(best));
  }
  return preds;
}

double dataset_metric(const AttentionClassifier& model,
                      const std::vector<LabeledExample>& data, MetricKind metric,
                      int num_labels) {
  std::vector<int> golds;
  golds.reserve(data.size());
  for (const auto& ex : data) golds.push_back(ex.gold);
  return evaluate_metric(metric, predict_all(model, data), golds, num_labels);
}

}  // namespace

TrainResult train(const AttentionClassifier& init, const DatasetSplit& split,
                  const TrainConfig& cfg) {
  if (cfg.epochs <= 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("train: epochs and batch size must be positive");

  Rng rng(cfg.seed);

  // The validation transform is fixed once so epoch selection compares like
  // with like across epochs.
  std::vector<LabeledExample> val;
  switch (cfg.validation) {
    case ValidationMode::Plain:
      val = split.validation;
      break;
    case ValidationMode::Masked: {
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      for (const auto& ex : split.validation) {
        LabeledExample masked = ex;
        masked.seq = mask_tokens(masked.seq, uniform(rng), rng);
        val.push_back(std::move(masked));
      }
      break;
    }
    case ValidationMode::Dual:
      val = dual_validation(split.validation, rng);
      break;
  }

  TrainResult result;
  result.model = init;
  AttentionClassifier current = init;
  double best_metric = -1.0;

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LabeledExample> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(split.train[order[i]]);

      switch (cfg.masking) {
        case MaskingMode::Plain:
          break;
        case MaskingMode::OnlyMasking:
          for (auto& ex : batch) ex.seq = mask_tokens(ex.seq, uniform(rng), rng);
          break;
        case MaskingMode::MaskedFineTuning:
          batch = build_masked_minibatch(batch, rng);
          break;
      }

      double loss = 0.0;
      AttentionGradients g = loss_gradients(current, batch, &loss);
      if (!std::isfinite(loss)) throw TrainingError(epoch);

      current.E -= cfg.learning_rate * g.E;
      current.W -= cfg.learning_rate * g.W;
      current.head -= cfg.learning_rate * g.head;
      current.b -= cfg.learning_rate * g.b;
      current.v -= cfg.learning_rate * g.v;
    }

    double metric = dataset_metric(current, val, split.metric, split.num_labels);
    result.history.push_back(metric);
    if (metric > best_metric) {
      best_metric = metric;
      result.best_epoch = epoch;
      result.model = current;
    }
  }
  return result;
}

LinearModel fit_logreg(const Eigen::MatrixXd& X, const std::vector<int>& y, double l2) {
  if (X.rows() == 0 || static_cast<std::size_t>(X.rows()) != y.size())
    throw std::invalid_argument("fit_logreg: empty data or label size mismatch");
  const auto n = X.rows();
  const auto d = X.cols();

  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) target(i) = y[i] ? 1.0 : 0.0;

  // Parameters: [w; b], bias unpenalized.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  Eigen::MatrixXd Xb(n, d + 1);
  Xb << X, Eigen::VectorXd::Ones(n);

  auto negloglik = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd m = Xb * th;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      nll += std::log1p(std::exp(-std::abs(m(i)))) + std::max(m(i), 0.0) - target(i) * m(i);
    return nll + 0.5 * l2 * th.head(d).squaredNorm();
  };

  constexpr double kTol = 1e-8;
  constexpr int kMaxIter = 200;
  double grad_norm = 0.0;
  double tol = kTol;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    Eigen::VectorXd m = Xb * theta;
    Eigen::VectorXd mu = (1.0 / (1.0 + (-m.array()).exp())).matrix();
    Eigen::VectorXd grad = Xb.transpose() * (mu - target);
    grad.head(d) += l2 * theta.head(d);
    grad_norm = grad.norm();
    if (iter == 0) tol = kTol * std::max(1.0, grad_norm);
    if (grad_norm < tol) {
      LinearModel model;
      model.w = theta.head(d);
      model.b = theta(d);
      return model;
    }

    Eigen::VectorXd s = mu.array() * (1.0 - mu.array());
    Eigen::MatrixXd H = Xb.transpose() * s.asDiagonal() * Xb;
    for (Eigen::Index j = 0; j < d; ++j) H(j, j) += l2;
    H.diagonal().array() += 1e-12;  // guards exactly-singular Hessians
    Eigen::VectorXd step = H.ldlt().solve(grad);

    // Damped Newton: halve until the objective does not increase. The slack
    // keeps rounding noise in the objective from rejecting near-converged
    // steps whose true decrease is below double precision.
    double before = negloglik(theta);
    double slack = 1e-9 * (1.0 + std::abs(before));
    double scale = 1.0;
    Eigen::VectorXd candidate = theta - step;
    for (int halvings = 0; halvings < 50 && negloglik(candidate) > before + slack; ++halvings) {
      scale *= 0.5;
      candidate = theta - scale * step;
    }
    theta = candidate;
  }
  throw std::runtime_error("fit_logreg: no convergence, final gradient norm " +
                           std::to_string(grad_norm));
}

LinearModel fit_logreg(const std::vector<SyntheticExample>& data, double l2,
                       std::uint64_t /*seed*/) {
  if (data.empty()) throw std::invalid_argument("fit_logreg: empty data");
  Eigen::MatrixXd X(data.size(), kSyntheticDim);
  std::vector<int> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < kSyntheticDim; ++j) X(i, j) = data[i].x[j];
    y[i] = data[i].y;
  }
  return fit_logreg(X, y, l2);
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.size(), j.empty() ? 0 : j[0].size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const AttentionClassifier& model,
                     std::uint64_t seed, const std::string& masking_mode) {
  nlohmann::json j = {
      {"format", "fev-checkpoint"},
      {"version", 1},
      {"seed", seed},
      {"masking_mode", masking_mode},
      {"dim", model.dim},
      {"num_classes", model.num_classes},
      {"vocab", model.vocab.words},
      {"E", matrix_to_json(model.E)},
      {"W", matrix_to_json(model.W)},
      {"b", std::vector<double>(model.b.data(), model.b.data() + model.b.size())},
      {"v", std::vector<double>(model.v.data(), model.v.data() + model.v.size())},
      {"head", matrix_to_json(model.head)},
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump();
}

AttentionClassifier load_checkpoint(const std::string& path, std::uint64_t* seed,
                                    std::string* masking_mode) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "fev-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unrecognized container");

  AttentionClassifier m;
  m.vocab.words = j.at("vocab").get<std::vector<std::string>>();
  m.dim = j.at("dim").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.E = matrix_from_json(j.at("E"));
  m.W = matrix_from_json(j.at("W"));
  m.head = matrix_from_json(j.at("head"));
  auto b = j.at("b").get<std::vector<double>>();
  auto v = j.at("v").get<std::vector<double>>();
  m.b = Eigen::Map<Eigen::VectorXd>(b.data(), b.size());
  m.v = Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
  if (seed) *seed = j.value("seed", std::uint64_t{0});
  if (masking_mode) *masking_mode = j.value("masking_mode", "");
  return m;
}

}  // namespace fev
