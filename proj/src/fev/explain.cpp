#include "explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fev {

namespace {

void check_class(int cls, int num_classes, const char* who) {
  if (cls < 0 || cls >= num_classes)
    throw std::out_of_range(std::string(who) + ": class outside label set");
}

double row_norm(const Eigen::VectorXd& g, PNorm norm) {
  switch (norm) {
    case PNorm::L1:
      return g.lpNorm<1>();
    case PNorm::L2:
      return g.norm();
    case PNorm::Linf:
      return g.lpNorm<Eigen::Infinity>();
  }
  return 0.0;
}

std::vector<double> to_abs(std::vector<double> scores) {
  for (auto& s : scores) s = std::fabs(s);
  return scores;
}

}  // namespace

Explanation explain_gradient(const AttentionClassifier& model, const TokenSequence& seq,
                             int cls, PNorm norm) {
  check_class(cls, model.num_classes, "explain_gradient");
  Eigen::MatrixXd g = grad_input(model, seq, cls);
  Explanation out;
  out.kind = ScoreKind::Absolute;
  out.method = norm == PNorm::L1 ? "gradient-l1" : norm == PNorm::L2 ? "gradient-l2"
                                                                     : "gradient-linf";
  out.scores.reserve(seq.size());
  for (Eigen::Index t = 0; t < g.rows(); ++t)
    out.scores.push_back(row_norm(g.row(t).transpose(), norm));
  return out;
}

Explanation explain_gradient(const LinearModel& model, const Eigen::VectorXd& x, int cls,
                             PNorm norm) {
  check_class(cls, 2, "explain_gradient");
  Eigen::Vector2d p = model.probabilities(x);
  // d p(cls)/dx: +- p0 p1 w (sign by class). Per-feature norm in 1-D is the
  // magnitude regardless of the chosen norm.
  Eigen::VectorXd g = (cls == 1 ? 1.0 : -1.0) * p(0) * p(1) * model.w;
  (void)norm;
  Explanation out;
  out.kind = ScoreKind::Absolute;
  out.method = "gradient";
  for (Eigen::Index j = 0; j < g.size(); ++j) out.scores.push_back(std::fabs(g(j)));
  return out;
}

Explanation explain_input_x_grad(const AttentionClassifier& model, const TokenSequence& seq,
                                 int cls, ScoreKind kind) {
  check_class(cls, model.num_classes, "explain_input_x_grad");
  Eigen::MatrixXd e = embed(model, seq);
  Eigen::MatrixXd g = grad_prob_embeds(model, e, cls);
  Explanation out;
  out.kind = kind;
  out.method = kind == ScoreKind::Signed ? "input-x-gradient" : "input-x-gradient-abs";
  for (Eigen::Index t = 0; t < e.rows(); ++t) out.scores.push_back(e.row(t).dot(g.row(t)));
  if (kind == ScoreKind::Absolute) out.scores = to_abs(std::move(out.scores));
  return out;
}

Explanation explain_integrated_gradient(const AttentionClassifier& model,
                                        const TokenSequence& seq, int cls, int k,
                                        ScoreKind kind) {
  check_class(cls, model.num_classes, "explain_integrated_gradient");
  if (k < 1) throw std::invalid_argument("explain_integrated_gradient: k must be >= 1");

  TokenSequence baseline_seq = seq;
  baseline_seq.masked.assign(seq.size(), true);
  Eigen::MatrixXd x = embed(model, seq);
  Eigen::MatrixXd b = embed(model, baseline_seq);
  Eigen::MatrixXd diff = x - b;

  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int i = 1; i <= k; ++i) {
    Eigen::MatrixXd point = b + (static_cast<double>(i) / k) * diff;
    avg += grad_logit_embeds(model, point, cls);
  }
  avg /= static_cast<double>(k);

  Explanation out;
  out.kind = kind;
  out.method = kind == ScoreKind::Signed ? "integrated-gradient" : "integrated-gradient-abs";
  for (Eigen::Index t = 0; t < x.rows(); ++t) out.scores.push_back(diff.row(t).dot(avg.row(t)));
  if (kind == ScoreKind::Absolute) out.scores = to_abs(std::move(out.scores));
  return out;
}

Explanation explain_integrated_gradient(const LinearModel& model, const Eigen::VectorXd& x,
                                        int cls, int k, ScoreKind kind) {
  check_class(cls, 2, "explain_integrated_gradient");
  if (k < 1) throw std::invalid_argument("explain_integrated_gradient: k must be >= 1");
  // Logit gradient is constant, so the path integral from the zero baseline is
  // exact at any k.
  Eigen::VectorXd g = model.grad_logit(cls);
  Explanation out;
  out.kind = kind;
  out.method = kind == ScoreKind::Signed ? "integrated-gradient" : "integrated-gradient-abs";
  for (Eigen::Index j = 0; j < x.size(); ++j) out.scores.push_back(x(j) * g(j));
  if (kind == ScoreKind::Absolute) out.scores = to_abs(std::move(out.scores));
  return out;
}

Explanation explain_leave_one_out(const AttentionClassifier& model, const TokenSequence& seq,
                                  int cls, ScoreKind kind) {
  check_class(cls, model.num_classes, "explain_leave_one_out");
  double full = forward(model, seq).logits(cls);
  Explanation out;
  out.kind = kind;
  out.method = kind == ScoreKind::Signed ? "loo" : "loo-abs";
  out.scores.reserve(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    TokenSequence occluded = seq;
    occluded.masked[t] = true;
    out.scores.push_back(full - forward(model, occluded).logits(cls));
  }
  if (kind == ScoreKind::Absolute) out.scores = to_abs(std::move(out.scores));
  return out;
}

Explanation explain_attention(const AttentionClassifier& model, const TokenSequence& seq) {
  ModelOutput fwd = forward(model, seq);
  Explanation out;
  out.kind = ScoreKind::Absolute;
  out.method = "attention";
  out.scores.assign(fwd.attention.data(), fwd.attention.data() + fwd.attention.size());
  return out;
}

Explanation explain_attention(const LinearModel&, const Eigen::VectorXd&) {
  throw std::invalid_argument("explain_attention: model exposes no attention weights");
}

Explanation explain_random(const TokenSequence& seq, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Explanation out;
  out.kind = ScoreKind::Absolute;
  out.method = "random";
  out.scores.reserve(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out.scores.push_back(uniform(rng));
  return out;
}

// --- LIME -----------------------------------------------------------------------

namespace {

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

// log(1 + e^m), overflow-safe.
double softplus(double m) { return std::log1p(std::exp(-std::fabs(m))) + std::max(m, 0.0); }

// Negative binary entropy t log t + (1-t) log(1-t); the convex conjugate of
// softplus shifted by the soft label.
double neg_entropy(double t) {
  double a = t > 0.0 ? t * std::log(t) : 0.0;
  double b = t < 1.0 ? (1.0 - t) * std::log(1.0 - t) : 0.0;
  return a + b;
}

}  // namespace

Explanation explain_lime(const AttentionClassifier& model, const TokenSequence& seq, int cls,
                         int n_samples, double lambda, Rng& rng) {
  check_class(cls, model.num_classes, "explain_lime");
  const int T = static_cast<int>(seq.size());
  if (n_samples < T)
    throw std::invalid_argument("explain_lime: n_samples must be at least the token count");
  if (lambda < 0.0) throw std::invalid_argument("explain_lime: lambda must be nonnegative");

  // Neighborhood: per neighbor draw r ~ U(0,1) and mask each unmasked token
  // with probability r. Feature z_t = 1 when position t survives unmasked.
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::MatrixXd Z(n_samples, T);
  Eigen::VectorXd q(n_samples);
  for (int j = 0; j < n_samples; ++j) {
    double r = uniform(rng);
    TokenSequence neighbor = mask_tokens(seq, r, rng);
    for (int t = 0; t < T; ++t) Z(j, t) = neighbor.masked[t] ? 0.0 : 1.0;
    q(j) = forward(model, neighbor).probabilities(cls);
  }

  Explanation out;
  out.kind = ScoreKind::Signed;
  out.method = "lime";
  out.scores.assign(T, 0.0);

  if (q.maxCoeff() - q.minCoeff() < 1e-12) {
    out.note = "degenerate neighborhood: all surrogate targets identical";
    return out;
  }

  // L1-penalized soft-label logistic regression by cyclic proximal coordinate
  // descent; intercept unpenalized and refit by Newton after every sweep.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(T);
  double bias = 0.0;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_samples);  // Z w + bias
  Eigen::VectorXd lip(T);                                 // 0.25 * column squared norms
  for (int t = 0; t < T; ++t) lip(t) = 0.25 * Z.col(t).squaredNorm();

  auto primal = [&]() {
    double f = 0.0;
    for (int j = 0; j < n_samples; ++j) f += softplus(m(j)) - q(j) * m(j);
    return f + lambda * w.lpNorm<1>();
  };

  constexpr double kGapTol = 1e-8;
  constexpr int kMaxSweeps = 100000;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    for (int t = 0; t < T; ++t) {
      if (lip(t) == 0.0) continue;  // feature never varies in the neighborhood
      double grad = 0.0;
      for (int j = 0; j < n_samples; ++j)
        if (Z(j, t) != 0.0) grad += (sigmoid(m(j)) - q(j)) * Z(j, t);
      double raw = w(t) - grad / lip(t);
      double thresh = lambda / lip(t);
      double updated = raw > thresh ? raw - thresh : (raw < -thresh ? raw + thresh : 0.0);
      if (updated != w(t)) {
        m += (updated - w(t)) * Z.col(t);
        w(t) = updated;
      }
    }
    // Intercept: 1-D Newton to drive the mean residual to zero.
    for (int it = 0; it < 50; ++it) {
      double g = 0.0, h = 0.0;
      for (int j = 0; j < n_samples; ++j) {
        double s = sigmoid(m(j));
        g += s - q(j);
        h += s * (1.0 - s);
      }
      if (std::fabs(g) < 1e-13 || h <= 0.0) break;
      double step = g / h;
      bias -= step;
      m.array() -= step;
    }

    // Convergence: Fenchel duality gap with the scaled-residual dual point
    // nu_j = s (sigma(m_j) - q_j); the gap vanishes at the optimum.
    Eigen::VectorXd resid(n_samples);
    for (int j = 0; j < n_samples; ++j) resid(j) = sigmoid(m(j)) - q(j);
    if (lambda > 0.0) {
      double c = (Z.transpose() * resid).lpNorm<Eigen::Infinity>();
      double scale = c > lambda ? lambda / c : 1.0;
      double dual = 0.0;
      for (int j = 0; j < n_samples; ++j) dual -= neg_entropy(q(j) + scale * resid(j));
      if (primal() - dual < kGapTol) break;
    } else {
      double gnorm = (Z.transpose() * resid).lpNorm<Eigen::Infinity>();
      if (gnorm < 1e-10) break;
    }
  }

  for (int t = 0; t < T; ++t) out.scores[t] = w(t);
  return out;
}

// --- Kernel SHAP ----------------------------------------------------------------

double shap_kernel_weight(int m, int s) {
  if (m < 2 || s < 1 || s > m - 1)
    throw std::invalid_argument("shap_kernel_weight: size outside 1..m-1");
  double binom = 1.0;
  for (int i = 1; i <= s; ++i) binom *= static_cast<double>(m - s + i) / i;
  return (m - 1.0) / (binom * s * (m - s));
}

namespace {

// Shapley values for a value function over subsets of M players, via the
// Shapley-kernel weighted least squares with the completeness constraint
// eliminated through the last player.
std::vector<double> shap_solve(int M, const std::function<double(std::uint32_t)>& value,
                               const ShapMode& mode, Rng& rng) {
  if (M > 31) throw std::invalid_argument("kernel shap: more than 31 players unsupported");
  double f_empty = value(0);
  double f_full = value((1u << M) - 1u);
  if (M == 1) return {f_full - f_empty};
  double delta = f_full - f_empty;

  std::vector<std::uint32_t> coalitions;
  std::vector<double> weights;
  if (mode.exact) {
    std::uint32_t full = (1u << M) - 1u;
    coalitions.reserve(full - 1);
    for (std::uint32_t z = 1; z < full; ++z) {
      coalitions.push_back(z);
      weights.push_back(shap_kernel_weight(M, std::popcount(z)));
    }
  } else {
    if (mode.n_samples < M)
      throw std::invalid_argument(
          "kernel shap sampled mode: n_samples must be at least the player count");
    // Coalition sizes drawn proportional to the kernel mass per size; the
    // sample frequency then carries the kernel, so each row gets weight 1.
    std::vector<double> size_mass(M - 1);
    for (int s = 1; s <= M - 1; ++s) size_mass[s - 1] = (M - 1.0) / (s * (M - s));
    std::discrete_distribution<int> size_dist(size_mass.begin(), size_mass.end());
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    for (int j = 0; j < mode.n_samples; ++j) {
      int s = size_dist(rng) + 1;
      std::shuffle(order.begin(), order.end(), rng);
      std::uint32_t z = 0;
      for (int i = 0; i < s; ++i) z |= 1u << order[i];
      coalitions.push_back(z);
      weights.push_back(1.0);
    }
  }

  const int last = M - 1;
  const int dims = M - 1;
  Eigen::MatrixXd AtA = Eigen::MatrixXd::Zero(dims, dims);
  Eigen::VectorXd Atb = Eigen::VectorXd::Zero(dims);
  Eigen::VectorXd row(dims);
  for (std::size_t r = 0; r < coalitions.size(); ++r) {
    std::uint32_t z = coalitions[r];
    double z_last = (z >> last) & 1u ? 1.0 : 0.0;
    for (int i = 0; i < dims; ++i) row(i) = (((z >> i) & 1u) ? 1.0 : 0.0) - z_last;
    double target = value(z) - f_empty - z_last * delta;
    AtA.noalias() += weights[r] * row * row.transpose();
    Atb.noalias() += weights[r] * target * row;
  }
  AtA.diagonal().array() += 1e-12;  // guards rank deficiency in sampled mode
  Eigen::VectorXd phi_head = AtA.ldlt().solve(Atb);

  std::vector<double> phi(M);
  double head_sum = 0.0;
  for (int i = 0; i < dims; ++i) {
    phi[i] = phi_head(i);
    head_sum += phi_head(i);
  }
  phi[last] = delta - head_sum;
  return phi;
}

}  // namespace

Explanation explain_kernel_shap(const AttentionClassifier& model, const TokenSequence& seq,
                                int cls, ShapMode mode, Rng& rng) {
  check_class(cls, model.num_classes, "explain_kernel_shap");
  std::vector<int> players;
  for (std::size_t t = 0; t < seq.size(); ++t)
    if (!seq.masked[t]) players.push_back(static_cast<int>(t));
  const int M = static_cast<int>(players.size());

  Explanation out;
  out.kind = ScoreKind::Signed;
  out.method = "kernel-shap";
  out.scores.assign(seq.size(), 0.0);
  if (M == 0) {
    out.note = "no unmasked tokens to attribute";
    return out;
  }
  if (mode.exact && M > 16)
    throw std::invalid_argument(
        "kernel shap exact mode supports at most 16 unmasked tokens; use sampled mode");

  auto value = [&](std::uint32_t z) {
    TokenSequence coalition = seq;
    for (int i = 0; i < M; ++i)
      if (!((z >> i) & 1u)) coalition.masked[players[i]] = true;
    return forward(model, coalition).logits(cls);
  };
  std::vector<double> phi = shap_solve(M, value, mode, rng);
  for (int i = 0; i < M; ++i) out.scores[players[i]] = phi[i];
  return out;
}

Explanation explain_kernel_shap(const LinearModel& model, const Eigen::VectorXd& x, int cls,
                                ShapMode mode, Rng& rng) {
  check_class(cls, 2, "explain_kernel_shap");
  const int M = static_cast<int>(x.size());
  if (mode.exact && M > 16)
    throw std::invalid_argument(
        "kernel shap exact mode supports at most 16 features; use sampled mode");

  auto value = [&](std::uint32_t z) {
    Eigen::VectorXd masked = x;
    for (int i = 0; i < M; ++i)
      if (!((z >> i) & 1u)) masked(i) = 0.0;
    return model.logits(masked)(cls);
  };
  std::vector<double> phi = shap_solve(M, value, mode, rng);
  Explanation out;
  out.kind = ScoreKind::Signed;
  out.method = "kernel-shap";
  out.scores = std::move(phi);
  return out;
}

// --- registry -------------------------------------------------------------------

TokenImportance make_token_importance(const std::string& name, std::shared_ptr<Rng> rng,
                                      const ImportanceConfig& cfg) {
  if (!rng) throw std::invalid_argument("make_token_importance: null rng");
  if (name == "gradient-l1" || name == "gradient-l2" || name == "gradient-linf") {
    PNorm norm = name == "gradient-l1" ? PNorm::L1
                 : name == "gradient-l2" ? PNorm::L2
                                         : PNorm::Linf;
    return [norm](const AttentionClassifier& m, const TokenSequence& s, int c) {
      return explain_gradient(m, s, c, norm);
    };
  }
  if (name == "input-x-gradient" || name == "input-x-gradient-abs") {
    ScoreKind kind = name == "input-x-gradient" ? ScoreKind::Signed : ScoreKind::Absolute;
    return [kind](const AttentionClassifier& m, const TokenSequence& s, int c) {
      return explain_input_x_grad(m, s, c, kind);
    };
  }
  if (name == "integrated-gradient" || name == "integrated-gradient-abs") {
    ScoreKind kind = name == "integrated-gradient" ? ScoreKind::Signed : ScoreKind::Absolute;
    int k = cfg.ig_steps;
    return [kind, k](const AttentionClassifier& m, const TokenSequence& s, int c) {
      return explain_integrated_gradient(m, s, c, k, kind);
    };
  }
  if (name == "loo" || name == "loo-abs") {
    ScoreKind kind = name == "loo" ? ScoreKind::Signed : ScoreKind::Absolute;
    return [kind](const AttentionClassifier& m, const TokenSequence& s, int c) {
      return explain_leave_one_out(m, s, c, kind);
    };
  }
  if (name == "attention")
    return [](const AttentionClassifier& m, const TokenSequence& s, int) {
      return explain_attention(m, s);
    };
  if (name == "random")
    return [rng](const AttentionClassifier&, const TokenSequence& s, int) {
      return explain_random(s, *rng);
    };
  if (name == "lime") {
    int n = cfg.lime_samples;
    double lambda = cfg.lime_lambda;
    return [rng, n, lambda](const AttentionClassifier& m, const TokenSequence& s, int c) {
      return explain_lime(m, s, c, std::max<int>(n, static_cast<int>(s.size())), lambda, *rng);
    };
  }
  if (name == "kernel-shap") {
    int n = cfg.shap_samples;
    return [rng, n](const AttentionClassifier& m, const TokenSequence& s, int c) {
      ShapMode mode = s.unmasked_count() <= 10 ? ShapMode::Exact()
                                               : ShapMode::Sampled(std::max(n, 2 * static_cast<int>(s.size())));
      return explain_kernel_shap(m, s, c, mode, *rng);
    };
  }
  throw std::invalid_argument("make_token_importance: unknown measure '" + name + "'");
}

}  // namespace fev
