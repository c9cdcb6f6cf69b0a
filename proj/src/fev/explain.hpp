#pragma once

// Importance measures: pure functions from (model, input, explained class) to
// per-token scores. Gradient-family measures explain p(class|x); occlusion and
// surrogate measures (leave-one-out, LIME, Kernel SHAP) operate on logits.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "model.hpp"

namespace fev {

enum class PNorm { L1, L2, Linf };

// Norm over the embedding dimension of d p(cls)/d e_i, one score per token.
Explanation explain_gradient(const AttentionClassifier& model, const TokenSequence& seq,
                             int cls, PNorm norm);
Explanation explain_gradient(const LinearModel& model, const Eigen::VectorXd& x, int cls,
                             PNorm norm);

// Inner product of each token embedding with its probability gradient.
Explanation explain_input_x_grad(const AttentionClassifier& model, const TokenSequence& seq,
                                 int cls, ScoreKind kind);

// Riemann-sum path integral of logit gradients from the fully-masked baseline
// to the input; k interpolation steps.
Explanation explain_integrated_gradient(const AttentionClassifier& model,
                                        const TokenSequence& seq, int cls, int k,
                                        ScoreKind kind);
// Tabular variant: straight path from the zero vector.
Explanation explain_integrated_gradient(const LinearModel& model, const Eigen::VectorXd& x,
                                        int cls, int k, ScoreKind kind);

// Logit drop from masking each token in turn: f(x)_c - f(x \ i)_c.
// Exactly T+1 forward passes.
Explanation explain_leave_one_out(const AttentionClassifier& model, const TokenSequence& seq,
                                  int cls, ScoreKind kind);

// Attention weights as scores. Models without attention are unsupported.
Explanation explain_attention(const AttentionClassifier& model, const TokenSequence& seq);
Explanation explain_attention(const LinearModel& model, const Eigen::VectorXd& x);

// I.i.d. Uniform(0,1) scores.
Explanation explain_random(const TokenSequence& seq, Rng& rng);

// L1-penalized logistic surrogate over a random-masking neighborhood, fit to
// p(cls|.) soft labels by cyclic coordinate descent (duality gap below 1e-8).
// A neighborhood whose soft labels are all identical is flagged with zero
// scores.
Explanation explain_lime(const AttentionClassifier& model, const TokenSequence& seq, int cls,
                         int n_samples, double lambda, Rng& rng);

struct ShapMode {
  bool exact = true;
  int n_samples = 0;  // sampled mode only

  static ShapMode Exact() { return {true, 0}; }
  static ShapMode Sampled(int n) { return {false, n}; }
};

// Shapley values of the class logit via the Shapley-kernel weighted least
// squares, players = unmasked token positions, absence = mask token. Exact
// mode enumerates all proper coalitions (requires at most 16 players).
Explanation explain_kernel_shap(const AttentionClassifier& model, const TokenSequence& seq,
                                int cls, ShapMode mode, Rng& rng);
// Tabular variant: absence = feature zeroed.
Explanation explain_kernel_shap(const LinearModel& model, const Eigen::VectorXd& x, int cls,
                                ShapMode mode, Rng& rng);

// Shapley-kernel weight for a coalition of size s out of m players.
double shap_kernel_weight(int m, int s);

// --- measure registry -----------------------------------------------------------

using TokenImportance =
    std::function<Explanation(const AttentionClassifier&, const TokenSequence&, int)>;

struct ImportanceConfig {
  int ig_steps = 50;
  int lime_samples = 256;
  double lime_lambda = 0.01;
  int shap_samples = 256;
};

// Builds a measure by name: gradient-l1 | gradient-l2 | gradient-linf |
// input-x-gradient | input-x-gradient-abs | integrated-gradient |
// integrated-gradient-abs | loo | loo-abs | attention | random | lime |
// kernel-shap. Stochastic measures draw from the shared rng, so results are
// deterministic for a fixed seed and call order. Throws on unknown names.
TokenImportance make_token_importance(const std::string& name, std::shared_ptr<Rng> rng,
                                      const ImportanceConfig& cfg = {});

}  // namespace fev
