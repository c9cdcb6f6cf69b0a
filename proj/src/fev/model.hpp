#pragma once

// Tiny differentiable classifiers with exact hand-derived gradients, per-layer
// embedding exposure for the in-distribution test, and a training loop with
// dual-validation epoch selection.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"
#include "types.hpp"

namespace fev {

// Binary logistic classifier over tabular features.
// Class-1 logit is w.x + b; class-0 logit is 0.
struct LinearModel {
  Eigen::VectorXd w;
  double b = 0.0;

  Eigen::Vector2d logits(const Eigen::VectorXd& x) const;
  Eigen::Vector2d probabilities(const Eigen::VectorXd& x) const;
  int predict(const Eigen::VectorXd& x) const;
  // d logit_c / d x. Class 1 gives the weight row, class 0 is zero.
  Eigen::VectorXd grad_logit(int cls) const;
};

// Additive-attention classifier over token sequences. Tokens are encoded as
// their embedding rows directly (no recurrent mixing), so every attention
// weight is exactly token-aligned:
//   u_i = tanh(W e_i + b),  alpha = softmax(u_i^T v),
//   h = sum_i alpha_i e_i,  logits = head h.
struct AttentionClassifier {
  Vocab vocab;
  int dim = 0;
  int num_classes = 0;
  Eigen::MatrixXd E;     // vocab x dim, row 0 is the trainable mask embedding
  Eigen::MatrixXd W;     // dim x dim
  Eigen::VectorXd b;     // dim
  Eigen::VectorXd v;     // dim
  Eigen::MatrixXd head;  // num_classes x dim
};

// Deterministic initialization. The mask-token row starts at zero; every
// other parameter is sampled from scaled normals.
AttentionClassifier init_attention(const Vocab& vocab, int dim, int num_classes,
                                   std::uint64_t seed);

struct ModelOutput {
  Eigen::VectorXd logits;
  Eigen::VectorXd probabilities;
  Eigen::VectorXd attention;                 // per token, sums to 1
  std::vector<Eigen::MatrixXd> embeddings;   // layer 0: token embeddings (T x d),
                                             // layer 1: pre-attention u vectors (T x d)
};

// Token embeddings for a sequence; masked positions use the mask row.
Eigen::MatrixXd embed(const AttentionClassifier& model, const TokenSequence& seq);

ModelOutput forward(const AttentionClassifier& model, const TokenSequence& seq);
ModelOutput forward_embeds(const AttentionClassifier& model, const Eigen::MatrixXd& embeds);

// Exact analytic gradients with respect to each position's embedding vector
// (T x d). grad_input differentiates p(cls | seq); the _logit variant
// differentiates the raw class logit (used by path-integrated attributions).
Eigen::MatrixXd grad_input(const AttentionClassifier& model, const TokenSequence& seq, int cls);
Eigen::MatrixXd grad_prob_embeds(const AttentionClassifier& model, const Eigen::MatrixXd& embeds,
                                 int cls);
Eigen::MatrixXd grad_logit_embeds(const AttentionClassifier& model, const Eigen::MatrixXd& embeds,
                                  int cls);

// --- training -----------------------------------------------------------------

enum class MaskingMode { Plain, OnlyMasking, MaskedFineTuning };
enum class ValidationMode { Plain, Masked, Dual };

struct TrainConfig {
  double learning_rate = 0.5;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  MaskingMode masking = MaskingMode::Plain;
  ValidationMode validation = ValidationMode::Plain;
};

struct TrainingError : std::runtime_error {
  int epoch;
  explicit TrainingError(int at_epoch)
      : std::runtime_error("training diverged (non-finite loss) at epoch " +
                           std::to_string(at_epoch)),
        epoch(at_epoch) {}
};

struct TrainResult {
  AttentionClassifier model;
  std::vector<double> history;  // validation metric per epoch
  int best_epoch = 0;
};

// Plain mini-batch gradient descent. Deterministic given cfg.seed; the epoch
// with the best validation metric (under the configured validation transform,
// fixed once up front) provides the returned parameters.
TrainResult train(const AttentionClassifier& init, const DatasetSplit& split,
                  const TrainConfig& cfg);

// Parameter-space gradient of the mean cross-entropy over a batch. Exposed for
// finite-difference verification.
struct AttentionGradients {
  Eigen::MatrixXd E, W, head;
  Eigen::VectorXd b, v;
};
AttentionGradients loss_gradients(const AttentionClassifier& model,
                                  const std::vector<LabeledExample>& batch,
                                  double* loss_out = nullptr);

// --- logistic regression --------------------------------------------------------

// L2-penalized maximum likelihood via Newton iterations; converges when the
// gradient norm falls below 1e-8 relative to its starting value, or throws
// with the final gradient norm in the message.
LinearModel fit_logreg(const Eigen::MatrixXd& X, const std::vector<int>& y, double l2);
LinearModel fit_logreg(const std::vector<SyntheticExample>& data, double l2,
                       std::uint64_t seed);

// --- checkpoints ----------------------------------------------------------------

void save_checkpoint(const std::string& path, const AttentionClassifier& model,
                     std::uint64_t seed, const std::string& masking_mode);
AttentionClassifier load_checkpoint(const std::string& path, std::uint64_t* seed = nullptr,
                                    std::string* masking_mode = nullptr);

}  // namespace fev
