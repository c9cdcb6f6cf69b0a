#pragma once

// Faithfulness evaluation: retraining-free recursive masking curves, ROAR with
// retraining (one-shot and recursive), area-between-curves scores, and beam
// search over masking orders.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "explain.hpp"

namespace fev {

struct FaithfulnessCurve {
  std::vector<double> ratios;        // strictly increasing, 0 to 1
  std::vector<double> performances;  // same length
  MetricKind metric = MetricKind::Accuracy;
};

struct FaithfulnessScore {
  double acu = 0.0;
  double racu = 0.0;
  bool racu_defined = true;  // false when the normalizing area is zero
};

// --- retraining-free loop -------------------------------------------------------

struct RecursiveEvalResult {
  FaithfulnessCurve curve;
  // Masked copies of the dataset at each nonzero ratio, in curve order; kept
  // for downstream in-distribution scoring.
  std::vector<std::vector<LabeledExample>> masked_levels;
  std::string warning;  // set when the model was not trained for masked inputs
};

// 1/delta iterations; each recomputes the explanation on the currently-masked
// inputs and masks up to a cumulative ceil(ratio * T) tokens per observation
// (the observation's own length). Masking is monotone across iterations. The
// explained class is the gold label unless explain_predicted is set.
RecursiveEvalResult recursive_eval(const TokenImportance& im, const AttentionClassifier& model,
                                   const std::vector<LabeledExample>& data, double delta,
                                   MetricKind metric, int num_labels,
                                   bool masked_finetuned = true,
                                   bool explain_predicted = false);

// --- ROAR with retraining -------------------------------------------------------

using TokenTrainer =
    std::function<AttentionClassifier(const DatasetSplit&, std::uint64_t seed)>;

// Masks train/validation/test at each level per the importance order and
// retrains from scratch (fresh level-derived seed). One-shot mode ranks once
// with the model trained on unmasked data; recursive mode recomputes the
// ranking with each newly retrained model and keeps prior masks. Performance
// is measured on the masked test split. Training divergence is rethrown with
// the level index.
FaithfulnessCurve roar_retrain(const TokenImportance& im, const TokenTrainer& trainer,
                               const DatasetSplit& split, double delta, bool recursive,
                               std::uint64_t root_seed);

// --- tabular variant (16-feature synthetic task) ---------------------------------

// Removal = zeroing the feature column in every split. 17 curve points for
// orders over 16 features.
FaithfulnessCurve tabular_curve_for_order(const SyntheticDataset& train,
                                          const SyntheticDataset& test,
                                          const std::vector<int>& order, double l2);

// Informative features (nonzero generator coefficient) first, by descending
// coefficient magnitude; the rest by ascending index.
std::vector<int> ground_truth_order(const SyntheticDataset& data);
// Informative features last, ascending magnitude overall.
std::vector<int> worst_case_order(const SyntheticDataset& data);

// ROAR on the tabular task with absolute-logistic-weight explanations.
// One-shot ranks once by the full model's |w|; recursive refits at each level
// and removes the top remaining feature.
FaithfulnessCurve tabular_roar(const SyntheticDataset& train, const SyntheticDataset& test,
                               double l2, bool recursive);

// --- scoring ----------------------------------------------------------------------

// Trapezoid area between baseline and explanation curves; positive when the
// explanation curve lies below the baseline. RACU divides by the area between
// the baseline and the constant line at its final value.
FaithfulnessScore compute_acu_racu(const FaithfulnessCurve& explanation,
                                   const FaithfulnessCurve& baseline);

// --- beam search ------------------------------------------------------------------

using MaskingOrder = std::vector<std::size_t>;

struct BeamConfig {
  int width = 10;
  bool logit_objective = false;          // default: gold-class probability drop
  std::size_t max_forward = 2'000'000;   // capacity cap on width * T^2
};

// Maximizes the cumulative drop sum_t (f(x) - f(x_t)) over complete masking
// orders of the unmasked positions. States reaching the same masked set are
// merged keeping the best score, so a sufficiently wide beam is exact.
MaskingOrder beam_optimize(const AttentionClassifier& model, const TokenSequence& seq, int cls,
                           const BeamConfig& cfg);

// Objective value of a given complete masking order (for verification).
double masking_order_objective(const AttentionClassifier& model, const TokenSequence& seq,
                               int cls, const MaskingOrder& order, bool logit_objective);

}  // namespace fev
