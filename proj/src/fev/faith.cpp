#include "faith.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace fev {

namespace {

int iterations_for(double delta) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw std::invalid_argument("masking step must satisfy 0 < delta <= 1");
  int n = static_cast<int>(std::lround(1.0 / delta));
  if (n < 1 || std::fabs(n * delta - 1.0) > 1e-9)
    throw std::invalid_argument("masking step must divide 1");
  return n;
}

double dataset_performance(const AttentionClassifier& model,
                           const std::vector<LabeledExample>& data, MetricKind metric,
                           int num_labels) {
  std::vector<int> preds, golds;
  preds.reserve(data.size());
  golds.reserve(data.size());
  for (const auto& ex : data) {
    ModelOutput out = forward(model, ex.seq);
    Eigen::Index best;
    out.probabilities.maxCoeff(&best);
    preds.push_back(static_cast<int>(best));
    golds.push_back(ex.gold);
  }
  return evaluate_metric(metric, preds, golds, num_labels);
}

std::size_t masked_count(const TokenSequence& seq) {
  return seq.size() - static_cast<std::size_t>(seq.unmasked_count());
}

// Cumulative per-observation masking budget at a given ratio.
std::size_t budget_at(double ratio, std::size_t T) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(T) - 1e-12));
}

}  // namespace

RecursiveEvalResult recursive_eval(const TokenImportance& im, const AttentionClassifier& model,
                                   const std::vector<LabeledExample>& data, double delta,
                                   MetricKind metric, int num_labels, bool masked_finetuned,
                                   bool explain_predicted) {
  int n_iter = iterations_for(delta);
  if (data.empty()) throw std::invalid_argument("recursive_eval: empty dataset");

  RecursiveEvalResult result;
  result.curve.metric = metric;
  if (!masked_finetuned)
    result.warning =
        "model was not trained with masked fine-tuning; masked inputs may be "
        "out-of-distribution and the curve may not be valid";

  std::vector<LabeledExample> current = data;
  result.curve.ratios.push_back(0.0);
  result.curve.performances.push_back(dataset_performance(model, current, metric, num_labels));

  for (int i = 1; i <= n_iter; ++i) {
    double ratio = static_cast<double>(i) / n_iter;
    for (std::size_t j = 0; j < current.size(); ++j) {
      auto& ex = current[j];
      int cls = ex.gold;
      if (explain_predicted) {
        ModelOutput out = forward(model, ex.seq);
        Eigen::Index best;
        out.probabilities.maxCoeff(&best);
        cls = static_cast<int>(best);
      }
      Explanation expl;
      try {
        expl = im(model, ex.seq, cls);
      } catch (const std::exception& e) {
        throw std::runtime_error("recursive_eval: importance measure failed on observation " +
                                 std::to_string(j) + ": " + e.what());
      }
      std::size_t target = std::min(budget_at(ratio, ex.seq.size()), ex.seq.size());
      std::size_t have = masked_count(ex.seq);
      if (target > have) ex.seq = mask_top_k(ex.seq, expl, target - have);
    }
    result.curve.ratios.push_back(ratio);
    result.curve.performances.push_back(
        dataset_performance(model, current, metric, num_labels));
    result.masked_levels.push_back(current);
  }
  return result;
}

FaithfulnessCurve roar_retrain(const TokenImportance& im, const TokenTrainer& trainer,
                               const DatasetSplit& split, double delta, bool recursive,
                               std::uint64_t root_seed) {
  int n_iter = iterations_for(delta);

  FaithfulnessCurve curve;
  curve.metric = split.metric;

  DatasetSplit masked = split;
  AttentionClassifier model;
  try {
    model = trainer(split, root_seed);
  } catch (const std::exception& e) {
    throw std::runtime_error("roar_retrain: training failed at masking level 0: " + std::string(e.what()));
  }
  curve.ratios.push_back(0.0);
  curve.performances.push_back(
      dataset_performance(model, split.test, split.metric, split.num_labels));

  // One-shot mode ranks every observation once with the unmasked-data model.
  auto rank_once = [&](const std::vector<LabeledExample>& part) {
    std::vector<Explanation> out;
    out.reserve(part.size());
    for (const auto& ex : part) out.push_back(im(model, ex.seq, ex.gold));
    return out;
  };
  std::vector<std::vector<Explanation>> fixed_ranks;
  if (!recursive)
    fixed_ranks = {rank_once(split.train), rank_once(split.validation), rank_once(split.test)};

  const AttentionClassifier* ranker = &model;
  for (int i = 1; i <= n_iter; ++i) {
    double ratio = static_cast<double>(i) / n_iter;
    std::vector<std::vector<LabeledExample>*> parts = {&masked.train, &masked.validation,
                                                       &masked.test};
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto& part = *parts[p];
      for (std::size_t j = 0; j < part.size(); ++j) {
        auto& ex = part[j];
        std::size_t target = std::min(budget_at(ratio, ex.seq.size()), ex.seq.size());
        std::size_t have = masked_count(ex.seq);
        if (target <= have) continue;
        Explanation expl =
            recursive ? im(*ranker, ex.seq, ex.gold) : fixed_ranks[p][j];
        ex.seq = mask_top_k(ex.seq, expl, target - have);
      }
    }

    AttentionClassifier retrained;
    try {
      retrained = trainer(masked, root_seed + static_cast<std::uint64_t>(i));
    } catch (const std::exception& e) {
      throw std::runtime_error("roar_retrain: training failed at masking level " +
                               std::to_string(i) + ": " + e.what());
    }
    curve.ratios.push_back(ratio);
    curve.performances.push_back(
        dataset_performance(retrained, masked.test, split.metric, split.num_labels));
    if (recursive) model = retrained;
    ranker = &model;
  }
  return curve;
}

// --- tabular variant --------------------------------------------------------------

namespace {

Eigen::MatrixXd features_with_removed(const std::vector<SyntheticExample>& examples,
                                      const std::vector<bool>& removed) {
  Eigen::MatrixXd X(examples.size(), kSyntheticDim);
  for (std::size_t i = 0; i < examples.size(); ++i)
    for (int j = 0; j < kSyntheticDim; ++j) X(i, j) = removed[j] ? 0.0 : examples[i].x[j];
  return X;
}

std::vector<int> labels_of(const std::vector<SyntheticExample>& examples) {
  std::vector<int> y(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) y[i] = examples[i].y;
  return y;
}

double tabular_accuracy(const LinearModel& model, const Eigen::MatrixXd& X,
                        const std::vector<int>& y) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (model.predict(X.row(i).transpose()) == y[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(X.rows());
}

}  // namespace

FaithfulnessCurve tabular_curve_for_order(const SyntheticDataset& train,
                                          const SyntheticDataset& test,
                                          const std::vector<int>& order, double l2) {
  if (order.size() != kSyntheticDim)
    throw std::invalid_argument("tabular_curve_for_order: order must cover all features");
  std::vector<int> y_train = labels_of(train.examples);
  std::vector<int> y_test = labels_of(test.examples);

  FaithfulnessCurve curve;
  curve.metric = MetricKind::Accuracy;
  std::vector<bool> removed(kSyntheticDim, false);
  for (int k = 0; k <= kSyntheticDim; ++k) {
    if (k > 0) removed[order[k - 1]] = true;
    LinearModel model = fit_logreg(features_with_removed(train.examples, removed), y_train, l2);
    curve.ratios.push_back(static_cast<double>(k) / kSyntheticDim);
    curve.performances.push_back(
        tabular_accuracy(model, features_with_removed(test.examples, removed), y_test));
  }
  return curve;
}

std::vector<int> ground_truth_order(const SyntheticDataset& data) {
  std::vector<int> informative, rest;
  for (int j = 0; j < kSyntheticDim; ++j)
    (data.a[j] != 0.0 ? informative : rest).push_back(j);
  std::stable_sort(informative.begin(), informative.end(),
                   [&](int l, int r) { return std::fabs(data.a[l]) > std::fabs(data.a[r]); });
  informative.insert(informative.end(), rest.begin(), rest.end());
  return informative;
}

std::vector<int> worst_case_order(const SyntheticDataset& data) {
  std::vector<int> informative, rest;
  for (int j = 0; j < kSyntheticDim; ++j)
    (data.a[j] != 0.0 ? informative : rest).push_back(j);
  std::stable_sort(informative.begin(), informative.end(),
                   [&](int l, int r) { return std::fabs(data.a[l]) < std::fabs(data.a[r]); });
  rest.insert(rest.end(), informative.begin(), informative.end());
  return rest;
}

FaithfulnessCurve tabular_roar(const SyntheticDataset& train, const SyntheticDataset& test,
                               double l2, bool recursive) {
  std::vector<int> y_train = labels_of(train.examples);
  std::vector<int> y_test = labels_of(test.examples);

  FaithfulnessCurve curve;
  curve.metric = MetricKind::Accuracy;
  std::vector<bool> removed(kSyntheticDim, false);

  LinearModel model = fit_logreg(features_with_removed(train.examples, removed), y_train, l2);
  curve.ratios.push_back(0.0);
  curve.performances.push_back(
      tabular_accuracy(model, features_with_removed(test.examples, removed), y_test));

  // One-shot: rank every feature once by the full model's weight magnitude.
  std::vector<int> fixed_order(kSyntheticDim);
  std::iota(fixed_order.begin(), fixed_order.end(), 0);
  std::stable_sort(fixed_order.begin(), fixed_order.end(), [&](int l, int r) {
    return std::fabs(model.w(l)) > std::fabs(model.w(r));
  });

  for (int k = 1; k <= kSyntheticDim; ++k) {
    int victim;
    if (recursive) {
      victim = -1;
      double best = -1.0;
      for (int j = 0; j < kSyntheticDim; ++j) {
        if (removed[j]) continue;
        if (std::fabs(model.w(j)) > best) {
          best = std::fabs(model.w(j));
          victim = j;
        }
      }
    } else {
      victim = fixed_order[k - 1];
    }
    removed[victim] = true;
    LinearModel retrained =
        fit_logreg(features_with_removed(train.examples, removed), y_train, l2);
    curve.ratios.push_back(static_cast<double>(k) / kSyntheticDim);
    curve.performances.push_back(
        tabular_accuracy(retrained, features_with_removed(test.examples, removed), y_test));
    if (recursive) model = retrained;
  }
  return curve;
}

// --- scoring ------------------------------------------------------------------------

FaithfulnessScore compute_acu_racu(const FaithfulnessCurve& explanation,
                                   const FaithfulnessCurve& baseline) {
  const auto n = explanation.ratios.size();
  if (n < 2 || baseline.ratios.size() != n)
    throw std::invalid_argument("compute_acu_racu: curves need matching grids of >= 2 points");
  for (std::size_t i = 0; i < n; ++i)
    if (std::fabs(explanation.ratios[i] - baseline.ratios[i]) > 1e-12)
      throw std::invalid_argument("compute_acu_racu: ratio grids differ at index " +
                                  std::to_string(i));

  double b_final = baseline.performances.back();
  double acu = 0.0, normalizer = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double dx = explanation.ratios[i + 1] - explanation.ratios[i];
    double dp0 = baseline.performances[i] - explanation.performances[i];
    double dp1 = baseline.performances[i + 1] - explanation.performances[i + 1];
    acu += 0.5 * dx * (dp0 + dp1);
    double db0 = baseline.performances[i] - b_final;
    double db1 = baseline.performances[i + 1] - b_final;
    normalizer += 0.5 * dx * (db0 + db1);
  }

  FaithfulnessScore score;
  score.acu = acu;
  if (normalizer > 0.0) {
    score.racu = acu / normalizer;
    score.racu_defined = true;
  } else {
    score.racu = 0.0;
    score.racu_defined = false;
  }
  return score;
}

// --- beam search ----------------------------------------------------------------------

double masking_order_objective(const AttentionClassifier& model, const TokenSequence& seq,
                               int cls, const MaskingOrder& order, bool logit_objective) {
  auto value = [&](const TokenSequence& s) {
    ModelOutput out = forward(model, s);
    return logit_objective ? out.logits(cls) : out.probabilities(cls);
  };
  double f0 = value(seq);
  TokenSequence current = seq;
  double objective = 0.0;
  for (std::size_t pos : order) {
    if (pos >= current.size() || current.masked[pos])
      throw std::invalid_argument("masking_order_objective: invalid or repeated position");
    current.masked[pos] = true;
    objective += f0 - value(current);
  }
  return objective;
}

MaskingOrder beam_optimize(const AttentionClassifier& model, const TokenSequence& seq, int cls,
                           const BeamConfig& cfg) {
  if (cfg.width < 1) throw std::invalid_argument("beam_optimize: width must be >= 1");
  std::vector<std::size_t> players;
  for (std::size_t t = 0; t < seq.size(); ++t)
    if (!seq.masked[t]) players.push_back(t);
  const std::size_t P = players.size();
  if (P == 0) return {};
  std::size_t bound = static_cast<std::size_t>(cfg.width) * P * P;
  if (P > 63 || bound > cfg.max_forward)
    throw std::runtime_error("beam_optimize: forward-pass budget exceeded (width * T^2 = " +
                             std::to_string(bound) + ")");

  auto value = [&](std::uint64_t set) {
    TokenSequence s = seq;
    for (std::size_t i = 0; i < P; ++i)
      if ((set >> i) & 1u) s.masked[players[i]] = true;
    ModelOutput out = forward(model, s);
    return cfg.logit_objective ? out.logits(cls) : out.probabilities(cls);
  };
  double f0 = value(0);

  struct Beam {
    std::uint64_t set = 0;
    double score = 0.0;
    MaskingOrder order;
  };
  std::vector<Beam> beams = {Beam{}};

  for (std::size_t step = 0; step < P; ++step) {
    // Merge extensions by masked set; future drops depend only on the set, so
    // keeping the best-scoring path per set is lossless. The drop term for a
    // set is path-independent and computed once.
    std::map<std::uint64_t, Beam> merged;
    std::map<std::uint64_t, double> drops;
    for (const auto& beam : beams) {
      for (std::size_t i = 0; i < P; ++i) {
        if ((beam.set >> i) & 1u) continue;
        std::uint64_t set = beam.set | (1ull << i);
        auto [dit, fresh] = drops.try_emplace(set, 0.0);
        if (fresh) dit->second = f0 - value(set);
        double score = beam.score + dit->second;
        auto it = merged.find(set);
        if (it != merged.end() && it->second.score >= score) continue;
        Beam next;
        next.set = set;
        next.score = score;
        next.order = beam.order;
        next.order.push_back(players[i]);
        merged[set] = std::move(next);
      }
    }
    beams.clear();
    for (auto& [set, beam] : merged) beams.push_back(std::move(beam));
    std::stable_sort(beams.begin(), beams.end(), [](const Beam& l, const Beam& r) {
      if (l.score != r.score) return l.score > r.score;
      return l.set < r.set;
    });
    if (beams.size() > static_cast<std::size_t>(cfg.width)) beams.resize(cfg.width);
  }
  return beams.front().order;
}

}  // namespace fev
