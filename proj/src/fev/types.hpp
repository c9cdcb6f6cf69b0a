#pragma once

// Shared value types passed between the dataset, model, explanation and
// evaluation layers.

#include <cstddef>
#include <string>
#include <vector>

namespace fev {

// Reserved mask token. Row 0 of every vocabulary.
constexpr int kMaskToken = 0;

struct TokenSequence {
  std::vector<int> tokens;
  std::vector<bool> masked;  // same length as tokens

  std::size_t size() const { return tokens.size(); }
  int unmasked_count() const {
    int n = 0;
    for (bool m : masked) n += m ? 0 : 1;
    return n;
  }
};

struct LabeledExample {
  TokenSequence seq;
  int gold = 0;
};

enum class MetricKind { Accuracy, MacroF1 };

struct DatasetSplit {
  std::vector<LabeledExample> train, validation, test;
  int num_labels = 2;
  MetricKind metric = MetricKind::Accuracy;
};

double evaluate_metric(MetricKind kind, const std::vector<int>& predictions,
                       const std::vector<int>& golds, int num_labels);

enum class ScoreKind { Signed, Absolute };

struct Explanation {
  std::vector<double> scores;  // one per token position
  ScoreKind kind = ScoreKind::Absolute;
  std::string method;
  std::string note;  // non-empty when the method flagged a degenerate fit
};

}  // namespace fev
