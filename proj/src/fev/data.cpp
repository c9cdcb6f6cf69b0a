#include "data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fev {

double evaluate_metric(MetricKind kind, const std::vector<int>& predictions,
                       const std::vector<int>& golds, int num_labels) {
  if (predictions.size() != golds.size() || golds.empty())
    throw std::invalid_argument("evaluate_metric: size mismatch or empty");
  if (kind == MetricKind::Accuracy) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < golds.size(); ++i)
      if (predictions[i] == golds[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(golds.size());
  }
  // Macro-F1: unweighted mean of per-class F1. A class absent from both the
  // gold labels and the predictions contributes F1 = 0 denominator-free, so
  // it is skipped (matching the usual convention of averaging over classes
  // present in gold).
  double f1_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_labels; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      if (predictions[i] == c && golds[i] == c) ++tp;
      if (predictions[i] == c && golds[i] != c) ++fp;
      if (predictions[i] != c && golds[i] == c) ++fn;
    }
    if (tp + fp + fn == 0) continue;
    double f1 = (2.0 * tp) / static_cast<double>(2 * tp + fp + fn);
    f1_sum += f1;
    ++classes;
  }
  return classes == 0 ? 0.0 : f1_sum / classes;
}

SyntheticDataset gen_synthetic(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_synthetic: empty dataset (n = 0)");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticDataset data;
  for (int j = 0; j < kSyntheticInformative; ++j) data.a[j] = normal(rng);
  for (int j = kSyntheticInformative; j < kSyntheticDim; ++j) data.a[j] = 0.0;
  for (int j = 0; j < kSyntheticDim; ++j) data.d[j] = normal(rng);

  data.examples.resize(n);
  for (auto& ex : data.examples) {
    double z = normal(rng);
    double eta = normal(rng);
    for (int j = 0; j < kSyntheticDim; ++j) {
      double eps = normal(rng);
      ex.x[j] = data.a[j] * z / 10.0 + data.d[j] * eta + eps / 10.0;
    }
    ex.z = z;
    ex.y = z > 0.0 ? 1 : 0;
  }
  return data;
}

int Vocab::id(const std::string& w) const {
  for (int i = 0; i < size(); ++i)
    if (words[i] == w) return i;
  throw std::out_of_range("Vocab::id: unknown word '" + w + "'");
}

KeywordDataset gen_keyword_sentiment(std::size_t n, std::size_t seq_len,
                                     std::uint64_t seed) {
  if (seq_len < 2)
    throw std::invalid_argument("gen_keyword_sentiment: seq_len must be >= 2");

  constexpr int kNumFillers = 10;
  KeywordDataset ds;
  ds.vocab.words = {"[MASK]", "bad", "good"};  // fillers occupy ids 3..12
  for (int i = 0; i < kNumFillers; ++i) ds.vocab.words.push_back("filler" + std::to_string(i));
  ds.negative_keyword = 1;
  ds.positive_keyword = 2;

  Rng rng(seed);
  auto gen_block = [&](std::size_t count) {
    std::vector<LabeledExample> out;
    out.reserve(count);
    std::uniform_int_distribution<int> filler(3, 2 + kNumFillers);
    std::uniform_int_distribution<std::size_t> pos(0, seq_len - 1);
    std::bernoulli_distribution positive(0.5);
    for (std::size_t i = 0; i < count; ++i) {
      LabeledExample ex;
      ex.seq.tokens.resize(seq_len);
      ex.seq.masked.assign(seq_len, false);
      for (auto& t : ex.seq.tokens) t = filler(rng);
      bool pos_class = positive(rng);
      ex.seq.tokens[pos(rng)] = pos_class ? ds.positive_keyword : ds.negative_keyword;
      ex.gold = pos_class ? 1 : 0;
      out.push_back(std::move(ex));
    }
    return out;
  };

  ds.split.train = gen_block(n);
  ds.split.validation = gen_block(n / 2);
  ds.split.test = gen_block(n / 2);
  ds.split.num_labels = 2;
  ds.split.metric = MetricKind::Accuracy;
  return ds;
}

TokenSequence mask_tokens(const TokenSequence& seq, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("mask_tokens: ratio outside [0,1]");
  TokenSequence out = seq;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (out.masked[t]) continue;
    if (uniform(rng) < ratio) out.masked[t] = true;
  }
  return out;
}

TokenSequence mask_top_k(const TokenSequence& seq, const std::vector<double>& scores,
                         std::size_t k, bool* saturated) {
  if (scores.size() != seq.size())
    throw std::invalid_argument("mask_top_k: score length mismatch");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (!seq.masked[i]) candidates.push_back(i);

  bool sat = k > candidates.size();
  if (saturated) *saturated = sat;
  std::size_t take = sat ? candidates.size() : k;

  // Highest score first; ties broken by lowest position index. stable_sort on
  // an index list that is already ascending gives exactly that.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t lhs, std::size_t rhs) { return scores[lhs] > scores[rhs]; });

  TokenSequence out = seq;
  for (std::size_t i = 0; i < take; ++i) out.masked[candidates[i]] = true;
  return out;
}

TokenSequence mask_top_k(const TokenSequence& seq, const Explanation& explanation,
                         std::size_t k, bool* saturated) {
  return mask_top_k(seq, explanation.scores, k, saturated);
}

std::vector<LabeledExample> build_masked_minibatch(const std::vector<LabeledExample>& batch,
                                                   Rng& rng) {
  std::vector<LabeledExample> out;
  out.reserve(batch.size());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bool even = ((i + 1) % 2) == 0;  // 1-based index
    if (even) {
      double r = uniform(rng);
      LabeledExample ex = batch[i];
      ex.seq = mask_tokens(ex.seq, r, rng);
      out.push_back(std::move(ex));
    } else {
      out.push_back(batch[i]);
    }
  }
  return out;
}

std::vector<LabeledExample> dual_validation(const std::vector<LabeledExample>& val,
                                            Rng& rng) {
  std::vector<LabeledExample> out = val;
  out.reserve(val.size() * 2);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (const auto& ex : val) {
    double r = uniform(rng);
    LabeledExample masked = ex;
    masked.seq = mask_tokens(masked.seq, r, rng);
    out.push_back(std::move(masked));
  }
  return out;
}

MajorityBaseline class_majority(const DatasetSplit& split) {
  if (split.train.empty())
    throw std::invalid_argument("class_majority: empty train split");
  std::map<int, std::size_t> counts;
  for (const auto& ex : split.train) ++counts[ex.gold];
  int best = counts.begin()->first;
  std::size_t best_count = counts.begin()->second;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {  // ties keep the smallest label id
      best = label;
      best_count = count;
    }
  }
  std::vector<int> preds(split.test.size(), best);
  std::vector<int> golds;
  golds.reserve(split.test.size());
  for (const auto& ex : split.test) golds.push_back(ex.gold);
  return {best, evaluate_metric(split.metric, preds, golds, split.num_labels)};
}

void save_examples(const std::string& path, const std::vector<LabeledExample>& examples,
                   std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_examples: cannot open " + path);
  nlohmann::json header = {{"format", "fev-examples"}, {"version", 1}, {"seed", seed}};
  out << header.dump() << "\n";
  for (const auto& ex : examples) {
    nlohmann::json rec = {{"tokens", ex.seq.tokens}, {"gold", ex.gold}};
    if (std::any_of(ex.seq.masked.begin(), ex.seq.masked.end(), [](bool m) { return m; })) {
      std::vector<int> flags(ex.seq.masked.begin(), ex.seq.masked.end());
      rec["masked"] = flags;
    }
    out << rec.dump() << "\n";
  }
}

std::vector<LabeledExample> load_examples(const std::string& path, std::uint64_t* seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_examples: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_examples: missing header");
  auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "fev-examples")
    throw std::runtime_error("load_examples: unrecognized header");
  if (seed) *seed = header.value("seed", std::uint64_t{0});

  std::vector<LabeledExample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    LabeledExample ex;
    ex.seq.tokens = rec.at("tokens").get<std::vector<int>>();
    ex.gold = rec.at("gold").get<int>();
    if (rec.contains("masked")) {
      auto flags = rec.at("masked").get<std::vector<int>>();
      ex.seq.masked.assign(flags.begin(), flags.end());
    } else {
      ex.seq.masked.assign(ex.seq.tokens.size(), false);
    }
    if (ex.seq.masked.size() != ex.seq.tokens.size())
      throw std::runtime_error("load_examples: masked/tokens length mismatch");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_synthetic_csv(const std::string& path, const SyntheticDataset& data,
                        std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_synthetic_csv: cannot open " + path);
  out << "# seed=" << seed << "\n";
  for (int j = 0; j < kSyntheticDim; ++j) out << "x" << j << ",";
  out << "y\n";
  out.precision(17);
  for (const auto& ex : data.examples) {
    for (int j = 0; j < kSyntheticDim; ++j) out << ex.x[j] << ",";
    out << ex.y << "\n";
  }
}

}  // namespace fev
