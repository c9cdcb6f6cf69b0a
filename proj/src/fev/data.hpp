#pragma once

// Dataset generation (synthetic tabular and token toys), masking transforms,
// masked fine-tuning batch construction, dual validation and baselines.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "types.hpp"

namespace fev {

using Rng = std::mt19937_64;

// --- synthetic tabular task -------------------------------------------------

constexpr int kSyntheticDim = 16;
constexpr int kSyntheticInformative = 4;

struct SyntheticExample {
  std::array<double, kSyntheticDim> x{};
  int y = 0;
  double z = 0.0;  // latent factor, diagnostic only
};

struct SyntheticDataset {
  // Direction vectors sampled once per dataset. Only the first 4 entries of
  // `a` are nonzero, so there are exactly 4 informative features.
  std::array<double, kSyntheticDim> a{};
  std::array<double, kSyntheticDim> d{};
  std::vector<SyntheticExample> examples;
};

// x = a*z/10 + d*eta + eps/10 with fresh standard-normal z, eta, eps per
// example; y = 1 iff z > 0. Throws std::invalid_argument when n == 0.
SyntheticDataset gen_synthetic(std::size_t n, std::uint64_t seed);

// --- token toy task ----------------------------------------------------------

struct Vocab {
  std::vector<std::string> words;  // words[0] is the mask token

  int size() const { return static_cast<int>(words.size()); }
  int id(const std::string& w) const;  // throws on unknown word
};

// Planted-keyword sentiment toy. Every sequence holds exactly one keyword
// token ("good" or "bad") at a uniform position among filler tokens; the
// keyword alone determines the label (0 = negative, 1 = positive).
// Split sizes: train = n, validation = n/2, test = n/2.
struct KeywordDataset {
  Vocab vocab;
  int positive_keyword = 0;
  int negative_keyword = 0;
  DatasetSplit split;
};

KeywordDataset gen_keyword_sentiment(std::size_t n, std::size_t seq_len,
                                     std::uint64_t seed);

// --- masking transforms -------------------------------------------------------

// Masks each currently-unmasked position independently with probability
// `ratio`. Already-masked positions stay masked. Throws on ratio outside [0,1].
TokenSequence mask_tokens(const TokenSequence& seq, double ratio, Rng& rng);

// Masks exactly k additional positions: those with the highest score among
// unmasked positions, ties broken by lowest index. If k exceeds the number of
// unmasked positions, masks all of them and sets *saturated.
TokenSequence mask_top_k(const TokenSequence& seq, const std::vector<double>& scores,
                         std::size_t k, bool* saturated = nullptr);
TokenSequence mask_top_k(const TokenSequence& seq, const Explanation& explanation,
                         std::size_t k, bool* saturated = nullptr);

// Masked fine-tuning mini-batch: for 1-based index i, even-indexed examples
// are masked at a per-example ratio r ~ Uniform(0,1); odd indices pass through.
std::vector<LabeledExample> build_masked_minibatch(const std::vector<LabeledExample>& batch,
                                                   Rng& rng);

// Unmodified copy followed by a uniformly-masked copy (r ~ Uniform(0,1) per
// example). Length exactly doubles; labels are preserved on both halves.
std::vector<LabeledExample> dual_validation(const std::vector<LabeledExample>& val,
                                            Rng& rng);

// Most frequent train label (ties: smallest label id) and its metric on test.
struct MajorityBaseline {
  int label = 0;
  double performance = 0.0;
};
MajorityBaseline class_majority(const DatasetSplit& split);

// --- file formats -------------------------------------------------------------

// Line-delimited token records: one JSON object per line with "tokens",
// "gold" and optional "masked"; a JSON header line carries the seed.
void save_examples(const std::string& path, const std::vector<LabeledExample>& examples,
                   std::uint64_t seed);
std::vector<LabeledExample> load_examples(const std::string& path,
                                          std::uint64_t* seed = nullptr);

// Synthetic tabular CSV: 16 feature columns plus a label column; the seed is
// recorded in a '#' comment header.
void save_synthetic_csv(const std::string& path, const SyntheticDataset& data,
                        std::uint64_t seed);

}  // namespace fev
