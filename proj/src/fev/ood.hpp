#pragma once

// Nonparametric per-observation in-distribution test over internal embeddings:
// max-over-sequence statistics, empirical-CDF p-values, Simes aggregation
// across units, Fisher aggregation across layers.

#include <string>
#include <vector>

#include "model.hpp"

namespace fev {

struct CdfTable {
  std::vector<double> sorted;  // ascending

  static CdfTable from_samples(std::vector<double> samples);
};

// Fraction of table samples strictly less than z.
double ecdf_prob(const CdfTable& table, double z);

// min(p, 1 - p).
double two_sided(double p);

// min over i of p_(i) * N / i, p ascending-sorted.
double simes(const std::vector<double>& ps);

// -2 sum log p. Callers clamp zeros first.
double fisher(const std::vector<double>& ps);

// Per-observation embeddings: one T x H matrix per layer.
using EmbeddingStack = std::vector<Eigen::MatrixXd>;

// Layer stack used by the in-distribution test for the attention classifier:
// token embeddings, then post-tanh attention keys.
EmbeddingStack embeddings_of(const AttentionClassifier& model, const TokenSequence& seq);

struct MasfCalibration {
  int layers = 0;
  int units = 0;
  std::size_t count = 0;                        // calibration observations
  std::vector<std::vector<CdfTable>> max_stat;  // [layer][unit]
  std::vector<CdfTable> simes_stat;             // [layer]
  CdfTable fisher_stat;
};

// Builds all CDF tables by running the max/Simes/Fisher pipeline over the
// calibration set itself. Sets *low_resolution when fewer than 100
// observations limit the p-value resolution to 1/count.
MasfCalibration masf_calibrate(const std::vector<EmbeddingStack>& calibration,
                               bool* low_resolution = nullptr);

// Global-null p-value for one observation: per-(layer, unit) max over the
// sequence, two-sided ecdf p, Simes across units, two-sided ecdf p (zeros
// clamped to 1/(2 count)), Fisher across layers, upper-tail ecdf p.
double masf_pvalue(const MasfCalibration& cal, const EmbeddingStack& observation);

// Simes over per-observation p-values.
double dataset_pvalue(const std::vector<double>& ps);

void save_calibration(const std::string& path, const MasfCalibration& cal);
MasfCalibration load_calibration(const std::string& path);

}  // namespace fev
