#include "ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fev {

CdfTable CdfTable::from_samples(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("CdfTable: empty sample set");
  std::sort(samples.begin(), samples.end());
  return {std::move(samples)};
}

double ecdf_prob(const CdfTable& table, double z) {
  if (table.sorted.empty()) throw std::invalid_argument("ecdf_prob: empty table");
  auto below = std::lower_bound(table.sorted.begin(), table.sorted.end(), z);
  return static_cast<double>(below - table.sorted.begin()) /
         static_cast<double>(table.sorted.size());
}

double two_sided(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("two_sided: p outside [0,1]");
  return std::min(p, 1.0 - p);
}

double simes(const std::vector<double>& ps) {
  if (ps.empty()) throw std::invalid_argument("simes: empty p-value list");
  std::vector<double> sorted = ps;
  std::stable_sort(sorted.begin(), sorted.end());
  double n = static_cast<double>(sorted.size());
  double best = sorted.back();  // i = N term equals p_(N)
  for (std::size_t i = 0; i < sorted.size(); ++i)
    best = std::min(best, sorted[i] * n / static_cast<double>(i + 1));
  return best;
}

double fisher(const std::vector<double>& ps) {
  if (ps.empty()) throw std::invalid_argument("fisher: empty p-value list");
  double stat = 0.0;
  for (double p : ps) {
    if (!(p > 0.0 && p <= 1.0))
      throw std::invalid_argument("fisher: p-values must lie in (0,1]");
    stat += std::log(p);
  }
  return -2.0 * stat;
}

EmbeddingStack embeddings_of(const AttentionClassifier& model, const TokenSequence& seq) {
  return forward(model, seq).embeddings;
}

namespace {

// Max over the sequence for every (layer, unit).
std::vector<std::vector<double>> max_stats(const EmbeddingStack& obs) {
  std::vector<std::vector<double>> out(obs.size());
  for (std::size_t l = 0; l < obs.size(); ++l) {
    const auto& layer = obs[l];
    if (layer.rows() == 0) throw std::invalid_argument("masf: empty sequence in embeddings");
    out[l].resize(layer.cols());
    for (Eigen::Index h = 0; h < layer.cols(); ++h) out[l][h] = layer.col(h).maxCoeff();
  }
  return out;
}

void check_dims(const MasfCalibration& cal, const EmbeddingStack& obs) {
  if (static_cast<int>(obs.size()) != cal.layers)
    throw std::invalid_argument("masf: layer count mismatch with calibration");
  for (const auto& layer : obs)
    if (layer.cols() != cal.units)
      throw std::invalid_argument("masf: unit count mismatch with calibration");
}

// Shared middle of the pipeline: from per-(layer,unit) max statistics to the
// Fisher statistic, optionally recording the per-layer Simes statistics.
double fisher_stat_of(const MasfCalibration& cal, const std::vector<std::vector<double>>& ma,
                      std::vector<double>* simes_out = nullptr) {
  double clamp = 1.0 / (2.0 * static_cast<double>(cal.count));
  std::vector<double> layer_ps;
  layer_ps.reserve(cal.layers);
  for (int l = 0; l < cal.layers; ++l) {
    std::vector<double> unit_ps(cal.units);
    for (int h = 0; h < cal.units; ++h)
      unit_ps[h] = two_sided(ecdf_prob(cal.max_stat[l][h], ma[l][h]));
    double z2 = simes(unit_ps);
    if (simes_out) simes_out->push_back(z2);
    double p2 = two_sided(ecdf_prob(cal.simes_stat[l], z2));
    layer_ps.push_back(p2 > 0.0 ? p2 : clamp);
  }
  return fisher(layer_ps);
}

}  // namespace

MasfCalibration masf_calibrate(const std::vector<EmbeddingStack>& calibration,
                               bool* low_resolution) {
  if (calibration.empty()) throw std::invalid_argument("masf_calibrate: empty calibration set");
  if (low_resolution) *low_resolution = calibration.size() < 100;

  MasfCalibration cal;
  cal.count = calibration.size();
  cal.layers = static_cast<int>(calibration.front().size());
  cal.units = static_cast<int>(calibration.front().front().cols());

  std::vector<std::vector<std::vector<double>>> ma;  // [obs][layer][unit]
  ma.reserve(calibration.size());
  for (const auto& obs : calibration) {
    if (static_cast<int>(obs.size()) != cal.layers)
      throw std::invalid_argument("masf_calibrate: inconsistent layer count");
    for (const auto& layer : obs)
      if (layer.cols() != cal.units)
        throw std::invalid_argument("masf_calibrate: inconsistent unit count");
    ma.push_back(max_stats(obs));
  }

  cal.max_stat.assign(cal.layers, std::vector<CdfTable>(cal.units));
  for (int l = 0; l < cal.layers; ++l)
    for (int h = 0; h < cal.units; ++h) {
      std::vector<double> samples(cal.count);
      for (std::size_t i = 0; i < cal.count; ++i) samples[i] = ma[i][l][h];
      cal.max_stat[l][h] = CdfTable::from_samples(std::move(samples));
    }

  // Per-layer Simes statistics of the calibration set itself.
  std::vector<std::vector<double>> z2(cal.count);  // [obs][layer]
  for (std::size_t i = 0; i < cal.count; ++i) {
    z2[i].reserve(cal.layers);
    for (int l = 0; l < cal.layers; ++l) {
      std::vector<double> unit_ps(cal.units);
      for (int h = 0; h < cal.units; ++h)
        unit_ps[h] = two_sided(ecdf_prob(cal.max_stat[l][h], ma[i][l][h]));
      z2[i].push_back(simes(unit_ps));
    }
  }
  cal.simes_stat.resize(cal.layers);
  for (int l = 0; l < cal.layers; ++l) {
    std::vector<double> samples(cal.count);
    for (std::size_t i = 0; i < cal.count; ++i) samples[i] = z2[i][l];
    cal.simes_stat[l] = CdfTable::from_samples(std::move(samples));
  }

  // Fisher statistics of the calibration set.
  std::vector<double> z3(cal.count);
  for (std::size_t i = 0; i < cal.count; ++i) z3[i] = fisher_stat_of(cal, ma[i]);
  cal.fisher_stat = CdfTable::from_samples(std::move(z3));
  return cal;
}

double masf_pvalue(const MasfCalibration& cal, const EmbeddingStack& observation) {
  check_dims(cal, observation);
  double z3 = fisher_stat_of(cal, max_stats(observation));
  return 1.0 - ecdf_prob(cal.fisher_stat, z3);
}

double dataset_pvalue(const std::vector<double>& ps) { return simes(ps); }

void save_calibration(const std::string& path, const MasfCalibration& cal) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& layer : cal.max_stat) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& t : layer) units.push_back(t.sorted);
    tables.push_back(std::move(units));
  }
  nlohmann::json simes_tables = nlohmann::json::array();
  for (const auto& t : cal.simes_stat) simes_tables.push_back(t.sorted);

  nlohmann::json j = {{"format", "fev-masf-calibration"},
                      {"version", 1},
                      {"layers", cal.layers},
                      {"units", cal.units},
                      {"count", cal.count},
                      {"max_stat", std::move(tables)},
                      {"simes_stat", std::move(simes_tables)},
                      {"fisher_stat", cal.fisher_stat.sorted}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_calibration: cannot open " + path);
  out << j.dump();
}

MasfCalibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_calibration: cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "fev-masf-calibration" || j.value("version", 0) != 1)
    throw std::runtime_error("load_calibration: unrecognized container");

  MasfCalibration cal;
  cal.layers = j.at("layers").get<int>();
  cal.units = j.at("units").get<int>();
  cal.count = j.at("count").get<std::size_t>();
  for (const auto& layer : j.at("max_stat")) {
    std::vector<CdfTable> units;
    for (const auto& t : layer) units.push_back({t.get<std::vector<double>>()});
    cal.max_stat.push_back(std::move(units));
  }
  for (const auto& t : j.at("simes_stat")) cal.simes_stat.push_back({t.get<std::vector<double>>()});
  cal.fisher_stat = {j.at("fisher_stat").get<std::vector<double>>()};
  return cal;
}

}  // namespace fev
