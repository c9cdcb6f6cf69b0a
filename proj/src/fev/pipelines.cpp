#include "pipelines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "data.hpp"
#include "faith.hpp"
#include "ood.hpp"
#include "selfcheck.hpp"

namespace fev {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string header_line(const RunOptions& o) {
  return "# config=" + hash_hex(config_hash(o.cfg)) + " seed=" + std::to_string(o.root_seed);
}

std::string out_path(const RunOptions& o, const std::string& name) {
  return o.out_dir + "/" + name;
}

bool stage_done(const std::string& path, const std::string& header) {
  std::ifstream in(path);
  std::string first;
  return static_cast<bool>(in) && static_cast<bool>(std::getline(in, first)) && first == header;
}

bool file_exists(const std::string& path) { return static_cast<bool>(std::ifstream(path)); }

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file " + path);
  out << content;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Two-sided 97.5% Student-t quantiles for df 1..30; beyond that the normal
// quantile is close enough.
double t_crit(int df) {
  static const double table[] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) throw std::invalid_argument("t_crit: df < 1");
  return df <= 30 ? table[df - 1] : 1.96;
}

struct Interval {
  double mean, lo, hi;
};

Interval mean_ci(const std::vector<double>& xs) {
  double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, mean, mean};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  double half = t_crit(static_cast<int>(xs.size()) - 1) * std::sqrt(var / n);
  return {mean, mean - half, mean + half};
}

ImportanceConfig importance_config(const Config& cfg) {
  ImportanceConfig ic;
  ic.ig_steps = static_cast<int>(cfg.get_int("ig_steps", ic.ig_steps));
  ic.lime_samples = static_cast<int>(cfg.get_int("lime_samples", ic.lime_samples));
  ic.lime_lambda = cfg.get_double("lime_lambda", ic.lime_lambda);
  ic.shap_samples = static_cast<int>(cfg.get_int("shap_samples", ic.shap_samples));
  return ic;
}

const std::vector<std::string> kDefaultMeasures = {
    "gradient-l2", "input-x-gradient-abs", "integrated-gradient-abs",
    "loo-abs",     "attention",            "random"};

std::vector<std::uint64_t> seed_list(const RunOptions& opts) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : opts.cfg.get_list("seeds", {}))
    seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
  if (seeds.empty()) seeds.push_back(opts.root_seed);
  return seeds;
}

}  // namespace

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (int t = 0; t < count; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// --- synthetic validation -----------------------------------------------------------

void run_synthetic_validation(const RunOptions& opts) {
  validate_keys(opts.cfg, {"experiment", "seed", "train_n", "test_n", "l2", "output"});
  std::size_t train_n = static_cast<std::size_t>(opts.cfg.get_int("train_n", 4096));
  std::size_t test_n = static_cast<std::size_t>(opts.cfg.get_int("test_n", 4096));
  double l2 = opts.cfg.get_double("l2", 1e-4);
  std::string path = out_path(opts, opts.cfg.get("output", "synthetic_curves.csv"));
  std::string header = header_line(opts);
  if (stage_done(path, header)) return;

  auto all = gen_synthetic(train_n + test_n, opts.root_seed);
  SyntheticDataset train{all.a, all.d, {all.examples.begin(), all.examples.begin() + train_n}};
  SyntheticDataset test{all.a, all.d, {all.examples.begin() + train_n, all.examples.end()}};

  auto ground = tabular_curve_for_order(train, test, ground_truth_order(train), l2);
  auto worst = tabular_curve_for_order(train, test, worst_case_order(train), l2);
  auto one_shot = tabular_roar(train, test, l2, /*recursive=*/false);
  auto recursive = tabular_roar(train, test, l2, /*recursive=*/true);

  std::string csv = header + "\nratio,ground_truth,worst_case,roar,recursive_roar\n";
  for (std::size_t i = 0; i < ground.ratios.size(); ++i)
    csv += fmt(ground.ratios[i]) + "," + fmt(ground.performances[i]) + "," +
           fmt(worst.performances[i]) + "," + fmt(one_shot.performances[i]) + "," +
           fmt(recursive.performances[i]) + "\n";
  write_file(path, csv);
}

// --- masked fine-tuning pipeline ------------------------------------------------------

namespace {

struct FmmSettings {
  std::size_t n, seq_len;
  int dim, epochs, batch;
  double lr, delta;
  std::vector<std::string> measures;
  ImportanceConfig imcfg;
};

FmmSettings fmm_settings(const Config& cfg) {
  FmmSettings s;
  s.n = static_cast<std::size_t>(cfg.get_int("n", 1024));
  s.seq_len = static_cast<std::size_t>(cfg.get_int("seq_len", 10));
  s.dim = static_cast<int>(cfg.get_int("dim", 16));
  s.epochs = static_cast<int>(cfg.get_int("epochs", 30));
  s.batch = static_cast<int>(cfg.get_int("batch_size", 32));
  s.lr = cfg.get_double("learning_rate", 0.5);
  s.delta = cfg.get_double("delta", 0.2);
  s.measures = cfg.get_list("measures", kDefaultMeasures);
  s.imcfg = importance_config(cfg);
  return s;
}

std::vector<double> per_observation_pvalues(const MasfCalibration& cal,
                                            const AttentionClassifier& model,
                                            const std::vector<LabeledExample>& data,
                                            int workers) {
  std::vector<double> ps(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    ps[i] = masf_pvalue(cal, embeddings_of(model, data[i].seq));
  });
  return ps;
}

}  // namespace

void run_fmm(const RunOptions& opts) {
  validate_keys(opts.cfg,
                {"experiment", "seed", "seeds", "n", "seq_len", "dim", "epochs", "batch_size",
                 "learning_rate", "delta", "measures", "ig_steps", "lime_samples", "lime_lambda",
                 "shap_samples"});
  FmmSettings s = fmm_settings(opts.cfg);
  std::string header = header_line(opts);
  auto seeds = seed_list(opts);

  for (std::uint64_t seed : seeds) {
    std::string tag = std::to_string(seed);
    auto kd = gen_keyword_sentiment(s.n, s.seq_len, seed);

    std::string ckpt_path = out_path(opts, "fmm-checkpoint-" + tag + ".json");
    AttentionClassifier model;
    if (file_exists(ckpt_path)) {
      std::uint64_t stored = 0;
      model = load_checkpoint(ckpt_path, &stored);
      if (stored != seed) throw std::runtime_error("fmm: checkpoint seed mismatch at " + ckpt_path);
    } else {
      TrainConfig tc{s.lr, s.epochs, s.batch, seed, MaskingMode::MaskedFineTuning,
                     ValidationMode::Dual};
      model = train(init_attention(kd.vocab, s.dim, 2, seed), kd.split, tc).model;
      save_checkpoint(ckpt_path, model, seed, "masked-fine-tuning");
    }

    std::string cal_path = out_path(opts, "fmm-calibration-" + tag + ".json");
    MasfCalibration cal;
    if (file_exists(cal_path)) {
      cal = load_calibration(cal_path);
    } else {
      std::vector<EmbeddingStack> stacks;
      stacks.reserve(kd.split.validation.size());
      for (const auto& ex : kd.split.validation) stacks.push_back(embeddings_of(model, ex.seq));
      bool low = false;
      cal = masf_calibrate(stacks, &low);
      if (low) std::cerr << "fmm: calibration set below 100 observations; p-value resolution is coarse\n";
      save_calibration(cal_path, cal);
    }

    std::string curves_path = out_path(opts, "fmm-curves-" + tag + ".csv");
    std::string ood_path = out_path(opts, "fmm-ood-" + tag + ".csv");
    if (stage_done(curves_path, header) && stage_done(ood_path, header)) continue;

    auto rng = std::make_shared<Rng>(seed);
    std::string curves_csv = header + "\nmeasure,ratio,performance\n";
    std::string ood_csv = header + "\nmeasure,ratio,p_value\n";

    double base_p = dataset_pvalue(per_observation_pvalues(cal, model, kd.split.test, opts.workers));
    auto measures = s.measures;
    if (std::find(measures.begin(), measures.end(), "random") == measures.end())
      measures.push_back("random");
    for (const auto& name : measures) {
      auto im = make_token_importance(name, rng, s.imcfg);
      auto res = recursive_eval(im, model, kd.split.test, s.delta, kd.split.metric,
                                kd.split.num_labels, /*masked_finetuned=*/true);
      for (std::size_t i = 0; i < res.curve.ratios.size(); ++i)
        curves_csv += name + "," + fmt(res.curve.ratios[i]) + "," +
                      fmt(res.curve.performances[i]) + "\n";
      ood_csv += name + ",0," + fmt(base_p) + "\n";
      for (std::size_t level = 0; level < res.masked_levels.size(); ++level) {
        double p = dataset_pvalue(
            per_observation_pvalues(cal, model, res.masked_levels[level], opts.workers));
        ood_csv += name + "," + fmt(res.curve.ratios[level + 1]) + "," + fmt(p) + "\n";
      }
    }
    write_file(curves_path, curves_csv);
    write_file(ood_path, ood_csv);
  }

  // Summary across seed replicates, scored against each seed's own random
  // baseline curve.
  std::map<std::string, std::vector<double>> acu, racu;
  for (std::uint64_t seed : seeds) {
    auto rows = read_csv_rows(out_path(opts, "fmm-curves-" + std::to_string(seed) + ".csv"));
    std::map<std::string, FaithfulnessCurve> curves;
    for (const auto& row : rows) {
      if (row.size() != 3 || row[0] == "measure") continue;
      curves[row[0]].ratios.push_back(std::stod(row[1]));
      curves[row[0]].performances.push_back(std::stod(row[2]));
    }
    auto base = curves.find("random");
    if (base == curves.end()) throw std::runtime_error("fmm: missing random baseline curve");
    for (const auto& [name, curve] : curves) {
      if (name == "random") continue;
      auto score = compute_acu_racu(curve, base->second);
      acu[name].push_back(score.acu);
      if (score.racu_defined) racu[name].push_back(score.racu);
    }
  }
  std::string summary = header + "\nmeasure,acu,acu_lo,acu_hi,racu,racu_lo,racu_hi,seeds\n";
  for (const auto& [name, values] : acu) {
    Interval a = mean_ci(values);
    summary += name + "," + fmt(a.mean) + "," + fmt(a.lo) + "," + fmt(a.hi) + ",";
    auto r = racu.find(name);
    if (r != racu.end() && !r->second.empty()) {
      Interval b = mean_ci(r->second);
      summary += fmt(b.mean) + "," + fmt(b.lo) + "," + fmt(b.hi);
    } else {
      summary += "undefined,undefined,undefined";
    }
    summary += "," + std::to_string(values.size()) + "\n";
  }
  write_file(out_path(opts, "fmm-summary.csv"), summary);
}

// --- retraining-based curves ----------------------------------------------------------

void run_roar(const RunOptions& opts) {
  validate_keys(opts.cfg,
                {"experiment", "seed", "n", "seq_len", "dim", "epochs", "batch_size",
                 "learning_rate", "delta", "measures", "recursive", "masking", "ig_steps",
                 "lime_samples", "lime_lambda", "shap_samples"});
  FmmSettings s = fmm_settings(opts.cfg);
  bool recursive = opts.cfg.get_bool("recursive", true);
  std::string masking = opts.cfg.get("masking", "plain");
  MaskingMode mode;
  if (masking == "plain") mode = MaskingMode::Plain;
  else if (masking == "masked-fine-tuning") mode = MaskingMode::MaskedFineTuning;
  else if (masking == "only-masking") mode = MaskingMode::OnlyMasking;
  else throw std::runtime_error("roar: unknown masking mode " + masking);

  std::string path = out_path(opts, "roar_curves.csv");
  std::string header = header_line(opts);
  if (stage_done(path, header)) return;

  auto kd = gen_keyword_sentiment(s.n, s.seq_len, opts.root_seed);
  TokenTrainer trainer = [&](const DatasetSplit& split, std::uint64_t seed) {
    TrainConfig tc{s.lr, s.epochs, s.batch, seed, mode, ValidationMode::Plain};
    return train(init_attention(kd.vocab, s.dim, 2, seed), split, tc).model;
  };

  auto rng = std::make_shared<Rng>(opts.root_seed);
  std::string csv = header + "\nmeasure,ratio,performance\n";
  for (const auto& name : s.measures) {
    auto im = make_token_importance(name, rng, s.imcfg);
    auto curve = roar_retrain(im, trainer, kd.split, s.delta, recursive, opts.root_seed);
    for (std::size_t i = 0; i < curve.ratios.size(); ++i)
      csv += name + "," + fmt(curve.ratios[i]) + "," + fmt(curve.performances[i]) + "\n";
  }
  write_file(path, csv);
}

// --- standalone in-distribution commands ------------------------------------------------

void run_masf_calibrate(const RunOptions& opts) {
  validate_keys(opts.cfg, {"experiment", "seed", "checkpoint", "input", "output"});
  auto model = load_checkpoint(opts.cfg.get("checkpoint"));
  auto examples = load_examples(opts.cfg.get("input"));
  std::vector<EmbeddingStack> stacks(examples.size());
  parallel_for(examples.size(), opts.workers,
               [&](std::size_t i) { stacks[i] = embeddings_of(model, examples[i].seq); });
  bool low = false;
  auto cal = masf_calibrate(stacks, &low);
  if (low)
    std::cerr << "masf-calibrate: fewer than 100 observations; p-value resolution is coarse\n";
  save_calibration(out_path(opts, opts.cfg.get("output", "calibration.json")), cal);
}

void run_masf_score(const RunOptions& opts) {
  validate_keys(opts.cfg, {"experiment", "seed", "checkpoint", "calibration", "input", "output"});
  auto model = load_checkpoint(opts.cfg.get("checkpoint"));
  auto cal = load_calibration(opts.cfg.get("calibration"));
  auto examples = load_examples(opts.cfg.get("input"));
  auto ps = per_observation_pvalues(cal, model, examples, opts.workers);

  std::string csv = header_line(opts) + "\nobservation,p_value\n";
  for (std::size_t i = 0; i < ps.size(); ++i)
    csv += std::to_string(i) + "," + fmt(ps[i]) + "\n";
  csv += "dataset," + fmt(dataset_pvalue(ps)) + "\n";
  write_file(out_path(opts, opts.cfg.get("output", "masf_scores.csv")), csv);
}

// --- self-consistency harness -----------------------------------------------------------

namespace {

ChatTask task_from(const std::string& name) {
  if (name == "sentiment") return ChatTask::Sentiment;
  if (name == "multichoice") return ChatTask::MultiChoice;
  if (name == "nli") return ChatTask::Nli;
  throw std::runtime_error("selfcheck: unknown task " + name);
}

ExplanationKind kind_from(const std::string& name) {
  if (name == "counterfactual") return ExplanationKind::Counterfactual;
  if (name == "feature-attribution") return ExplanationKind::FeatureAttribution;
  if (name == "redaction") return ExplanationKind::Redaction;
  if (name == "classification") return ExplanationKind::Classification;
  throw std::runtime_error("selfcheck: unknown explanation kind " + name);
}

Persona persona_from(const std::string& name) {
  if (name == "objective") return Persona::Objective;
  if (name == "human") return Persona::Human;
  if (name == "you") return Persona::You;
  throw std::runtime_error("selfcheck: unknown persona " + name);
}

struct SelfCheckJob {
  PromptSpec spec;
  SelfCheckExample example;
  std::string group;  // reporting key
};

SelfCheckJob job_from_fixture(const nlohmann::json& j) {
  SelfCheckJob job;
  job.spec.task = task_from(j.at("task").get<std::string>());
  job.spec.kind = kind_from(j.at("kind").get<std::string>());
  job.spec.persona = persona_from(j.at("persona").get<std::string>());
  job.spec.redaction_token = j.value("redaction_token", "[REDACTED]");
  job.spec.target = j.value("counterfactual_target", "explicit") == "implicit"
                        ? CounterfactualTarget::Implicit
                        : CounterfactualTarget::Explicit;
  job.spec.target_label = j.value("target_label", "");
  const auto& ex = j.at("example");
  job.example.id = ex.value("id", "");
  job.example.paragraph = ex.at("paragraph").get<std::string>();
  job.example.gold_label = ex.at("gold_label").get<std::string>();
  job.example.question = ex.value("question", "");
  if (ex.contains("choices")) job.example.choices = ex.at("choices").get<std::vector<std::string>>();
  job.example.statement = ex.value("statement", "");
  job.group = j.at("task").get<std::string>() + "/" + j.at("kind").get<std::string>() + "/" +
              j.at("persona").get<std::string>() + "/" + job.spec.redaction_token + "/" +
              j.value("counterfactual_target", "explicit");
  return job;
}

}  // namespace

void run_selfcheck(const RunOptions& opts) {
  validate_keys(opts.cfg,
                {"experiment", "seed", "backend", "fixtures", "host", "port", "path", "examples",
                 "task", "kind", "persona", "redaction_token", "counterfactual_target",
                 "target_label", "strict_unknown", "output_prefix"});
  std::string backend_kind = opts.cfg.get("backend", "scripted");
  SelfCheckOptions sc_opts;
  sc_opts.strict_unknown = opts.cfg.get_bool("strict_unknown", false);
  std::string prefix = opts.cfg.get("output_prefix", "selfcheck");

  std::vector<SelfCheckJob> jobs;
  std::vector<std::string> fixture_paths;
  if (backend_kind == "scripted") {
    fixture_paths = opts.cfg.get_list("fixtures", {});
    if (fixture_paths.empty()) throw std::runtime_error("selfcheck: scripted backend needs fixtures");
    for (const auto& path : fixture_paths) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("selfcheck: cannot open fixture " + path);
      nlohmann::json j;
      in >> j;
      jobs.push_back(job_from_fixture(j));
    }
  } else if (backend_kind == "http") {
    std::ifstream in(opts.cfg.get("examples"));
    if (!in) throw std::runtime_error("selfcheck: cannot open examples file");
    nlohmann::json j;
    in >> j;
    PromptSpec spec;
    spec.task = task_from(opts.cfg.get("task"));
    spec.kind = kind_from(opts.cfg.get("kind"));
    spec.persona = persona_from(opts.cfg.get("persona", "objective"));
    spec.redaction_token = opts.cfg.get("redaction_token", "[REDACTED]");
    spec.target = opts.cfg.get("counterfactual_target", "explicit") == "implicit"
                      ? CounterfactualTarget::Implicit
                      : CounterfactualTarget::Explicit;
    spec.target_label = opts.cfg.get("target_label", "");
    for (const auto& ex : j.at("examples")) {
      nlohmann::json wrapper = {{"task", opts.cfg.get("task")},
                                {"kind", opts.cfg.get("kind")},
                                {"persona", opts.cfg.get("persona", "objective")},
                                {"redaction_token", spec.redaction_token},
                                {"counterfactual_target",
                                 opts.cfg.get("counterfactual_target", "explicit")},
                                {"target_label", spec.target_label},
                                {"example", ex}};
      jobs.push_back(job_from_fixture(wrapper));
    }
  } else {
    throw std::runtime_error("selfcheck: unknown backend " + backend_kind);
  }

  std::vector<SelfConsistencyRecord> records(jobs.size());
  if (backend_kind == "scripted") {
    parallel_for(jobs.size(), opts.workers, [&](std::size_t i) {
      auto backend = ScriptedBackend::from_file(fixture_paths[i]);
      records[i] = evaluate_self_consistency(backend, jobs[i].example, jobs[i].spec, sc_opts);
    });
  } else {
    GenerationParams params;
    params.seed = opts.root_seed;
    parallel_for(jobs.size(), opts.workers, [&](std::size_t i) {
      HttpBackend backend(opts.cfg.get("host", "localhost"),
                          static_cast<int>(opts.cfg.get_int("port", 8080)),
                          opts.cfg.get("path", "/generate"), params);
      records[i] = evaluate_self_consistency(backend, jobs[i].example, jobs[i].spec, sc_opts);
    });
  }

  std::string header = header_line(opts);
  nlohmann::json file_head = {{"format", "fev-selfcheck-records"},
                              {"version", 1},
                              {"config", hash_hex(config_hash(opts.cfg))},
                              {"seed", opts.root_seed}};
  std::string jsonl = file_head.dump() + "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nlohmann::json row = {{"id", r.id},
                          {"group", jobs[i].group},
                          {"prediction", r.prediction},
                          {"correct", r.correct},
                          {"post_prediction", r.post_prediction},
                          {"defined", r.defined},
                          {"faithful", r.faithful},
                          {"matched_target", r.matched_target},
                          {"discard_reason", r.discard_reason}};
    jsonl += row.dump() + "\n";
  }
  write_file(out_path(opts, prefix + "-records.jsonl"), jsonl);

  std::map<std::string, std::vector<SelfConsistencyRecord>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[jobs[i].group].push_back(records[i]);
  std::string csv = header + "\ngroup,faithful,defined,discarded,ratio\n";
  auto emit = [&](const std::string& name, const std::vector<SelfConsistencyRecord>& rs) {
    auto ratio = faithfulness_ratio(rs);
    csv += name + "," + std::to_string(ratio.faithful) + "," + std::to_string(ratio.total_defined) +
           "," + std::to_string(ratio.discarded) + "," +
           (ratio.defined ? fmt(ratio.ratio) : std::string("undefined")) + "\n";
  };
  for (const auto& [name, rs] : groups) emit(name, rs);
  emit("all", records);
  write_file(out_path(opts, prefix + "-ratios.csv"), csv);
}

// --- report ------------------------------------------------------------------------------

void run_report(const RunOptions& opts) {
  validate_keys(opts.cfg, {"experiment", "seed", "inputs", "output"});
  auto inputs = opts.cfg.get_list(
      "inputs", {"synthetic_curves.csv", "fmm-summary.csv", "roar_curves.csv",
                 "selfcheck-ratios.csv", "masf_scores.csv"});
  std::string report = header_line(opts) + "\n";
  bool any = false;
  for (const auto& name : inputs) {
    std::ifstream in(out_path(opts, name));
    if (!in) continue;
    any = true;
    report += "\n== " + name + " ==\n";
    std::stringstream buf;
    buf << in.rdbuf();
    report += buf.str();
  }
  if (!any) throw std::runtime_error("report: no pipeline outputs found in " + opts.out_dir);
  write_file(out_path(opts, opts.cfg.get("output", "report.txt")), report);
  std::cout << report;
}

}  // namespace fev
