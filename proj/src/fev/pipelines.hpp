#pragma once

// Named experiment pipelines behind the command-line tool. Every emitted file
// carries the config hash and root seed; stages skip work when their output
// already exists with a matching header, making reruns resumable and
// byte-identical.

#include <cstdint>
#include <functional>
#include <string>

#include "config.hpp"

namespace fev {

struct RunOptions {
  Config cfg;
  std::string out_dir = ".";
  std::uint64_t root_seed = 0;
  int workers = 1;
};

// Ground-truth / worst-case / one-shot ROAR / recursive ROAR curves on the
// synthetic tabular task; writes synthetic_curves.csv.
void run_synthetic_validation(const RunOptions& opts);

// Masked fine-tuning, in-distribution calibration, per-measure recursive
// faithfulness curves with per-level OOD p-values and an ACU/RACU summary
// with confidence intervals over seed replicates.
void run_fmm(const RunOptions& opts);

// Retraining-based faithfulness curves on the keyword toy.
void run_roar(const RunOptions& opts);

// Standalone calibration / scoring around a saved checkpoint.
void run_masf_calibrate(const RunOptions& opts);
void run_masf_score(const RunOptions& opts);

// Self-consistency evaluation against a scripted or HTTP chat backend.
void run_selfcheck(const RunOptions& opts);

// Collects previously produced outputs into a plain-text report.
void run_report(const RunOptions& opts);

// Fans indices [0, n) out to a fixed pool; rethrows the first worker error.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace fev
