#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fev/pipelines.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir = ".";
  std::int64_t seed = -1;  // -1: use the config's seed (default 0)
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("-c,--config", flags.config_path, "key=value config file");
  cmd->add_option("-o,--output-dir", flags.out_dir, "directory for emitted files");
  cmd->add_option("-s,--seed", flags.seed, "root seed override");
  cmd->add_option("-w,--workers", flags.workers, "worker pool size")->check(CLI::PositiveNumber);
}

fev::RunOptions make_options(const CommonFlags& flags) {
  fev::RunOptions opts;
  if (!flags.config_path.empty()) opts.cfg = fev::load_config(flags.config_path);
  opts.out_dir = flags.out_dir;
  opts.workers = flags.workers;
  opts.root_seed = flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed)
                                   : static_cast<std::uint64_t>(opts.cfg.get_int("seed", 0));
  opts.cfg.set("seed", std::to_string(opts.root_seed));
  std::filesystem::create_directories(opts.out_dir);
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faithfulness evaluation toolkit"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    void (*run)(const fev::RunOptions&);
  };
  const Sub subs[] = {
      {"synthetic-validate", "synthetic tabular removal-order curves", fev::run_synthetic_validation},
      {"fmm-run", "masked fine-tuning + faithfulness + in-distribution pipeline", fev::run_fmm},
      {"roar-run", "retraining-based faithfulness curves", fev::run_roar},
      {"masf-calibrate", "build in-distribution calibration tables", fev::run_masf_calibrate},
      {"masf-score", "score observations against a calibration", fev::run_masf_score},
      {"selfcheck-run", "chat-model self-consistency evaluation", fev::run_selfcheck},
      {"report", "collect pipeline outputs into a report", fev::run_report},
  };

  std::vector<CommonFlags> flags(std::size(subs));
  for (std::size_t i = 0; i < std::size(subs); ++i)
    add_common(app.add_subcommand(subs[i].name, subs[i].help), flags[i]);

  CLI11_PARSE(app, argc, argv);

  try {
    for (std::size_t i = 0; i < std::size(subs); ++i) {
      if (app.get_subcommand(subs[i].name)->parsed()) {
        subs[i].run(make_options(flags[i]));
        return 0;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand selected\n";
  return 1;
}
