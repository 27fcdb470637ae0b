// cpift: command-line driver for the core-parameter-isolation fine-tuning
// pipeline and its benchmark harnesses.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cpift/bench.hpp"
#include "cpift/error.hpp"
#include "cpift/io.hpp"
#include "cpift/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cpift;

namespace {

struct CommonArgs {
  std::string config;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config, "JSON config file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--output-dir", args.output_dir, "Artifact directory (overrides config)");
  cmd->add_option("--seed", args.seed, "Root seed (overrides config)");
}

PipelineConfig load_config(const CommonArgs& args) {
  PipelineConfig cfg;
  try {
    cfg = parse_config(args.config);
  } catch (const Error& e) {
    throw Error(std::string("[config] ") + e.what());
  }
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  if (args.seed) set_root_seed(cfg, *args.seed);
  if (cfg.output_dir.empty()) throw Error("[config] no output directory given");
  return cfg;
}

std::vector<std::uint64_t> bench_seeds(const PipelineConfig& cfg, std::size_t n) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n; ++i) seeds.push_back(cfg.seed + i);
  return seeds;
}

template <typename Bench>
void write_bench(const PipelineConfig& cfg, const std::string& name, const Bench& bench) {
  write_json(cfg.output_dir / (name + ".json"), bench.to_json());
  write_text(cfg.output_dir / (name + ".md"), bench.markdown());
  std::cout << bench.markdown();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Core parameter isolation fine-tuning on synthetic task suites"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string report_format = "markdown";
  std::string report_out;
  std::size_t n_seeds = 3;
  std::size_t target_index = 0;
  double fraction = 0.1;
  std::vector<double> taus;

  const std::vector<std::string> phases = {"gen-suite", "probe",       "cores",
                                           "group",     "train-stages", "fuse",
                                           "consolidate", "baseline",   "eval"};
  for (const std::string& phase : phases) {
    add_common(app.add_subcommand(phase, "Run the " + phase + " phase on the output directory"),
               common);
  }
  add_common(app.add_subcommand("pipeline", "Run every phase and write reports"), common);

  auto* report = app.add_subcommand("report", "Render the run record as a table");
  add_common(report, common, false);
  report->add_option("--format", report_format, "json, csv or markdown")
      ->check(CLI::IsMember({"json", "csv", "markdown"}));
  report->add_option("--out", report_out, "Write here instead of stdout");

  auto* forgetting = app.add_subcommand("bench-forgetting", "Sequential A->B / B->A forgetting");
  add_common(forgetting, common);
  forgetting->add_option("--seeds", n_seeds, "Number of consecutive root seeds");

  auto* stage4 = app.add_subcommand("bench-stage4", "Multi-stage vs single-stage consolidation");
  add_common(stage4, common);

  auto* imbalance = app.add_subcommand("bench-imbalance", "One task undersampled");
  add_common(imbalance, common);
  imbalance->add_option("--seeds", n_seeds, "Number of consecutive root seeds");
  imbalance->add_option("--target", target_index, "Index of the undersampled task");
  imbalance->add_option("--fraction", fraction, "Fraction of its training data kept")
      ->check(CLI::Range(0.0, 1.0));

  auto* sweep = app.add_subcommand("sweep-tau", "Number of groups and score across tau");
  add_common(sweep, common);
  sweep->add_option("--tau", taus, "Grid (default 0, 0.05, ..., 1)");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    if (name == "report") {
      fs::path dir = common.output_dir;
      if (dir.empty()) {
        if (common.config.empty()) throw Error("[report] need --output-dir or --config");
        dir = load_config(common).output_dir;
      }
      const PipelineRunRecord record = load_record(dir);
      const ReportFormat format = parse_report_format(report_format);
      if (report_out.empty()) {
        std::cout << render_report(record, format);
      } else {
        emit_report(record, format, report_out);
      }
      return 0;
    }

    const PipelineConfig cfg = load_config(common);
    if (name == "pipeline") {
      const PipelineRunRecord record = run_pipeline(cfg);
      std::cout << render_report(record, ReportFormat::markdown);
    } else if (name == "bench-forgetting") {
      const auto seeds = bench_seeds(cfg, n_seeds);
      write_bench(cfg, "bench_forgetting", bench_forgetting(cfg, seeds));
    } else if (name == "bench-stage4") {
      write_bench(cfg, "bench_stage4", bench_stage4(cfg));
    } else if (name == "bench-imbalance") {
      const auto seeds = bench_seeds(cfg, n_seeds);
      write_bench(cfg, "bench_imbalance", bench_imbalance(cfg, seeds, target_index, fraction));
    } else if (name == "sweep-tau") {
      if (taus.empty()) taus = default_tau_grid();
      write_bench(cfg, "sweep_tau", sweep_tau(cfg, taus));
    } else {
      run_phase(cfg, name);
    }
  } catch (const std::exception& e) {
    std::cerr << "cpift: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
