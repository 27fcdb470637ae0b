#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpift/coreid.hpp"
#include "cpift/fusion.hpp"
#include "cpift/grouping.hpp"
#include "cpift/io.hpp"
#include "cpift/model.hpp"
#include "cpift/taskgen.hpp"
#include "cpift/trainer.hpp"

namespace cpift {

enum class Stage4Mode { multi_stage, single_stage };
std::string_view to_string(Stage4Mode m);
Stage4Mode parse_stage4_mode(std::string_view text);

// Post-fusion consolidation on sampled data.
struct Stage4Config {
  FreezeScope freeze_scope = FreezeScope::prior_groups;
  double sampling_ratio = 0.1;
  int epochs = 1;
  Stage4Mode mode = Stage4Mode::multi_stage;
};

struct PipelineConfig {
  SuiteSpec suite;
  bool suite_seed_given = false;  // otherwise derived from the root seed
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {32, 32};
  CoreConfig core;
  GroupingConfig grouping;
  bool grouping_seed_given = false;
  FusionConfig fusion;
  TrainConfig train;
  Stage4Config stage4;
  bool main_sft_freeze = true;  // dynamic freezing in the pre-fusion stages
  bool run_baseline = true;     // also train the Full-SFT baseline
};

/// Parses and validates; fills documented defaults and rejects unknown keys
/// at every nesting level.
PipelineConfig config_from_json(const json& j);
PipelineConfig parse_config(const std::filesystem::path& path);
/// The fully resolved configuration (defaults and derived seeds included).
json config_to_json(const PipelineConfig& cfg);
/// Replaces the root seed and re-derives every seed not given explicitly.
void set_root_seed(PipelineConfig& cfg, std::uint64_t seed);

/// Per-phase seeds: derive_seed(root, tag) for the tags below.
struct PhaseSeeds {
  std::uint64_t root = 0;
  std::uint64_t suite = 0;
  std::uint64_t init = 0;
  std::uint64_t grouping = 0;
  std::uint64_t main_sft = 0;
  std::uint64_t consolidate = 0;
  std::uint64_t sample = 0;
  std::uint64_t baseline = 0;

  std::uint64_t probe(std::string_view task_id) const;
};
PhaseSeeds phase_seeds(const PipelineConfig& cfg);

Mlp make_model(const PipelineConfig& cfg);
SuiteSpec resolved_suite(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Phases. Pure functions of their inputs; run_pipeline and the CLI
// subcommands are both built from these.

ParameterSnapshot phase_init(const PipelineConfig& cfg, const Mlp& model);

std::vector<ParameterSnapshot> phase_probe(const PipelineConfig& cfg, const Mlp& model,
                                           const ParameterSnapshot& theta0,
                                           std::span<const TaskDataset> tasks);

struct CoreResult {
  std::vector<DeltaMagnitudes> deltas;
  std::map<std::string, CoreRegion> cores;
};
CoreResult phase_cores(const PipelineConfig& cfg, const ParameterSnapshot& theta0,
                       std::span<const ParameterSnapshot> probes,
                       std::span<const TaskDataset> tasks);

struct GroupResult {
  SimilarityMatrix similarity;
  std::vector<std::string> task_ids;
  TaskGroups groups;
};
GroupResult phase_group(const PipelineConfig& cfg, const std::map<std::string, CoreRegion>& cores);

MultiStageResult phase_train_stages(const PipelineConfig& cfg, const Mlp& model,
                                    const ParameterSnapshot& theta0, const TaskGroups& groups,
                                    const std::map<std::string, CoreRegion>& cores,
                                    std::span<const TaskDataset> tasks,
                                    const MetricsSink& sink = {});

/// Probes are supplied keyed by task id and applied in staging order.
std::pair<ParameterSnapshot, FusionReport> phase_fuse(
    const PipelineConfig& cfg, const ParameterSnapshot& base, const ParameterSnapshot& theta0,
    const std::map<std::string, ParameterSnapshot>& probes,
    const std::map<std::string, CoreRegion>& cores, const TaskGroups& groups);

MultiStageResult phase_consolidate(const PipelineConfig& cfg, const Mlp& model,
                                   const ParameterSnapshot& fused, const TaskGroups& groups,
                                   const std::map<std::string, CoreRegion>& cores,
                                   std::span<const TaskDataset> tasks,
                                   const MetricsSink& sink = {});

ParameterSnapshot phase_baseline(const PipelineConfig& cfg, const Mlp& model,
                                 const ParameterSnapshot& theta0,
                                 std::span<const TaskDataset> tasks,
                                 const MetricsSink& sink = {});

std::map<std::string, double> evaluate_all(const Mlp& model, const ParameterSnapshot& params,
                                           std::span<const TaskDataset> tasks);

json stages_to_json(const MultiStageResult& result);

/// Forgetting per task: final score minus the score right after the
/// pre-fusion stage that trained the task's group (0-100 scale).
/// `main_stages` is the stages_to_json() form of the pre-fusion training.
std::map<std::string, double> pipeline_forgetting(const json& main_stages,
                                                  const std::map<std::string, double>& final_acc);

// ---------------------------------------------------------------------------
// Everything a finished (or partially finished) run produced.

struct PipelineRunRecord {
  json config;
  std::vector<std::string> phases;                  // completed, in order
  std::map<std::string, std::string> artifacts;     // name -> path relative to output_dir
  std::map<std::string, double> wall_seconds;       // per phase
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, EvalMetrics> metrics;       // model name -> metrics
  json groups;                                      // groups file content, if grouped
  json stages;                                      // per-stage scores of both training phases

  json to_json() const;
  static PipelineRunRecord from_json(const json& j);
};

/// Runs every phase in order and persists all artifacts under
/// cfg.output_dir. Failures are rethrown as Error("[phase] ...").
PipelineRunRecord run_pipeline(const PipelineConfig& cfg);

/// Runs one named phase against artifacts already in cfg.output_dir and
/// merges the result into run_record.json there. Phase names match the CLI
/// subcommands: gen-suite, probe, cores, group, train-stages, fuse,
/// consolidate, baseline, eval.
PipelineRunRecord run_phase(const PipelineConfig& cfg, std::string_view phase);

PipelineRunRecord load_record(const std::filesystem::path& output_dir);

enum class ReportFormat { json, csv, markdown };
ReportFormat parse_report_format(std::string_view text);

/// Renders the record's results. Throws "no completed phases" when the
/// record holds no evaluated model.
std::string render_report(const PipelineRunRecord& record, ReportFormat format);
void emit_report(const PipelineRunRecord& record, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace cpift
