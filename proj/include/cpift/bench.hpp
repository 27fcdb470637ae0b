#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpift/io.hpp"
#include "cpift/pipeline.hpp"

namespace cpift {

/// In-memory CPI-FT run (no artifacts written). With `forced_groups`, the
/// similarity-based grouping is computed for the record but training uses
/// the given staging instead.
struct CpiftRun {
  ParameterSnapshot theta0;
  std::map<std::string, ParameterSnapshot> probes;
  CoreResult cores;
  GroupResult grouping;
  TaskGroups staging;
  MultiStageResult main;
  ParameterSnapshot fused;
  FusionReport fusion;
  MultiStageResult consolidation;

  const ParameterSnapshot& final_model() const { return consolidation.theta_final; }
};

CpiftRun run_cpift(const PipelineConfig& cfg, const Mlp& model, std::span<const TaskDataset> tasks,
                   const std::optional<TaskGroups>& forced_groups = std::nullopt);

// Sequential two-task transfer: train on the first task, then the second.
// Full SFT trains all parameters in both stages; CPI-FT stages the same two
// tasks as groups [first], [second] and finishes with fusion and
// consolidation. Deltas are on the 0-100 scale.
struct ForgettingRow {
  std::uint64_t seed = 0;
  std::string first;
  std::string second;
  double full_first_before = 0, full_first_after = 0;
  double full_second_before = 0, full_second_after = 0;
  double cpift_first_before = 0, cpift_first_after = 0;
  double cpift_second_before = 0, cpift_second_after = 0;

  double full_delta_first() const { return forgetting_delta(full_first_before, full_first_after); }
  double full_delta_second() const {
    return forgetting_delta(full_second_before, full_second_after);
  }
  double cpift_delta_first() const {
    return forgetting_delta(cpift_first_before, cpift_first_after);
  }
  double cpift_delta_second() const {
    return forgetting_delta(cpift_second_before, cpift_second_after);
  }
};

struct ForgettingDirection {
  std::string label;  // "t0->t1"
  double full_mean_abs_delta_first = 0;
  double cpift_mean_abs_delta_first = 0;
  double ratio = 0;  // cpift / full
};

struct ForgettingBench {
  std::vector<ForgettingRow> rows;
  std::vector<ForgettingDirection> directions;
  double max_ratio = 0.6;
  double seconds = 0;

  bool passed() const;
  json to_json() const;
  std::string markdown() const;
};

ForgettingBench bench_forgetting(const PipelineConfig& cfg, std::span<const std::uint64_t> seeds,
                                 double max_ratio = 0.6);

// Stage-4 consolidation in multi_stage vs single_stage mode from the same
// fused model, against the untrained initialization.
struct Stage4Bench {
  std::map<std::string, double> untrained;
  std::map<std::string, double> fused;
  std::map<std::string, double> multi_stage;
  std::map<std::string, double> single_stage;
  double multi_avg_norm = 0;
  double single_avg_norm = 0;

  /// Both modes beat the untrained model on every task.
  bool passed() const;
  json to_json() const;
  std::string markdown() const;
};

Stage4Bench bench_stage4(const PipelineConfig& cfg);

// One task's training split cut to `fraction`; Full SFT vs CPI-FT per seed.
struct ImbalanceRow {
  std::uint64_t seed = 0;
  std::map<std::string, double> full_sft;
  std::map<std::string, double> cpift;
};

struct ImbalanceBench {
  std::string target;
  double fraction = 0.1;
  std::vector<ImbalanceRow> rows;
  double max_mean_drop = 2.0;  // accuracy points

  std::size_t target_wins() const;  // seeds where CPI-FT >= Full SFT on the target
  /// Mean over seeds of (Full SFT - CPI-FT) in points, per full-data task.
  std::map<std::string, double> mean_drop() const;
  bool passed() const;
  json to_json() const;
  std::string markdown() const;
};

ImbalanceBench bench_imbalance(const PipelineConfig& cfg, std::span<const std::uint64_t> seeds,
                               std::size_t target_index = 0, double fraction = 0.1);

// Grouping granularity and final score across tau.
struct TauRow {
  double tau = 0;
  std::size_t groups = 0;
  json staging;
  double avg_norm_score = 0;
};

struct TauSweep {
  std::vector<TauRow> rows;
  json to_json() const;
  std::string markdown() const;
};

/// Probes and cores are computed once; the downstream training runs once
/// per distinct grouping.
TauSweep sweep_tau(const PipelineConfig& cfg, std::span<const double> taus);

/// {0, 0.05, ..., 1.0}
std::vector<double> default_tau_grid();

}  // namespace cpift
