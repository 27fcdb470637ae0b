#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpift/coreid.hpp"
#include "cpift/grouping.hpp"
#include "cpift/model.hpp"
#include "cpift/taskgen.hpp"
#include "cpift/tensorstore.hpp"

namespace cpift {

enum class OptimizerKind { sgd, adam };
enum class FreezeScope { prior_groups, all_cores };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);
std::string_view to_string(FreezeScope s);
FreezeScope parse_freeze_scope(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  int epochs = 3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to trainable coordinates only
  std::uint64_t seed = 0;
  std::vector<double> mixture_weights;  // per task, Full-SFT baseline only; empty = all ones
};

void validate(const TrainConfig& cfg);

// bits[j] == 0 marks a frozen coordinate.
struct FreezeMask {
  std::vector<std::uint8_t> bits;
  std::size_t stage_index = 1;
  std::size_t frozen_count = 0;

  static FreezeMask all_ones(std::size_t dim, std::size_t stage_index = 1);
  static FreezeMask from_frozen(std::size_t dim, std::span<const std::size_t> frozen,
                                std::size_t stage_index);
  std::size_t size() const { return bits.size(); }
  bool trainable(std::size_t j) const { return bits[j] != 0; }
};

/// theta[j] + delta[j] where the mask is 1; theta[j] untouched where it is 0.
void apply_masked_update(std::span<double> theta, std::span<const double> delta,
                         const FreezeMask& mask);
ParameterSnapshot masked_step(const ParameterSnapshot& theta, std::span<const double> delta,
                              const FreezeMask& mask);

/// SGD or Adam producing the update delta for one step. Per-coordinate
/// moment estimates and step counts advance only where the mask is 1, so a
/// frozen coordinate carries no optimizer state across the freeze.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t dim);

  /// Delta for this step; exactly zero at frozen coordinates.
  std::vector<double> update(std::span<const double> theta, std::span<const double> grad,
                             const FreezeMask& mask);

  /// update() followed by apply_masked_update().
  void step(std::span<double> theta, std::span<const double> grad, const FreezeMask& mask);

  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  std::span<const std::uint32_t> step_counts() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::vector<std::uint32_t> t_;
};

// One line of the metrics log: {"stage","step","loss","frozen_count"}.
struct StepMetrics {
  std::size_t stage = 0;
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t frozen_count = 0;
};
using MetricsSink = std::function<void(const StepMetrics&)>;

/// Mini-batch training over `data` for cfg.epochs epochs. Examples are
/// shuffled each epoch from Rng(cfg.seed); `weights` are per-example loss
/// weights (empty = uniform). Returns the number of optimizer steps.
std::size_t train_epochs(const Mlp& model, std::vector<double>& theta, const Dataset& data,
                         std::span<const double> weights, const TrainConfig& cfg,
                         const FreezeMask& mask, std::size_t stage_index = 0,
                         const MetricsSink& sink = {});

/// Unmasked training on one task's training split starting from theta0.
ParameterSnapshot probe_sft(const Mlp& model, const ParameterSnapshot& theta0,
                            const TaskDataset& task, const TrainConfig& cfg,
                            const MetricsSink& sink = {});

/// Zeros at the union of core regions of groups 1..k-1 (prior_groups) or of
/// every group (all_cores). k is 1-based.
FreezeMask build_freeze_mask(const TaskGroups& groups,
                             const std::map<std::string, CoreRegion>& cores, std::size_t k,
                             std::size_t dim, FreezeScope scope = FreezeScope::prior_groups);

/// ceil(ratio * |train|) examples per task, uniform without replacement,
/// kept in original order. Test splits are untouched.
std::vector<TaskDataset> sample_dataset(std::span<const TaskDataset> tasks, double ratio,
                                        std::uint64_t seed);

struct StageResult {
  std::size_t stage_index = 0;
  std::vector<std::string> tasks;
  ParameterSnapshot theta;
  std::map<std::string, double> scores_before;  // accuracy on every task
  std::map<std::string, double> scores_after;
  std::size_t steps = 0;
  std::size_t frozen_count = 0;
  std::size_t train_examples = 0;
};

struct MultiStageOptions {
  bool freeze = true;
  FreezeScope scope = FreezeScope::prior_groups;
  double sampling_ratio = 1.0;
  std::uint64_t sample_seed = 0;
};

struct MultiStageResult {
  ParameterSnapshot theta_final;
  std::vector<StageResult> stages;
};

/// Trains group by group in staging order. Stage k assembles the (sampled)
/// training data of group k's tasks, trains cfg.epochs epochs under M_k with
/// a fresh optimizer, and hands its parameters to stage k+1.
MultiStageResult run_multistage(const Mlp& model, const ParameterSnapshot& theta_start,
                                const TaskGroups& groups,
                                const std::map<std::string, CoreRegion>& cores,
                                std::span<const TaskDataset> tasks, const TrainConfig& cfg,
                                const MultiStageOptions& opts, const MetricsSink& sink = {});

/// Full multi-task SFT: one pass over the mixture of all tasks with weight
/// lambda_i per example of task i; tasks with lambda_i == 0 are dropped.
ParameterSnapshot run_fullsft_baseline(const Mlp& model, const ParameterSnapshot& theta0,
                                       std::span<const TaskDataset> tasks, const TrainConfig& cfg,
                                       const MetricsSink& sink = {});

/// Writes one JSON object per line.
class JsonLinesLog {
 public:
  MetricsSink sink();
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

}  // namespace cpift
