#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpift/dataset.hpp"
#include "cpift/io.hpp"
#include "cpift/model.hpp"

namespace cpift {

/// Parameters of a synthetic suite. Inputs are standard Gaussian in
/// R^input_dim shared by every task; task i labels x by argmax(W_i x) with
///   W_i = (1 - conflict) * W_shared + conflict * V_i,
/// where V_i are independent Gaussian draws centred across tasks (so for two
/// tasks V_2 = -V_1). conflict = 0 gives identical teachers, conflict = 1
/// pairwise anti-correlated ones.
///
/// With task_indicator set, each example additionally carries a one-hot
/// block of n_tasks features naming its task; without it, fully conflicting
/// tasks cannot be solved by one model.
struct SuiteSpec {
  std::size_t n_tasks = 2;
  std::size_t input_dim = 16;
  std::size_t classes = 2;
  double conflict = 0.0;
  std::uint64_t seed = 0;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  double label_noise = 0.0;  // probability of replacing a label by a uniform draw
  bool task_indicator = true;

  /// Width of the model input: input_dim (+ n_tasks with the indicator).
  std::size_t feature_dim() const { return input_dim + (task_indicator ? n_tasks : 0); }
  bool operator==(const SuiteSpec&) const = default;
};

void validate(const SuiteSpec& spec);
json suite_to_json(const SuiteSpec& spec);
/// Accepts the five core keys plus the optional ones; rejects unknown keys.
SuiteSpec suite_from_json(const json& j);

struct TaskDataset {
  std::string task_id;
  std::size_t task_index = 0;
  Dataset train;
  Dataset test;
  SuiteSpec spec;
  std::vector<double> teacher;  // classes x input_dim, row-major
  double train_fraction = 1.0;  // < 1 after undersample_task
  std::uint64_t undersample_seed = 0;
};

/// Task ids are "t" plus the zero-padded index, so lexicographic order is
/// index order.
std::string task_id_for(std::size_t index, std::size_t n_tasks);

std::vector<TaskDataset> make_conflict_suite(const SuiteSpec& spec);

/// Cosine similarity of two teacher matrices (flattened).
double teacher_cosine(const TaskDataset& a, const TaskDataset& b);

/// Linear model (no hidden layer) that reproduces the task's teacher.
ParameterSnapshot teacher_model(const TaskDataset& task);

/// Fraction of the test split predicted correctly.
double evaluate(const Mlp& model, const ParameterSnapshot& params, const TaskDataset& task);
double evaluate(const Mlp& model, std::span<const double> params, const Dataset& data);

/// Signed change on the 0-100 scale; negative means forgetting.
double forgetting_delta(double score_before, double score_after);

/// Accuracy in [0,1] mapped to the 0-100 score used for forgetting deltas.
inline double to_percent(double accuracy) { return 100.0 * accuracy; }

struct EvalMetrics {
  std::map<std::string, double> per_task_accuracy;
  std::map<std::string, double> normalized_scores;  // 10 x accuracy
  double avg_norm_score = 0.0;                      // macro mean of normalized_scores
  std::map<std::string, double> forgetting;

  json to_json() const;
};

EvalMetrics normalized_report(const std::map<std::string, double>& per_task_accuracy);

/// Keeps ceil(fraction * n) training examples (uniform, without
/// replacement, original order); the test split is untouched.
TaskDataset undersample_task(const TaskDataset& task, double fraction, std::uint64_t seed);

}  // namespace cpift
