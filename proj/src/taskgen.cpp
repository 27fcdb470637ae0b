#include "cpift/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

namespace {

std::uint32_t teacher_label(std::span<const double> teacher, std::size_t classes,
                            std::span<const double> x) {
  const std::size_t d = x.size();
  std::uint32_t best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += teacher[c * d + i] * x[i];
    if (c == 0 || s > best_score) {
      best = static_cast<std::uint32_t>(c);
      best_score = s;
    }
  }
  return best;
}

Dataset draw_split(const SuiteSpec& spec, std::size_t task_index, std::span<const double> teacher,
                   std::size_t count, Rng& rng) {
  Dataset out;
  out.dim = spec.feature_dim();
  out.features.reserve(count * out.dim);
  out.labels.reserve(count);
  std::vector<double> row(out.dim, 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    for (std::size_t i = 0; i < spec.input_dim; ++i) row[i] = rng.normal();
    if (spec.task_indicator) {
      for (std::size_t t = 0; t < spec.n_tasks; ++t) {
        row[spec.input_dim + t] = t == task_index ? 1.0 : 0.0;
      }
    }
    std::uint32_t label =
        teacher_label(teacher, spec.classes, std::span<const double>(row).first(spec.input_dim));
    if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise) {
      label = static_cast<std::uint32_t>(rng.below(spec.classes));
    }
    out.push_back(row, label);
  }
  return out;
}

}  // namespace

void validate(const SuiteSpec& spec) {
  if (spec.n_tasks < 1) throw Error("n_tasks must be >= 1");
  if (spec.input_dim < 1) throw Error("input_dim must be >= 1");
  if (spec.classes < 2) throw Error("classes must be >= 2");
  if (!(spec.conflict >= 0.0 && spec.conflict <= 1.0)) throw Error("conflict out of [0,1]");
  if (spec.train_size < 1 || spec.test_size < 1) throw Error("split sizes must be >= 1");
  if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0)) {
    throw Error("label_noise out of [0,1]");
  }
}

json suite_to_json(const SuiteSpec& spec) {
  json j;
  j["n_tasks"] = spec.n_tasks;
  j["input_dim"] = spec.input_dim;
  j["classes"] = spec.classes;
  j["conflict"] = spec.conflict;
  j["seed"] = spec.seed;
  j["train_size"] = spec.train_size;
  j["test_size"] = spec.test_size;
  j["label_noise"] = spec.label_noise;
  j["task_indicator"] = spec.task_indicator;
  return j;
}

SuiteSpec suite_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"n_tasks",   "input_dim",  "classes",
                                              "conflict",  "seed",       "train_size",
                                              "test_size", "label_noise", "task_indicator"};
  if (!j.is_object()) throw Error("suite spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.contains(key)) throw Error("unknown key in suite: " + key);
  }
  SuiteSpec spec;
  try {
    spec.n_tasks = j.at("n_tasks").get<std::size_t>();
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.classes = j.at("classes").get<std::size_t>();
    spec.conflict = j.at("conflict").get<double>();
    spec.seed = j.value("seed", spec.seed);
    spec.train_size = j.value("train_size", spec.train_size);
    spec.test_size = j.value("test_size", spec.test_size);
    spec.label_noise = j.value("label_noise", spec.label_noise);
    spec.task_indicator = j.value("task_indicator", spec.task_indicator);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed suite spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

std::string task_id_for(std::size_t index, std::size_t n_tasks) {
  const std::size_t width = std::to_string(n_tasks > 0 ? n_tasks - 1 : 0).size();
  std::string digits = std::to_string(index);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "t" + digits;
}

std::vector<TaskDataset> make_conflict_suite(const SuiteSpec& spec) {
  validate(spec);
  const std::size_t n = spec.n_tasks;
  const std::size_t tw = spec.classes * spec.input_dim;

  Rng teacher_rng(derive_seed(spec.seed, "teachers"));
  std::vector<double> shared(tw);
  for (double& v : shared) v = teacher_rng.normal();
  std::vector<std::vector<double>> unique(n, std::vector<double>(tw));
  for (auto& u : unique) {
    for (double& v : u) v = teacher_rng.normal();
  }
  if (n >= 2) {
    for (std::size_t i = 0; i < tw; ++i) {
      double mean = 0.0;
      for (const auto& u : unique) mean += u[i];
      mean /= static_cast<double>(n);
      for (auto& u : unique) u[i] -= mean;
    }
  }

  std::vector<TaskDataset> tasks;
  tasks.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    TaskDataset task;
    task.task_index = t;
    task.task_id = task_id_for(t, n);
    task.spec = spec;
    task.teacher.resize(tw);
    for (std::size_t i = 0; i < tw; ++i) {
      task.teacher[i] = (1.0 - spec.conflict) * shared[i] + spec.conflict * unique[t][i];
    }
    Rng data_rng(derive_seed(spec.seed, "data/" + task.task_id));
    task.train = draw_split(spec, t, task.teacher, spec.train_size, data_rng);
    task.test = draw_split(spec, t, task.teacher, spec.test_size, data_rng);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

double teacher_cosine(const TaskDataset& a, const TaskDataset& b) {
  if (a.teacher.size() != b.teacher.size()) throw Error("teacher shape mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.teacher.size(); ++i) {
    dot += a.teacher[i] * b.teacher[i];
    na += a.teacher[i] * a.teacher[i];
    nb += b.teacher[i] * b.teacher[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

ParameterSnapshot teacher_model(const TaskDataset& task) {
  const SuiteSpec& spec = task.spec;
  Mlp linear({spec.feature_dim(), spec.classes});
  std::vector<double> params(linear.param_count(), 0.0);
  const std::size_t w_off = linear.zeros().tensor("layer0.weight").offset_elems;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.input_dim; ++i) {
      params[w_off + c * spec.feature_dim() + i] = task.teacher[c * spec.input_dim + i];
    }
  }
  return linear.wrap(std::move(params));
}

double evaluate(const Mlp& model, std::span<const double> params, const Dataset& data) {
  if (data.empty()) throw Error("empty test split");
  if (data.dim != model.input_dim()) throw Error("input length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (model.predict(params, data.row(i)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate(const Mlp& model, const ParameterSnapshot& params, const TaskDataset& task) {
  model.check_compatible(params);
  if (model.output_dim() < task.spec.classes) throw Error("model output dim below class count");
  return evaluate(model, params.data(), task.test);
}

double forgetting_delta(double score_before, double score_after) {
  return score_after - score_before;
}

json EvalMetrics::to_json() const {
  json j;
  j["per_task_accuracy"] = per_task_accuracy;
  j["normalized_scores"] = normalized_scores;
  j["avg_norm_score"] = avg_norm_score;
  j["forgetting"] = forgetting;
  return j;
}

EvalMetrics normalized_report(const std::map<std::string, double>& per_task_accuracy) {
  if (per_task_accuracy.empty()) throw Error("empty task set");
  EvalMetrics m;
  m.per_task_accuracy = per_task_accuracy;
  double sum = 0.0;
  for (const auto& [task, acc] : per_task_accuracy) {
    if (!(acc >= 0.0 && acc <= 1.0)) throw Error("accuracy out of [0,1] for " + task);
    m.normalized_scores[task] = 10.0 * acc;
    sum += 10.0 * acc;
  }
  m.avg_norm_score = sum / static_cast<double>(per_task_accuracy.size());
  return m;
}

TaskDataset undersample_task(const TaskDataset& task, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction out of (0,1]");
  if (task.train.empty()) throw Error("empty source dataset");
  const std::size_t n = task.train.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "undersample/" + task.task_id));
  // Partial Fisher-Yates: the first `keep` slots become a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());

  TaskDataset out = task;
  out.train = task.train.select(idx);
  out.train_fraction = task.train_fraction * fraction;
  out.undersample_seed = seed;
  return out;
}

}  // namespace cpift
