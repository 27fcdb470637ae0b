#include "cpift/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw Error("unknown optimizer: " + std::string(text));
}

std::string_view to_string(FreezeScope s) {
  return s == FreezeScope::prior_groups ? "prior_groups" : "all_cores";
}

FreezeScope parse_freeze_scope(std::string_view text) {
  if (text == "prior_groups") return FreezeScope::prior_groups;
  if (text == "all_cores") return FreezeScope::all_cores;
  throw Error("unknown freeze scope: " + std::string(text));
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error("learning_rate must be finite and >= 0");
  }
  if (cfg.batch_size == 0) throw Error("batch_size must be positive");
  if (cfg.epochs < 0) throw Error("epochs must be >= 0");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
      !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) {
    throw Error("adam betas out of [0,1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw Error("adam_eps must be positive");
  if (!(cfg.weight_decay >= 0.0)) throw Error("weight_decay must be >= 0");
  for (double w : cfg.mixture_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("mixture weights must be >= 0");
  }
}

FreezeMask FreezeMask::all_ones(std::size_t dim, std::size_t stage_index) {
  return FreezeMask{std::vector<std::uint8_t>(dim, 1), stage_index, 0};
}

FreezeMask FreezeMask::from_frozen(std::size_t dim, std::span<const std::size_t> frozen,
                                   std::size_t stage_index) {
  FreezeMask mask = all_ones(dim, stage_index);
  for (std::size_t j : frozen) {
    if (j >= dim) throw Error("index out of range");
    if (mask.bits[j] != 0) {
      mask.bits[j] = 0;
      ++mask.frozen_count;
    }
  }
  return mask;
}

void apply_masked_update(std::span<double> theta, std::span<const double> delta,
                         const FreezeMask& mask) {
  if (theta.size() != delta.size() || theta.size() != mask.size()) {
    throw Error("length mismatch");
  }
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (mask.bits[j] != 0) theta[j] += delta[j];
  }
}

ParameterSnapshot masked_step(const ParameterSnapshot& theta, std::span<const double> delta,
                              const FreezeMask& mask) {
  std::vector<double> next(theta.data().begin(), theta.data().end());
  apply_masked_update(next, delta, mask);
  return theta.with_data(std::move(next));
}

Optimizer::Optimizer(const TrainConfig& cfg, std::size_t dim) : cfg_(cfg) {
  validate(cfg_);
  if (cfg_.optimizer == OptimizerKind::adam) {
    m_.assign(dim, 0.0);
    v_.assign(dim, 0.0);
    t_.assign(dim, 0);
  }
}

std::vector<double> Optimizer::update(std::span<const double> theta, std::span<const double> grad,
                                      const FreezeMask& mask) {
  const std::size_t dim = theta.size();
  if (grad.size() != dim || mask.size() != dim) throw Error("length mismatch");
  if (cfg_.optimizer == OptimizerKind::adam && m_.size() != dim) throw Error("length mismatch");

  std::vector<double> delta(dim, 0.0);
  const double lr = cfg_.learning_rate;
  for (std::size_t j = 0; j < dim; ++j) {
    if (mask.bits[j] == 0) continue;
    double d;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      d = -lr * grad[j];
    } else {
      const double b1 = cfg_.adam_beta1;
      const double b2 = cfg_.adam_beta2;
      m_[j] = b1 * m_[j] + (1.0 - b1) * grad[j];
      v_[j] = b2 * v_[j] + (1.0 - b2) * grad[j] * grad[j];
      const double t = static_cast<double>(++t_[j]);
      const double m_hat = m_[j] / (1.0 - std::pow(b1, t));
      const double v_hat = v_[j] / (1.0 - std::pow(b2, t));
      d = -lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
    }
    if (cfg_.weight_decay > 0.0) d -= lr * cfg_.weight_decay * theta[j];
    delta[j] = d;
  }
  return delta;
}

void Optimizer::step(std::span<double> theta, std::span<const double> grad,
                     const FreezeMask& mask) {
  const std::vector<double> delta = update(theta, grad, mask);
  apply_masked_update(theta, delta, mask);
}

std::size_t train_epochs(const Mlp& model, std::vector<double>& theta, const Dataset& data,
                         std::span<const double> weights, const TrainConfig& cfg,
                         const FreezeMask& mask, std::size_t stage_index,
                         const MetricsSink& sink) {
  validate(cfg);
  if (data.empty()) throw Error("empty dataset");
  if (!weights.empty() && weights.size() != data.size()) throw Error("weight count mismatch");
  if (theta.size() != model.param_count() || mask.size() != theta.size()) {
    throw Error("length mismatch");
  }

  Optimizer opt(cfg, theta.size());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<double> grad(theta.size());
  std::vector<double> batch_weights;
  std::size_t steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const auto rows = std::span<const std::size_t>(order).subspan(start, len);
      batch_weights.clear();
      if (!weights.empty()) {
        for (std::size_t r : rows) batch_weights.push_back(weights[r]);
        double total = 0.0;
        for (double w : batch_weights) total += w;
        if (total == 0.0) continue;  // batch made only of zero-weight examples
      }
      const double loss = model.loss_and_grad(theta, data, rows, batch_weights, grad);
      opt.step(theta, grad, mask);
      ++steps;
      if (sink) sink({stage_index, steps, loss, mask.frozen_count});
    }
  }
  return steps;
}

ParameterSnapshot probe_sft(const Mlp& model, const ParameterSnapshot& theta0,
                            const TaskDataset& task, const TrainConfig& cfg,
                            const MetricsSink& sink) {
  model.check_compatible(theta0);
  if (task.train.empty()) throw Error("empty dataset");
  std::vector<double> theta(theta0.data().begin(), theta0.data().end());
  train_epochs(model, theta, task.train, {}, cfg, FreezeMask::all_ones(theta.size()), 0, sink);
  SnapshotMeta meta = theta0.meta();
  meta["task_id"] = task.task_id;
  meta["stage"] = "probe";
  return theta0.with_data(std::move(theta)).with_meta(std::move(meta));
}

FreezeMask build_freeze_mask(const TaskGroups& groups,
                             const std::map<std::string, CoreRegion>& cores, std::size_t k,
                             std::size_t dim, FreezeScope scope) {
  if (k < 1 || k > groups.size()) throw Error("stage index out of range");
  const std::size_t last = scope == FreezeScope::prior_groups ? k - 1 : groups.size();
  std::vector<std::size_t> frozen;
  for (std::size_t l = 0; l < last; ++l) {
    for (const std::string& task : groups.groups[l]) {
      auto it = cores.find(task);
      if (it == cores.end()) throw Error("missing core for task " + task);
      if (it->second.total_dim != dim) throw Error("core region dimension mismatch: " + task);
      frozen.insert(frozen.end(), it->second.indices.begin(), it->second.indices.end());
    }
  }
  return FreezeMask::from_frozen(dim, frozen, k);
}

std::vector<TaskDataset> sample_dataset(std::span<const TaskDataset> tasks, double ratio,
                                        std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("sampling ratio out of (0,1]");
  std::vector<TaskDataset> out;
  out.reserve(tasks.size());
  for (const TaskDataset& task : tasks) {
    if (task.train.empty()) throw Error("empty source dataset: " + task.task_id);
    if (ratio == 1.0) {
      out.push_back(task);
      continue;
    }
    const std::size_t n = task.train.size();
    const auto keep =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "sample/" + task.task_id));
    for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    TaskDataset sampled = task;
    sampled.train = task.train.select(idx);
    out.push_back(std::move(sampled));
  }
  return out;
}

namespace {

std::map<std::string, double> score_all(const Mlp& model, std::span<const double> theta,
                                        std::span<const TaskDataset> tasks) {
  std::map<std::string, double> scores;
  for (const TaskDataset& t : tasks) scores[t.task_id] = evaluate(model, theta, t.test);
  return scores;
}

const TaskDataset& find_task(std::span<const TaskDataset> tasks, const std::string& id) {
  for (const TaskDataset& t : tasks) {
    if (t.task_id == id) return t;
  }
  throw Error("no data for task " + id);
}

}  // namespace

MultiStageResult run_multistage(const Mlp& model, const ParameterSnapshot& theta_start,
                                const TaskGroups& groups,
                                const std::map<std::string, CoreRegion>& cores,
                                std::span<const TaskDataset> tasks, const TrainConfig& cfg,
                                const MultiStageOptions& opts, const MetricsSink& sink) {
  model.check_compatible(theta_start);
  validate(cfg);
  if (groups.groups.empty()) throw Error("no task groups");
  const std::size_t dim = theta_start.dim();

  MultiStageResult result;
  std::vector<double> theta(theta_start.data().begin(), theta_start.data().end());
  for (std::size_t k = 1; k <= groups.size(); ++k) {
    const auto& members = groups.groups[k - 1];
    std::vector<TaskDataset> stage_tasks;
    for (const std::string& id : members) stage_tasks.push_back(find_task(tasks, id));
    if (opts.sampling_ratio < 1.0) {
      stage_tasks = sample_dataset(stage_tasks, opts.sampling_ratio, opts.sample_seed);
    }
    Dataset stage_data;
    for (const TaskDataset& t : stage_tasks) stage_data.append(t.train);

    const FreezeMask mask = opts.freeze ? build_freeze_mask(groups, cores, k, dim, opts.scope)
                                        : FreezeMask::all_ones(dim, k);
    StageResult stage;
    stage.stage_index = k;
    stage.tasks = members;
    stage.frozen_count = mask.frozen_count;
    stage.train_examples = stage_data.size();
    stage.scores_before = score_all(model, theta, tasks);

    TrainConfig stage_cfg = cfg;
    stage_cfg.seed = derive_seed(cfg.seed, "stage/" + std::to_string(k));
    if (cfg.epochs > 0) {
      stage.steps = train_epochs(model, theta, stage_data, {}, stage_cfg, mask, k, sink);
    }
    stage.scores_after = score_all(model, theta, tasks);
    SnapshotMeta meta = theta_start.meta();
    meta["stage"] = std::to_string(k);
    stage.theta = theta_start.with_data(theta).with_meta(std::move(meta));
    result.stages.push_back(std::move(stage));
  }
  result.theta_final = result.stages.back().theta;
  return result;
}

ParameterSnapshot run_fullsft_baseline(const Mlp& model, const ParameterSnapshot& theta0,
                                       std::span<const TaskDataset> tasks, const TrainConfig& cfg,
                                       const MetricsSink& sink) {
  model.check_compatible(theta0);
  validate(cfg);
  if (tasks.empty()) throw Error("no tasks");
  if (!cfg.mixture_weights.empty() && cfg.mixture_weights.size() != tasks.size()) {
    throw Error("mixture_weights must have one entry per task");
  }
  Dataset pool;
  std::vector<double> weights;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double lambda = cfg.mixture_weights.empty() ? 1.0 : cfg.mixture_weights[i];
    if (lambda == 0.0) continue;
    if (tasks[i].train.empty()) throw Error("empty dataset: " + tasks[i].task_id);
    pool.append(tasks[i].train);
    weights.insert(weights.end(), tasks[i].train.size(), lambda);
  }
  if (pool.empty()) throw Error("all mixture weights are zero");

  std::vector<double> theta(theta0.data().begin(), theta0.data().end());
  train_epochs(model, theta, pool, weights, cfg, FreezeMask::all_ones(theta.size()), 0, sink);
  SnapshotMeta meta = theta0.meta();
  meta["stage"] = "full_sft";
  return theta0.with_data(std::move(theta)).with_meta(std::move(meta));
}

MetricsSink JsonLinesLog::sink() {
  return [this](const StepMetrics& m) {
    json line;
    line["stage"] = m.stage;
    line["step"] = m.step;
    line["loss"] = m.loss;
    line["frozen_count"] = m.frozen_count;
    text_ += line.dump();
    text_ += '\n';
  };
}

}  // namespace cpift
