#include "cpift/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(Stage4Mode m) {
  return m == Stage4Mode::multi_stage ? "multi_stage" : "single_stage";
}

Stage4Mode parse_stage4_mode(std::string_view text) {
  if (text == "multi_stage") return Stage4Mode::multi_stage;
  if (text == "single_stage") return Stage4Mode::single_stage;
  throw Error("unknown stage4 mode: " + std::string(text));
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw Error(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw Error("unknown key \"" + key + "\"" + (where.empty() ? "" : " in " + where));
    }
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void validate(const PipelineConfig& cfg) {
  validate(cfg.suite);
  if (!(cfg.core.p_percent > 0.0 && cfg.core.p_percent <= 100.0)) {
    throw Error("p_percent out of (0,100]");
  }
  if (cfg.core.probe_epochs < 0) throw Error("probe_epochs must be >= 0");
  if (!(cfg.grouping.tau >= 0.0 && cfg.grouping.tau <= 1.0)) throw Error("tau out of [0,1]");
  validate(cfg.fusion);
  validate(cfg.train);
  if (!(cfg.stage4.sampling_ratio > 0.0 && cfg.stage4.sampling_ratio <= 1.0)) {
    throw Error("sampling_ratio out of (0,1]");
  }
  if (cfg.stage4.epochs < 0) throw Error("stage4 epochs must be >= 0");
  for (std::size_t h : cfg.hidden) {
    if (h == 0) throw Error("hidden layer widths must be positive");
  }
  if (!cfg.train.mixture_weights.empty() &&
      cfg.train.mixture_weights.size() != cfg.suite.n_tasks) {
    throw Error("mixture_weights must have one entry per task");
  }
}

}  // namespace

std::uint64_t PhaseSeeds::probe(std::string_view task_id) const {
  return derive_seed(root, "probe/" + std::string(task_id));
}

PhaseSeeds phase_seeds(const PipelineConfig& cfg) {
  PhaseSeeds s;
  s.root = cfg.seed;
  s.suite = cfg.suite_seed_given ? cfg.suite.seed : derive_seed(cfg.seed, "suite");
  s.init = derive_seed(cfg.seed, "init");
  s.grouping = cfg.grouping_seed_given ? cfg.grouping.seed : derive_seed(cfg.seed, "grouping");
  s.main_sft = derive_seed(cfg.seed, "main_sft");
  s.consolidate = derive_seed(cfg.seed, "consolidate");
  s.sample = derive_seed(cfg.seed, "sample");
  s.baseline = derive_seed(cfg.seed, "baseline");
  return s;
}

void set_root_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  const PhaseSeeds s = phase_seeds(cfg);
  cfg.suite.seed = s.suite;
  cfg.grouping.seed = s.grouping;
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig cfg;
  try {
    reject_unknown(j,
                   {"suite", "output_dir", "seed", "model", "core", "grouping", "fusion", "train",
                    "stage4", "main_sft", "baseline"},
                   "config");
    if (!j.contains("suite")) throw Error("config is missing \"suite\"");
    cfg.suite = suite_from_json(j.at("suite"));
    cfg.suite_seed_given = j.at("suite").contains("seed");
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    read_opt(j, "seed", cfg.seed);

    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"hidden"}, "model");
      read_opt(m, "hidden", cfg.hidden);
    }
    if (j.contains("core")) {
      const json& c = j.at("core");
      reject_unknown(c, {"p_percent", "probe_epochs"}, "core");
      read_opt(c, "p_percent", cfg.core.p_percent);
      read_opt(c, "probe_epochs", cfg.core.probe_epochs);
    }
    if (j.contains("grouping")) {
      const json& g = j.at("grouping");
      reject_unknown(g, {"tau", "order_strategy", "seed"}, "grouping");
      read_opt(g, "tau", cfg.grouping.tau);
      if (g.contains("order_strategy")) {
        cfg.grouping.order = parse_order_strategy(g.at("order_strategy").get<std::string>());
      }
      if (g.contains("seed")) {
        cfg.grouping.seed = g.at("seed").get<std::uint64_t>();
        cfg.grouping_seed_given = true;
      }
    }
    if (j.contains("fusion")) {
      const json& f = j.at("fusion");
      reject_unknown(f, {"omega", "epsilon_rad", "conflict_policy"}, "fusion");
      read_opt(f, "omega", cfg.fusion.omega);
      read_opt(f, "epsilon_rad", cfg.fusion.epsilon_rad);
      if (f.contains("conflict_policy")) {
        cfg.fusion.conflict_policy =
            parse_conflict_policy(f.at("conflict_policy").get<std::string>());
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t,
                     {"learning_rate", "batch_size", "epochs", "optimizer", "adam_beta1",
                      "adam_beta2", "adam_eps", "weight_decay", "mixture_weights"},
                     "train");
      read_opt(t, "learning_rate", cfg.train.learning_rate);
      read_opt(t, "batch_size", cfg.train.batch_size);
      read_opt(t, "epochs", cfg.train.epochs);
      if (t.contains("optimizer")) {
        cfg.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
      }
      read_opt(t, "adam_beta1", cfg.train.adam_beta1);
      read_opt(t, "adam_beta2", cfg.train.adam_beta2);
      read_opt(t, "adam_eps", cfg.train.adam_eps);
      read_opt(t, "weight_decay", cfg.train.weight_decay);
      read_opt(t, "mixture_weights", cfg.train.mixture_weights);
    }
    if (j.contains("stage4")) {
      const json& s = j.at("stage4");
      reject_unknown(s, {"freeze_scope", "sampling_ratio", "epochs", "mode"}, "stage4");
      if (s.contains("freeze_scope")) {
        cfg.stage4.freeze_scope = parse_freeze_scope(s.at("freeze_scope").get<std::string>());
      }
      read_opt(s, "sampling_ratio", cfg.stage4.sampling_ratio);
      read_opt(s, "epochs", cfg.stage4.epochs);
      if (s.contains("mode")) cfg.stage4.mode = parse_stage4_mode(s.at("mode").get<std::string>());
    }
    if (j.contains("main_sft")) {
      const json& m = j.at("main_sft");
      reject_unknown(m, {"freeze"}, "main_sft");
      read_opt(m, "freeze", cfg.main_sft_freeze);
    }
    if (j.contains("baseline")) {
      const json& b = j.at("baseline");
      reject_unknown(b, {"enabled"}, "baseline");
      read_opt(b, "enabled", cfg.run_baseline);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed config: ") + e.what());
  }
  validate(cfg);
  const PhaseSeeds s = phase_seeds(cfg);
  cfg.suite.seed = s.suite;
  cfg.grouping.seed = s.grouping;
  return cfg;
}

PipelineConfig parse_config(const fs::path& path) { return config_from_json(read_json(path)); }

json config_to_json(const PipelineConfig& cfg) {
  json j;
  j["suite"] = suite_to_json(cfg.suite);
  j["output_dir"] = cfg.output_dir.string();
  j["seed"] = cfg.seed;
  j["model"] = {{"hidden", cfg.hidden}};
  j["core"] = {{"p_percent", cfg.core.p_percent}, {"probe_epochs", cfg.core.probe_epochs}};
  j["grouping"] = {{"tau", cfg.grouping.tau},
                   {"order_strategy", std::string(to_string(cfg.grouping.order))},
                   {"seed", cfg.grouping.seed}};
  j["fusion"] = {{"omega", cfg.fusion.omega},
                 {"epsilon_rad", cfg.fusion.epsilon_rad},
                 {"conflict_policy", std::string(to_string(cfg.fusion.conflict_policy))}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"optimizer", std::string(to_string(cfg.train.optimizer))},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"weight_decay", cfg.train.weight_decay},
                {"mixture_weights", cfg.train.mixture_weights}};
  j["stage4"] = {{"freeze_scope", std::string(to_string(cfg.stage4.freeze_scope))},
                 {"sampling_ratio", cfg.stage4.sampling_ratio},
                 {"epochs", cfg.stage4.epochs},
                 {"mode", std::string(to_string(cfg.stage4.mode))}};
  j["main_sft"] = {{"freeze", cfg.main_sft_freeze}};
  j["baseline"] = {{"enabled", cfg.run_baseline}};
  return j;
}

Mlp make_model(const PipelineConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(cfg.suite.feature_dim());
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.suite.classes);
  return Mlp(std::move(dims));
}

SuiteSpec resolved_suite(const PipelineConfig& cfg) {
  SuiteSpec spec = cfg.suite;
  spec.seed = phase_seeds(cfg).suite;
  return spec;
}

// ---------------------------------------------------------------------------
// Phases

ParameterSnapshot phase_init(const PipelineConfig& cfg, const Mlp& model) {
  return model.init(phase_seeds(cfg).init).with_meta({{"stage", "init"}});
}

std::vector<ParameterSnapshot> phase_probe(const PipelineConfig& cfg, const Mlp& model,
                                           const ParameterSnapshot& theta0,
                                           std::span<const TaskDataset> tasks) {
  const PhaseSeeds seeds = phase_seeds(cfg);
  std::vector<ParameterSnapshot> probes;
  probes.reserve(tasks.size());
  for (const TaskDataset& task : tasks) {
    TrainConfig probe_cfg = cfg.train;
    probe_cfg.epochs = cfg.core.probe_epochs;
    probe_cfg.mixture_weights.clear();
    probe_cfg.seed = seeds.probe(task.task_id);
    probes.push_back(probe_sft(model, theta0, task, probe_cfg));
  }
  return probes;
}

CoreResult phase_cores(const PipelineConfig& cfg, const ParameterSnapshot& theta0,
                       std::span<const ParameterSnapshot> probes,
                       std::span<const TaskDataset> tasks) {
  if (probes.size() != tasks.size()) throw Error("probe count does not match task count");
  CoreResult out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    DeltaMagnitudes delta = delta_magnitudes(theta0, probes[i], tasks[i].task_id);
    out.cores[tasks[i].task_id] = select_core(delta, cfg.core);
    out.deltas.push_back(std::move(delta));
  }
  return out;
}

GroupResult phase_group(const PipelineConfig& cfg,
                        const std::map<std::string, CoreRegion>& cores) {
  GroupResult out;
  std::vector<CoreRegion> regions;
  for (const auto& [id, core] : cores) {
    out.task_ids.push_back(id);
    regions.push_back(core);
  }
  out.similarity = similarity_matrix(regions);
  GroupingConfig gcfg = cfg.grouping;
  gcfg.seed = phase_seeds(cfg).grouping;
  out.groups = connected_components(out.similarity, out.task_ids, gcfg);
  return out;
}

MultiStageResult phase_train_stages(const PipelineConfig& cfg, const Mlp& model,
                                    const ParameterSnapshot& theta0, const TaskGroups& groups,
                                    const std::map<std::string, CoreRegion>& cores,
                                    std::span<const TaskDataset> tasks, const MetricsSink& sink) {
  TrainConfig tcfg = cfg.train;
  tcfg.seed = phase_seeds(cfg).main_sft;
  MultiStageOptions opts;
  opts.freeze = cfg.main_sft_freeze;
  opts.scope = FreezeScope::prior_groups;
  opts.sampling_ratio = 1.0;
  return run_multistage(model, theta0, groups, cores, tasks, tcfg, opts, sink);
}

std::pair<ParameterSnapshot, FusionReport> phase_fuse(
    const PipelineConfig& cfg, const ParameterSnapshot& base, const ParameterSnapshot& theta0,
    const std::map<std::string, ParameterSnapshot>& probes,
    const std::map<std::string, CoreRegion>& cores, const TaskGroups& groups) {
  std::vector<TaskProbe> ordered;
  for (const std::string& id : groups.flattened()) {
    auto p = probes.find(id);
    auto c = cores.find(id);
    if (p == probes.end()) throw Error("missing probe model for task " + id);
    if (c == cores.end()) throw Error("missing core for task " + id);
    ordered.push_back({id, p->second, c->second, delta_magnitudes(theta0, p->second, id)});
  }
  auto [fused, report] = fuse(base, ordered, cfg.fusion);
  SnapshotMeta meta = base.meta();
  meta["stage"] = "fused";
  return {fused.with_meta(std::move(meta)), std::move(report)};
}

MultiStageResult phase_consolidate(const PipelineConfig& cfg, const Mlp& model,
                                   const ParameterSnapshot& fused, const TaskGroups& groups,
                                   const std::map<std::string, CoreRegion>& cores,
                                   std::span<const TaskDataset> tasks, const MetricsSink& sink) {
  const PhaseSeeds seeds = phase_seeds(cfg);
  TrainConfig tcfg = cfg.train;
  tcfg.epochs = cfg.stage4.epochs;
  tcfg.seed = seeds.consolidate;
  MultiStageOptions opts;
  opts.freeze = true;
  opts.scope = cfg.stage4.freeze_scope;
  opts.sampling_ratio = cfg.stage4.sampling_ratio;
  opts.sample_seed = seeds.sample;

  TaskGroups stage_groups = groups;
  if (cfg.stage4.mode == Stage4Mode::single_stage) {
    stage_groups.groups = {groups.flattened()};
  }
  MultiStageResult result =
      run_multistage(model, fused, stage_groups, cores, tasks, tcfg, opts, sink);
  SnapshotMeta meta = fused.meta();
  meta["stage"] = "final";
  result.theta_final = result.theta_final.with_meta(std::move(meta));
  return result;
}

ParameterSnapshot phase_baseline(const PipelineConfig& cfg, const Mlp& model,
                                 const ParameterSnapshot& theta0,
                                 std::span<const TaskDataset> tasks, const MetricsSink& sink) {
  TrainConfig tcfg = cfg.train;
  tcfg.seed = phase_seeds(cfg).baseline;
  return run_fullsft_baseline(model, theta0, tasks, tcfg, sink);
}

std::map<std::string, double> evaluate_all(const Mlp& model, const ParameterSnapshot& params,
                                           std::span<const TaskDataset> tasks) {
  std::map<std::string, double> acc;
  for (const TaskDataset& t : tasks) acc[t.task_id] = evaluate(model, params, t);
  return acc;
}

json stages_to_json(const MultiStageResult& result) {
  json arr = json::array();
  for (const StageResult& s : result.stages) {
    arr.push_back({{"stage", s.stage_index},
                   {"tasks", s.tasks},
                   {"scores_before", s.scores_before},
                   {"scores_after", s.scores_after},
                   {"steps", s.steps},
                   {"frozen_count", s.frozen_count},
                   {"train_examples", s.train_examples}});
  }
  return arr;
}

std::map<std::string, double> pipeline_forgetting(const json& main_stages,
                                                  const std::map<std::string, double>& final_acc) {
  std::map<std::string, double> out;
  for (const json& stage : main_stages) {
    const auto after = stage.at("scores_after").get<std::map<std::string, double>>();
    for (const std::string& task : stage.at("tasks").get<std::vector<std::string>>()) {
      auto fin = final_acc.find(task);
      auto learned = after.find(task);
      if (fin == final_acc.end() || learned == after.end()) continue;
      out[task] = forgetting_delta(to_percent(learned->second), to_percent(fin->second));
    }
  }
  return out;
}

}  // namespace cpift
