#include "cpift/bench.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

namespace {

std::map<std::string, ParameterSnapshot> keyed(std::span<const TaskDataset> tasks,
                                               std::span<const ParameterSnapshot> probes) {
  std::map<std::string, ParameterSnapshot> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) out.emplace(tasks[i].task_id, probes[i]);
  return out;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

struct Downstream {
  MultiStageResult main;
  ParameterSnapshot fused;
  FusionReport fusion;
  MultiStageResult consolidation;
};

Downstream run_downstream(const PipelineConfig& cfg, const Mlp& model,
                          const ParameterSnapshot& theta0,
                          const std::map<std::string, ParameterSnapshot>& probes,
                          const std::map<std::string, CoreRegion>& cores, const TaskGroups& staging,
                          std::span<const TaskDataset> tasks) {
  Downstream d;
  d.main = phase_train_stages(cfg, model, theta0, staging, cores, tasks);
  auto [fused, report] = phase_fuse(cfg, d.main.theta_final, theta0, probes, cores, staging);
  d.fused = std::move(fused);
  d.fusion = std::move(report);
  d.consolidation = phase_consolidate(cfg, model, d.fused, staging, cores, tasks);
  return d;
}

}  // namespace

CpiftRun run_cpift(const PipelineConfig& cfg, const Mlp& model, std::span<const TaskDataset> tasks,
                   const std::optional<TaskGroups>& forced_groups) {
  CpiftRun run;
  run.theta0 = phase_init(cfg, model);
  const std::vector<ParameterSnapshot> probes = phase_probe(cfg, model, run.theta0, tasks);
  run.probes = keyed(tasks, probes);
  run.cores = phase_cores(cfg, run.theta0, probes, tasks);
  run.grouping = phase_group(cfg, run.cores.cores);
  run.staging = forced_groups ? *forced_groups : run.grouping.groups;
  Downstream d =
      run_downstream(cfg, model, run.theta0, run.probes, run.cores.cores, run.staging, tasks);
  run.main = std::move(d.main);
  run.fused = std::move(d.fused);
  run.fusion = std::move(d.fusion);
  run.consolidation = std::move(d.consolidation);
  return run;
}

// ---------------------------------------------------------------------------
// Forgetting

bool ForgettingBench::passed() const {
  if (directions.empty()) return false;
  for (const ForgettingDirection& d : directions) {
    if (!(d.ratio <= max_ratio)) return false;
  }
  return true;
}

json ForgettingBench::to_json() const {
  json rows_j = json::array();
  for (const ForgettingRow& r : rows) {
    rows_j.push_back({{"seed", r.seed},
                      {"first", r.first},
                      {"second", r.second},
                      {"full_sft", {{"first_before", r.full_first_before},
                                    {"first_after", r.full_first_after},
                                    {"second_before", r.full_second_before},
                                    {"second_after", r.full_second_after},
                                    {"delta_first", r.full_delta_first()},
                                    {"delta_second", r.full_delta_second()}}},
                      {"cpift", {{"first_before", r.cpift_first_before},
                                 {"first_after", r.cpift_first_after},
                                 {"second_before", r.cpift_second_before},
                                 {"second_after", r.cpift_second_after},
                                 {"delta_first", r.cpift_delta_first()},
                                 {"delta_second", r.cpift_delta_second()}}}});
  }
  json dirs = json::array();
  for (const ForgettingDirection& d : directions) {
    dirs.push_back({{"direction", d.label},
                    {"full_sft_mean_abs_delta", d.full_mean_abs_delta_first},
                    {"cpift_mean_abs_delta", d.cpift_mean_abs_delta_first},
                    {"ratio", std::isfinite(d.ratio) ? json(d.ratio) : json(nullptr)}});
  }
  return {{"rows", rows_j},
          {"directions", dirs},
          {"max_ratio", max_ratio},
          {"passed", passed()},
          {"seconds", seconds}};
}

std::string ForgettingBench::markdown() const {
  std::ostringstream out;
  out << "| seed | order | Full SFT Δ first | CPI-FT Δ first | Full SFT Δ second | CPI-FT Δ second |\n"
      << "|---|---|---|---|---|---|\n";
  for (const ForgettingRow& r : rows) {
    out << "| " << r.seed << " | " << r.first << " -> " << r.second << " | "
        << fixed(r.full_delta_first()) << " | " << fixed(r.cpift_delta_first()) << " | "
        << fixed(r.full_delta_second()) << " | " << fixed(r.cpift_delta_second()) << " |\n";
  }
  out << "\n| order | mean abs Δ Full SFT | mean abs Δ CPI-FT | ratio |\n|---|---|---|---|\n";
  for (const ForgettingDirection& d : directions) {
    out << "| " << d.label << " | " << fixed(d.full_mean_abs_delta_first) << " | "
        << fixed(d.cpift_mean_abs_delta_first) << " | " << fixed(d.ratio, 3) << " |\n";
  }
  return out.str();
}

ForgettingBench bench_forgetting(const PipelineConfig& base_cfg,
                                 std::span<const std::uint64_t> seeds, double max_ratio) {
  if (base_cfg.suite.n_tasks != 2) throw Error("bench-forgetting needs a two-task suite");
  if (seeds.empty()) throw Error("bench-forgetting needs at least one seed");
  const auto t_start = std::chrono::steady_clock::now();
  ForgettingBench bench;
  bench.max_ratio = max_ratio;

  for (std::uint64_t seed : seeds) {
    PipelineConfig cfg = base_cfg;
    set_root_seed(cfg, seed);
    const Mlp model = make_model(cfg);
    const std::vector<TaskDataset> tasks = make_conflict_suite(resolved_suite(cfg));

    // Probes and cores do not depend on the order.
    const ParameterSnapshot theta0 = phase_init(cfg, model);
    const std::vector<ParameterSnapshot> probe_list = phase_probe(cfg, model, theta0, tasks);
    const auto probes = keyed(tasks, probe_list);
    const CoreResult cores = phase_cores(cfg, theta0, probe_list, tasks);

    for (int dir = 0; dir < 2; ++dir) {
      const std::string& a = tasks[dir].task_id;
      const std::string& b = tasks[1 - dir].task_id;
      TaskGroups staging;
      staging.groups = {{a}, {b}};
      staging.tau = cfg.grouping.tau;
      staging.order = cfg.grouping.order;
      staging.seed = cfg.grouping.seed;

      ForgettingRow row;
      row.seed = seed;
      row.first = a;
      row.second = b;

      TrainConfig tcfg = cfg.train;
      tcfg.seed = phase_seeds(cfg).main_sft;
      MultiStageOptions plain;
      plain.freeze = false;
      const MultiStageResult full =
          run_multistage(model, theta0, staging, cores.cores, tasks, tcfg, plain);
      row.full_first_before = to_percent(full.stages[0].scores_after.at(a));
      row.full_first_after = to_percent(full.stages[1].scores_after.at(a));
      row.full_second_before = to_percent(full.stages[1].scores_after.at(b));
      row.full_second_after = to_percent(full.stages[1].scores_after.at(b));

      const Downstream d =
          run_downstream(cfg, model, theta0, probes, cores.cores, staging, tasks);
      const auto final_acc = evaluate_all(model, d.consolidation.theta_final, tasks);
      row.cpift_first_before = to_percent(d.main.stages[0].scores_after.at(a));
      row.cpift_first_after = to_percent(final_acc.at(a));
      row.cpift_second_before = to_percent(d.main.stages[1].scores_after.at(b));
      row.cpift_second_after = to_percent(final_acc.at(b));
      bench.rows.push_back(row);
    }
  }

  for (int dir = 0; dir < 2; ++dir) {
    ForgettingDirection d;
    std::vector<double> full, cpift;
    for (std::size_t i = static_cast<std::size_t>(dir); i < bench.rows.size(); i += 2) {
      const ForgettingRow& r = bench.rows[i];
      d.label = r.first + "->" + r.second;
      full.push_back(std::abs(r.full_delta_first()));
      cpift.push_back(std::abs(r.cpift_delta_first()));
    }
    d.full_mean_abs_delta_first = mean(full);
    d.cpift_mean_abs_delta_first = mean(cpift);
    if (d.full_mean_abs_delta_first > 0.0) {
      d.ratio = d.cpift_mean_abs_delta_first / d.full_mean_abs_delta_first;
    } else {
      d.ratio = d.cpift_mean_abs_delta_first == 0.0 ? 0.0
                                                    : std::numeric_limits<double>::infinity();
    }
    bench.directions.push_back(d);
  }
  bench.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return bench;
}

// ---------------------------------------------------------------------------
// Stage-4 modes

bool Stage4Bench::passed() const {
  if (untrained.empty()) return false;
  for (const auto& [task, acc0] : untrained) {
    if (!(multi_stage.at(task) > acc0) || !(single_stage.at(task) > acc0)) return false;
  }
  return true;
}

json Stage4Bench::to_json() const {
  return {{"untrained", untrained},
          {"fused", fused},
          {"multi_stage", multi_stage},
          {"single_stage", single_stage},
          {"multi_stage_avg_norm_score", multi_avg_norm},
          {"single_stage_avg_norm_score", single_avg_norm},
          {"passed", passed()}};
}

std::string Stage4Bench::markdown() const {
  std::ostringstream out;
  out << "| task | untrained | fused | multi_stage | single_stage |\n|---|---|---|---|---|\n";
  for (const auto& [task, acc0] : untrained) {
    out << "| " << task << " | " << fixed(to_percent(acc0)) << " | "
        << fixed(to_percent(fused.at(task))) << " | " << fixed(to_percent(multi_stage.at(task)))
        << " | " << fixed(to_percent(single_stage.at(task))) << " |\n";
  }
  out << "| Avg. Norm. Score | | | " << fixed(multi_avg_norm) << " | " << fixed(single_avg_norm)
      << " |\n";
  return out.str();
}

Stage4Bench bench_stage4(const PipelineConfig& base_cfg) {
  PipelineConfig cfg = base_cfg;
  cfg.stage4.mode = Stage4Mode::multi_stage;
  const Mlp model = make_model(cfg);
  const std::vector<TaskDataset> tasks = make_conflict_suite(resolved_suite(cfg));
  const CpiftRun run = run_cpift(cfg, model, tasks);

  PipelineConfig single_cfg = cfg;
  single_cfg.stage4.mode = Stage4Mode::single_stage;
  const MultiStageResult single =
      phase_consolidate(single_cfg, model, run.fused, run.staging, run.cores.cores, tasks);

  Stage4Bench bench;
  bench.untrained = evaluate_all(model, run.theta0, tasks);
  bench.fused = evaluate_all(model, run.fused, tasks);
  bench.multi_stage = evaluate_all(model, run.final_model(), tasks);
  bench.single_stage = evaluate_all(model, single.theta_final, tasks);
  bench.multi_avg_norm = normalized_report(bench.multi_stage).avg_norm_score;
  bench.single_avg_norm = normalized_report(bench.single_stage).avg_norm_score;
  return bench;
}

// ---------------------------------------------------------------------------
// Imbalance

std::size_t ImbalanceBench::target_wins() const {
  std::size_t wins = 0;
  for (const ImbalanceRow& r : rows) {
    if (r.cpift.at(target) >= r.full_sft.at(target)) ++wins;
  }
  return wins;
}

std::map<std::string, double> ImbalanceBench::mean_drop() const {
  std::map<std::string, std::vector<double>> drops;
  for (const ImbalanceRow& r : rows) {
    for (const auto& [task, full] : r.full_sft) {
      if (task == target) continue;
      drops[task].push_back(to_percent(full) - to_percent(r.cpift.at(task)));
    }
  }
  std::map<std::string, double> out;
  for (const auto& [task, xs] : drops) out[task] = mean(xs);
  return out;
}

bool ImbalanceBench::passed() const {
  if (rows.empty()) return false;
  // Majority of seeds on the undersampled task.
  if (2 * target_wins() <= rows.size()) return false;
  for (const auto& [task, drop] : mean_drop()) {
    if (drop > max_mean_drop) return false;
  }
  return true;
}

json ImbalanceBench::to_json() const {
  json rows_j = json::array();
  for (const ImbalanceRow& r : rows) {
    rows_j.push_back({{"seed", r.seed}, {"full_sft", r.full_sft}, {"cpift", r.cpift}});
  }
  return {{"target", target},
          {"fraction", fraction},
          {"rows", rows_j},
          {"target_wins", target_wins()},
          {"mean_drop", mean_drop()},
          {"max_mean_drop", max_mean_drop},
          {"passed", passed()}};
}

std::string ImbalanceBench::markdown() const {
  std::ostringstream out;
  out << "| seed | task | Full SFT | CPI-FT |\n|---|---|---|---|\n";
  for (const ImbalanceRow& r : rows) {
    for (const auto& [task, full] : r.full_sft) {
      out << "| " << r.seed << " | " << task << (task == target ? " (undersampled)" : "")
          << " | " << fixed(to_percent(full)) << " | " << fixed(to_percent(r.cpift.at(task)))
          << " |\n";
    }
  }
  out << "\nCPI-FT >= Full SFT on " << target << ": " << target_wins() << "/" << rows.size()
      << " seeds\n";
  return out.str();
}

ImbalanceBench bench_imbalance(const PipelineConfig& base_cfg,
                               std::span<const std::uint64_t> seeds, std::size_t target_index,
                               double fraction) {
  if (target_index >= base_cfg.suite.n_tasks) throw Error("target task index out of range");
  ImbalanceBench bench;
  bench.fraction = fraction;
  bench.target = task_id_for(target_index, base_cfg.suite.n_tasks);
  for (std::uint64_t seed : seeds) {
    PipelineConfig cfg = base_cfg;
    set_root_seed(cfg, seed);
    const Mlp model = make_model(cfg);
    std::vector<TaskDataset> tasks = make_conflict_suite(resolved_suite(cfg));
    tasks[target_index] =
        undersample_task(tasks[target_index], fraction, derive_seed(seed, "undersample"));

    const CpiftRun run = run_cpift(cfg, model, tasks);
    const ParameterSnapshot full = phase_baseline(cfg, model, run.theta0, tasks);
    ImbalanceRow row;
    row.seed = seed;
    row.full_sft = evaluate_all(model, full, tasks);
    row.cpift = evaluate_all(model, run.final_model(), tasks);
    bench.rows.push_back(std::move(row));
  }
  return bench;
}

// ---------------------------------------------------------------------------
// Tau sweep

json TauSweep::to_json() const {
  json arr = json::array();
  for (const TauRow& r : rows) {
    arr.push_back({{"tau", r.tau},
                   {"groups", r.groups},
                   {"staging", r.staging},
                   {"avg_norm_score", r.avg_norm_score}});
  }
  return arr;
}

std::string TauSweep::markdown() const {
  std::ostringstream out;
  out << "| tau | K | Avg. Norm. Score |\n|---|---|---|\n";
  for (const TauRow& r : rows) {
    out << "| " << fixed(r.tau) << " | " << r.groups << " | " << fixed(r.avg_norm_score)
        << " |\n";
  }
  return out.str();
}

std::vector<double> default_tau_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i * 0.05);
  return grid;
}

TauSweep sweep_tau(const PipelineConfig& base_cfg, std::span<const double> taus) {
  const Mlp model = make_model(base_cfg);
  const std::vector<TaskDataset> tasks = make_conflict_suite(resolved_suite(base_cfg));
  const ParameterSnapshot theta0 = phase_init(base_cfg, model);
  const std::vector<ParameterSnapshot> probe_list = phase_probe(base_cfg, model, theta0, tasks);
  const auto probes = keyed(tasks, probe_list);
  const CoreResult cores = phase_cores(base_cfg, theta0, probe_list, tasks);

  TauSweep sweep;
  std::map<std::vector<std::vector<std::string>>, double> cache;
  for (double tau : taus) {
    PipelineConfig cfg = base_cfg;
    cfg.grouping.tau = tau;
    const GroupResult g = phase_group(cfg, cores.cores);
    TauRow row;
    row.tau = tau;
    row.groups = g.groups.size();
    row.staging = g.groups.groups;
    auto hit = cache.find(g.groups.groups);
    if (hit == cache.end()) {
      const Downstream d = run_downstream(cfg, model, theta0, probes, cores.cores, g.groups, tasks);
      const auto final_acc = evaluate_all(model, d.consolidation.theta_final, tasks);
      hit = cache.emplace(g.groups.groups,
                          normalized_report(final_acc).avg_norm_score)
                .first;
    }
    row.avg_norm_score = hit->second;
    sweep.rows.push_back(std::move(row));
  }
  return sweep;
}

}  // namespace cpift
