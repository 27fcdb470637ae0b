#include <algorithm>
#include <charconv>
#include <chrono>
#include <sstream>

#include "cpift/error.hpp"
#include "cpift/pipeline.hpp"

namespace cpift {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRecordFile = "run_record.json";

// Artifact layout under the output directory.
namespace artifact {
constexpr const char* suite = "suite.json";
constexpr const char* theta0 = "theta0.snp";
constexpr const char* similarity = "similarity.json";
constexpr const char* groups = "groups.json";
constexpr const char* base = "base.snp";
constexpr const char* main_log = "main_sft.jsonl";
constexpr const char* fused = "fused.snp";
constexpr const char* fusion_report = "fusion_report.json";
constexpr const char* final_model = "final.snp";
constexpr const char* consolidate_log = "consolidate.jsonl";
constexpr const char* baseline = "baseline.snp";
constexpr const char* baseline_log = "baseline.jsonl";
constexpr const char* eval = "eval.json";

std::string probe(const std::string& id) { return "probes/" + id + ".snp"; }
std::string core(const std::string& id) { return "cores/" + id + ".json"; }
}  // namespace artifact

json metrics_to_json(const EvalMetrics& m) { return m.to_json(); }

EvalMetrics metrics_from_json(const json& j) {
  EvalMetrics m;
  m.per_task_accuracy = j.at("per_task_accuracy").get<std::map<std::string, double>>();
  m.normalized_scores = j.at("normalized_scores").get<std::map<std::string, double>>();
  m.avg_norm_score = j.at("avg_norm_score").get<double>();
  m.forgetting = j.at("forgetting").get<std::map<std::string, double>>();
  return m;
}

// Shared state for one phase invocation: resolved config, model, suite.
struct Context {
  PipelineConfig cfg;
  fs::path dir;
  Mlp model;
  std::vector<TaskDataset> tasks;
  PipelineRunRecord record;

  explicit Context(const PipelineConfig& c)
      : cfg(c), dir(c.output_dir), model(make_model(c)), tasks(make_conflict_suite(resolved_suite(c))) {
    if (dir.empty()) throw Error("output_dir is not set");
    fs::create_directories(dir);
    if (fs::exists(dir / kRecordFile)) record = load_record(dir);
    record.config = config_to_json(cfg);
    const PhaseSeeds s = phase_seeds(cfg);
    record.seeds = {{"root", s.root},         {"suite", s.suite},
                    {"init", s.init},         {"grouping", s.grouping},
                    {"main_sft", s.main_sft}, {"consolidate", s.consolidate},
                    {"sample", s.sample},     {"baseline", s.baseline}};
  }

  fs::path path(const std::string& name) const { return dir / name; }

  void put_snapshot(const std::string& key, const std::string& rel, const ParameterSnapshot& s) {
    write_snapshot(s, path(rel));
    record.artifacts[key] = rel;
  }

  void put_json(const std::string& key, const std::string& rel, const json& j) {
    write_json(path(rel), j);
    record.artifacts[key] = rel;
  }

  void put_text(const std::string& key, const std::string& rel, const std::string& text) {
    write_text(path(rel), text);
    record.artifacts[key] = rel;
  }

  ParameterSnapshot snapshot(const std::string& rel) const {
    const fs::path p = path(rel);
    if (!fs::exists(p)) throw Error("missing artifact " + p.string());
    ParameterSnapshot s = read_snapshot(p);
    model.check_compatible(s);
    return s;
  }

  std::map<std::string, ParameterSnapshot> probes() const {
    std::map<std::string, ParameterSnapshot> out;
    for (const TaskDataset& t : tasks) out.emplace(t.task_id, snapshot(artifact::probe(t.task_id)));
    return out;
  }

  std::vector<ParameterSnapshot> probe_list() const {
    std::vector<ParameterSnapshot> out;
    for (const TaskDataset& t : tasks) out.push_back(snapshot(artifact::probe(t.task_id)));
    return out;
  }

  std::map<std::string, CoreRegion> cores() const {
    std::map<std::string, CoreRegion> out;
    for (const TaskDataset& t : tasks) {
      const fs::path p = path(artifact::core(t.task_id));
      if (!fs::exists(p)) throw Error("missing artifact " + p.string());
      out[t.task_id] = load_core(p);
    }
    return out;
  }

  TaskGroups groups() const {
    const fs::path p = path(artifact::groups);
    if (!fs::exists(p)) throw Error("missing artifact " + p.string());
    return load_groups(p);
  }

  void put_metrics(const std::string& name, const ParameterSnapshot& params) {
    record.metrics[name] = normalized_report(evaluate_all(model, params, tasks));
  }
};

void mark_done(PipelineRunRecord& record, const std::string& phase) {
  auto it = std::find(record.phases.begin(), record.phases.end(), phase);
  if (it == record.phases.end()) record.phases.push_back(phase);
}

void execute_phase(Context& ctx, std::string_view phase) {
  const std::string name(phase);
  if (phase == "gen-suite") {
    ctx.put_json("suite", artifact::suite, suite_to_json(resolved_suite(ctx.cfg)));
  } else if (phase == "probe") {
    const ParameterSnapshot theta0 = phase_init(ctx.cfg, ctx.model);
    ctx.put_snapshot("theta0", artifact::theta0, theta0);
    const auto probes = phase_probe(ctx.cfg, ctx.model, theta0, ctx.tasks);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const std::string& id = ctx.tasks[i].task_id;
      ctx.put_snapshot("probe/" + id, artifact::probe(id), probes[i]);
    }
    ctx.put_metrics("untrained", theta0);
  } else if (phase == "cores") {
    const CoreResult cores =
        phase_cores(ctx.cfg, ctx.snapshot(artifact::theta0), ctx.probe_list(), ctx.tasks);
    for (const auto& [id, core] : cores.cores) {
      save_core(core, ctx.path(artifact::core(id)));
      ctx.record.artifacts["core/" + id] = artifact::core(id);
    }
  } else if (phase == "group") {
    const GroupResult g = phase_group(ctx.cfg, ctx.cores());
    ctx.put_json("similarity", artifact::similarity, similarity_to_json(g.similarity, g.task_ids));
    ctx.put_json("groups", artifact::groups, groups_to_json(g.groups));
    ctx.record.groups = groups_to_json(g.groups);
  } else if (phase == "train-stages") {
    JsonLinesLog log;
    const MultiStageResult r =
        phase_train_stages(ctx.cfg, ctx.model, ctx.snapshot(artifact::theta0), ctx.groups(),
                           ctx.cores(), ctx.tasks, log.sink());
    ParameterSnapshot base = r.theta_final;
    SnapshotMeta meta = base.meta();
    meta["stage"] = "base";
    base = base.with_meta(std::move(meta));
    ctx.put_snapshot("base", artifact::base, base);
    ctx.put_text("main_sft_log", artifact::main_log, log.text());
    ctx.record.stages["main"] = stages_to_json(r);
    ctx.put_metrics("base", base);
  } else if (phase == "fuse") {
    auto [fused, report] =
        phase_fuse(ctx.cfg, ctx.snapshot(artifact::base), ctx.snapshot(artifact::theta0),
                   ctx.probes(), ctx.cores(), ctx.groups());
    ctx.put_snapshot("fused", artifact::fused, fused);
    ctx.put_json("fusion_report", artifact::fusion_report, report.to_json());
    ctx.put_metrics("fused", fused);
  } else if (phase == "consolidate") {
    JsonLinesLog log;
    const MultiStageResult r = phase_consolidate(ctx.cfg, ctx.model, ctx.snapshot(artifact::fused),
                                                 ctx.groups(), ctx.cores(), ctx.tasks, log.sink());
    ctx.put_snapshot("final", artifact::final_model, r.theta_final);
    ctx.put_text("consolidate_log", artifact::consolidate_log, log.text());
    ctx.record.stages["consolidate"] = stages_to_json(r);
  } else if (phase == "baseline") {
    JsonLinesLog log;
    const ParameterSnapshot b = phase_baseline(ctx.cfg, ctx.model, ctx.snapshot(artifact::theta0),
                                               ctx.tasks, log.sink());
    ctx.put_snapshot("baseline", artifact::baseline, b);
    ctx.put_text("baseline_log", artifact::baseline_log, log.text());
    ctx.put_metrics("full_sft", b);
  } else if (phase == "eval") {
    const ParameterSnapshot fin = ctx.snapshot(artifact::final_model);
    EvalMetrics m = normalized_report(evaluate_all(ctx.model, fin, ctx.tasks));
    if (ctx.record.stages.contains("main")) {
      m.forgetting = pipeline_forgetting(ctx.record.stages.at("main"), m.per_task_accuracy);
    }
    ctx.record.metrics["final"] = m;
    ctx.put_json("eval", artifact::eval, m.to_json());
  } else {
    throw Error("unknown phase: " + name);
  }
  mark_done(ctx.record, name);
}

void run_tagged(Context& ctx, std::string_view phase) {
  const auto start = std::chrono::steady_clock::now();
  try {
    execute_phase(ctx, phase);
  } catch (const std::exception& e) {
    write_json(ctx.path(kRecordFile), ctx.record.to_json());
    throw Error("[" + std::string(phase) + "] " + e.what());
  }
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  ctx.record.wall_seconds[std::string(phase)] = elapsed.count();
  write_json(ctx.path(kRecordFile), ctx.record.to_json());
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string fixed(double v, int digits) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, end);
}

// Display order for models in reports.
const std::vector<std::string> kModelOrder = {"untrained", "full_sft", "base", "fused", "final"};

std::string model_label(const std::string& key) {
  if (key == "untrained") return "Untrained";
  if (key == "full_sft") return "Full SFT";
  if (key == "base") return "Multi-Stage (pre-fusion)";
  if (key == "fused") return "Fused (before consolidation)";
  if (key == "final") return "CPI-FT";
  return key;
}

std::vector<std::string> ordered_models(const PipelineRunRecord& record) {
  std::vector<std::string> out;
  for (const std::string& k : kModelOrder) {
    if (record.metrics.contains(k)) out.push_back(k);
  }
  for (const auto& [k, m] : record.metrics) {
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

const EvalMetrics& headline(const PipelineRunRecord& record) {
  if (record.metrics.contains("final")) return record.metrics.at("final");
  return record.metrics.at(ordered_models(record).back());
}

}  // namespace

// ---------------------------------------------------------------------------

json PipelineRunRecord::to_json() const {
  json j;
  j["config"] = config;
  j["phases"] = phases;
  j["artifacts"] = artifacts;
  j["wall_seconds"] = wall_seconds;
  j["seeds"] = seeds;
  json m = json::object();
  for (const auto& [name, metrics] : metrics) m[name] = metrics_to_json(metrics);
  j["metrics"] = std::move(m);
  j["groups"] = groups;
  j["stages"] = stages;
  return j;
}

PipelineRunRecord PipelineRunRecord::from_json(const json& j) {
  PipelineRunRecord r;
  try {
    r.config = j.value("config", json::object());
    r.phases = j.value("phases", std::vector<std::string>{});
    r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    r.wall_seconds = j.value("wall_seconds", std::map<std::string, double>{});
    r.seeds = j.value("seeds", std::map<std::string, std::uint64_t>{});
    if (j.contains("metrics")) {
      for (const auto& [name, m] : j.at("metrics").items()) r.metrics[name] = metrics_from_json(m);
    }
    r.groups = j.value("groups", json());
    r.stages = j.value("stages", json::object());
  } catch (const json::exception& e) {
    throw Error(std::string("malformed run record: ") + e.what());
  }
  return r;
}

PipelineRunRecord load_record(const fs::path& output_dir) {
  return PipelineRunRecord::from_json(read_json(output_dir / kRecordFile));
}

PipelineRunRecord run_phase(const PipelineConfig& cfg, std::string_view phase) {
  Context ctx(cfg);
  run_tagged(ctx, phase);
  return ctx.record;
}

PipelineRunRecord run_pipeline(const PipelineConfig& cfg) {
  if (cfg.output_dir.empty()) throw Error("output_dir is not set");
  fs::create_directories(cfg.output_dir);
  fs::remove(cfg.output_dir / kRecordFile);
  Context ctx(cfg);
  std::vector<std::string> phases = {"gen-suite",   "probe", "cores",       "group",
                                     "train-stages", "fuse",  "consolidate"};
  if (cfg.run_baseline) phases.push_back("baseline");
  phases.push_back("eval");
  for (const std::string& p : phases) run_tagged(ctx, p);

  emit_report(ctx.record, ReportFormat::json, ctx.path("report.json"));
  emit_report(ctx.record, ReportFormat::csv, ctx.path("report.csv"));
  emit_report(ctx.record, ReportFormat::markdown, ctx.path("report.md"));
  ctx.record.artifacts["report_json"] = "report.json";
  ctx.record.artifacts["report_csv"] = "report.csv";
  ctx.record.artifacts["report_md"] = "report.md";
  write_json(ctx.path(kRecordFile), ctx.record.to_json());
  return ctx.record;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::json;
  if (text == "csv") return ReportFormat::csv;
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  throw Error("unknown report format: " + std::string(text));
}

std::string render_report(const PipelineRunRecord& record, ReportFormat format) {
  if (record.metrics.empty()) throw Error("no completed phases");
  const EvalMetrics& main = headline(record);
  const std::vector<std::string> models = ordered_models(record);

  switch (format) {
    case ReportFormat::json: {
      json j = main.to_json();
      json per_model = json::object();
      for (const std::string& k : models) per_model[k] = record.metrics.at(k).to_json();
      j["models"] = std::move(per_model);
      j["groups"] = record.groups;
      j["phases"] = record.phases;
      return j.dump(2) + "\n";
    }
    case ReportFormat::csv: {
      std::ostringstream out;
      out << "model,task,accuracy,normalized_score,forgetting\n";
      for (const std::string& k : models) {
        const EvalMetrics& m = record.metrics.at(k);
        for (const auto& [task, acc] : m.per_task_accuracy) {
          out << k << ',' << task << ',' << format_double(acc) << ','
              << format_double(m.normalized_scores.at(task)) << ',';
          if (m.forgetting.contains(task)) out << format_double(m.forgetting.at(task));
          out << '\n';
        }
        // Macro average goes in the normalized_score column.
        out << k << ",avg_norm_score,," << format_double(m.avg_norm_score) << ",\n";
      }
      return out.str();
    }
    case ReportFormat::markdown: {
      std::ostringstream out;
      const auto& tasks = main.per_task_accuracy;
      out << "## Per-task accuracy (%)\n\n| Method |";
      for (const auto& [task, acc] : tasks) out << ' ' << task << " |";
      out << " Avg. Norm. Score |\n|---|";
      for (std::size_t i = 0; i < tasks.size(); ++i) out << "---:|";
      out << "---:|\n";
      for (const std::string& k : models) {
        const EvalMetrics& m = record.metrics.at(k);
        out << "| " << model_label(k) << " |";
        for (const auto& [task, acc] : tasks) {
          out << ' ' << (m.per_task_accuracy.contains(task) ? fixed(to_percent(m.per_task_accuracy.at(task)), 1) : "-") << " |";
        }
        out << ' ' << fixed(m.avg_norm_score, 2) << " |\n";
      }
      if (!main.forgetting.empty()) {
        out << "\n## Forgetting after later stages (Δ, 0-100 scale)\n\n| Task | Δ |\n|---|---:|\n";
        for (const auto& [task, d] : main.forgetting) {
          out << "| " << task << " | " << (d >= 0 ? "+" : "") << fixed(d, 1) << " |\n";
        }
      }
      if (record.groups.is_object() && record.groups.contains("groups")) {
        out << "\n## Staging order\n\n";
        std::size_t k = 1;
        for (const json& g : record.groups.at("groups")) {
          out << k++ << ". " << g.dump() << '\n';
        }
      }
      return out.str();
    }
  }
  throw Error("unknown report format");
}

void emit_report(const PipelineRunRecord& record, ReportFormat format, const fs::path& path) {
  write_text(path, render_report(record, format));
}

}  // namespace cpift
