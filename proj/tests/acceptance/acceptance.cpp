// Acceptance gate: one PASS/FAIL line per criterion.
//
//   cpift_acceptance [--out DIR] [--configs DIR] [--only N ...] [--allow-fail N ...]
//
// Exit status is 0 when every selected criterion passes, or fails only in
// the --allow-fail list (those still print FAIL).

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "cpift/bench.hpp"
#include "cpift/error.hpp"
#include "cpift/rng.hpp"

using namespace cpift;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome(const fs::path&)> run;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save(const fs::path& dir, const std::string& name, const json& j, const std::string& md) {
  fs::create_directories(dir);
  std::ofstream(dir / (name + ".json")) << j.dump(2) << '\n';
  std::ofstream(dir / (name + ".md")) << md;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

json suite(std::size_t n_tasks, double conflict, std::size_t train = 2000, std::size_t test = 500) {
  return {{"n_tasks", n_tasks}, {"input_dim", 16},     {"classes", 2},
          {"conflict", conflict}, {"train_size", train}, {"test_size", test}};
}

// ---------------------------------------------------------------------------

fs::path g_configs = "configs";

PipelineConfig load(const std::string& name) { return parse_config(g_configs / name); }

Outcome forgetting(const fs::path& out) {
  // Two conflicting tasks trained one after the other; see the config for
  // the consolidation settings.
  const auto cfg = load("forgetting.json");
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  const ForgettingBench b = bench_forgetting(cfg, seeds, 0.6);
  save(out, "bench_forgetting", b.to_json(), b.markdown());
  std::string detail;
  for (const auto& d : b.directions) {
    detail += d.label + " |d| full " + fmt(d.full_mean_abs_delta_first, 2) + " cpift " +
              fmt(d.cpift_mean_abs_delta_first, 2) + " ratio " + fmt(d.ratio) + "; ";
  }
  detail += fmt(b.seconds, 1) + " s";
  return {b.passed() && b.seconds < 120.0, detail};
}

// Every core index whose owner wins (or is unopposed) carries the probe
// value bit-for-bit after fusion.
Outcome core_preservation(const fs::path&) {
  struct Case {
    std::size_t n_tasks;
    double conflict;
    std::vector<std::size_t> hidden;
    double p;
    std::string policy;
  };
  const std::vector<Case> cases = {{4, 0.5, {32, 32}, 5.0, "max_delta"},
                                   {4, 0.5, {32, 32}, 5.0, "last_writer"},
                                   {3, 0.2, {16}, 30.0, "max_delta"},
                                   {3, 0.9, {64, 64, 64}, 10.0, "max_delta"},
                                   {2, 1.0, {64, 64, 64}, 20.0, "last_writer"}};
  std::size_t checked = 0, conflicts = 0, bad = 0, max_dim = 0;
  for (const Case& c : cases) {
    json j = {{"suite", suite(c.n_tasks, c.conflict, 300, 100)},
              {"model", {{"hidden", c.hidden}}},
              {"core", {{"p_percent", c.p}}},
              {"train", {{"epochs", 1}}},
              {"fusion", {{"conflict_policy", c.policy}}},
              {"stage4", {{"epochs", 0}}}};
    const auto cfg = config_from_json(j);
    const Mlp model = make_model(cfg);
    const auto tasks = make_conflict_suite(resolved_suite(cfg));
    const CpiftRun run = run_cpift(cfg, model, tasks);
    const std::size_t dim = run.theta0.dim();
    max_dim = std::max(max_dim, dim);
    if (dim > 10000) return {false, "suite too large for exhaustive check"};

    std::vector<std::string> order = run.staging.flattened();
    std::map<std::string, std::vector<double>> delta;
    for (const auto& d : run.cores.deltas) delta[d.task_id] = d.values;
    std::vector<std::vector<std::string>> claims(dim);
    for (const std::string& id : order) {
      for (std::size_t idx : run.cores.cores.at(id).indices) claims[idx].push_back(id);
    }
    for (std::size_t idx = 0; idx < dim; ++idx) {
      if (claims[idx].empty()) continue;
      std::string owner = claims[idx].front();
      if (claims[idx].size() > 1) {
        ++conflicts;
        if (c.policy == "last_writer") {
          owner = claims[idx].back();
        } else {
          for (const std::string& id : claims[idx]) {
            if (delta[id][idx] > delta[owner][idx]) owner = id;
          }
        }
      }
      ++checked;
      if (!same_bits(run.fused.data()[idx], run.probes.at(owner).data()[idx])) ++bad;
    }
  }
  return {bad == 0 && checked > 0,
          std::to_string(checked) + " core indices over " + std::to_string(cases.size()) +
              " suites (max D " + std::to_string(max_dim) + ", " + std::to_string(conflicts) +
              " contested), " + std::to_string(bad) + " mismatches"};
}

// Frozen coordinates are bit-identical across every freezing stage.
Outcome freeze_exactness(const fs::path&) {
  std::size_t frozen_checked = 0, stages = 0, bad = 0;
  for (const std::string& mode : {"multi_stage", "single_stage"}) {
    for (const std::string& scope : {"prior_groups", "all_cores"}) {
      json j = {{"suite", suite(4, 0.7, 300, 100)},
                {"model", {{"hidden", {24, 24}}}},
                {"core", {{"p_percent", 8.0}}},
                {"grouping", {{"tau", 1.0}}},
                {"train", {{"epochs", 2}, {"learning_rate", 0.01}}},
                {"stage4",
                 {{"mode", mode}, {"freeze_scope", scope}, {"sampling_ratio", 0.5}, {"epochs", 2}}}};
      const auto cfg = config_from_json(j);
      const Mlp model = make_model(cfg);
      const auto tasks = make_conflict_suite(resolved_suite(cfg));
      const CpiftRun run = run_cpift(cfg, model, tasks);
      const std::size_t dim = run.theta0.dim();

      auto check = [&](const MultiStageResult& r, const ParameterSnapshot& start,
                       const TaskGroups& groups, FreezeScope sc) {
        for (std::size_t i = 0; i < r.stages.size(); ++i) {
          const ParameterSnapshot& before = i == 0 ? start : r.stages[i - 1].theta;
          const ParameterSnapshot& after = r.stages[i].theta;
          const FreezeMask mask = build_freeze_mask(groups, run.cores.cores, i + 1, dim, sc);
          ++stages;
          for (std::size_t idx = 0; idx < dim; ++idx) {
            if (mask.trainable(idx)) continue;
            ++frozen_checked;
            if (!same_bits(before.data()[idx], after.data()[idx])) ++bad;
          }
        }
      };
      check(run.main, run.theta0, run.staging, FreezeScope::prior_groups);
      TaskGroups consolidation_groups = run.staging;
      if (mode == "single_stage") consolidation_groups.groups = {run.staging.flattened()};
      check(run.consolidation, run.fused, consolidation_groups, cfg.stage4.freeze_scope);
    }
  }
  return {bad == 0 && frozen_checked > 0,
          std::to_string(frozen_checked) + " frozen coordinates over " + std::to_string(stages) +
              " stages, " + std::to_string(bad) + " changed"};
}

// select_core against a full descending sort with index tie-break.
Outcome topk_oracle(const fs::path&) {
  Rng rng(2024);
  std::size_t mismatches = 0, with_ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t dim = 10 + rng.below(4991);
    DeltaMagnitudes d;
    d.values.resize(dim);
    const bool ties = trial % 2 == 0;
    for (double& v : d.values) {
      v = std::abs(rng.normal());
      if (ties) v = std::round(v * 4.0) / 4.0;
    }
    with_ties += ties;
    CoreConfig cfg;
    cfg.p_percent = 0.01 + 99.99 * rng.uniform();
    const std::size_t k = core_size(cfg.p_percent, dim);

    std::vector<std::size_t> order(dim);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (d.values[a] != d.values[b]) return d.values[a] > d.values[b];
      return a < b;
    });
    std::vector<std::size_t> expect(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(expect.begin(), expect.end());

    if (k == 0) {
      bool threw = false;
      try {
        select_core(d, cfg);
      } catch (const Error&) {
        threw = true;
      }
      mismatches += !threw;
      continue;
    }
    if (select_core(d, cfg).indices != expect) ++mismatches;
  }
  return {mismatches == 0, "1000 vectors (" + std::to_string(with_ties) + " with ties), " +
                               std::to_string(mismatches) + " mismatches"};
}

Outcome slerp_geometry(const fs::path&) {
  Rng rng(77);
  std::size_t failures = 0;
  double worst_mid = 0, worst_lin = 0, worst_norm = 0;

  const auto mid = slerp_vec(std::vector<double>{1, 0}, std::vector<double>{0, 1}, 0.5);
  worst_mid = std::max(std::abs(mid.values[0] - std::numbers::sqrt2 / 2),
                       std::abs(mid.values[1] - std::numbers::sqrt2 / 2));

  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    const auto a = random_vector(rng, n);
    auto b = random_vector(rng, n, 3.0);
    if (trial % 10 == 0) b.assign(n, 0.0);
    for (double w : {0.0, 1.0}) {
      const auto r = slerp_vec(a, b, w);
      const auto& ref = w == 0.0 ? a : b;
      for (std::size_t i = 0; i < n; ++i) failures += !same_bits(r.values[i], ref[i]);
    }
    if (trial % 10 == 0) continue;

    // Orthonormal pair: midpoint is (u + v) / sqrt(2).
    std::vector<double> u = a, v = b;
    double nu = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    for (double& x : u) x /= nu;
    const double proj = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i] -= proj * u[i];
    const double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x /= nv;
    const auto m = slerp_vec(u, v, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      worst_mid = std::max(worst_mid, std::abs(m.values[i] - (u[i] + v[i]) / std::numbers::sqrt2));
    }

    const double w = rng.uniform();
    const auto r = slerp_vec(a, b, w);
    const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    const double nr = std::sqrt(std::inner_product(r.values.begin(), r.values.end(), r.values.begin(), 0.0));
    worst_norm = std::max(worst_norm, std::abs(nr - ((1 - w) * na + w * nb)));

    std::vector<double> c = a;
    const double k = 0.1 + 5.0 * rng.uniform();
    for (double& x : c) x *= k;
    const auto lin = slerp_vec(a, c, w);
    failures += lin.slerp;
    for (std::size_t i = 0; i < n; ++i) {
      worst_lin = std::max(worst_lin, std::abs(lin.values[i] - ((1 - w) * a[i] + w * c[i])));
    }
  }
  const bool pass = failures == 0 && worst_mid <= 1e-12 && worst_lin <= 1e-12 && worst_norm <= 1e-10;
  return {pass, "endpoint/branch failures " + std::to_string(failures) + ", midpoint err " +
                    sci(worst_mid) + ", collinear err " + sci(worst_lin) +
                    ", norm err " + sci(worst_norm)};
}

Outcome gradient_check(const fs::path&) {
  Rng rng(5150);
  const double h = 1e-5;
  double worst = 0;
  std::size_t coords = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> dims = {1 + rng.below(8)};
    const std::size_t hidden = rng.below(3);
    for (std::size_t l = 0; l < hidden; ++l) dims.push_back(1 + rng.below(12));
    dims.push_back(2 + rng.below(4));
    const Mlp m(dims);
    if (m.param_count() > 500) {
      --trial;
      continue;
    }
    const auto init = m.init(rng.next());
    std::vector<double> theta(init.data().begin(), init.data().end());
    for (double& t : theta) t += 0.3 * rng.normal();
    Dataset d;
    d.dim = dims.front();
    for (int i = 0; i < 8; ++i) {
      d.push_back(random_vector(rng, d.dim), static_cast<std::uint32_t>(rng.below(dims.back())));
    }
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<double> grad(theta.size());
    m.loss_and_grad(theta, d, rows, {}, grad);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      std::vector<double> plus = theta, minus = theta;
      plus[j] += h;
      minus[j] -= h;
      const double fd = (m.loss(plus, d, rows) - m.loss(minus, d, rows)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[j]), 1e-6});
      worst = std::max(worst, std::abs(fd - grad[j]) / denom);
      ++coords;
    }
  }
  return {worst < 1e-4, "20 models, " + std::to_string(coords) + " coordinates, max rel err " +
                            sci(worst)};
}

Outcome grouping_properties(const fs::path&) {
  Rng rng(31337);
  std::size_t violations = 0;
  const auto taus = default_tau_grid();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(11);
    const std::size_t dim = 50 + rng.below(200);
    std::vector<CoreRegion> regions;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> all(dim);
      std::iota(all.begin(), all.end(), 0);
      rng.shuffle(std::span<std::size_t>(all));
      all.resize(1 + rng.below(dim / 3));
      std::sort(all.begin(), all.end());
      CoreRegion r;
      r.task_id = "t" + std::to_string(i);
      r.total_dim = dim;
      r.indices = std::move(all);
      regions.push_back(std::move(r));
      ids.push_back("t" + std::to_string(i));
    }
    const SimilarityMatrix sim = similarity_matrix(regions);
    double max_off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) max_off = std::max(max_off, sim.at(i, j));
      }
    }
    std::size_t prev = 0;
    for (double tau : taus) {
      GroupingConfig cfg;
      cfg.tau = tau;
      const std::size_t k = connected_components(sim, ids, cfg).size();
      if (k < prev) ++violations;
      if (tau == 0.0 && k != 1) ++violations;
      if (tau > max_off && k != n) ++violations;
      prev = k;
    }
    GroupingConfig above;
    above.tau = std::nextafter(max_off, 2.0);
    if (above.tau <= 1.0 && connected_components(sim, ids, above).size() != n) ++violations;
  }
  return {violations == 0, "50 region sets x " + std::to_string(taus.size()) + " thresholds, " +
                               std::to_string(violations) + " violations"};
}

Outcome imbalance(const fs::path& out) {
  const auto cfg = load("imbalance.json");
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  const ImbalanceBench b = bench_imbalance(cfg, seeds, 0, 0.1);
  save(out, "bench_imbalance", b.to_json(), b.markdown());
  std::string detail = "target " + b.target + " wins " + std::to_string(b.target_wins()) + "/" +
                       std::to_string(b.rows.size()) + "; mean drop";
  for (const auto& [task, d] : b.mean_drop()) detail += " " + task + " " + fmt(d, 2);
  return {b.passed(), detail};
}

Outcome stage4(const fs::path& out) {
  const auto cfg = load("stage4.json");
  const Stage4Bench b = bench_stage4(cfg);
  save(out, "bench_stage4", b.to_json(), b.markdown());
  return {b.passed(), "avg norm multi " + fmt(b.multi_avg_norm, 2) + " single " +
                          fmt(b.single_avg_norm, 2)};
}

Outcome determinism(const fs::path& out) {
  std::vector<PipelineRunRecord> records;
  for (const char* run : {"determinism_a", "determinism_b"}) {
    json j = {{"suite", suite(4, 0.5, 500, 200)}, {"output_dir", (out / run).string()}, {"seed", 3}};
    records.push_back(run_pipeline(config_from_json(j)));
  }
  std::string differ;
  for (const char* f : {"final.snp", "report.json", "report.csv", "report.md"}) {
    const std::string a = slurp(out / "determinism_a" / f);
    if (a.empty() || a != slurp(out / "determinism_b" / f)) differ += std::string(" ") + f;
  }
  for (const auto& [name, m] : records[0].metrics) {
    if (m.to_json() != records[1].metrics.at(name).to_json()) differ += " metrics:" + name;
  }
  return {differ.empty(), differ.empty() ? "final.snp and reports byte-identical"
                                         : "differs:" + differ};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out_dir = "acceptance_out";
  std::vector<int> only, allow_fail;
  app.add_option("--out", out_dir, "Directory for bench reports");
  app.add_option("--configs", g_configs, "Directory holding the bench configs");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--allow-fail", allow_fail, "Criteria whose failure does not fail the run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "forgetting reduction", forgetting},
      {2, "core preservation", core_preservation},
      {3, "freeze exactness", freeze_exactness},
      {4, "top-k oracle", topk_oracle},
      {5, "slerp geometry", slerp_geometry},
      {6, "gradient check", gradient_check},
      {7, "grouping properties", grouping_properties},
      {8, "resource imbalance", imbalance},
      {9, "stage-4 modes", stage4},
      {10, "end-to-end determinism", determinism},
  };

  const fs::path out(out_dir);
  fs::create_directories(out);
  json summary = json::array();
  bool ok = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(out);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const std::chrono::duration<double> secs = std::chrono::steady_clock::now() - start;
    const bool allowed = std::find(allow_fail.begin(), allow_fail.end(), c.id) != allow_fail.end();
    if (!o.pass && !allowed) ok = false;
    std::printf("%s %2d %-24s %s [%.1fs]%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs.count(), !o.pass && allowed ? " (known, allowed)" : "");
    std::fflush(stdout);
    summary.push_back({{"id", c.id}, {"name", c.name}, {"pass", o.pass}, {"detail", o.detail},
                       {"seconds", secs.count()}});
  }
  std::ofstream(out / "acceptance.json") << summary.dump(2) << '\n';
  return ok ? 0 : 1;
}
