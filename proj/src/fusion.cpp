#include "cpift/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpift/error.hpp"

namespace cpift {

namespace {

constexpr double kMinSin = 1e-12;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> lerp(std::span<const double> a, std::span<const double> b, double omega) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - omega) * a[i] + omega * b[i];
  return out;
}

void check_compatible(const ParameterSnapshot& base, std::span<const TaskProbe> probes) {
  for (const TaskProbe& p : probes) {
    if (!base.same_layout(p.theta)) throw Error("incompatible snapshots: " + p.task_id);
    if (p.core.total_dim != base.dim()) throw Error("core region dimension mismatch: " + p.task_id);
    if (!p.core.indices.empty() && p.core.indices.back() >= base.dim()) {
      throw Error("index out of range");
    }
  }
}

}  // namespace

std::string_view to_string(ConflictPolicy p) {
  return p == ConflictPolicy::max_delta ? "max_delta" : "last_writer";
}

ConflictPolicy parse_conflict_policy(std::string_view text) {
  if (text == "max_delta") return ConflictPolicy::max_delta;
  if (text == "last_writer") return ConflictPolicy::last_writer;
  throw Error("unknown conflict policy: " + std::string(text));
}

void validate(const FusionConfig& cfg) {
  if (!(cfg.omega >= 0.0 && cfg.omega <= 1.0)) throw Error("omega out of [0,1]");
  if (!(cfg.epsilon_rad > 0.0 && cfg.epsilon_rad < std::numbers::pi)) {
    throw Error("epsilon_rad out of (0,pi)");
  }
}

json FusionReport::to_json() const {
  json j;
  j["overwritten"] = overwritten;
  j["conflicts"] = conflicts;
  j["conflicts_won"] = conflicts_won;
  json rows = json::array();
  for (const BranchRecord& b : branches) {
    rows.push_back({{"tensor", b.tensor},
                    {"task_id", b.task_id},
                    {"branch", b.slerp ? "slerp" : "linear"},
                    {"angle_rad", b.angle_rad},
                    {"coords", b.coords}});
  }
  j["branches"] = std::move(rows);
  return j;
}

SlerpResult slerp_vec(std::span<const double> a, std::span<const double> b, double omega,
                      double epsilon_rad) {
  if (a.size() != b.size()) throw Error("slerp_vec: length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw Error("slerp_vec: NaN input");
  }

  const double na = norm(a);
  const double nb = norm(b);
  SlerpResult out;
  if (na > 0.0 && nb > 0.0) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += (a[i] / na) * (b[i] / nb);
    out.angle_rad = std::acos(std::clamp(dot, -1.0, 1.0));
  }

  if (omega == 0.0) {
    out.values.assign(a.begin(), a.end());
    return out;
  }
  if (omega == 1.0) {
    out.values.assign(b.begin(), b.end());
    return out;
  }
  if (na == 0.0 && nb == 0.0) {
    out.values.assign(a.size(), 0.0);
    return out;
  }

  const double angle = out.angle_rad;
  const double sin_angle = std::sin(angle);
  if (na == 0.0 || nb == 0.0 || angle < epsilon_rad || sin_angle < kMinSin) {
    out.values = lerp(a, b, omega);
    return out;
  }

  const double wa = std::sin((1.0 - omega) * angle) / sin_angle;
  const double wb = std::sin(omega * angle) / sin_angle;
  const double radius = (1.0 - omega) * na + omega * nb;
  out.values.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.values[i] = radius * (wa * (a[i] / na) + wb * (b[i] / nb));
  }
  out.slerp = true;
  return out;
}

std::pair<ParameterSnapshot, FusionReport> overwrite_cores(const ParameterSnapshot& base,
                                                           std::span<const TaskProbe> probes,
                                                           const FusionConfig& cfg) {
  check_compatible(base, probes);
  if (cfg.conflict_policy == ConflictPolicy::max_delta) {
    for (const TaskProbe& p : probes) {
      if (p.delta.values.size() != base.dim()) {
        throw Error("missing deltas for max_delta policy: " + p.task_id);
      }
    }
  }

  const std::size_t dim = base.dim();
  // Winning probe per index, plus claim counts for conflict accounting.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> winner(dim, kNone);
  std::vector<std::uint32_t> claims(dim, 0);
  for (std::size_t t = 0; t < probes.size(); ++t) {
    for (std::size_t j : probes[t].core.indices) {
      ++claims[j];
      const std::size_t current = winner[j];
      if (current == kNone || cfg.conflict_policy == ConflictPolicy::last_writer) {
        winner[j] = t;
      } else if (probes[t].delta.values[j] > probes[current].delta.values[j]) {
        // Equal magnitudes keep the earlier task in staging order.
        winner[j] = t;
      }
    }
  }

  FusionReport report;
  for (const TaskProbe& p : probes) report.overwritten[p.task_id] = 0;
  std::vector<double> out(base.data().begin(), base.data().end());
  for (std::size_t j = 0; j < dim; ++j) {
    if (winner[j] == kNone) continue;
    const TaskProbe& p = probes[winner[j]];
    out[j] = p.theta.data()[j];
    ++report.overwritten[p.task_id];
    if (claims[j] > 1) {
      ++report.conflicts;
      ++report.conflicts_won[p.task_id];
    }
  }
  return {base.with_data(std::move(out)), std::move(report)};
}

ParameterSnapshot fuse_noncore(const ParameterSnapshot& base, std::span<const TaskProbe> probes,
                               const std::vector<bool>& core_mask, const FusionConfig& cfg,
                               FusionReport* report) {
  validate(cfg);
  check_compatible(base, probes);
  if (core_mask.size() != base.dim()) throw Error("core mask length mismatch");

  std::vector<double> out(base.data().begin(), base.data().end());
  std::vector<std::size_t> coords;
  std::vector<double> current;
  std::vector<double> incoming;
  for (const TensorMeta& t : base.tensors()) {
    coords.clear();
    for (std::size_t j = t.offset_elems; j < t.offset_elems + t.len_elems; ++j) {
      if (!core_mask[j]) coords.push_back(j);
    }
    if (coords.empty()) continue;

    current.resize(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) current[i] = out[coords[i]];
    for (const TaskProbe& p : probes) {
      incoming.resize(coords.size());
      for (std::size_t i = 0; i < coords.size(); ++i) incoming[i] = p.theta.data()[coords[i]];
      SlerpResult r = slerp_vec(current, incoming, cfg.omega, cfg.epsilon_rad);
      if (report != nullptr) {
        report->branches.push_back({t.name, p.task_id, r.slerp, r.angle_rad, coords.size()});
      }
      current = std::move(r.values);
    }
    for (std::size_t i = 0; i < coords.size(); ++i) out[coords[i]] = current[i];
  }
  return base.with_data(std::move(out));
}

std::pair<ParameterSnapshot, FusionReport> fuse(const ParameterSnapshot& base,
                                                std::span<const TaskProbe> probes,
                                                const FusionConfig& cfg) {
  validate(cfg);
  if (probes.empty()) return {base, FusionReport{}};
  check_compatible(base, probes);

  std::vector<bool> core_mask(base.dim(), false);
  for (const TaskProbe& p : probes) {
    for (std::size_t j : p.core.indices) core_mask[j] = true;
  }
  FusionReport blend_report;
  const ParameterSnapshot blended = fuse_noncore(base, probes, core_mask, cfg, &blend_report);
  auto [fused, report] = overwrite_cores(blended, probes, cfg);
  report.branches = std::move(blend_report.branches);
  return {std::move(fused), std::move(report)};
}

}  // namespace cpift
