#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cpift/coreid.hpp"
#include "cpift/io.hpp"
#include "cpift/tensorstore.hpp"

namespace cpift {

enum class ConflictPolicy { max_delta, last_writer };

std::string_view to_string(ConflictPolicy p);
ConflictPolicy parse_conflict_policy(std::string_view text);

struct FusionConfig {
  double omega = 0.5;         // weight of the incoming probe in the blend
  double epsilon_rad = 1e-4;  // below this angle SLERP falls back to lerp
  ConflictPolicy conflict_policy = ConflictPolicy::max_delta;
};

void validate(const FusionConfig& cfg);

// Everything fusion needs from one task, in staging order. `delta` may be
// empty unless the conflict policy is max_delta.
struct TaskProbe {
  std::string task_id;
  ParameterSnapshot theta;
  CoreRegion core;
  DeltaMagnitudes delta;
};

struct BranchRecord {
  std::string tensor;
  std::string task_id;
  bool slerp = false;
  double angle_rad = 0.0;
  std::size_t coords = 0;  // non-core coordinates blended
};

struct FusionReport {
  std::map<std::string, std::size_t> overwritten;  // task -> indices written
  std::size_t conflicts = 0;                       // indices claimed by >= 2 cores
  std::map<std::string, std::size_t> conflicts_won;
  std::vector<BranchRecord> branches;

  json to_json() const;
};

struct SlerpResult {
  std::vector<double> values;
  bool slerp = false;  // false: linear interpolation (or an endpoint) was used
  double angle_rad = 0.0;
};

/// Interpolates direction on the great circle and norm linearly. omega = 0
/// and omega = 1 return the inputs bit-exactly. Falls back to element-wise
/// (1 - omega) a + omega b when the angle is below epsilon_rad, when either
/// input has zero norm, or when sin(angle) is too small to divide by.
SlerpResult slerp_vec(std::span<const double> a, std::span<const double> b, double omega,
                      double epsilon_rad = 1e-4);

/// Writes core coordinates from each probe into `base`. Indices claimed by
/// several probes are resolved by cfg.conflict_policy.
std::pair<ParameterSnapshot, FusionReport> overwrite_cores(const ParameterSnapshot& base,
                                                           std::span<const TaskProbe> probes,
                                                           const FusionConfig& cfg);

/// Blends non-core coordinates tensor by tensor: for each probe in order,
/// sub <- slerp_vec(sub, probe_sub, omega). `core_mask[j]` marks indices
/// that pass through untouched.
ParameterSnapshot fuse_noncore(const ParameterSnapshot& base, std::span<const TaskProbe> probes,
                               const std::vector<bool>& core_mask, const FusionConfig& cfg,
                               FusionReport* report = nullptr);

/// Non-core blending followed by core overwrite, so core values always come
/// from the probes verbatim.
std::pair<ParameterSnapshot, FusionReport> fuse(const ParameterSnapshot& base,
                                                std::span<const TaskProbe> probes,
                                                const FusionConfig& cfg);

}  // namespace cpift
