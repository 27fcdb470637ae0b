#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cpift/io.hpp"
#include "cpift/tensorstore.hpp"

namespace cpift {

struct CoreConfig {
  double p_percent = 1.0;  // core size as a percentage of all parameters
  int probe_epochs = 1;
};

// Element-wise |theta_i - theta0| for one task.
struct DeltaMagnitudes {
  std::string task_id;
  std::vector<double> values;
};

// Top-p% indices of a task's update magnitudes, strictly increasing.
struct CoreRegion {
  std::string task_id;
  std::size_t total_dim = 0;
  std::vector<std::size_t> indices;
  double p_percent = 0.0;

  bool operator==(const CoreRegion&) const = default;
};

/// floor(p * D / 100), tolerant to representation error in p (p = 0.29,
/// D = 100 yields 29, not 28).
std::size_t core_size(double p_percent, std::size_t total_dim);

/// Throws "incompatible snapshots" unless both share the same layout.
DeltaMagnitudes delta_magnitudes(const ParameterSnapshot& theta0, const ParameterSnapshot& theta_i,
                                 std::string task_id = {});

/// Indices of the k = core_size(p, D) largest magnitudes. Ties at the
/// selection boundary go to the smaller index. Output sorted ascending.
CoreRegion select_core(const DeltaMagnitudes& delta, const CoreConfig& cfg);

/// Validates a region read from an external source.
void validate_core(const CoreRegion& region);

json core_to_json(const CoreRegion& region);
CoreRegion core_from_json(const json& j);

void save_core(const CoreRegion& region, const std::filesystem::path& path);
CoreRegion load_core(const std::filesystem::path& path);

}  // namespace cpift
