#include "cpift/coreid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpift/error.hpp"

namespace cpift {

std::size_t core_size(double p_percent, std::size_t total_dim) {
  if (!(p_percent > 0.0) || p_percent > 100.0) throw Error("p_percent out of (0,100]");
  const double exact = p_percent * static_cast<double>(total_dim) / 100.0;
  return static_cast<std::size_t>(std::floor(exact * (1.0 + 1e-12)));
}

DeltaMagnitudes delta_magnitudes(const ParameterSnapshot& theta0, const ParameterSnapshot& theta_i,
                                 std::string task_id) {
  if (!theta0.same_layout(theta_i)) throw Error("incompatible snapshots");
  const auto a = theta0.data();
  const auto b = theta_i.data();
  DeltaMagnitudes out{std::move(task_id), std::vector<double>(a.size())};
  for (std::size_t j = 0; j < a.size(); ++j) out.values[j] = std::fabs(b[j] - a[j]);
  return out;
}

CoreRegion select_core(const DeltaMagnitudes& delta, const CoreConfig& cfg) {
  const std::size_t dim = delta.values.size();
  const std::size_t k = core_size(cfg.p_percent, dim);
  if (k == 0) throw Error("core region would be empty; increase p or D");
  for (double v : delta.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("delta magnitudes must be finite and >= 0");
  }

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Strict total order: larger magnitude first, then smaller index.
  const auto ranks_before = [&](std::size_t a, std::size_t b) {
    if (delta.values[a] != delta.values[b]) return delta.values[a] > delta.values[b];
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(),
                   ranks_before);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return CoreRegion{delta.task_id, dim, std::move(order), cfg.p_percent};
}

void validate_core(const CoreRegion& region) {
  for (std::size_t i = 1; i < region.indices.size(); ++i) {
    if (region.indices[i] <= region.indices[i - 1]) throw Error("indices not strictly increasing");
  }
  if (!region.indices.empty() && region.indices.back() >= region.total_dim) {
    throw Error("index out of range");
  }
  if (region.indices.size() != core_size(region.p_percent, region.total_dim)) {
    throw Error("core size inconsistent with p_percent and total_dim");
  }
}

json core_to_json(const CoreRegion& region) {
  json j;
  j["task_id"] = region.task_id;
  j["p_percent"] = region.p_percent;
  j["total_dim"] = region.total_dim;
  j["indices"] = region.indices;
  return j;
}

CoreRegion core_from_json(const json& j) {
  CoreRegion region;
  try {
    region.task_id = j.at("task_id").get<std::string>();
    region.p_percent = j.at("p_percent").get<double>();
    region.total_dim = j.at("total_dim").get<std::size_t>();
    region.indices = j.at("indices").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed core region: ") + e.what());
  }
  validate_core(region);
  return region;
}

void save_core(const CoreRegion& region, const std::filesystem::path& path) {
  validate_core(region);
  write_json(path, core_to_json(region));
}

CoreRegion load_core(const std::filesystem::path& path) { return core_from_json(read_json(path)); }

}  // namespace cpift
