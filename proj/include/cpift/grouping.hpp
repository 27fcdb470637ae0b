#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpift/coreid.hpp"
#include "cpift/io.hpp"

namespace cpift {

enum class OrderStrategy { random, group_size_ascending, group_size_descending };

std::string_view to_string(OrderStrategy s);
OrderStrategy parse_order_strategy(std::string_view text);

struct GroupingConfig {
  double tau = 0.1;
  OrderStrategy order = OrderStrategy::random;
  std::uint64_t seed = 0;
};

// Pairwise Jaccard similarity between core regions; row-major n x n.
struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Ordered partition of task ids. Each group is sorted by id; the group
// order is the staging order.
struct TaskGroups {
  std::vector<std::vector<std::string>> groups;
  double tau = 0.0;
  OrderStrategy order = OrderStrategy::random;
  std::uint64_t seed = 0;

  std::size_t size() const { return groups.size(); }
  /// All task ids in staging order.
  std::vector<std::string> flattened() const;
};

double jaccard(const CoreRegion& a, const CoreRegion& b);

SimilarityMatrix similarity_matrix(std::span<const CoreRegion> regions);

/// Components of the graph with an edge (i, j) iff i != j and
/// sim(i, j) >= tau, then ordered by cfg.order. task_ids[i] names row i.
TaskGroups connected_components(const SimilarityMatrix& sim, std::span<const std::string> task_ids,
                                const GroupingConfig& cfg);

/// Reorders groups; deterministic in (strategy, seed) and independent of
/// the incoming group order.
TaskGroups order_groups(TaskGroups groups, const GroupingConfig& cfg);

json groups_to_json(const TaskGroups& groups);
TaskGroups groups_from_json(const json& j);
void save_groups(const TaskGroups& groups, const std::filesystem::path& path);
TaskGroups load_groups(const std::filesystem::path& path);

json similarity_to_json(const SimilarityMatrix& sim, std::span<const std::string> task_ids);

}  // namespace cpift
