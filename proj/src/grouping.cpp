#include "cpift/grouping.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

namespace {

// Union-find with path halving and union by size.
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("tau out of [0,1]");
}

}  // namespace

std::string_view to_string(OrderStrategy s) {
  switch (s) {
    case OrderStrategy::random: return "random";
    case OrderStrategy::group_size_ascending: return "group_size_ascending";
    case OrderStrategy::group_size_descending: return "group_size_descending";
  }
  return "random";
}

OrderStrategy parse_order_strategy(std::string_view text) {
  if (text == "random") return OrderStrategy::random;
  if (text == "group_size_ascending") return OrderStrategy::group_size_ascending;
  if (text == "group_size_descending") return OrderStrategy::group_size_descending;
  throw Error("unknown order strategy: " + std::string(text));
}

std::vector<std::string> TaskGroups::flattened() const {
  std::vector<std::string> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

double jaccard(const CoreRegion& a, const CoreRegion& b) {
  if (a.total_dim != b.total_dim) throw Error("dimension mismatch");
  std::size_t common = 0;
  auto ia = a.indices.begin();
  auto ib = b.indices.begin();
  while (ia != a.indices.end() && ib != b.indices.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t unite = a.indices.size() + b.indices.size() - common;
  if (unite == 0) return 1.0;
  return static_cast<double>(common) / static_cast<double>(unite);
}

SimilarityMatrix similarity_matrix(std::span<const CoreRegion> regions) {
  if (regions.empty()) throw Error("similarity matrix needs at least one region");
  const std::size_t n = regions.size();
  SimilarityMatrix sim{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    sim.values[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = jaccard(regions[i], regions[j]);
      sim.values[i * n + j] = s;
      sim.values[j * n + i] = s;
    }
  }
  return sim;
}

TaskGroups connected_components(const SimilarityMatrix& sim, std::span<const std::string> task_ids,
                                const GroupingConfig& cfg) {
  check_tau(cfg.tau);
  if (task_ids.size() != sim.n) throw Error("task id count does not match similarity matrix");
  DisjointSets sets(sim.n);
  for (std::size_t i = 0; i < sim.n; ++i) {
    for (std::size_t j = i + 1; j < sim.n; ++j) {
      if (sim.at(i, j) >= cfg.tau) sets.unite(i, j);
    }
  }
  std::map<std::size_t, std::vector<std::string>> by_root;
  for (std::size_t i = 0; i < sim.n; ++i) by_root[sets.find(i)].push_back(task_ids[i]);

  TaskGroups out;
  out.tau = cfg.tau;
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    out.groups.push_back(std::move(members));
  }
  return order_groups(std::move(out), cfg);
}

TaskGroups order_groups(TaskGroups groups, const GroupingConfig& cfg) {
  for (const auto& g : groups.groups) {
    if (g.empty()) throw Error("empty task group");
  }
  // Canonical starting point: by smallest member id.
  std::sort(groups.groups.begin(), groups.groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  switch (cfg.order) {
    case OrderStrategy::random: {
      Rng rng(derive_seed(cfg.seed, "order_groups"));
      rng.shuffle(std::span(groups.groups));
      break;
    }
    case OrderStrategy::group_size_ascending:
      std::stable_sort(groups.groups.begin(), groups.groups.end(),
                       [](const auto& a, const auto& b) { return a.size() < b.size(); });
      break;
    case OrderStrategy::group_size_descending:
      std::stable_sort(groups.groups.begin(), groups.groups.end(),
                       [](const auto& a, const auto& b) { return a.size() > b.size(); });
      break;
  }
  groups.order = cfg.order;
  groups.seed = cfg.seed;
  return groups;
}

json groups_to_json(const TaskGroups& groups) {
  json j;
  j["tau"] = groups.tau;
  j["order_strategy"] = std::string(to_string(groups.order));
  j["seed"] = groups.seed;
  j["groups"] = groups.groups;
  return j;
}

TaskGroups groups_from_json(const json& j) {
  TaskGroups out;
  try {
    out.tau = j.at("tau").get<double>();
    out.order = parse_order_strategy(j.at("order_strategy").get<std::string>());
    out.seed = j.at("seed").get<std::uint64_t>();
    out.groups = j.at("groups").get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed groups file: ") + e.what());
  }
  check_tau(out.tau);
  std::set<std::string> seen;
  for (const auto& g : out.groups) {
    if (g.empty()) throw Error("empty task group");
    for (const auto& id : g) {
      if (!seen.insert(id).second) throw Error("task " + id + " appears in more than one group");
    }
  }
  if (out.groups.empty()) throw Error("groups file has no groups");
  return out;
}

void save_groups(const TaskGroups& groups, const std::filesystem::path& path) {
  write_json(path, groups_to_json(groups));
}

TaskGroups load_groups(const std::filesystem::path& path) {
  return groups_from_json(read_json(path));
}

json similarity_to_json(const SimilarityMatrix& sim, std::span<const std::string> task_ids) {
  json j;
  j["task_ids"] = std::vector<std::string>(task_ids.begin(), task_ids.end());
  json rows = json::array();
  for (std::size_t i = 0; i < sim.n; ++i) {
    rows.push_back(std::vector<double>(sim.values.begin() + static_cast<std::ptrdiff_t>(i * sim.n),
                                       sim.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * sim.n)));
  }
  j["values"] = std::move(rows);
  return j;
}

}  // namespace cpift
