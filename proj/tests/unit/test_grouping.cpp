#include <doctest.h>

#include <algorithm>
#include <set>

#include "cpift/error.hpp"
#include "cpift/grouping.hpp"
#include "test_util.hpp"

using namespace cpift;
using cpift::testing::TempDir;

namespace {

CoreRegion region(std::vector<std::size_t> idx, std::size_t dim = 100) {
  CoreRegion r;
  r.total_dim = dim;
  r.indices = std::move(idx);
  return r;
}

SimilarityMatrix matrix3(double s01, double s12, double s02) {
  SimilarityMatrix m;
  m.n = 3;
  m.values = {1.0, s01, s02, s01, 1.0, s12, s02, s12, 1.0};
  return m;
}

const std::vector<std::string> kIds = {"t0", "t1", "t2"};

std::set<std::set<std::string>> as_sets(const TaskGroups& g) {
  std::set<std::set<std::string>> out;
  for (const auto& group : g.groups) out.insert({group.begin(), group.end()});
  return out;
}

// |A ∩ B| / |A ∪ B| via std::set algorithms.
double jaccard_oracle(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::vector<std::size_t> random_region(Rng& rng, std::size_t dim, std::size_t k) {
  std::vector<std::size_t> all(dim);
  for (std::size_t i = 0; i < dim; ++i) all[i] = i;
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("jaccard examples") {
  CHECK(jaccard(region({0, 1, 2}), region({1, 2, 3})) == 0.5);
  CHECK(jaccard(region({4, 7}), region({4, 7})) == 1.0);
  CHECK(jaccard(region({0, 1}), region({2, 3})) == 0.0);
  CHECK_THROWS_AS(jaccard(region({0}, 10), region({0}, 11)), Error);
}

TEST_CASE("similarity_matrix") {
  SUBCASE("single region") {
    const std::vector<CoreRegion> rs = {region({1, 2})};
    const auto m = similarity_matrix(rs);
    CHECK(m.n == 1);
    CHECK(m.values == std::vector<double>{1.0});
  }
  SUBCASE("disjoint") {
    const std::vector<CoreRegion> rs = {region({1, 2}), region({3, 4})};
    CHECK(similarity_matrix(rs).values == std::vector<double>{1.0, 0.0, 0.0, 1.0});
  }
  SUBCASE("matches the pairwise oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<CoreRegion> rs;
      std::vector<std::vector<std::size_t>> raw;
      for (int i = 0; i < 3; ++i) {
        raw.push_back(random_region(rng, 60, 10));
        rs.push_back(region(raw.back(), 60));
      }
      const auto m = similarity_matrix(rs);
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          CHECK(m.at(i, j) == doctest::Approx(jaccard_oracle(raw[i], raw[j])).epsilon(1e-15));
          CHECK(m.at(i, j) == m.at(j, i));
        }
      }
    }
  }
}

TEST_CASE("connected_components examples") {
  const auto m = matrix3(0.2, 0.15, 0.0);
  GroupingConfig cfg;
  cfg.order = OrderStrategy::group_size_ascending;
  cfg.tau = 0.1;
  CHECK(as_sets(connected_components(m, kIds, cfg)) ==
        std::set<std::set<std::string>>{{"t0", "t1", "t2"}});
  cfg.tau = 0.18;
  CHECK(as_sets(connected_components(m, kIds, cfg)) ==
        std::set<std::set<std::string>>{{"t0", "t1"}, {"t2"}});
  cfg.tau = 0.3;
  CHECK(connected_components(m, kIds, cfg).size() == 3);
  cfg.tau = 1.5;
  CHECK_THROWS_WITH_AS(connected_components(m, kIds, cfg), "tau out of [0,1]", Error);
}

TEST_CASE("edge rule is inclusive") {
  const auto m = matrix3(0.25, 0.0, 0.0);
  GroupingConfig cfg;
  cfg.tau = 0.25;
  CHECK(connected_components(m, kIds, cfg).size() == 2);
}

TEST_CASE("order_groups") {
  TaskGroups g;
  g.groups = {{"a", "b", "c"}, {"d"}, {"e", "f"}};
  GroupingConfig cfg;
  cfg.order = OrderStrategy::group_size_ascending;
  auto asc = order_groups(g, cfg);
  CHECK(asc.groups[0].size() == 1);
  CHECK(asc.groups[1].size() == 2);
  CHECK(asc.groups[2].size() == 3);
  cfg.order = OrderStrategy::group_size_descending;
  CHECK(order_groups(g, cfg).groups[0].size() == 3);

  cfg.order = OrderStrategy::random;
  cfg.seed = 42;
  CHECK(order_groups(g, cfg).groups == order_groups(g, cfg).groups);
  // Independent of the incoming order.
  TaskGroups reversed = g;
  std::reverse(reversed.groups.begin(), reversed.groups.end());
  CHECK(order_groups(reversed, cfg).groups == order_groups(g, cfg).groups);

  TaskGroups single;
  single.groups = {{"x", "y"}};
  for (auto s : {OrderStrategy::random, OrderStrategy::group_size_ascending,
                 OrderStrategy::group_size_descending}) {
    cfg.order = s;
    CHECK(order_groups(single, cfg).groups == single.groups);
  }
}

TEST_CASE("K(tau) is non-decreasing and hits both ends") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(9);
    std::vector<CoreRegion> rs;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      rs.push_back(region(random_region(rng, 80, 4 + rng.below(20)), 80));
      ids.push_back("t" + std::to_string(i));
    }
    const auto m = similarity_matrix(rs);
    double max_off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) max_off = std::max(max_off, m.at(i, j));
      }
    }
    std::size_t prev = 0;
    for (int step = 0; step <= 20; ++step) {
      GroupingConfig cfg;
      cfg.tau = step * 0.05;
      const std::size_t k = connected_components(m, ids, cfg).size();
      CHECK(k >= prev);
      prev = k;
      if (step == 0) CHECK(k == 1);
      if (cfg.tau > max_off) CHECK(k == n);
    }
  }
}

TEST_CASE("grouping is a partition and equivariant under relabeling") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 6;
    std::vector<CoreRegion> rs;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      rs.push_back(region(random_region(rng, 40, 8), 40));
      ids.push_back("t" + std::to_string(i));
    }
    GroupingConfig cfg;
    cfg.tau = 0.15;
    const auto g = connected_components(similarity_matrix(rs), ids, cfg);
    std::multiset<std::string> seen;
    for (const auto& group : g.groups) seen.insert(group.begin(), group.end());
    CHECK(seen == std::multiset<std::string>(ids.begin(), ids.end()));

    // Rename by a permutation of the rows.
    std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    std::vector<CoreRegion> rs2(n);
    std::vector<std::string> ids2(n);
    for (std::size_t i = 0; i < n; ++i) {
      rs2[i] = rs[perm[i]];
      ids2[i] = ids[perm[i]];
    }
    CHECK(as_sets(connected_components(similarity_matrix(rs2), ids2, cfg)) == as_sets(g));
  }
}

TEST_CASE("groups files") {
  TempDir dir("groups");
  TaskGroups g;
  g.groups = {{"t1"}, {"t0", "t2"}};
  g.tau = 0.2;
  g.seed = 5;
  save_groups(g, dir.path() / "g.json");
  const auto back = load_groups(dir.path() / "g.json");
  CHECK(back.groups == g.groups);
  CHECK(back.tau == g.tau);
  CHECK(back.seed == g.seed);

  json j = groups_to_json(g);
  j["groups"] = {{"t0"}, {"t0"}};
  CHECK_THROWS_AS(groups_from_json(j), Error);
  j["groups"] = {json::array()};
  CHECK_THROWS_AS(groups_from_json(j), Error);
}
