#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cpift/coreid.hpp"
#include "cpift/error.hpp"
#include "cpift/io.hpp"
#include "test_util.hpp"

using namespace cpift;
using cpift::testing::TempDir;

namespace {

// Full descending sort by value, ties to the lower index; first k, ascending.
std::vector<std::size_t> topk_oracle(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

CoreRegion select(std::vector<double> values, double p) {
  return select_core({"t", std::move(values)}, {p, 1});
}

ParameterSnapshot vec(std::vector<double> v, const std::string& name = "w") {
  const std::size_t n = v.size();
  return ParameterSnapshot::from_tensors({{name, {n}, std::move(v)}});
}

}  // namespace

TEST_CASE("core_size") {
  CHECK(core_size(50, 4) == 2);
  CHECK(core_size(1, 1000) == 10);
  CHECK(core_size(100, 7) == 7);
  CHECK(core_size(1, 150) == 1);
  // 0.29 * 100 is 28.999999999999996 in binary64.
  CHECK(core_size(0.29, 100 * 100) == 29);
  CHECK(core_size(0.29 * 100, 100) == 29);
  CHECK_THROWS_AS(core_size(0, 10), Error);
  CHECK_THROWS_AS(core_size(100.5, 10), Error);
}

TEST_CASE("delta_magnitudes") {
  const auto d = delta_magnitudes(vec({1.0, -2.0}), vec({1.5, -2.5}), "t");
  CHECK(d.values == std::vector<double>{0.5, 0.5});
  CHECK(d.task_id == "t");
  CHECK(delta_magnitudes(vec({3.0, 4.0}), vec({3.0, 4.0})).values ==
        std::vector<double>{0.0, 0.0});
  CHECK_THROWS_WITH_AS(delta_magnitudes(vec({1.0}, "a"), vec({1.0}, "b")),
                       "incompatible snapshots", Error);
}

TEST_CASE("delta_magnitudes is symmetric") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    auto a = vec(cpift::testing::random_vector(rng, 30));
    auto b = vec(cpift::testing::random_vector(rng, 30));
    CHECK(delta_magnitudes(a, b).values == delta_magnitudes(b, a).values);
  }
}

TEST_CASE("select_core examples") {
  CHECK(select({0.5, 0.1, 0.9, 0.3}, 50).indices == std::vector<std::size_t>{0, 2});
  CHECK(select({0.5, 0.5, 0.5, 0.1}, 50).indices == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_WITH_AS(select({0.5, 0.1}, 1), "core region would be empty; increase p or D",
                       Error);
}

TEST_CASE("select_core matches the full-sort oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 10 + rng.below(4991);
    std::vector<double> v(d);
    const bool coarse = trial % 3 == 0;  // many ties
    for (double& x : v) x = coarse ? static_cast<double>(rng.below(5)) : std::abs(rng.normal());
    const std::size_t min_k = 1;
    const double p_min = 100.0 * static_cast<double>(min_k) / static_cast<double>(d);
    const double p = p_min + rng.uniform() * (100.0 - p_min);
    const std::size_t k = core_size(p, d);
    const CoreRegion r = select(v, p);
    REQUIRE(r.indices.size() == k);
    CHECK(r.indices == topk_oracle(v, k));
  }
}

TEST_CASE("selected magnitudes dominate unselected ones") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(200);
    for (double& x : v) x = static_cast<double>(rng.below(20));
    const CoreRegion r = select(v, 10 + rng.below(50));
    std::vector<bool> in(v.size(), false);
    double min_sel = 1e300;
    for (std::size_t j : r.indices) {
      in[j] = true;
      min_sel = std::min(min_sel, v[j]);
    }
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!in[j]) CHECK(v[j] <= min_sel);
    }
  }
}

TEST_CASE("select_core is permutation equivariant") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 50 + rng.below(200);
    std::vector<double> v(d);
    for (double& x : v) x = std::abs(rng.normal());  // distinct almost surely
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> permuted(d);
    for (std::size_t j = 0; j < d; ++j) permuted[j] = v[perm[j]];
    const double p = 5.0 + 30.0 * rng.uniform();
    std::vector<std::size_t> back;
    for (std::size_t j : select(permuted, p).indices) back.push_back(perm[j]);
    std::sort(back.begin(), back.end());
    CHECK(back == select(v, p).indices);
  }
}

TEST_CASE("core files") {
  TempDir dir("core");
  const CoreRegion r = select({0.5, 0.1, 0.9, 0.3, 0.7}, 40);
  save_core(r, dir.path() / "c.json");
  CHECK(load_core(dir.path() / "c.json") == r);

  json j = core_to_json(r);
  j["indices"] = {2, 2};
  write_json(dir.path() / "dup.json", j);
  CHECK_THROWS_WITH_AS(load_core(dir.path() / "dup.json"), "indices not strictly increasing",
                       Error);

  j = core_to_json(r);
  j["indices"] = {0, 9};
  write_json(dir.path() / "range.json", j);
  CHECK_THROWS_WITH_AS(load_core(dir.path() / "range.json"), "index out of range", Error);
}
