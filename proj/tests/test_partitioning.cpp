#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "fedgdve/experiment.hpp"
#include "fedgdve/partitioning.hpp"
#include "test_support.hpp"

using namespace fedgdve;

namespace {

double ami(const std::vector<int>& a, const std::vector<int>& b) { return adjusted_mutual_information(a, b); }

const InteractionGraph* ml100k() {
  static const std::optional<InteractionGraph> g = []() -> std::optional<InteractionGraph> {
    if (!std::filesystem::exists(testing::ml100k_path())) return std::nullopt;
    return load_movielens(testing::ml100k_path()).graph;
  }();
  return g ? &*g : nullptr;
}

void check_disjoint(const InteractionGraph& g, const Partition& p) {
  std::set<Index> seen;
  std::size_t edges = p.global.graph.num_edges();
  for (Index u : p.plan.global_users) CHECK(seen.insert(u).second);
  for (std::size_t k = 0; k < p.clients.size(); ++k) {
    edges += p.clients[k].graph.num_edges();
    for (Index u : p.plan.client_users[k]) CHECK(seen.insert(u).second);
  }
  CHECK(edges == g.num_edges());
}

}  // namespace

TEST_SUITE("partitioning") {

TEST_CASE("frozen AMI values") {
  // Reference values from an independent implementation (arithmetic normalization).
  CHECK(ami({0, 0, 1, 1, 2, 2}, {0, 0, 1, 1, 1, 2}) == doctest::Approx(0.5023607027202738).epsilon(1e-10));
  CHECK(ami({0, 1, 2, 0, 1, 2, 0, 1, 2, 3}, {1, 1, 0, 0, 2, 2, 3, 3, 0, 1}) ==
        doctest::Approx(-0.10584186117911117).epsilon(1e-10));
  CHECK(ami({0, 0, 0, 1, 1, 1, 1, 2, 2}, {0, 0, 1, 1, 2, 2, 2, 2, 0}) ==
        doctest::Approx(0.16336542806719873).epsilon(1e-10));

  std::vector<int> a, b;
  for (int i = 0; i < 300; ++i) {
    a.push_back(((i * 7 + 3) % 11) % 6);
    b.push_back((i * i + 2 * i) % 5);
  }
  CHECK(ami(a, b) == doctest::Approx(-0.01176168820767088).epsilon(1e-9));

  std::vector<int> c, d;
  for (int i = 0; i < 500; ++i) {
    c.push_back(i % 10);
    d.push_back(i % 3 ? (i % 10) / 2 : (i * 13) % 7);
  }
  CHECK(ami(c, d) == doctest::Approx(0.3355244639660135).epsilon(1e-9));
}

TEST_CASE("AMI edge cases") {
  const std::vector<int> x{0, 1, 1, 2, 2, 2};
  CHECK(ami(x, x) == doctest::Approx(1.0));
  CHECK(ami({0, 0, 0}, {0, 1, 2}) == 0.0);
  CHECK_THROWS_AS(ami({0, 1}, {0}), PartitionError);

  Rng rng(1);
  std::vector<int> r1, r2;
  for (int i = 0; i < 10000; ++i) {
    r1.push_back(static_cast<int>(rng.uniform_index(10)));
    r2.push_back(static_cast<int>(rng.uniform_index(10)));
  }
  CHECK(std::abs(ami(r1, r2)) < 0.02);
}

TEST_CASE("degree deciles") {
  const std::vector<std::size_t> deg{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(degree_deciles(deg) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const std::vector<std::size_t> ties{4, 4, 4, 4};
  CHECK(degree_deciles(ties) == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("split basics") {
  Rng rng(2);
  const InteractionGraph g = testing::random_graph(60, 30, 0.1, rng);
  SUBCASE("single client takes everything") {
    Rng r(3);
    const Partition p = global_local_split(g, 0.0, 1, PartitionMode::kUniform, 0.5, r);
    CHECK(p.plan.global_users.empty());
    CHECK(p.clients[0].graph.num_edges() == g.num_edges());
  }
  SUBCASE("disjoint for any seed") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (PartitionMode mode : {PartitionMode::kUniform, PartitionMode::kDirichlet}) {
        Rng r(seed);
        const Partition p = global_local_split(g, 0.5, 4, mode, 0.5, r);
        check_disjoint(g, p);
        CHECK(p.global.graph.num_edges() >= g.num_edges() / 2);
        for (const auto& c : p.clients) CHECK(!c.user_origin.empty());
      }
    }
  }
  SUBCASE("deterministic") {
    Rng a(7), b(7);
    const Partition pa = global_local_split(g, 0.5, 4, PartitionMode::kDirichlet, 0.5, a);
    const Partition pb = global_local_split(g, 0.5, 4, PartitionMode::kDirichlet, 0.5, b);
    CHECK(pa.plan.global_users == pb.plan.global_users);
    CHECK(pa.plan.client_users == pb.plan.client_users);
  }
  SUBCASE("errors") {
    Rng r(4);
    CHECK_THROWS_AS(global_local_split(g, 1.0, 2, PartitionMode::kUniform, 0.5, r), PartitionError);
    CHECK_THROWS_AS(global_local_split(g, 0.5, 0, PartitionMode::kUniform, 0.5, r), PartitionError);
    CHECK_THROWS_AS(global_local_split(g, 0.5, 2, PartitionMode::kDirichlet, 0.0, r), PartitionError);
    CHECK_THROWS_AS(global_local_split(g, 0.5, 500, PartitionMode::kUniform, 0.5, r), PartitionError);
  }
}

TEST_CASE("apply_plan and manifest round trip") {
  Rng rng(5);
  const InteractionGraph g = testing::random_graph(40, 20, 0.15, rng);
  Rng r(6);
  const Partition p = global_local_split(g, 0.5, 3, PartitionMode::kDirichlet, 2.0, r);
  std::stringstream ss;
  write_manifest(ss, p.plan);
  const PartitionPlan back = read_manifest(ss);
  CHECK(back.global_users == p.plan.global_users);
  CHECK(back.client_users == p.plan.client_users);
  CHECK(back.mode == p.plan.mode);
  CHECK(back.concentration == p.plan.concentration);

  const Partition again = apply_plan(g, back);
  CHECK(again.global.graph.edges() == p.global.graph.edges());
  for (std::size_t k = 0; k < 3; ++k) CHECK(again.clients[k].graph.edges() == p.clients[k].graph.edges());

  PartitionPlan twice = back;
  twice.client_users[0].push_back(twice.global_users.front());
  CHECK_THROWS_AS(apply_plan(g, twice), PartitionError);

  std::stringstream bad("# x\nuser,assignment\n3,nowhere\n");
  CHECK_THROWS_AS(read_manifest(bad), PartitionError);
}

TEST_CASE("ml-100k client shares") {
  const InteractionGraph* g = ml100k();
  if (g == nullptr) {
    MESSAGE("ml-100k not found, skipped");
    return;
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    const Partition p = global_local_split(*g, 0.5, 10, PartitionMode::kUniform, 0.5, r);
    check_disjoint(*g, p);
    for (const auto& c : p.clients) {
      const double share = static_cast<double>(c.graph.num_edges()) / static_cast<double>(g->num_edges());
      CHECK(share == doctest::Approx(0.05).epsilon(0.3));
    }
  }
}

TEST_CASE("ml-100k large concentration approaches uniform balance") {
  const InteractionGraph* g = ml100k();
  if (g == nullptr) {
    MESSAGE("ml-100k not found, skipped");
    return;
  }
  auto spread = [&](PartitionMode mode, double conc) {
    Rng r(11);
    const Partition p = global_local_split(*g, 0.5, 10, mode, conc, r);
    std::size_t lo = g->num_edges(), hi = 0;
    for (const auto& c : p.clients) {
      lo = std::min(lo, c.graph.num_edges());
      hi = std::max(hi, c.graph.num_edges());
    }
    return static_cast<double>(hi - lo);
  };
  const double uniform = spread(PartitionMode::kUniform, 0.5);
  CHECK(spread(PartitionMode::kDirichlet, 1e4) <= 2.0 * std::max(uniform, 1.0));
  CHECK(spread(PartitionMode::kDirichlet, 0.5) > spread(PartitionMode::kDirichlet, 1e4));
}

TEST_CASE("ml-100k heterogeneity direction") {
  const InteractionGraph* g = ml100k();
  if (g == nullptr) {
    MESSAGE("ml-100k not found, skipped");
    return;
  }
  const auto deg = g->user_degrees();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng a(seed), b(seed);
    const Partition u = global_local_split(*g, 0.5, 10, PartitionMode::kUniform, 0.5, a);
    const Partition d = global_local_split(*g, 0.5, 10, PartitionMode::kDirichlet, 0.5, b);
    CHECK(heterogeneity_score(u.plan, deg) > heterogeneity_score(d.plan, deg));
  }
}

}  // TEST_SUITE
