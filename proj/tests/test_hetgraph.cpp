#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "shan/errors.hpp"
#include "shan/hetgraph.hpp"

using shan::build_graph;
using shan::HeteroGraph;
using shan::MetaPath;
using shan::MetaPathAdjacency;
using shan::Relation;

namespace {

HeteroGraph author_paper_graph() {
  // authors {0,1,2}, papers {0,1}; author 1 wrote both papers.
  return build_graph({"author", "paper"}, {{"author", "writes", "paper"}},
                     {{"author", 3}, {"paper", 2}},
                     {{{0, 0}, {1, 0}, {1, 1}, {2, 1}}});
}

}  // namespace

TEST_CASE("build_graph validation") {
  CHECK_THROWS_AS(build_graph({"a", "a"}, {}, {{"a", 1}}, {}, true),
                  shan::SchemaError);
  CHECK_THROWS_AS(build_graph({"a"}, {{"a", "r", "missing"}}, {{"a", 1}}, {{}}, true),
                  shan::SchemaError);
  CHECK_THROWS_AS(build_graph({"a", "b"},
                              {{"a", "r", "b"}, {"a", "r", "b"}},
                              {{"a", 1}, {"b", 1}}, {{}, {}}),
                  shan::SchemaError);
  CHECK_THROWS_AS(build_graph({"a", "b"}, {{"a", "r", "b"}},
                              {{"a", 1}, {"b", 1}}, {}),
                  shan::SchemaError);
  CHECK_THROWS_AS(build_graph({"a", "b"}, {{"a", "r", "b"}},
                              {{"a", 1}, {"b", 1}}, {{{0, 5}}}),
                  shan::SchemaError);
  CHECK_THROWS_AS(build_graph({"a", "b"}, {{"a", "r", "b"}},
                              {{"a", 1}, {"b", 1}}, {{{-1, 0}}}),
                  shan::SchemaError);
}

TEST_CASE("toy gate counts types plus relations") {
  // 1 type + 1 relation <= 2: rejected unless allowed.
  CHECK_THROWS_AS(build_graph({"a"}, {{"a", "self", "a"}}, {{"a", 2}}, {{{0, 1}}}),
                  shan::SchemaError);
  HeteroGraph toy = build_graph({"a"}, {{"a", "self", "a"}}, {{"a", 2}},
                                {{{0, 1}}}, true);
  CHECK(toy.is_toy());
  HeteroGraph g = author_paper_graph();
  CHECK_FALSE(g.is_toy());
}

TEST_CASE("graph accessors") {
  HeteroGraph g = author_paper_graph();
  CHECK(g.node_count("author") == 3);
  CHECK(g.node_count("paper") == 2);
  CHECK(g.has_type("paper"));
  CHECK_FALSE(g.has_type("venue"));
  CHECK_THROWS_AS(g.type_index("venue"), shan::SchemaError);
  CHECK(g.relation_index("writes") == 0);
  CHECK_THROWS_AS(g.relation_index("cites"), shan::SchemaError);
}

TEST_CASE("edges are sorted and deduplicated") {
  HeteroGraph g = build_graph({"a", "b"}, {{"a", "r", "b"}},
                              {{"a", 3}, {"b", 3}},
                              {{{2, 1}, {0, 0}, {2, 1}, {1, 2}}});
  const auto& e = g.edges(0);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == std::make_pair(0, 0));
  CHECK(e[1] == std::make_pair(1, 2));
  CHECK(e[2] == std::make_pair(2, 1));
}

TEST_CASE("resolve_metapath orients each step from the current type") {
  HeteroGraph g = author_paper_graph();
  MetaPath apa{"APA", {0, 0}, "author"};
  auto steps = shan::resolve_metapath(g, apa);
  REQUIRE(steps.size() == 2);
  CHECK(steps[0].forward);        // author -> paper
  CHECK_FALSE(steps[1].forward);  // paper -> author via the reverse

  MetaPath from_paper{"PAP", {0, 0}, "paper"};
  auto rev = shan::resolve_metapath(g, from_paper);
  CHECK_FALSE(rev[0].forward);
  CHECK(rev[1].forward);

  CHECK_THROWS_AS(shan::resolve_metapath(g, MetaPath{"empty", {}, "author"}),
                  shan::MetaPathError);
  CHECK_THROWS_AS(shan::resolve_metapath(g, MetaPath{"odd", {0}, "author"}),
                  shan::MetaPathError);  // ends at paper, not author
  CHECK_THROWS_AS(shan::resolve_metapath(g, MetaPath{"oob", {7}, "author"}),
                  shan::MetaPathError);

  HeteroGraph g2 = build_graph(
      {"a", "b", "c"}, {{"a", "r1", "b"}, {"c", "r2", "c"}},
      {{"a", 1}, {"b", 1}, {"c", 1}}, {{}, {}});
  CHECK_THROWS_AS(shan::resolve_metapath(g2, MetaPath{"bad", {0, 1}, "a"}),
                  shan::MetaPathError);  // r2 not incident to b
}

TEST_CASE("composed adjacency on the hand-worked author example") {
  HeteroGraph g = author_paper_graph();
  MetaPathAdjacency adj =
      shan::compose_metapath_adjacency(g, MetaPath{"APA", {0, 0}, "author"});
  REQUIRE(adj.node_count() == 3);

  auto row = [&](std::size_t i) {
    auto span = adj.neighbors(i);
    return std::vector<int>(span.begin(), span.end());
  };
  CHECK(row(0) == std::vector<int>{0, 1});
  CHECK(row(1) == std::vector<int>{0, 1, 2});
  CHECK(row(2) == std::vector<int>{1, 2});
  CHECK(adj.degree(0) == 2);
  CHECK(adj.degree(1) == 3);
  CHECK(adj.degree(2) == 2);

  CHECK(adj.coeffs(0)[0] == 1.0 / std::sqrt(4.0));
  CHECK(adj.coeffs(0)[1] == 1.0 / std::sqrt(6.0));
  CHECK(adj.coeffs(1)[1] == 1.0 / std::sqrt(9.0));
}

TEST_CASE("isolated nodes keep the forced self-loop") {
  HeteroGraph g = build_graph({"a", "b"}, {{"a", "r", "b"}},
                              {{"a", 2}, {"b", 1}}, {{}});
  MetaPathAdjacency adj =
      shan::compose_metapath_adjacency(g, MetaPath{"ABA", {0, 0}, "a"});
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(adj.degree(i) == 1);
    CHECK(adj.neighbors(i)[0] == static_cast<int>(i));
    CHECK(adj.coeffs(i)[0] == 1.0);
  }
}

TEST_CASE("metapath_neighbors includes self and range-checks") {
  HeteroGraph g = author_paper_graph();
  MetaPathAdjacency adj =
      shan::compose_metapath_adjacency(g, MetaPath{"APA", {0, 0}, "author"});
  auto n0 = shan::metapath_neighbors(adj, 0);
  CHECK(std::find(n0.begin(), n0.end(), 0) != n0.end());
  CHECK_THROWS_AS(shan::metapath_neighbors(adj, 3), shan::ConfigError);
}

TEST_CASE("composition matches exhaustive enumeration on random graphs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const int num_types = std::uniform_int_distribution<int>(2, 4)(rng);
    std::vector<std::string> types;
    std::map<std::string, std::size_t> counts;
    for (int t = 0; t < num_types; ++t) {
      types.push_back("t" + std::to_string(t));
      counts[types.back()] =
          std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    }
    const int len = std::uniform_int_distribution<int>(1, 4)(rng);
    // Chain of types starting and ending at the target.
    std::vector<int> chain = {0};
    for (int s = 1; s < len; ++s) {
      chain.push_back(std::uniform_int_distribution<int>(0, num_types - 1)(rng));
    }
    chain.push_back(0);

    std::vector<Relation> rels;
    std::vector<std::vector<std::pair<int, int>>> edges;
    std::vector<int> path_rels;
    for (int s = 0; s < len; ++s) {
      const bool flipped = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      const std::string src = types[flipped ? chain[s + 1] : chain[s]];
      const std::string dst = types[flipped ? chain[s] : chain[s + 1]];
      rels.push_back({src, "r" + std::to_string(s), dst});
      path_rels.push_back(s);
      std::vector<std::pair<int, int>> list;
      const std::size_t ns = counts[src], nd = counts[dst];
      const int m = std::uniform_int_distribution<int>(0, 25)(rng);
      for (int e = 0; e < m; ++e) {
        list.push_back({std::uniform_int_distribution<int>(0, static_cast<int>(ns) - 1)(rng),
                        std::uniform_int_distribution<int>(0, static_cast<int>(nd) - 1)(rng)});
      }
      edges.push_back(std::move(list));
    }
    HeteroGraph g = build_graph(types, rels, counts, edges, true);
    MetaPath mp{"p", path_rels, types[0]};

    // Orientation can be ambiguous when a step relation has src == dst only
    // if both ends match; the greedy resolver and the oracle share
    // resolve_metapath, so the enumeration itself is the independent part.
    MetaPathAdjacency adj = shan::compose_metapath_adjacency(g, mp);
    auto expected = oracle::metapath_rows(g, mp);
    REQUIRE(adj.node_count() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      auto span = adj.neighbors(i);
      std::vector<int> got(span.begin(), span.end());
      CHECK(got == expected[i]);
      for (std::size_t k = 0; k < got.size(); ++k) {
        const double want =
            1.0 / std::sqrt(static_cast<double>(expected[i].size()) *
                            static_cast<double>(expected[got[k]].size()));
        CHECK(adj.coeffs(i)[k] == want);
      }
    }
  }
}
