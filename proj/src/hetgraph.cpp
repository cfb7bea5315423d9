#include "shan/hetgraph.hpp"

#include <algorithm>
#include <cmath>

#include "shan/errors.hpp"

namespace shan {

int HeteroGraph::type_index(const std::string& type) const {
  auto it = type_index_.find(type);
  if (it == type_index_.end()) throw SchemaError("unknown node type: " + type);
  return it->second;
}

bool HeteroGraph::has_type(const std::string& type) const {
  return type_index_.count(type) != 0;
}

std::size_t HeteroGraph::node_count(const std::string& type) const {
  return node_count_[type_index(type)];
}

int HeteroGraph::relation_index(const std::string& name) const {
  auto it = relation_index_.find(name);
  if (it == relation_index_.end()) throw SchemaError("unknown relation: " + name);
  return it->second;
}

HeteroGraph build_graph(std::vector<std::string> node_types,
                        std::vector<Relation> relations,
                        std::map<std::string, std::size_t> counts,
                        std::vector<std::vector<std::pair<int, int>>> edge_lists,
                        bool allow_toy) {
  HeteroGraph g;
  g.node_types_ = std::move(node_types);
  for (std::size_t i = 0; i < g.node_types_.size(); ++i) {
    if (!g.type_index_.emplace(g.node_types_[i], static_cast<int>(i)).second) {
      throw SchemaError("duplicate node type: " + g.node_types_[i]);
    }
  }

  g.node_count_.resize(g.node_types_.size(), 0);
  for (const auto& [type, count] : counts) {
    g.node_count_[g.type_index(type)] = count;
  }

  g.relations_ = std::move(relations);
  for (std::size_t r = 0; r < g.relations_.size(); ++r) {
    const Relation& rel = g.relations_[r];
    if (!g.has_type(rel.src) || !g.has_type(rel.dst)) {
      throw SchemaError("relation " + rel.name + " references undeclared node type");
    }
    if (!g.relation_index_.emplace(rel.name, static_cast<int>(r)).second) {
      throw SchemaError("duplicate relation name: " + rel.name);
    }
  }

  if (edge_lists.size() != g.relations_.size()) {
    throw SchemaError("expected one edge list per relation");
  }
  g.edges_.resize(g.relations_.size());
  for (std::size_t r = 0; r < g.relations_.size(); ++r) {
    const Relation& rel = g.relations_[r];
    const std::size_t src_n = g.node_count_[g.type_index(rel.src)];
    const std::size_t dst_n = g.node_count_[g.type_index(rel.dst)];
    auto& list = edge_lists[r];
    for (const auto& [s, d] : list) {
      if (s < 0 || static_cast<std::size_t>(s) >= src_n ||
          d < 0 || static_cast<std::size_t>(d) >= dst_n) {
        throw SchemaError("relation " + rel.name + ": edge (" + std::to_string(s) +
                          ", " + std::to_string(d) + ") out of range");
      }
    }
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    g.edges_[r] = std::move(list);
  }

  g.toy_ = g.node_types_.size() + g.relations_.size() <= 2;
  if (g.toy_ && !allow_toy) {
    throw SchemaError("graph has |types| + |relations| <= 2; pass allow_toy to accept");
  }
  return g;
}

std::vector<OrientedStep> resolve_metapath(const HeteroGraph& g, const MetaPath& mp) {
  if (mp.relations.empty()) {
    throw MetaPathError("meta-path " + mp.name + " has no relations");
  }
  const int target = g.type_index(mp.target_type);
  int cur = target;
  std::vector<OrientedStep> steps;
  steps.reserve(mp.relations.size());
  for (int rid : mp.relations) {
    if (rid < 0 || static_cast<std::size_t>(rid) >= g.relations().size()) {
      throw MetaPathError("meta-path " + mp.name + ": relation index out of range");
    }
    const Relation& rel = g.relations()[rid];
    const int src = g.type_index(rel.src);
    const int dst = g.type_index(rel.dst);
    if (src == cur) {
      steps.push_back({rid, true, src, dst});
      cur = dst;
    } else if (dst == cur) {
      steps.push_back({rid, false, dst, src});
      cur = src;
    } else {
      throw MetaPathError("meta-path " + mp.name + ": relation " + rel.name +
                          " is not incident to type " + g.node_types()[cur]);
    }
  }
  if (cur != target) {
    throw MetaPathError("meta-path " + mp.name + " does not end at target type " +
                        mp.target_type);
  }
  return steps;
}

namespace {

// Adjacency lists of one oriented step: from-type node -> to-type nodes.
std::vector<std::vector<int>> step_adjacency(const HeteroGraph& g, const OrientedStep& step) {
  std::vector<std::vector<int>> adj(g.node_count(step.from_type));
  for (const auto& [s, d] : g.edges(step.relation)) {
    if (step.forward) {
      adj[s].push_back(d);
    } else {
      adj[d].push_back(s);
    }
  }
  return adj;
}

}  // namespace

MetaPathAdjacency compose_metapath_adjacency(const HeteroGraph& g, const MetaPath& mp) {
  const auto steps = resolve_metapath(g, mp);
  const std::size_t n = g.node_count(mp.target_type);

  // reach[i] holds the node ids of the current step's to-type reachable
  // from target node i. Stamp array deduplicates unions per row.
  std::vector<std::vector<int>> reach(n);
  for (std::size_t i = 0; i < n; ++i) reach[i] = {static_cast<int>(i)};

  for (const OrientedStep& step : steps) {
    const auto adj = step_adjacency(g, step);
    const std::size_t to_n = g.node_count(step.to_type);
    std::vector<std::size_t> stamp(to_n, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> next;
      for (int u : reach[i]) {
        for (int v : adj[u]) {
          if (stamp[v] != i) {
            stamp[v] = i;
            next.push_back(v);
          }
        }
      }
      reach[i] = std::move(next);
    }
  }

  MetaPathAdjacency out;
  out.offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = reach[i];
    // Unconditional self-loop keeps every degree >= 1.
    row.push_back(static_cast<int>(i));
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    out.offsets_[i + 1] = out.offsets_[i] + row.size();
  }
  out.nbr_.reserve(out.offsets_[n]);
  for (std::size_t i = 0; i < n; ++i) {
    out.nbr_.insert(out.nbr_.end(), reach[i].begin(), reach[i].end());
  }
  out.coeff_.resize(out.nbr_.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double deg_i = static_cast<double>(out.degree(i));
    for (std::size_t k = out.offsets_[i]; k < out.offsets_[i + 1]; ++k) {
      const double deg_j = static_cast<double>(out.degree(out.nbr_[k]));
      out.coeff_[k] = 1.0 / std::sqrt(deg_i * deg_j);
    }
  }
  return out;
}

std::vector<int> metapath_neighbors(const MetaPathAdjacency& adj, std::size_t i) {
  if (i >= adj.node_count()) {
    throw ConfigError("node id " + std::to_string(i) + " out of range (n=" +
                      std::to_string(adj.node_count()) + ")");
  }
  auto span = adj.neighbors(i);
  return {span.begin(), span.end()};
}

}  // namespace shan
