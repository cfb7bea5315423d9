#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shan {

struct Relation {
  std::string src;
  std::string name;
  std::string dst;
};

// Typed nodes and typed edge lists. Node ids are 0-based and contiguous per
// type. Immutable after construction; safe to share between threads.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  const std::vector<std::string>& node_types() const { return node_types_; }
  const std::vector<Relation>& relations() const { return relations_; }

  int type_index(const std::string& type) const;  // throws SchemaError if unknown
  bool has_type(const std::string& type) const;
  std::size_t node_count(int type_index) const { return node_count_[type_index]; }
  std::size_t node_count(const std::string& type) const;

  // Sorted, deduplicated (src_id, dst_id) pairs for one relation.
  const std::vector<std::pair<int, int>>& edges(int relation_index) const {
    return edges_[relation_index];
  }
  int relation_index(const std::string& name) const;  // throws SchemaError if unknown

  // True when |node types| + |relations| <= 2. Loaders reject toy graphs
  // unless explicitly allowed.
  bool is_toy() const { return toy_; }

  friend HeteroGraph build_graph(std::vector<std::string> node_types,
                                 std::vector<Relation> relations,
                                 std::map<std::string, std::size_t> counts,
                                 std::vector<std::vector<std::pair<int, int>>> edge_lists,
                                 bool allow_toy);

 private:
  std::vector<std::string> node_types_;
  std::vector<Relation> relations_;
  std::map<std::string, int> type_index_;
  std::map<std::string, int> relation_index_;
  std::vector<std::size_t> node_count_;
  std::vector<std::vector<std::pair<int, int>>> edges_;
  bool toy_ = true;
};

// Validates the schema, range-checks every edge endpoint, deduplicates and
// sorts edge lists. edge_lists[k] belongs to relations[k].
HeteroGraph build_graph(std::vector<std::string> node_types,
                        std::vector<Relation> relations,
                        std::map<std::string, std::size_t> counts,
                        std::vector<std::vector<std::pair<int, int>>> edge_lists,
                        bool allow_toy = false);

// A composite relation: a sequence of relation indices into the graph's
// relation list. Each step may be traversed in either direction; orientation
// is resolved by walking from target_type. Both endpoints must be the
// target type.
struct MetaPath {
  std::string name;
  std::vector<int> relations;
  std::string target_type;
};

struct OrientedStep {
  int relation;
  bool forward;  // src -> dst when true
  int from_type;
  int to_type;
};

// Resolves traversal direction for every step, or throws MetaPathError when
// the chain does not start and end at the target type.
std::vector<OrientedStep> resolve_metapath(const HeteroGraph& g, const MetaPath& mp);

// Sparse binary adjacency over target nodes induced by one meta-path, with
// an unconditional self-loop on every node and symmetric-normalization
// coefficients 1/sqrt(deg_i * deg_j) stored per edge. CSR layout.
class MetaPathAdjacency {
 public:
  std::size_t node_count() const { return offsets_.size() - 1; }
  std::span<const int> neighbors(std::size_t i) const {
    return {nbr_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> coeffs(std::size_t i) const {
    return {coeff_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  friend MetaPathAdjacency compose_metapath_adjacency(const HeteroGraph& g,
                                                      const MetaPath& mp);

 private:
  std::vector<std::size_t> offsets_;  // node_count + 1
  std::vector<int> nbr_;              // sorted per row, row i always contains i
  std::vector<double> coeff_;         // aligned with nbr_
};

// Boolean product of the oriented relation incidences, evaluated sparsely
// relation by relation, with the diagonal forced to 1. Multiplicity is
// discarded; edges are traversable in both directions.
MetaPathAdjacency compose_metapath_adjacency(const HeteroGraph& g, const MetaPath& mp);

// N_i including i itself. Throws ConfigError when i is out of range.
std::vector<int> metapath_neighbors(const MetaPathAdjacency& adj, std::size_t i);

}  // namespace shan
