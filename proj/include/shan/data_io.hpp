#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shan/hetgraph.hpp"
#include "shan/tensor.hpp"

namespace shan {

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  bool empty() const { return train.empty() && val.empty() && test.empty(); }
};

// A loaded dataset: graph, target-type features/labels, meta-paths with
// their composed adjacencies, and (optionally) train/val/test splits.
// Unlabeled nodes carry label -1. Adjacencies are composed once at load and
// must outlive any tape that aggregates through them.
struct DatasetBundle {
  HeteroGraph graph;
  std::string target_type;
  Tensor features;  // n x d_in
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<MetaPath> metapaths;
  std::vector<MetaPathAdjacency> adjacencies;
  Splits splits;
  bool has_splits = false;

  std::size_t target_count() const { return labels.size(); }
  void validate_splits() const;
};

DatasetBundle load_dataset(const std::string& dir, bool allow_toy = false);
void write_dataset(const DatasetBundle& bundle, const std::string& dir);

// Stratified per class: seeded shuffle within each class, then cut with
// largest-remainder rounding. Every class needs at least 3 labeled nodes.
Splits make_splits(const std::vector<int>& labels,
                   const std::array<double, 3>& ratios, std::uint64_t seed);

struct SyntheticSpec {
  int target_count = 120;
  int num_classes = 3;
  int num_metapaths = 2;
  int hubs_per_class = 1;
  double p_intra = 0.9;
  double p_inter = 0.05;
  int feature_dim = 16;
  double snr = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Class-assortative heterogeneous graph: one auxiliary hub type per
// meta-path; same-class targets attach to shared hubs with p_intra and to
// foreign hubs with p_inter. Features are a one-hot class signal scaled by
// snr plus unit-variance noise. Splits are baked in with ratios
// (0.2, 0.1, 0.7) from the same seed.
DatasetBundle generate_synthetic(const SyntheticSpec& spec);

// Fraction of meta-path neighbors (self excluded) sharing the node's label,
// pooled over all meta-paths and labeled nodes.
double same_class_neighbor_fraction(const DatasetBundle& bundle);

}  // namespace shan
