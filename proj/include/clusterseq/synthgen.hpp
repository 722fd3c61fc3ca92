#pragma once

#include "clusterseq/core/tensor.hpp"
#include "clusterseq/dataset.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace clusterseq {

/// One planted preference group: a Markov chain over its own item subset.
struct PlantedCluster {
  /// generator item indices the chain moves over
  std::vector<ItemId> items;
  /// row-stochastic, items.size() x items.size()
  Matrix transitions;
};

/// Planted major/minor population. When `clusters_override` is empty the
/// clusters are built from `items` split into disjoint blocks, each row
/// getting `successors` random successors with random weights.
struct PlantedSpec {
  std::vector<double> weights = {0.4, 0.4, 0.1, 0.1};
  int users = 400;
  int items = 160;
  int successors = 3;
  int min_length = 5;
  int max_length = 15;
  double noise = 0.05;
  std::uint64_t seed = 1;
  std::vector<PlantedCluster> clusters_override;

  int cluster_count() const { return static_cast<int>(weights.size()); }
};

struct PlantedCorpus {
  std::vector<Interaction> interactions;
  std::vector<PlantedCluster> clusters;
  /// external user id -> planted cluster. Diagnostics only.
  std::map<std::string, int> labels;
};

/// Each user walks its cluster's chain; with probability `noise` an emitted
/// item is replaced by one drawn uniformly from the whole vocabulary.
PlantedCorpus generate(const PlantedSpec& spec);

void write_interactions_csv(std::ostream& out, const std::vector<Interaction>& interactions);
void write_labels_csv(std::ostream& out, const std::map<std::string, int>& labels);
std::map<std::string, int> read_labels_csv(std::istream& in);

/// Adjusted Rand index between two labelings, in [-1, 1]; 1 for identical
/// partitions regardless of label names, about 0 for independent ones.
double cluster_agreement(const std::vector<int>& assigned, const std::vector<int>& truth);

}  // namespace clusterseq
