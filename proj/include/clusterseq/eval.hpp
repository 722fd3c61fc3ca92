#pragma once

#include "clusterseq/core/parameters.hpp"
#include "clusterseq/dataset.hpp"
#include "clusterseq/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace clusterseq {

/// 1 + number of negatives scoring <= the positive (distances, lower is
/// better). Ties rank the positive behind the negatives.
int rank_positive(double positive, std::span<const double> negatives);

struct RankingMetrics {
  double mrr = 0.0;
  double hit1 = 0.0;
  double ndcg5 = 0.0;
  double hr10 = 0.0;
  std::size_t users = 0;
};

RankingMetrics metrics_from_ranks(std::span<const int> ranks);

struct UserRank {
  std::string user;  // external id
  int rank = 0;
};

struct EvalReport {
  std::vector<UserRank> ranks;
  RankingMetrics metrics;
  std::size_t negatives = 0;

  /// Metrics over the users accepted by `keep`.
  RankingMetrics subset(const std::function<bool(const std::string&)>& keep) const;
};

struct EvalOptions {
  std::uint64_t seed = 1;
  std::size_t negatives = 100;
  double alpha = 0.05;
  int inner_steps = 1;
};

/// Seed for one user's negatives: FNV-1a over the global seed and the
/// external user id, so it does not depend on user order or the checkpoint.
std::uint64_t user_seed(std::uint64_t seed, const std::string& user);

/// Every test user: adapt on the first K-1 items, then rank the K-th item
/// against `negatives` items the user never interacted with.
EvalReport evaluate(const ParameterStore& theta, const Corpus& corpus, const ModelConfig& config,
                    const EvalOptions& options = {});

/// Per-user rows, then one aggregate row per metric.
void write_report_csv(std::ostream& out, const EvalReport& report);
/// Single-line summary.
std::string report_json(const EvalReport& report);

struct UserAssignment {
  std::string user;
  int cluster = 0;  // argmax of the soft assignment
  Vector soft;      // M entries, sums to 1
};

struct ClusterUsage {
  std::vector<UserAssignment> rows;  // one per corpus user, dense order
  std::vector<std::size_t> histogram;
  double entropy = 0.0;  // nats, of the histogram shares

  std::size_t clusters_above(double share) const;
};

/// Encoding assignment of every user's unadapted embedding over the first
/// K-1 items. Needs a clustering model.
ClusterUsage inspect_clusters(const ParameterStore& theta, const Corpus& corpus, const ModelConfig& config);

/// user,cluster,p0..p{M-1}
void write_assignments_csv(std::ostream& out, const ClusterUsage& usage);
/// cluster,users,share
void write_histogram_csv(std::ostream& out, const ClusterUsage& usage);

}  // namespace clusterseq
