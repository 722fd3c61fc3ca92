#pragma once

#include "clusterseq/clustering.hpp"
#include "clusterseq/dataset.hpp"
#include "clusterseq/model.hpp"
#include "clusterseq/transition.hpp"

#include <optional>
#include <span>

namespace clusterseq {

/// Every model component bound onto one tape.
struct BoundModel {
  TransitionModel transition;
  std::optional<ClusterModel> cluster;  // absent for the no-clustering variant
  double margin = 1.0;
  bool paper_literal_indices = false;

  static BoundModel bind(Binder& binder, const ModelConfig& config);
};

struct Prediction {
  Var raw;          // decoder output, the user embedding fed to clustering
  Var conditioned;  // after FiLM conditioning (== raw without clustering)
};

Prediction predict_user(std::span<const ItemId> prefix, const BoundModel& model);

/// ||conditioned prediction - item embedding||_2, lower is better.
Var score(const Prediction& prediction, ItemId target, const BoundModel& model);
Var score(std::span<const ItemId> prefix, ItemId target, const BoundModel& model);

/// max(0, margin + d_pos - d_neg) as a 1x1 node.
Var margin_hinge(Var positive, Var negative, double margin);

/// Sum of hinge terms over support targets I_2..I_{K-1} (I_3..I_{K-1} with
/// the literal index flag), each scored from the items before it.
Var support_loss(const TaskEpisode& episode, const BoundModel& model);

struct QueryLoss {
  Var loss;
  Var embedding;  // raw prediction for the query step
};

/// Hinge on the held-out transition I_1..I_{K-1} -> I_K against the first
/// query negative.
QueryLoss query_loss(const TaskEpisode& episode, const BoundModel& model);

}  // namespace clusterseq
