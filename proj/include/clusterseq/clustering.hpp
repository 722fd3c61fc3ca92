#pragma once

#include "clusterseq/core/parameters.hpp"
#include "clusterseq/dataset.hpp"
#include "clusterseq/model.hpp"

#include <span>
#include <vector>

namespace clusterseq {

struct AutoencoderWeights {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

struct ClusterModel {
  std::vector<AutoencoderWeights> autoencoders;  // M
  std::vector<Var> gcn;  // W_1 .. W_{L_enc+1}, each d_in x d_out
  Var gamma_weight, gamma_bias;
  Var beta_weight, beta_bias;
  double epsilon = 0.5;
  double sigma = 0.1;
  int neighbors = 5;
  Activation gcn_activation = Activation::relu;
  bool paper_literal_sharpen = false;

  static ClusterModel bind(Binder& binder, const ModelConfig& config);

  int clusters() const { return static_cast<int>(autoencoders.size()); }
  int encoder_depth() const { return static_cast<int>(gcn.size()) - 1; }
};

struct AutoencoderPass {
  std::vector<Var> layers;  // H^(0) = input .. H^(L) = reconstruction
  Var reconstruction() const { return layers.back(); }
};

/// Affine + relu per layer, linear output layer.
AutoencoderPass autoencode(Var embedding, const AutoencoderWeights& ae);
AutoencoderPass autoencode(Var embedding, const ClusterModel& model, int index);

struct EncodingResult {
  std::vector<AutoencoderPass> passes;
  std::vector<Var> distances;  // d(e, e_hat(j))
  Var assignment;              // softmax(-d), M x 1
  int best = 0;                // argmin distance, lowest index on ties
};

EncodingResult encoding_assignment(Var embedding, const ClusterModel& model);

/// min_j d(e, e_hat(j)); the gradient flows through the argmin only.
Var reconstruction_loss(const EncodingResult& encoding);

struct RelationGraph {
  std::vector<UserId> users;
  Matrix adjacency;             // binary, symmetrized, no self loops
  Matrix normalized_adjacency;  // Deg^-1/2 (A + I) Deg^-1/2
};

/// score(i, j) = cos(e_i, e_j) + sigma * |items_i intersect items_j|; each
/// user keeps its top `neighbors` (ties to the lower index), then A = max(A, A^T).
/// Zero-norm embeddings have cosine 0. `item_sets` must be sorted.
RelationGraph build_relation_graph(const Matrix& embeddings, std::span<const std::vector<ItemId>> item_sets,
                                   int neighbors, double sigma, std::vector<UserId> users = {});

/// Z^(0) = H^(0); Z'^(l) = (1-eps) Z^(l-1) + eps H^(l-1); Z^(l) = phi(A Z'^(l) W_l).
/// The final projection to M columns has no activation. `encoder_layers`
/// holds H^(0)..H^(L_enc) as B x d_l matrices. Returns Z^(0)..Z^(L_enc+1).
std::vector<Var> gcn_forward(std::span<const Var> encoder_layers, Var adjacency, std::span<const Var> weights,
                             double epsilon, Activation phi);

/// Row-wise softmax of the final GCN output (or of one row as a vector).
Var topological_assignment(Var z);

/// Target sharpening of a B x M assignment matrix: f_j = sum_i c_ij,
/// c'_ij = (c_ij^2 / f_j) / sum_j' (c_ij'^2 / f_j'). Columns with f_j = 0
/// are forced to 0. `literal` uses sum_j' c_ij' / f_j' as the denominator.
Matrix sharpen(const Matrix& assignments, bool literal = false);
/// Differentiable version.
Var sharpen(Var assignments, bool literal = false);

/// Sharpened self-training targets. They are constants of the graph.
struct ClusterTargets {
  Matrix topological;  // sharpen(c_top)
  Matrix encoding;     // sharpen(c_enc)
};

struct ClusterLosses {
  Var mod;    // mean KL(sharpen(c_top) || c_top), target detached
  Var combo;  // mean KL(sharpen(c_enc) || c_top), target detached
  ClusterTargets targets;
};

/// `frozen` replaces the targets computed from the inputs, which lets finite
/// differences hold them fixed the way backward() does.
ClusterLosses clustering_losses(Var encoding_rows, Var topological_rows, bool literal_sharpen = false,
                                const ClusterTargets* frozen = nullptr);

inline Var total_cluster_loss(Var rec, Var mod, Var combo) { return add(add(rec, mod), combo); }

/// u' = f_gamma(c) * u + f_beta(c).
Var film_condition(Var u, Var assignment, const ClusterModel& model);

/// Conditioning path used for scoring: a single user, no graph required.
Var condition_embedding(Var embedding, const ClusterModel& model);

struct BatchClusterOutput {
  Var reconstruction;  // mean over the batch
  Var mod;
  Var combo;
  Var total;
  Var encoding_rows;     // B x M
  Var topological_rows;  // B x M
  ClusterTargets targets;
  RelationGraph graph;
};

/// Full clustering objective over a batch of user embeddings.
BatchClusterOutput cluster_batch(std::span<const Var> embeddings, std::span<const std::vector<ItemId>> item_sets,
                                 const ClusterModel& model, const ClusterTargets* frozen = nullptr);

}  // namespace clusterseq
