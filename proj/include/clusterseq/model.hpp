#pragma once

#include "clusterseq/core/parameters.hpp"
#include "clusterseq/dataset.hpp"

#include <string>
#include <vector>

namespace clusterseq {

/// Architecture and loss hyperparameters shared by every model component.
struct ModelConfig {
  int items = 0;
  int dim = 16;        // D
  int shots = 3;       // K
  int clusters = 4;    // M
  int ae_depth = 2;    // L_enc = L_dec
  double epsilon = 0.5;
  double sigma = 0.1;
  int neighbors = 5;   // n_adj, capped at B - 1
  double margin = 1.0; // lambda
  Activation gcn_activation = Activation::relu;

  bool use_clustering = true;
  /// Decoder hidden update h = GRU(0, h) instead of GRU(X, h).
  bool literal_decoder_hidden = false;
  bool output_softmax = true;
  /// Sharpening denominator sum_j c_ij / f_j (rows no longer sum to 1).
  bool paper_literal_sharpen = false;
  /// Support terms i = 3..K-1 instead of 2..K-1; empty at K = 3.
  bool paper_literal_indices = false;

  void validate() const;
};

/// Layer widths of one autoencoder: D, D/2, ..., bottleneck, ..., D.
std::vector<int> autoencoder_widths(int dim, int depth);

/// Parameter names.
namespace names {
inline const std::string item_embedding = "item_embedding";
std::string gru(const std::string& which, const std::string& part);  // which: enc | dec
std::string fc(int index, const std::string& part);                  // part: weight | bias
std::string ae(int index, int layer, const std::string& part);
std::string gcn(int layer);
std::string film(const std::string& head, const std::string& part);  // head: gamma | beta
}  // namespace names

/// Transition weights uniform in +-1/sqrt(D), clustering weights in
/// +-1/sqrt(fan_in), zero biases except the FiLM scale bias, which starts at 1
/// so conditioning begins near the identity.
/// Partition labels are left unassigned.
ParameterStore init_parameters(const ModelConfig& config, Rng& rng);

}  // namespace clusterseq
