#pragma once

#include "clusterseq/core/parameters.hpp"
#include "clusterseq/dataset.hpp"

#include <span>
#include <string>
#include <vector>

namespace clusterseq {

struct GruWeights {
  Var w_xr, w_xz, w_xn;
  Var w_hr, w_hz, w_hn;
  Var b_r, b_z, b_xn, b_hn;

  static GruWeights bind(Binder& binder, const std::string& which);
};

/// r = s(W_xr x + W_hr h + b_r), z = s(W_xz x + W_hz h + b_z),
/// n = tanh(W_xn x + b_xn + r * (W_hn h + b_hn)), h' = (1 - z) * n + z * h.
Var gru_cell(Var x, Var h, const GruWeights& w);

struct TransitionModel {
  Var items;  // |I| x D
  GruWeights encoder;
  GruWeights decoder;
  Var fc1_weight, fc1_bias;  // 2D -> K
  Var fc2_weight, fc2_bias;  // 2D -> D
  Var fc3_weight, fc3_bias;  // D -> D
  bool literal_decoder_hidden = false;
  bool output_softmax = true;

  static TransitionModel bind(Binder& binder, bool literal_decoder_hidden = false, bool output_softmax = true);

  Eigen::Index dim() const { return items.cols(); }
  Eigen::Index attention_width() const { return fc1_weight.rows(); }
};

struct EncoderOutput {
  Var context;       // one row per encoded item, n x D
  Var final_hidden;  // D
};

/// GRU over the item embeddings starting from a zero hidden state.
EncoderOutput encode_sequence(std::span<const ItemId> items, const TransitionModel& model);

struct Attention {
  Var context;  // D
  Var weights;  // simplex over context rows
};

/// softmax(fc1(o_prev; h_prev)) restricted to the rows present in `context`
/// (the remaining logits are masked out), applied to the rows.
Attention attend(Var o_prev, Var h_prev, Var context, const TransitionModel& model);

struct DecoderState {
  Var output;
  Var hidden;
};

/// X = relu(fc2(o_prev; attn)), g = GRU(X, h_prev), o = softmax(fc3(g)).
DecoderState decode_step(Var o_prev, Var h_prev, Var attn, const TransitionModel& model);

/// Encodes the prefix once, then decodes one step per prefix item starting
/// from o = 0 and h = the encoder's final hidden state. Returns every step's
/// output; the last one is the prediction for the item after the prefix.
std::vector<Var> predict_vectors(std::span<const ItemId> prefix, const TransitionModel& model);

/// Last decoder output for the prefix: the raw user embedding.
Var predict(std::span<const ItemId> prefix, const TransitionModel& model);

}  // namespace clusterseq
