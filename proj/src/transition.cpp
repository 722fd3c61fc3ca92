#include "clusterseq/transition.hpp"

#include "clusterseq/core/error.hpp"
#include "clusterseq/model.hpp"

namespace clusterseq {

GruWeights GruWeights::bind(Binder& b, const std::string& which) {
  auto n = [&](const char* part) { return b(names::gru(which, part)); };
  return GruWeights{n("w_xr"), n("w_xz"), n("w_xn"), n("w_hr"), n("w_hz"), n("w_hn"),
                    n("b_r"),  n("b_z"),  n("b_xn"), n("b_hn")};
}

Var gru_cell(Var x, Var h, const GruWeights& w) {
  if (x.cols() != 1 || h.cols() != 1 || x.rows() != w.w_xr.cols() || h.rows() != w.w_hr.cols()) {
    fail(ErrorCode::dimension, "gru_cell: input " + shape_string(x.value()) + ", hidden " +
                                   shape_string(h.value()) + ", weights " + shape_string(w.w_xr.value()));
  }
  Var r = sigmoid(matmul(w.w_xr, x) + matmul(w.w_hr, h) + w.b_r);
  Var z = sigmoid(matmul(w.w_xz, x) + matmul(w.w_hz, h) + w.b_z);
  Var n = tanh(affine(w.w_xn, w.b_xn, x) + hadamard(r, affine(w.w_hn, w.b_hn, h)));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return n + hadamard(z, h - n);
}

TransitionModel TransitionModel::bind(Binder& b, bool literal_decoder_hidden, bool output_softmax) {
  TransitionModel m;
  m.items = b(names::item_embedding);
  m.encoder = GruWeights::bind(b, "enc");
  m.decoder = GruWeights::bind(b, "dec");
  m.fc1_weight = b(names::fc(1, "weight"));
  m.fc1_bias = b(names::fc(1, "bias"));
  m.fc2_weight = b(names::fc(2, "weight"));
  m.fc2_bias = b(names::fc(2, "bias"));
  m.fc3_weight = b(names::fc(3, "weight"));
  m.fc3_bias = b(names::fc(3, "bias"));
  m.literal_decoder_hidden = literal_decoder_hidden;
  m.output_softmax = output_softmax;
  return m;
}

EncoderOutput encode_sequence(std::span<const ItemId> items, const TransitionModel& model) {
  if (items.empty()) fail(ErrorCode::contract, "encode_sequence: empty item sequence");
  Tape& tape = *model.items.tape();
  Var h = tape.constant(Matrix::Zero(model.dim(), 1));
  std::vector<Var> outputs;
  outputs.reserve(items.size());
  for (ItemId item : items) {
    h = gru_cell(lookup_embedding(model.items, item), h, model.encoder);
    outputs.push_back(h);
  }
  return EncoderOutput{stack_rows(outputs), h};
}

Attention attend(Var o_prev, Var h_prev, Var context, const TransitionModel& model) {
  const Eigen::Index rows = context.rows();
  if (rows == 0) fail(ErrorCode::dimension, "attend: empty context");
  if (rows > model.attention_width()) {
    fail(ErrorCode::dimension, "attend: " + std::to_string(rows) + " context rows exceed attention width " +
                                   std::to_string(model.attention_width()));
  }
  Var logits = affine(model.fc1_weight, model.fc1_bias, concat(o_prev, h_prev));
  Var weights = softmax(slice_rows(logits, 0, rows));
  return Attention{matmul(transpose(context), weights), weights};
}

DecoderState decode_step(Var o_prev, Var h_prev, Var attn, const TransitionModel& model) {
  Var x = relu(affine(model.fc2_weight, model.fc2_bias, concat(o_prev, attn)));
  Var g = gru_cell(x, h_prev, model.decoder);
  Var projected = affine(model.fc3_weight, model.fc3_bias, g);
  Var output = model.output_softmax ? softmax(projected) : projected;
  Var hidden = g;
  if (model.literal_decoder_hidden) {
    hidden = gru_cell(model.items.tape()->constant(Matrix::Zero(x.rows(), 1)), h_prev, model.decoder);
  }
  return DecoderState{output, hidden};
}

std::vector<Var> predict_vectors(std::span<const ItemId> prefix, const TransitionModel& model) {
  if (prefix.empty()) fail(ErrorCode::contract, "predict_vectors: empty prefix");
  EncoderOutput enc = encode_sequence(prefix, model);
  DecoderState state{model.items.tape()->constant(Matrix::Zero(model.dim(), 1)), enc.final_hidden};
  std::vector<Var> outputs;
  outputs.reserve(prefix.size());
  for (std::size_t step = 0; step < prefix.size(); ++step) {
    Attention a = attend(state.output, state.hidden, enc.context, model);
    state = decode_step(state.output, state.hidden, a.context, model);
    outputs.push_back(state.output);
  }
  return outputs;
}

Var predict(std::span<const ItemId> prefix, const TransitionModel& model) {
  return predict_vectors(prefix, model).back();
}

}  // namespace clusterseq
