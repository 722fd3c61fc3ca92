#include "clusterseq/objective.hpp"

#include "clusterseq/core/error.hpp"

namespace clusterseq {

BoundModel BoundModel::bind(Binder& binder, const ModelConfig& config) {
  BoundModel m;
  m.transition = TransitionModel::bind(binder, config.literal_decoder_hidden, config.output_softmax);
  if (config.use_clustering) m.cluster = ClusterModel::bind(binder, config);
  m.margin = config.margin;
  m.paper_literal_indices = config.paper_literal_indices;
  return m;
}

Prediction predict_user(std::span<const ItemId> prefix, const BoundModel& model) {
  Var raw = predict(prefix, model.transition);
  return Prediction{raw, model.cluster ? condition_embedding(raw, *model.cluster) : raw};
}

Var score(const Prediction& prediction, ItemId target, const BoundModel& model) {
  if (target >= model.transition.items.rows()) {
    fail(ErrorCode::index, "score: item " + std::to_string(target) + " outside a vocabulary of " +
                               std::to_string(model.transition.items.rows()));
  }
  return l2_distance(prediction.conditioned, lookup_embedding(model.transition.items, target));
}

Var score(std::span<const ItemId> prefix, ItemId target, const BoundModel& model) {
  return score(predict_user(prefix, model), target, model);
}

Var margin_hinge(Var positive, Var negative, double margin) {
  return relu(shift(sub(positive, negative), margin));
}

Var support_loss(const TaskEpisode& episode, const BoundModel& model) {
  const std::size_t k = episode.support.size() + 1;
  if (k < 3) fail(ErrorCode::contract, "support_loss needs K >= 3");
  if (episode.support_negatives.size() + 2 != k) {
    fail(ErrorCode::contract, "support_loss: expected " + std::to_string(k - 2) + " support negatives");
  }
  // target support[t] (I_{t+1}, 1-based) is predicted from support[0..t)
  const std::size_t first = model.paper_literal_indices ? 2 : 1;
  Tape& tape = *model.transition.items.tape();
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t t = first; t < episode.support.size(); ++t) {
    std::span<const ItemId> prefix(episode.support.data(), t);
    Prediction p = predict_user(prefix, model);
    total = add(total, margin_hinge(score(p, episode.support[t], model),
                                    score(p, episode.support_negatives[t - 1], model), model.margin));
  }
  return total;
}

QueryLoss query_loss(const TaskEpisode& episode, const BoundModel& model) {
  if (episode.support.empty()) fail(ErrorCode::contract, "query_loss: empty support");
  if (episode.query_negatives.empty()) fail(ErrorCode::contract, "query_loss: no query negative");
  Prediction p = predict_user(episode.support, model);
  Var loss = margin_hinge(score(p, episode.query, model), score(p, episode.query_negatives.front(), model),
                          model.margin);
  return QueryLoss{loss, p.raw};
}

}  // namespace clusterseq
