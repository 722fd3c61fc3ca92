#include "clusterseq/clustering.hpp"

#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <numeric>

namespace clusterseq {

ClusterModel ClusterModel::bind(Binder& b, const ModelConfig& config) {
  ClusterModel m;
  const auto layers = static_cast<int>(autoencoder_widths(config.dim, config.ae_depth).size()) - 1;
  for (int j = 0; j < config.clusters; ++j) {
    AutoencoderWeights ae;
    for (int l = 0; l < layers; ++l) {
      ae.weights.push_back(b(names::ae(j, l, "weight")));
      ae.biases.push_back(b(names::ae(j, l, "bias")));
    }
    m.autoencoders.push_back(std::move(ae));
  }
  for (int l = 1; l <= config.ae_depth + 1; ++l) m.gcn.push_back(b(names::gcn(l)));
  m.gamma_weight = b(names::film("gamma", "weight"));
  m.gamma_bias = b(names::film("gamma", "bias"));
  m.beta_weight = b(names::film("beta", "weight"));
  m.beta_bias = b(names::film("beta", "bias"));
  m.epsilon = config.epsilon;
  m.sigma = config.sigma;
  m.neighbors = config.neighbors;
  m.gcn_activation = config.gcn_activation;
  m.paper_literal_sharpen = config.paper_literal_sharpen;
  return m;
}

AutoencoderPass autoencode(Var embedding, const AutoencoderWeights& ae) {
  AutoencoderPass pass;
  pass.layers.push_back(embedding);
  Var h = embedding;
  const std::size_t n = ae.weights.size();
  for (std::size_t l = 0; l < n; ++l) {
    if (ae.weights[l].cols() != h.rows()) {
      fail(ErrorCode::dimension, "autoencoder layer " + std::to_string(l) + " expects width " +
                                     std::to_string(ae.weights[l].cols()) + ", got " + shape_string(h.value()));
    }
    h = affine(ae.weights[l], ae.biases[l], h);
    if (l + 1 < n) h = relu(h);
    pass.layers.push_back(h);
  }
  return pass;
}

AutoencoderPass autoencode(Var embedding, const ClusterModel& model, int index) {
  if (index < 0 || index >= model.clusters()) {
    fail(ErrorCode::index, "autoencoder index " + std::to_string(index) + " outside [0, " +
                               std::to_string(model.clusters()) + ")");
  }
  return autoencode(embedding, model.autoencoders[static_cast<std::size_t>(index)]);
}

EncodingResult encoding_assignment(Var embedding, const ClusterModel& model) {
  if (model.clusters() < 2) fail(ErrorCode::configuration, "need at least 2 autoencoders");
  EncodingResult out;
  for (int j = 0; j < model.clusters(); ++j) {
    out.passes.push_back(autoencode(embedding, model, j));
    out.distances.push_back(l2_distance(embedding, out.passes.back().reconstruction()));
    if (out.distances.back().scalar() < out.distances[static_cast<std::size_t>(out.best)].scalar()) out.best = j;
  }
  out.assignment = softmax(scale(stack_rows(out.distances), -1.0));
  return out;
}

Var reconstruction_loss(const EncodingResult& encoding) {
  return encoding.distances.at(static_cast<std::size_t>(encoding.best));
}

// ---------------------------------------------------------------------------

RelationGraph build_relation_graph(const Matrix& embeddings, std::span<const std::vector<ItemId>> item_sets,
                                   int neighbors, double sigma, std::vector<UserId> users) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) fail(ErrorCode::contract, "relation graph needs at least 2 users");
  if (static_cast<Eigen::Index>(item_sets.size()) != n) {
    fail(ErrorCode::dimension, "relation graph: " + std::to_string(n) + " embeddings vs " +
                                   std::to_string(item_sets.size()) + " item sets");
  }
  const Eigen::Index keep = std::min<Eigen::Index>(std::max(neighbors, 1), n - 1);

  Vector norms = embeddings.rowwise().norm();
  auto cosine = [&](Eigen::Index i, Eigen::Index j) {
    if (norms(i) == 0.0 || norms(j) == 0.0) return 0.0;
    return embeddings.row(i).dot(embeddings.row(j)) / (norms(i) * norms(j));
  };
  auto overlap = [&](Eigen::Index i, Eigen::Index j) {
    const auto& a = item_sets[static_cast<std::size_t>(i)];
    const auto& b = item_sets[static_cast<std::size_t>(j)];
    std::size_t count = 0;
    for (auto x = a.begin(), y = b.begin(); x != a.end() && y != b.end();) {
      if (*x < *y) {
        ++x;
      } else if (*y < *x) {
        ++y;
      } else {
        ++count, ++x, ++y;
      }
    }
    return static_cast<double>(count);
  };

  RelationGraph g;
  g.users = std::move(users);
  g.adjacency = Matrix::Zero(n, n);
  std::vector<Eigen::Index> order;
  std::vector<double> score(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    order.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      score[static_cast<std::size_t>(j)] = cosine(i, j) + sigma * overlap(i, j);
      order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    for (Eigen::Index k = 0; k < keep; ++k) g.adjacency(i, order[static_cast<std::size_t>(k)]) = 1.0;
  }
  g.adjacency = g.adjacency.cwiseMax(g.adjacency.transpose());

  Matrix with_loops = g.adjacency + Matrix::Identity(n, n);
  Vector inv_sqrt = with_loops.rowwise().sum().cwiseSqrt().cwiseInverse();
  g.normalized_adjacency = inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
  return g;
}

std::vector<Var> gcn_forward(std::span<const Var> encoder_layers, Var adjacency, std::span<const Var> weights,
                             double epsilon, Activation phi) {
  if (weights.empty() || encoder_layers.size() != weights.size()) {
    fail(ErrorCode::configuration, "gcn_forward: " + std::to_string(encoder_layers.size()) +
                                       " encoder layers for " + std::to_string(weights.size()) + " GCN weights");
  }
  std::vector<Var> z{encoder_layers[0]};
  for (std::size_t l = 1; l <= weights.size(); ++l) {
    const Var& h = encoder_layers[l - 1];
    const Var& w = weights[l - 1];
    if (h.rows() != z.back().rows() || h.cols() != z.back().cols() || w.rows() != h.cols()) {
      fail(ErrorCode::configuration, "gcn layer " + std::to_string(l) + ": Z " + shape_string(z.back().value()) +
                                         ", H " + shape_string(h.value()) + ", W " + shape_string(w.value()));
    }
    Var mixed = add(scale(z.back(), 1.0 - epsilon), scale(h, epsilon));
    Var out = matmul(matmul(adjacency, mixed), w);
    z.push_back(l < weights.size() ? activate(out, phi) : out);
  }
  return z;
}

Var topological_assignment(Var z) { return softmax(z); }

// ---------------------------------------------------------------------------

namespace {

struct SharpenParts {
  Vector f;  // column sums
  Matrix a;  // numerators c^2 / f
  Vector s;  // row denominators
};

SharpenParts sharpen_parts(const Matrix& c, bool literal) {
  if ((c.array() < 0.0).any()) fail(ErrorCode::domain, "sharpen: negative assignment");
  SharpenParts p;
  p.f = c.colwise().sum().transpose();
  p.a = Matrix::Zero(c.rows(), c.cols());
  p.s = Vector::Zero(c.rows());
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    if (p.f(j) <= 0.0) continue;
    p.a.col(j) = c.col(j).array().square() / p.f(j);
    p.s += literal ? Vector(c.col(j) / p.f(j)) : Vector(p.a.col(j));
  }
  return p;
}

}  // namespace

Matrix sharpen(const Matrix& c, bool literal) {
  SharpenParts p = sharpen_parts(c, literal);
  Matrix out = Matrix::Zero(c.rows(), c.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (p.s(i) > 0.0) out.row(i) = p.a.row(i) / p.s(i);
  }
  return out;
}

Var sharpen(Var c, bool literal) {
  Tape& tape = *c.tape();
  const std::size_t ic = c.id();
  return tape.record(sharpen(c.value(), literal), {c}, [ic, literal](Tape& tp, std::size_t self) {
    const Matrix& cv = tp.value(ic);
    const Matrix& g = tp.grad(self);
    SharpenParts p = sharpen_parts(cv, literal);
    const Eigen::Index rows = cv.rows(), cols = cv.cols();
    Matrix ga = Matrix::Zero(rows, cols);  // dL/da
    Vector gs = Vector::Zero(rows);        // dL/ds
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (p.s(i) <= 0.0) continue;
      ga.row(i) = g.row(i) / p.s(i);
      gs(i) = -g.row(i).dot(p.a.row(i)) / (p.s(i) * p.s(i));
    }
    Matrix dc = Matrix::Zero(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double f = p.f(j);
      if (f <= 0.0) continue;
      // a_ij = c_ij^2 / f_j; literal: s_i also sums b_ij = c_ij / f_j
      Vector ga_j = ga.col(j);
      if (!literal) ga_j += gs;
      double through_f = -ga_j.dot(cv.col(j).array().square().matrix()) / (f * f);
      dc.col(j) = (ga_j.array() * 2.0 * cv.col(j).array() / f).matrix();
      if (literal) {
        through_f -= gs.dot(cv.col(j)) / (f * f);
        dc.col(j) += gs / f;
      }
      dc.col(j).array() += through_f;
    }
    tp.accumulate(ic, dc);
  });
}

ClusterLosses clustering_losses(Var encoding_rows, Var topological_rows, bool literal_sharpen,
                                const ClusterTargets* frozen) {
  if (encoding_rows.rows() != topological_rows.rows() || encoding_rows.cols() != topological_rows.cols()) {
    fail(ErrorCode::dimension, "clustering_losses: " + shape_string(encoding_rows.value()) + " vs " +
                                   shape_string(topological_rows.value()));
  }
  Tape& tape = *topological_rows.tape();
  const double inv_batch = 1.0 / static_cast<double>(topological_rows.rows());
  ClusterTargets targets = frozen ? *frozen
                                  : ClusterTargets{sharpen(topological_rows.value(), literal_sharpen),
                                                   sharpen(encoding_rows.value(), literal_sharpen)};
  Var top_target = tape.constant(targets.topological);
  Var enc_target = tape.constant(targets.encoding);
  return ClusterLosses{scale(kl_divergence(top_target, topological_rows), inv_batch),
                       scale(kl_divergence(enc_target, topological_rows), inv_batch), std::move(targets)};
}

Var film_condition(Var u, Var assignment, const ClusterModel& model) {
  if (assignment.rows() != model.gamma_weight.cols() || u.rows() != model.gamma_weight.rows()) {
    fail(ErrorCode::dimension, "film_condition: embedding " + shape_string(u.value()) + ", assignment " +
                                   shape_string(assignment.value()) + ", gamma " +
                                   shape_string(model.gamma_weight.value()));
  }
  Var gamma = affine(model.gamma_weight, model.gamma_bias, assignment);
  Var beta = affine(model.beta_weight, model.beta_bias, assignment);
  return add(hadamard(gamma, u), beta);
}

Var condition_embedding(Var embedding, const ClusterModel& model) {
  EncodingResult enc = encoding_assignment(embedding, model);
  Var sharpened = transpose(sharpen(transpose(enc.assignment), model.paper_literal_sharpen));
  return film_condition(embedding, sharpened, model);
}

BatchClusterOutput cluster_batch(std::span<const Var> embeddings, std::span<const std::vector<ItemId>> item_sets,
                                 const ClusterModel& model, const ClusterTargets* frozen) {
  const std::size_t batch = embeddings.size();
  if (batch < 2) fail(ErrorCode::contract, "clustering needs a batch of at least 2 users");
  Tape& tape = *embeddings.front().tape();

  std::vector<EncodingResult> encodings;
  std::vector<Var> assignments, rec_terms;
  for (const Var& e : embeddings) {
    encodings.push_back(encoding_assignment(e, model));
    assignments.push_back(encodings.back().assignment);
    rec_terms.push_back(reconstruction_loss(encodings.back()));
  }

  BatchClusterOutput out;
  out.reconstruction = scale(sum(stack_rows(rec_terms)), 1.0 / static_cast<double>(batch));
  out.encoding_rows = stack_rows(assignments);

  Matrix values(static_cast<Eigen::Index>(batch), embeddings.front().rows());
  for (std::size_t b = 0; b < batch; ++b) values.row(static_cast<Eigen::Index>(b)) = embeddings[b].value().transpose();
  out.graph = build_relation_graph(values, item_sets, model.neighbors, model.sigma);

  // encoder-side representations of each user's best autoencoder
  std::vector<Var> layers;
  for (int l = 0; l <= model.encoder_depth(); ++l) {
    std::vector<Var> rows;
    for (const auto& enc : encodings) {
      rows.push_back(enc.passes[static_cast<std::size_t>(enc.best)].layers[static_cast<std::size_t>(l)]);
    }
    layers.push_back(stack_rows(rows));
  }
  std::vector<Var> z = gcn_forward(layers, tape.constant(out.graph.normalized_adjacency), model.gcn, model.epsilon,
                                   model.gcn_activation);
  out.topological_rows = topological_assignment(z.back());

  ClusterLosses losses =
      clustering_losses(out.encoding_rows, out.topological_rows, model.paper_literal_sharpen, frozen);
  out.targets = std::move(losses.targets);
  out.mod = losses.mod;
  out.combo = losses.combo;
  out.total = total_cluster_loss(out.reconstruction, out.mod, out.combo);
  return out;
}

}  // namespace clusterseq
