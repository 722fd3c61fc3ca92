#include "clusterseq/meta.hpp"

#include "clusterseq/core/binary_io.hpp"
#include "clusterseq/core/error.hpp"
#include "clusterseq/core/parallel.hpp"
#include "clusterseq/objective.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>

namespace clusterseq {

void MetaConfig::validate() const {
  model.validate();
  if (!(alpha > 0.0)) fail(ErrorCode::configuration, "alpha must be positive");
  if (!(beta >= 0.0)) fail(ErrorCode::configuration, "beta must be nonnegative");
  if (inner_steps < 1) fail(ErrorCode::configuration, "inner steps must be at least 1");
  if (batch_size < 2) fail(ErrorCode::configuration, "meta-batch size must be at least 2");
  if (epochs < 0) fail(ErrorCode::configuration, "epochs must be nonnegative");
}

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

Partition label_for(const std::string& name) {
  if (starts_with(name, "enc.") || starts_with(name, "dec.") || starts_with(name, "fc1.") ||
      starts_with(name, "fc2.") || starts_with(name, "fc3.")) {
    return Partition::adapted;
  }
  if (name == names::item_embedding || starts_with(name, "ae") || starts_with(name, "gcn.") ||
      starts_with(name, "film.")) {
    return Partition::shared;
  }
  return Partition::unassigned;
}

bool is_adapted(const std::string&, const Parameter& p) { return p.partition == Partition::adapted; }

std::vector<ItemId> episode_items(const TaskEpisode& e) {
  std::vector<ItemId> items = e.support;
  items.push_back(e.query);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

// One episode's query graph, kept alive until the batch-level gradient
// arrives. Binder refers to `adapted`, so instances never move.
struct QueryGraph {
  ParameterStore adapted;
  Tape tape;
  std::unique_ptr<Binder> binder;
  Var loss;
  Var embedding;
};

std::unique_ptr<QueryGraph> build_query(const ParameterStore& theta, const TaskEpisode& episode,
                                        const MetaConfig& config, bool trainable) {
  auto q = std::make_unique<QueryGraph>();
  q->adapted = adapt(theta, episode, config.model, config.alpha, config.inner_steps);
  Binder::Predicate all = [](const std::string&, const Parameter&) { return true; };
  Binder::Predicate none = [](const std::string&, const Parameter&) { return false; };
  q->binder = std::make_unique<Binder>(q->tape, theta, &q->adapted, trainable ? all : none);
  BoundModel model = BoundModel::bind(*q->binder, config.model);
  QueryLoss ql = query_loss(episode, model);
  q->loss = ql.loss;
  q->embedding = ql.embedding;
  return q;
}

std::vector<std::unique_ptr<QueryGraph>> build_queries(std::span<const TaskEpisode> batch,
                                                       const ParameterStore& theta, const MetaConfig& config,
                                                       bool trainable) {
  std::vector<std::unique_ptr<QueryGraph>> graphs(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { graphs[i] = build_query(theta, batch[i], config, trainable); });
  return graphs;
}

}  // namespace

ParameterStore partition_parameters(ParameterStore store) {
  std::string unknown;
  ParameterStore out;
  for (const auto& [name, p] : store) {
    const Partition label = label_for(name);
    if (label == Partition::unassigned) unknown += (unknown.empty() ? "" : ", ") + name;
    out.add(name, p.value, p.rank, label);
  }
  if (!unknown.empty()) fail(ErrorCode::configuration, "unlabeled parameters: " + unknown);
  return out;
}

ParameterStore initial_parameters(const ModelConfig& config, Rng& rng) {
  return partition_parameters(init_parameters(config, rng));
}

ParameterStore adapt(const ParameterStore& theta, const TaskEpisode& episode, const ModelConfig& config,
                     double alpha, int steps) {
  if (!(alpha > 0.0)) fail(ErrorCode::configuration, "alpha must be positive");
  if (steps < 1) fail(ErrorCode::configuration, "inner steps must be at least 1");
  ParameterStore omega = theta.subset(Partition::adapted);
  for (int step = 0; step < steps; ++step) {
    Tape tape;
    Binder binder(tape, theta, &omega, is_adapted);
    BoundModel model = BoundModel::bind(binder, config);
    Var loss = support_loss(episode, model);
    if (!std::isfinite(loss.scalar())) {
      fail(ErrorCode::training, "non-finite support loss for user " + std::to_string(episode.user));
    }
    tape.backward(loss);
    GradientMap g = binder.gradients();
    omega.apply_gradients(g, alpha);
  }
  return omega;
}

GradientMap meta_gradient(std::span<const TaskEpisode> batch, const ParameterStore& theta,
                          const MetaConfig& config, MetaStepLog* log) {
  if (batch.size() < 2) fail(ErrorCode::contract, "meta step needs at least 2 episodes");
  auto graphs = build_queries(batch, theta, config, true);

  MetaStepLog local;
  for (const auto& q : graphs) local.query_loss += q->loss.scalar();

  GradientMap total = zeros_like(theta);
  std::vector<Matrix> embedding_grads(batch.size());
  if (config.model.use_clustering) {
    Tape tape;
    std::vector<Var> embeddings;
    std::vector<std::vector<ItemId>> item_sets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      embeddings.push_back(tape.leaf(graphs[i]->embedding.value()));
      item_sets.push_back(episode_items(batch[i]));
    }
    Binder binder(tape, theta);
    ClusterModel cluster = ClusterModel::bind(binder, config.model);
    BatchClusterOutput out = cluster_batch(embeddings, item_sets, cluster);
    local.cluster_loss = out.total.scalar();
    if (std::isfinite(local.cluster_loss)) {
      tape.backward(out.total);
      accumulate(total, binder.gradients());
      for (std::size_t i = 0; i < batch.size(); ++i) embedding_grads[i] = tape.gradient(embeddings[i]);
    }
  }
  local.total = local.query_loss + local.cluster_loss;
  if (log) *log = local;
  if (!std::isfinite(local.total)) return total;

  std::vector<GradientMap> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    QueryGraph& q = *graphs[i];
    std::vector<Tape::Seed> seeds{{q.loss, Matrix::Ones(1, 1)}};
    if (embedding_grads[i].size() > 0) seeds.push_back({q.embedding, embedding_grads[i]});
    q.tape.backward(seeds);
    parts[i] = q.binder->gradients();
  });
  for (const GradientMap& part : parts) accumulate(total, part);
  return total;
}

double meta_objective(std::span<const TaskEpisode> batch, const ParameterStore& theta, const MetaConfig& config) {
  if (batch.size() < 2) fail(ErrorCode::contract, "meta step needs at least 2 episodes");
  auto graphs = build_queries(batch, theta, config, false);
  double total = 0.0;
  for (const auto& q : graphs) total += q->loss.scalar();
  if (config.model.use_clustering) {
    Tape tape;
    std::vector<Var> embeddings;
    std::vector<std::vector<ItemId>> item_sets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      embeddings.push_back(tape.constant(graphs[i]->embedding.value()));
      item_sets.push_back(episode_items(batch[i]));
    }
    Binder binder(tape, theta, nullptr, [](const std::string&, const Parameter&) { return false; });
    total += cluster_batch(embeddings, item_sets, ClusterModel::bind(binder, config.model)).total.scalar();
  }
  return total;
}

MetaStepLog meta_step(std::span<const TaskEpisode> batch, ParameterStore& theta, const MetaConfig& config) {
  MetaStepLog log;
  GradientMap g;
  try {
    g = meta_gradient(batch, theta, config, &log);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::training) throw;
    log.total = std::numeric_limits<double>::quiet_NaN();
    return log;
  }
  if (!std::isfinite(log.total) || !all_finite(g)) return log;
  theta.apply_gradients(g, config.beta);
  log.applied = true;
  return log;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,mean_query_loss,cluster_loss,wall_seconds\n";
  out.precision(9);
  for (const EpochLog& row : log) {
    out << row.epoch << ',' << row.mean_query_loss << ',' << row.cluster_loss << ',' << row.wall_seconds << '\n';
  }
}

TrainResult train(const Corpus& corpus, const MetaConfig& config, const TrainOptions& options) {
  config.validate();
  ModelConfig model = config.model;
  if (model.items != static_cast<int>(corpus.item_count())) {
    fail(ErrorCode::configuration, "config has " + std::to_string(model.items) + " items, corpus has " +
                                       std::to_string(corpus.item_count()));
  }
  std::vector<UserId> users = corpus.users(UserSplit::train);
  if (users.size() < static_cast<std::size_t>(config.batch_size)) {
    fail(ErrorCode::training, "corpus has " + std::to_string(users.size()) + " train users, fewer than batch size " +
                                  std::to_string(config.batch_size));
  }

  Rng rng(config.seed);
  TrainResult result;
  result.parameters = initial_parameters(model, rng);
  ParameterStore& theta = result.parameters;

  auto write_checkpoint = [&] {
    if (!options.checkpoint.empty()) save_checkpoint(theta, options.checkpoint);
  };
  auto write_log = [&] {
    if (options.log.empty()) return;
    std::ofstream out(options.log);
    if (!out) fail(ErrorCode::io, "cannot write training log " + options.log.string());
    write_training_log(out, result.log);
  };

  const auto start = std::chrono::steady_clock::now();
  const auto b = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(users.begin(), users.end(), rng);
    double query_sum = 0.0, cluster_sum = 0.0;
    std::size_t episodes = 0, batches = 0;
    for (std::size_t at = 0; at + 2 <= users.size(); at += b) {
      const std::size_t n = std::min(b, users.size() - at);
      std::vector<TaskEpisode> batch;
      batch.reserve(n);
      for (std::size_t i = 0; i < n; ++i) batch.push_back(sample_episode(corpus, users[at + i], model.shots, rng));
      MetaStepLog step = meta_step(batch, theta, config);
      query_sum += step.query_loss;
      cluster_sum += step.cluster_loss;
      episodes += n;
      ++batches;
    }
    EpochLog row;
    row.epoch = epoch;
    row.mean_query_loss = episodes ? query_sum / static_cast<double>(episodes) : 0.0;
    row.cluster_loss = batches ? cluster_sum / static_cast<double>(batches) : 0.0;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
    if (options.checkpoint_every > 0 && epoch % options.checkpoint_every == 0) {
      write_checkpoint();
      write_log();
    }
  }
  write_checkpoint();
  write_log();
  return result;
}

// ---------------------------------------------------------------------------

namespace {
const std::string kCheckpointMagic = "CSEQ1";
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const ParameterStore& store, std::ostream& out) {
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  binary::write_uint<std::uint16_t>(out, kCheckpointVersion);
  binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, p] : store) {
    binary::write_string(out, name);
    binary::write_uint<std::uint8_t>(out, static_cast<std::uint8_t>(p.partition));
    binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank));
    binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    if (p.rank == 2) binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) binary::write_f32(out, static_cast<float>(p.value(r, c)));
    }
  }
  if (!out) fail(ErrorCode::io, "checkpoint write failed");
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint " + path.string());
  save_checkpoint(store, out);
}

ParameterStore load_checkpoint(std::istream& in) {
  binary::expect_magic(in, kCheckpointMagic);
  const auto version = binary::read_uint<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::format, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = binary::read_uint<std::uint32_t>(in);
  ParameterStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = binary::read_string(in);
    const auto label = binary::read_uint<std::uint8_t>(in);
    if (label > 2) fail(ErrorCode::format, "bad partition label for " + name);
    const auto rank = binary::read_uint<std::uint32_t>(in);
    if (rank != 1 && rank != 2) fail(ErrorCode::format, "bad rank for " + name);
    const auto rows = binary::read_uint<std::uint32_t>(in);
    const std::uint32_t cols = rank == 2 ? binary::read_uint<std::uint32_t>(in) : 1;
    Matrix value(rows, cols);
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) value(r, c) = binary::read_f32(in);
    }
    if (store.contains(name)) fail(ErrorCode::format, "duplicate checkpoint entry " + name);
    store.add(name, std::move(value), static_cast<int>(rank), static_cast<Partition>(label));
  }
  return store;
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read checkpoint " + path.string());
  return load_checkpoint(in);
}

void check_compatible(const ParameterStore& store, const ModelConfig& config) {
  Rng rng(0);
  ParameterStore expected = init_parameters(config, rng);
  for (const auto& [name, p] : expected) {
    if (!store.contains(name)) fail(ErrorCode::compatibility, "checkpoint lacks parameter " + name);
    const Matrix& got = store.value(name);
    if (got.rows() != p.value.rows() || got.cols() != p.value.cols()) {
      fail(ErrorCode::compatibility, name + " is " + shape_string(got) + " in the checkpoint, " +
                                         shape_string(p.value) + " for this configuration");
    }
  }
  for (const auto& [name, p] : store) {
    if (!expected.contains(name)) fail(ErrorCode::compatibility, "unexpected checkpoint parameter " + name);
  }
}

}  // namespace clusterseq
