#include "clusterseq/eval.hpp"

#include "clusterseq/clustering.hpp"
#include "clusterseq/core/error.hpp"
#include "clusterseq/core/parallel.hpp"
#include "clusterseq/meta.hpp"
#include "clusterseq/objective.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace clusterseq {

int rank_positive(double positive, std::span<const double> negatives) {
  if (!std::isfinite(positive)) fail(ErrorCode::evaluation, "non-finite positive score");
  int rank = 1;
  for (double n : negatives) {
    if (!std::isfinite(n)) fail(ErrorCode::evaluation, "non-finite negative score");
    if (n <= positive) ++rank;
  }
  return rank;
}

RankingMetrics metrics_from_ranks(std::span<const int> ranks) {
  if (ranks.empty()) fail(ErrorCode::contract, "no ranks to aggregate");
  RankingMetrics m;
  for (int r : ranks) {
    if (r < 1) fail(ErrorCode::contract, "rank must be at least 1, got " + std::to_string(r));
    m.mrr += 1.0 / r;
    m.hit1 += r == 1 ? 1.0 : 0.0;
    m.ndcg5 += r <= 5 ? 1.0 / std::log2(r + 1.0) : 0.0;
    m.hr10 += r <= 10 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hit1 /= n;
  m.ndcg5 /= n;
  m.hr10 /= n;
  m.users = ranks.size();
  return m;
}

RankingMetrics EvalReport::subset(const std::function<bool(const std::string&)>& keep) const {
  std::vector<int> kept;
  for (const UserRank& r : ranks) {
    if (keep(r.user)) kept.push_back(r.rank);
  }
  return metrics_from_ranks(kept);
}

std::uint64_t user_seed(std::uint64_t seed, const std::string& user) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : user) mix(static_cast<unsigned char>(c));
  return h;
}

EvalReport evaluate(const ParameterStore& theta, const Corpus& corpus, const ModelConfig& config,
                    const EvalOptions& options) {
  config.validate();
  check_compatible(theta, config);
  if (static_cast<std::size_t>(config.items) != corpus.item_count()) {
    fail(ErrorCode::compatibility, "checkpoint vocabulary has " + std::to_string(config.items) +
                                       " items, corpus has " + std::to_string(corpus.item_count()));
  }
  const std::vector<UserId> users = corpus.users(UserSplit::test);
  if (users.empty()) fail(ErrorCode::evaluation, "no test users to evaluate");

  EvalReport report;
  report.negatives = options.negatives;
  report.ranks.resize(users.size());
  parallel_for(users.size(), [&](std::size_t i) {
    const UserId u = users[i];
    Rng rng(user_seed(options.seed, corpus.user_ids[u]));
    TaskEpisode e = sample_episode(corpus, u, config.shots, rng, options.negatives);
    ParameterStore omega = adapt(theta, e, config, options.alpha, options.inner_steps);
    Tape tape;
    Binder binder(tape, theta, &omega, [](const std::string&, const Parameter&) { return false; });
    BoundModel model = BoundModel::bind(binder, config);
    Prediction p = predict_user(e.support, model);
    std::vector<double> negatives;
    negatives.reserve(e.query_negatives.size());
    for (ItemId n : e.query_negatives) negatives.push_back(score(p, n, model).scalar());
    report.ranks[i] = UserRank{corpus.user_ids[u], rank_positive(score(p, e.query, model).scalar(), negatives)};
  });
  std::vector<int> ranks;
  for (const UserRank& r : report.ranks) ranks.push_back(r.rank);
  report.metrics = metrics_from_ranks(ranks);
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "user,rank\n";
  for (const UserRank& r : report.ranks) out << r.user << ',' << r.rank << '\n';
  out << "MRR," << fixed(report.metrics.mrr) << '\n';
  out << "Hit@1," << fixed(report.metrics.hit1) << '\n';
  out << "NDCG@5," << fixed(report.metrics.ndcg5) << '\n';
  out << "HR@10," << fixed(report.metrics.hr10) << '\n';
}

std::string report_json(const EvalReport& report) {
  const RankingMetrics& m = report.metrics;
  return "{\"users\":" + std::to_string(m.users) + ",\"negatives\":" + std::to_string(report.negatives) +
         ",\"mrr\":" + fixed(m.mrr) + ",\"hit1\":" + fixed(m.hit1) + ",\"ndcg5\":" + fixed(m.ndcg5) +
         ",\"hr10\":" + fixed(m.hr10) + "}";
}

std::size_t ClusterUsage::clusters_above(double share) const {
  std::size_t total = 0, n = 0;
  for (std::size_t h : histogram) total += h;
  for (std::size_t h : histogram) {
    if (total > 0 && static_cast<double>(h) > share * static_cast<double>(total)) ++n;
  }
  return n;
}

ClusterUsage inspect_clusters(const ParameterStore& theta, const Corpus& corpus, const ModelConfig& config) {
  config.validate();
  if (!config.use_clustering) fail(ErrorCode::configuration, "cluster inspection needs the clustering module");
  check_compatible(theta, config);
  if (static_cast<std::size_t>(config.items) != corpus.item_count()) {
    fail(ErrorCode::compatibility, "checkpoint vocabulary has " + std::to_string(config.items) +
                                       " items, corpus has " + std::to_string(corpus.item_count()));
  }
  ClusterUsage usage;
  usage.rows.resize(corpus.user_count());
  parallel_for(corpus.user_count(), [&](std::size_t u) {
    const auto& seq = corpus.sequences[u];
    if (seq.size() + 1 < static_cast<std::size_t>(config.shots)) {
      fail(ErrorCode::episode, "user " + corpus.user_ids[u] + " is shorter than K - 1");
    }
    const std::span<const ItemId> prefix(seq.data(), static_cast<std::size_t>(config.shots - 1));
    Tape tape;
    Binder binder(tape, theta, nullptr, [](const std::string&, const Parameter&) { return false; });
    BoundModel model = BoundModel::bind(binder, config);
    EncodingResult enc = encoding_assignment(predict_user(prefix, model).raw, *model.cluster);
    UserAssignment& row = usage.rows[u];
    row.user = corpus.user_ids[u];
    row.soft = enc.assignment.value().col(0);
    Eigen::Index best = 0;
    row.soft.maxCoeff(&best);
    row.cluster = static_cast<int>(best);
  });
  usage.histogram.assign(static_cast<std::size_t>(config.clusters), 0);
  for (const UserAssignment& r : usage.rows) ++usage.histogram[static_cast<std::size_t>(r.cluster)];
  const auto n = static_cast<double>(usage.rows.size());
  for (std::size_t h : usage.histogram) {
    if (h > 0) usage.entropy -= (static_cast<double>(h) / n) * std::log(static_cast<double>(h) / n);
  }
  return usage;
}

void write_assignments_csv(std::ostream& out, const ClusterUsage& usage) {
  out << "user,cluster";
  for (std::size_t j = 0; j < usage.histogram.size(); ++j) out << ",p" << j;
  out << '\n';
  for (const UserAssignment& r : usage.rows) {
    out << r.user << ',' << r.cluster;
    for (double p : r.soft) out << ',' << fixed(p);
    out << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const ClusterUsage& usage) {
  const auto n = static_cast<double>(usage.rows.size());
  out << "cluster,users,share\n";
  for (std::size_t j = 0; j < usage.histogram.size(); ++j) {
    out << j << ',' << usage.histogram[j] << ',' << fixed(n > 0 ? static_cast<double>(usage.histogram[j]) / n : 0.0)
        << '\n';
  }
}

}  // namespace clusterseq
