// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// `acceptance 3 7` runs only the listed criteria.

#include "clusterseq/clustering.hpp"
#include "clusterseq/core/error.hpp"
#include "clusterseq/core/gradcheck.hpp"
#include "clusterseq/eval.hpp"
#include "clusterseq/meta.hpp"
#include "clusterseq/objective.hpp"
#include "clusterseq/synthgen.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

using namespace clusterseq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double uniform_rank_mrr(int candidates = 101) {
  double s = 0.0;
  for (int r = 1; r <= candidates; ++r) s += 1.0 / r;
  return s / candidates;
}

Corpus planted_corpus(const PlantedSpec& spec, int shots, double test_fraction) {
  Corpus corpus = preprocess(generate(spec).interactions, shots, shots);
  split_users(corpus, test_fraction, shots);
  return corpus;
}

std::vector<ItemId> episode_items(const TaskEpisode& e) {
  std::set<ItemId> s(e.support.begin(), e.support.end());
  s.insert(e.query);
  return {s.begin(), s.end()};
}

std::vector<TaskEpisode> train_episodes(const Corpus& corpus, std::size_t n, int shots, Rng& rng) {
  const std::vector<UserId> users = corpus.users(UserSplit::train);
  std::vector<TaskEpisode> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_episode(corpus, users[rng() % users.size()], shots, rng));
  return out;
}

std::string checkpoint_bytes(const ParameterStore& s) {
  std::ostringstream out;
  save_checkpoint(s, out);
  return out.str();
}

// 1
Outcome gradient_fidelity() {
  const auto start = Clock::now();
  PlantedSpec spec;
  spec.items = 40;
  Corpus corpus = planted_corpus(spec, 3, 0.1);
  ModelConfig c;
  c.items = static_cast<int>(corpus.item_count());
  c.dim = 4;
  c.shots = 3;
  c.clusters = 2;
  Rng rng(11);
  const ParameterStore theta = testutil::perturbed(initial_parameters(c, rng), rng);
  const std::vector<TaskEpisode> batch = train_episodes(corpus, 4, 3, rng);
  std::vector<std::vector<ItemId>> sets;
  for (const TaskEpisode& e : batch) sets.push_back(episode_items(e));

  // sum of L_S and L_Q over the batch plus L_CM; sharpened targets held fixed
  auto graph = [&](Binder& b, const ClusterTargets* frozen, ClusterTargets* targets) {
    BoundModel model = BoundModel::bind(b, c);
    Var total = b.tape().constant(Matrix::Zero(1, 1));
    std::vector<Var> embeddings;
    for (const TaskEpisode& e : batch) {
      QueryLoss q = query_loss(e, model);
      total = add(total, add(support_loss(e, model), q.loss));
      embeddings.push_back(q.embedding);
    }
    BatchClusterOutput out = cluster_batch(embeddings, sets, *model.cluster, frozen);
    if (targets) *targets = out.targets;
    return add(total, out.total);
  };
  ClusterTargets targets;
  {
    Tape t;
    Binder b(t, theta);
    graph(b, nullptr, &targets);
  }
  // gradients below 1e-6 are compared in absolute terms
  GradientCheckReport r = check_gradients([&](Binder& b) { return graph(b, &targets, nullptr); }, theta, 3e-5,
                                          nullptr, Stencil::five_point, 1e-6);
  const double elapsed = seconds_since(start);
  return {r.max_relative_error <= 1e-4 && elapsed < 30.0,
          format("max relative error %.2e over %zu coordinates (<= 1e-4, worst %s), %.1f s (< 30 s)",
                 r.max_relative_error, r.coordinates, r.worst_parameter.c_str(), elapsed)};
}

// 2
Outcome metric_oracles() {
  Rng rng(2);
  std::uniform_int_distribution<int> pick(1, 101), length(1, 200), coarse(0, 20);
  int metric_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> ranks(static_cast<std::size_t>(length(rng)));
    for (int& r : ranks) r = pick(rng);
    std::vector<double> rr, hit, gain, top;
    for (int r : ranks) {
      rr.push_back(1.0 / r);
      hit.push_back(r == 1 ? 1.0 : 0.0);
      gain.push_back(r <= 5 ? 1.0 / std::log2(r + 1.0) : 0.0);
      top.push_back(r <= 10 ? 1.0 : 0.0);
    }
    const auto n = static_cast<double>(ranks.size());
    auto mean = [n](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / n; };
    const RankingMetrics m = metrics_from_ranks(ranks);
    if (m.mrr != mean(rr) || m.hit1 != mean(hit) || m.ndcg5 != mean(gain) || m.hr10 != mean(top) ||
        m.users != ranks.size()) {
      ++metric_mismatch;
    }
  }
  int rank_mismatch = 0, with_ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> negatives(100);
    for (double& x : negatives) x = coarse(rng) * 0.5;
    const double positive = coarse(rng) * 0.5;
    if (std::count(negatives.begin(), negatives.end(), positive) > 0) ++with_ties;
    // sort (score, is_positive): the positive lands after equal negatives
    std::vector<std::pair<double, int>> all{{positive, 1}};
    for (double x : negatives) all.push_back({x, 0});
    std::sort(all.begin(), all.end());
    const auto at = std::find(all.begin(), all.end(), std::pair<double, int>{positive, 1});
    if (rank_positive(positive, negatives) != static_cast<int>(at - all.begin()) + 1) ++rank_mismatch;
  }
  return {metric_mismatch == 0 && rank_mismatch == 0 && with_ties > 0,
          format("metric mismatches %d/1000, rank mismatches %d/1000 (%d score sets with ties)", metric_mismatch,
                 rank_mismatch, with_ties)};
}

// 3
Outcome calibration() {
  PlantedSpec spec;
  spec.users = 3000;
  spec.items = 2000;
  spec.weights.assign(50, 1.0 / 50);
  spec.seed = 1;
  Corpus corpus = planted_corpus(spec, 3, 0.5);
  ModelConfig c;
  c.items = static_cast<int>(corpus.item_count());
  Rng rng(1);
  EvalReport r = evaluate(initial_parameters(c, rng), corpus, c, {.seed = 1});
  const double expected = uniform_rank_mrr();
  const double gap = std::abs(r.metrics.mrr - expected);
  return {gap <= 0.01 && r.metrics.users >= 500,
          format("untrained MRR %.4f vs uniform %.4f (|diff| %.4f <= 0.01) over %zu users (>= 500)", r.metrics.mrr,
                 expected, gap, r.metrics.users)};
}

struct TrainedRun {
  ParameterStore theta;
  EvalReport report;
  double seconds = 0.0;
};

TrainedRun train_and_evaluate(const Corpus& corpus, MetaConfig config) {
  config.model.items = static_cast<int>(corpus.item_count());
  const auto start = Clock::now();
  TrainResult trained = train(corpus, config);
  TrainedRun run{trained.parameters, {}, seconds_since(start)};
  run.report = evaluate(run.theta, corpus, config.model, {.seed = config.seed, .alpha = config.alpha});
  return run;
}

std::string histogram_text(const ClusterUsage& u) {
  std::string s;
  for (std::size_t h : u.histogram) s += (s.empty() ? "" : "/") + std::to_string(h);
  return s;
}

// 4 and 6 share one training run
struct DefaultRun {
  Corpus corpus;
  MetaConfig config;
  TrainedRun run;
};

const DefaultRun& default_run() {
  static const DefaultRun d = [] {
    DefaultRun out;
    out.corpus = planted_corpus(PlantedSpec{}, 3, 0.1);
    out.config.model.items = static_cast<int>(out.corpus.item_count());
    out.run = train_and_evaluate(out.corpus, out.config);
    return out;
  }();
  return d;
}

Outcome learning_signal() {
  const DefaultRun& d = default_run();
  const double baseline = uniform_rank_mrr();
  const double mrr = d.run.report.metrics.mrr;
  return {mrr >= 3.0 * baseline && d.run.seconds < 600.0,
          format("test MRR %.4f = %.2fx random %.4f (>= 3x) over %zu users, training %.0f s (< 600 s)", mrr,
                 mrr / baseline, baseline, d.run.report.metrics.users, d.run.seconds)};
}

Outcome anti_collapse() {
  const DefaultRun& d = default_run();
  ClusterUsage u = inspect_clusters(d.run.theta, d.corpus, d.config.model);
  const std::size_t used = u.clusters_above(0.05);
  return {used >= 2 && u.entropy >= 0.5, format("usage %s: %zu clusters above 5%% (>= 2), entropy %.3f nats (>= 0.5)",
                                                histogram_text(u).c_str(), used, u.entropy)};
}

// 5
Outcome ablation_direction() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PlantedSpec spec;
    spec.seed = seed;
    PlantedCorpus planted = generate(spec);
    Corpus corpus = preprocess(planted.interactions, 3, 3);
    split_users(corpus, 0.3, 3);
    auto minor = [&](const std::string& u) { return planted.labels.at(u) >= 2; };
    MetaConfig config;
    config.seed = seed;
    const RankingMetrics full = train_and_evaluate(corpus, config).report.subset(minor);
    config.model.use_clustering = false;
    const RankingMetrics plain = train_and_evaluate(corpus, config).report.subset(minor);
    if (full.mrr > plain.mrr) ++wins;
    detail += format(" %.3f/%.3f", full.mrr, plain.mrr);
    std::fflush(stdout);
  }
  return {wins >= 4, format("clustering beats no-clustering on minor-user MRR in %d/5 seeds (>= 4); full/plain:%s",
                            wins, detail.c_str())};
}

// 7
Outcome sharpening() {
  Rng rng(7);
  std::uniform_int_distribution<int> rows(2, 16), cols(2, 8);
  int increased = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix c = testutil::random_matrix(rng, rows(rng), cols(rng), 0.0, 1.0);
    const Matrix a = (c.array().colwise() / c.rowwise().sum().array()).matrix();
    const Matrix s = sharpen(a);
    bool any = false;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double rise = testutil::entropy(s.row(i)) - testutil::entropy(a.row(i));
      worst = std::max(worst, rise);
      if (rise > 1e-12) any = true;
    }
    if (any) ++increased;
  }

  bool fixed_point = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = cols(rng);
    Matrix one_hot = Matrix::Zero(rows(rng), m);
    for (Eigen::Index i = 0; i < one_hot.rows(); ++i) one_hot(i, static_cast<Eigen::Index>(rng() % m)) = 1.0;
    if (sharpen(one_hot) != one_hot) fixed_point = false;
  }

  const Matrix oracle = sharpen(testutil::mat({{0.5, 0.5}, {0.9, 0.1}}));
  const double oracle_error = (oracle - testutil::mat({{0.3, 0.7}, {0.972, 0.028}})).cwiseAbs().maxCoeff();

  return {increased == 0 && fixed_point && oracle_error <= 1e-6,
          format("row entropy rose in %d/1000 matrices (max rise %.3f nats, want 0); one-hot fixed point %s; "
                 "hand oracle error %.1e (<= 1e-6)",
                 increased, worst, fixed_point ? "exact" : "BROKEN", oracle_error)};
}

// 8
Outcome determinism() {
  PlantedSpec spec;
  spec.users = 120;
  spec.seed = 8;
  Corpus corpus = planted_corpus(spec, 3, 0.2);
  MetaConfig config;
  config.model.items = static_cast<int>(corpus.item_count());
  config.model.dim = 8;
  config.batch_size = 16;
  config.epochs = 3;
  config.seed = 8;
  const std::string a = checkpoint_bytes(train(corpus, config).parameters);
  const std::string b = checkpoint_bytes(train(corpus, config).parameters);
  std::istringstream in(a);
  const ParameterStore loaded = load_checkpoint(in);
  const std::string round_trip = checkpoint_bytes(loaded);

  auto report = [&] {
    EvalReport r = evaluate(loaded, corpus, config.model, {.seed = 8});
    std::ostringstream csv;
    write_report_csv(csv, r);
    return csv.str() + report_json(r);
  };
  const bool same_train = a == b, same_round_trip = a == round_trip, same_report = report() == report();
  return {same_train && same_round_trip && same_report,
          format("same-seed checkpoints %s, round trip %s, evaluation report %s (%zu checkpoint bytes)",
                 same_train ? "identical" : "DIFFER", same_round_trip ? "identical" : "DIFFERS",
                 same_report ? "identical" : "DIFFERS", a.size())};
}

// 9
Outcome inner_descent() {
  PlantedSpec spec;
  spec.items = 40;
  spec.seed = 9;
  Corpus corpus = planted_corpus(spec, 4, 0.1);
  ModelConfig c;
  c.items = static_cast<int>(corpus.item_count());
  c.dim = 4;
  c.shots = 4;
  auto support = [&](const ParameterStore& theta, const ParameterStore* omega, const TaskEpisode& e) {
    Tape t;
    Binder b(t, theta, omega);
    return support_loss(e, BoundModel::bind(b, c)).scalar();
  };
  int descended = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const ParameterStore theta = initial_parameters(c, rng);
    const TaskEpisode e = train_episodes(corpus, 1, 4, rng).front();
    const ParameterStore omega = adapt(theta, e, c, 1e-3, 1);
    if (support(theta, &omega, e) <= support(theta, nullptr, e)) ++descended;
  }
  return {descended >= 95, format("one step at alpha 1e-3 lowered L_S on %d/100 episodes (>= 95)", descended)};
}

// 10
Outcome first_order_direction() {
  PlantedSpec spec;
  spec.items = 24;
  spec.seed = 10;
  Corpus corpus = planted_corpus(spec, 3, 0.1);
  MetaConfig config;
  config.model.items = static_cast<int>(corpus.item_count());
  config.model.dim = 2;
  config.model.clusters = 2;
  config.batch_size = 2;
  int agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    const ParameterStore theta = initial_parameters(config.model, rng);
    const std::vector<TaskEpisode> batch = train_episodes(corpus, 2, 3, rng);
    const GradientMap g = meta_gradient(batch, theta, config);
    const double h = 1e-5;
    double dot = 0.0;
    for (const auto& [name, p] : theta) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        ParameterStore plus = theta, minus = theta;
        plus.at(name).value.data()[i] += h;
        minus.at(name).value.data()[i] -= h;
        const double fd = (meta_objective(batch, plus, config) - meta_objective(batch, minus, config)) / (2 * h);
        dot += fd * g.at(name).data()[i];
      }
    }
    if (dot > 0.0) ++agree;
  }
  return {agree >= 45, format("first-order gradient agrees in direction on %d/50 trials (>= 45)", agree)};
}

// Not a criterion: the same training with the output softmax disabled.
void softmax_ablation_note() {
  DefaultRun d;
  d.corpus = planted_corpus(PlantedSpec{}, 3, 0.1);
  d.config.model.output_softmax = false;
  d.run = train_and_evaluate(d.corpus, d.config);
  d.config.model.items = static_cast<int>(d.corpus.item_count());
  ClusterUsage u = inspect_clusters(d.run.theta, d.corpus, d.config.model);
  std::printf("note  without output softmax: test MRR %.4f (%.2fx random), usage %s, entropy %.3f nats\n",
              d.run.report.metrics.mrr, d.run.report.metrics.mrr / uniform_rank_mrr(), histogram_text(u).c_str(),
              u.entropy);
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},   {2, "metric oracles", metric_oracles},
      {3, "random calibration", calibration},        {4, "learning signal", learning_signal},
      {5, "ablation direction", ablation_direction}, {6, "anti-collapse", anti_collapse},
      {7, "sharpening", sharpening},                 {8, "determinism", determinism},
      {9, "inner descent", inner_descent},           {10, "first-order direction", first_order_direction},
  };
  std::set<int> only;
  bool note = true;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--no-note") {
      note = false;
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, std::string("error: ") + std::string(to_string(e.code())) + ": " + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %2d %-22s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  if (note && (only.empty() || only.contains(4))) softmax_ablation_note();
  std::printf("%d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
