#include "doctest.h"

#include "clusterseq/core/error.hpp"
#include "clusterseq/meta.hpp"
#include "clusterseq/objective.hpp"
#include "clusterseq/synthgen.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace clusterseq;

namespace {

Corpus planted_corpus(int users, int items, std::uint64_t seed, int shots = 3) {
  PlantedSpec spec;
  spec.users = users;
  spec.items = items;
  spec.seed = seed;
  Corpus corpus = preprocess(generate(spec).interactions, shots, shots);
  split_users(corpus, 0.1, shots);
  return corpus;
}

MetaConfig tiny_config(const Corpus& corpus, int dim = 4, bool clustering = true) {
  MetaConfig c;
  c.model.items = static_cast<int>(corpus.item_count());
  c.model.dim = dim;
  c.model.shots = 3;
  c.model.clusters = 2;
  c.model.neighbors = 2;
  c.model.use_clustering = clustering;
  c.batch_size = 4;
  return c;
}

std::vector<TaskEpisode> episodes(const Corpus& corpus, std::size_t n, int shots, Rng& rng) {
  std::vector<UserId> users = corpus.users(UserSplit::train);
  std::vector<TaskEpisode> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_episode(corpus, users[rng() % users.size()], shots, rng));
  return out;
}

double support_value(const ParameterStore& theta, const ParameterStore* omega, const TaskEpisode& e,
                     const ModelConfig& c) {
  Tape t;
  Binder b(t, theta, omega);
  return support_loss(e, BoundModel::bind(b, c)).scalar();
}

std::string bytes_of(const ParameterStore& s) {
  std::ostringstream out;
  save_checkpoint(s, out);
  return out.str();
}

bool identical(const ParameterStore& a, const ParameterStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a) {
    if (!b.contains(name) || b.value(name) != p.value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("partition") {
  Corpus corpus = planted_corpus(60, 40, 1);
  MetaConfig c = tiny_config(corpus);
  Rng rng(1);
  ParameterStore s = initial_parameters(c.model, rng);
  CHECK(s.at("fc2.weight").partition == Partition::adapted);
  CHECK(s.at("enc.w_hz").partition == Partition::adapted);
  CHECK(s.at("ae0.layer0.weight").partition == Partition::shared);
  CHECK(s.at("gcn.w1").partition == Partition::shared);
  CHECK(s.at("film.beta.bias").partition == Partition::shared);
  CHECK(s.at(names::item_embedding).partition == Partition::shared);

  ParameterStore extra = init_parameters(c.model, rng);
  extra.add("mystery", Matrix::Zero(1, 1), 2);
  try {
    partition_parameters(extra);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::configuration);
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }
}

TEST_CASE("adapt") {
  Corpus corpus = planted_corpus(60, 40, 2);
  MetaConfig c = tiny_config(corpus);
  Rng rng(2);
  ParameterStore theta = initial_parameters(c.model, rng);
  const ParameterStore before = theta;
  TaskEpisode e = episodes(corpus, 1, 3, rng).front();

  ParameterStore omega = adapt(theta, e, c.model, 0.05, 1);
  CHECK(identical(theta, before));
  CHECK(omega.size() == theta.subset(Partition::adapted).size());

  // one step is exactly omega - alpha g
  Tape t;
  Binder b(t, theta, nullptr, [](const std::string&, const Parameter& p) { return p.partition == Partition::adapted; });
  GradientMap g = backward(support_loss(e, BoundModel::bind(b, c.model)), b);
  for (const auto& [name, p] : omega) CHECK(p.value == theta.value(name) - 0.05 * g.at(name));

  // no support terms: nothing moves
  ModelConfig literal = c.model;
  literal.paper_literal_indices = true;
  CHECK(identical(adapt(theta, e, literal, 0.05, 3), theta.subset(Partition::adapted)));

  CHECK_THROWS_AS(adapt(theta, e, c.model, 0.0, 1), Error);
  CHECK_THROWS_AS(adapt(theta, e, c.model, 0.1, 0), Error);
}

TEST_CASE("inner step descends") {
  Corpus corpus = planted_corpus(80, 40, 3, 4);
  MetaConfig c = tiny_config(corpus);
  c.model.shots = 4;
  int descended = 0, trials = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ParameterStore theta = initial_parameters(c.model, rng);
    TaskEpisode e = episodes(corpus, 1, 4, rng).front();
    const double before = support_value(theta, nullptr, e, c.model);
    ParameterStore omega = adapt(theta, e, c.model, 1e-3, 1);
    const double after = support_value(theta, &omega, e, c.model);
    ++trials;
    if (after <= before) ++descended;
  }
  CHECK(descended >= 95 * trials / 100);
}

TEST_CASE("meta step with zero rate is a no-op") {
  Corpus corpus = planted_corpus(60, 40, 4);
  MetaConfig c = tiny_config(corpus);
  c.beta = 0.0;
  Rng rng(4);
  ParameterStore theta = initial_parameters(c.model, rng);
  const std::string before = bytes_of(theta);
  const ParameterStore exact = theta;
  auto batch = episodes(corpus, 4, 3, rng);
  MetaStepLog log = meta_step(batch, theta, c);
  CHECK(log.applied);
  CHECK(identical(theta, exact));
  CHECK(bytes_of(theta) == before);
  CHECK_THROWS_AS(meta_step(std::span(batch).first(1), theta, c), Error);
}

TEST_CASE("summed gradients are linear in repeated episodes") {
  Corpus corpus = planted_corpus(60, 40, 5);
  MetaConfig c = tiny_config(corpus, 4, false);
  Rng rng(5);
  ParameterStore theta = initial_parameters(c.model, rng);
  TaskEpisode e = episodes(corpus, 1, 3, rng).front();
  std::vector<TaskEpisode> two(2, e), four(4, e);
  GradientMap g2 = meta_gradient(two, theta, c);
  GradientMap g4 = meta_gradient(four, theta, c);
  double worst = 0.0;
  for (const auto& [name, g] : g4) worst = std::max(worst, (g - 2.0 * g2.at(name)).cwiseAbs().maxCoeff());
  CHECK(worst <= 1e-12);

  ParameterStore a = theta, b = theta;
  c.beta = 0.01;
  meta_step(four, a, c);
  c.beta = 0.02;
  meta_step(two, b, c);
  for (const auto& [name, p] : a) CHECK((p.value - b.value(name)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("first-order direction agrees with finite differences") {
  Corpus corpus = planted_corpus(60, 24, 6);
  MetaConfig c = tiny_config(corpus, 2);
  c.batch_size = 2;
  int agree = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(100 + trial);
    ParameterStore theta = initial_parameters(c.model, rng);
    auto batch = episodes(corpus, 2, 3, rng);
    GradientMap g = meta_gradient(batch, theta, c);
    double dot = 0.0;
    const double h = 1e-5;
    for (const auto& [name, p] : theta) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        ParameterStore plus = theta, minus = theta;
        plus.at(name).value.data()[i] += h;
        minus.at(name).value.data()[i] -= h;
        const double fd = (meta_objective(batch, plus, c) - meta_objective(batch, minus, c)) / (2 * h);
        dot += fd * g.at(name).data()[i];
      }
    }
    if (dot > 0.0) ++agree;
  }
  CHECK(agree >= 9 * trials / 10);
}

TEST_CASE("checkpoint round trip") {
  Corpus corpus = planted_corpus(60, 40, 7);
  MetaConfig c = tiny_config(corpus);
  Rng rng(7);
  ParameterStore theta = initial_parameters(c.model, rng);
  const std::string first = bytes_of(theta);
  CHECK(first.substr(0, 5) == "CSEQ1");
  std::istringstream in(first);
  ParameterStore loaded = load_checkpoint(in);
  CHECK(bytes_of(loaded) == first);
  CHECK(loaded.at("fc1.bias").partition == Partition::adapted);
  CHECK(loaded.at("fc1.bias").rank == 1);
  CHECK(loaded.at("gcn.w2").partition == Partition::shared);
  for (const auto& [name, p] : theta) {
    CHECK((p.value - loaded.value(name)).cwiseAbs().maxCoeff() <= 1e-6);
  }
  check_compatible(loaded, c.model);
  ModelConfig wider = c.model;
  wider.dim = 8;
  CHECK_THROWS_AS(check_compatible(loaded, wider), Error);

  std::istringstream bad("CSEQ2....");
  CHECK_THROWS_AS(load_checkpoint(bad), Error);
  std::istringstream truncated(first.substr(0, first.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(truncated), Error);
}

TEST_CASE("training") {
  Corpus corpus = planted_corpus(60, 40, 8);
  MetaConfig c = tiny_config(corpus, 8);
  c.batch_size = 8;
  const auto dir = std::filesystem::temp_directory_path() / "clusterseq_test_meta";
  std::filesystem::create_directories(dir);

  c.epochs = 0;
  TrainOptions zero{dir / "zero.cseq", dir / "zero.csv"};
  TrainResult init = train(corpus, c, zero);
  Rng rng(c.seed);
  CHECK(bytes_of(initial_parameters(c.model, rng)) == bytes_of(load_checkpoint(zero.checkpoint)));

  c.epochs = 3;
  TrainOptions a{dir / "a.cseq", dir / "a.csv"}, b{dir / "b.cseq", dir / "b.csv"};
  train(corpus, c, a);
  train(corpus, c, b);
  std::ifstream fa(a.checkpoint, std::ios::binary), fb(b.checkpoint, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(!sa.empty());
  CHECK(sa == sb);
  std::ifstream log(a.log);
  std::string header;
  std::getline(log, header);
  CHECK(header == "epoch,mean_query_loss,cluster_loss,wall_seconds");

  c.batch_size = 100;
  CHECK_THROWS_AS(train(corpus, c), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training lowers the query loss") {
  Corpus corpus = planted_corpus(50, 40, 9);
  MetaConfig c = tiny_config(corpus, 8);
  c.batch_size = 8;
  c.epochs = 200;
  TrainResult r = train(corpus, c);
  REQUIRE(r.log.size() == 200);
  double tail = 0.0;
  for (std::size_t i = 190; i < 200; ++i) tail += r.log[i].mean_query_loss / 10.0;
  CHECK(tail < r.log.front().mean_query_loss);
}
