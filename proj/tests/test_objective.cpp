#include "doctest.h"

#include "clusterseq/core/error.hpp"
#include "clusterseq/core/gradcheck.hpp"
#include "clusterseq/objective.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace clusterseq;
using testutil::col;

namespace {

ModelConfig small_config(int shots = 3, bool clustering = true) {
  ModelConfig c;
  c.items = 8;
  c.dim = 4;
  c.shots = shots;
  c.clusters = 2;
  c.use_clustering = clustering;
  return c;
}

ParameterStore random_store(const ModelConfig& c, std::uint64_t seed, double widen = 1.0) {
  Rng rng(seed);
  ParameterStore s = init_parameters(c, rng);
  return testutil::perturbed(s, rng, widen);
}

Var scalar(Tape& t, double v) { return t.constant(Matrix::Constant(1, 1, v)); }

TaskEpisode episode(int shots) {
  TaskEpisode e;
  for (int i = 0; i < shots - 1; ++i) e.support.push_back(static_cast<ItemId>(i));
  e.query = static_cast<ItemId>(shots - 1);
  for (int i = 0; i < shots - 2; ++i) e.support_negatives.push_back(static_cast<ItemId>(7 - i));
  e.query_negatives = {6};
  return e;
}

}  // namespace

TEST_CASE("margin hinge") {
  Tape t;
  CHECK(margin_hinge(scalar(t, 0.5), scalar(t, 1.0), 1.0).scalar() == doctest::Approx(0.5));
  CHECK(margin_hinge(scalar(t, 0.2), scalar(t, 1.5), 1.0).scalar() == 0.0);
  CHECK(margin_hinge(scalar(t, 2.0), scalar(t, 2.0), 0.7).scalar() == doctest::Approx(0.7));
  CHECK(margin_hinge(scalar(t, 3.0), scalar(t, 2.0), 1.0).scalar() == doctest::Approx(2.0));
  for (double pos = 3.0; pos > -1.0; pos -= 0.05) {
    const double a = margin_hinge(scalar(t, pos), scalar(t, 1.0), 1.0).scalar();
    const double b = margin_hinge(scalar(t, pos - 0.05), scalar(t, 1.0), 1.0).scalar();
    CHECK(b <= a);
    CHECK(b >= 0.0);
  }
}

TEST_CASE("score") {
  ModelConfig c = small_config(3, false);
  ParameterStore s = random_store(c, 1);
  s.at(names::item_embedding).value.row(2).setZero();
  Tape t;
  Binder b(t, s);
  BoundModel m = BoundModel::bind(b, c);
  Prediction p{t.constant(col({3, 4, 0, 0})), t.constant(col({3, 4, 0, 0}))};
  CHECK(score(p, 2, m).scalar() == doctest::Approx(5.0));
  Prediction q{p.raw, lookup_embedding(m.transition.items, 5)};
  CHECK(score(q, 5, m).scalar() == 0.0);
  CHECK_THROWS_AS(score(p, 8, m), Error);

  std::vector<ItemId> prefix{1, 4};
  CHECK(score(prefix, 3, m).scalar() == score(prefix, 3, m).scalar());
}

TEST_CASE("support term count") {
  for (int k : {3, 4, 6}) {
    ModelConfig c = small_config(k, false);
    ParameterStore s = random_store(c, 2);
    Tape t;
    Binder b(t, s);
    BoundModel m = BoundModel::bind(b, c);
    TaskEpisode e = episode(k);
    double manual = 0.0;
    for (int i = 1; i < k - 1; ++i) {
      std::span<const ItemId> prefix(e.support.data(), static_cast<std::size_t>(i));
      manual += std::max(0.0, 1.0 + score(prefix, e.support[static_cast<std::size_t>(i)], m).scalar() -
                                  score(prefix, e.support_negatives[static_cast<std::size_t>(i - 1)], m).scalar());
    }
    CHECK(support_loss(e, m).scalar() == doctest::Approx(manual).epsilon(1e-12));
    CHECK(manual > 0.0);

    c.paper_literal_indices = true;
    BoundModel literal = BoundModel::bind(b, c);
    if (k == 3) CHECK(support_loss(e, literal).scalar() == 0.0);
  }
  ModelConfig c = small_config(3, false);
  ParameterStore s = random_store(c, 2);
  Tape t;
  Binder b(t, s);
  BoundModel m = BoundModel::bind(b, c);
  TaskEpisode bad = episode(3);
  bad.support_negatives.clear();
  CHECK_THROWS_AS(support_loss(bad, m), Error);
}

TEST_CASE("query loss") {
  ModelConfig c = small_config(4);
  ParameterStore s = random_store(c, 3);
  Tape t;
  Binder b(t, s);
  BoundModel m = BoundModel::bind(b, c);
  TaskEpisode e = episode(4);
  QueryLoss q = query_loss(e, m);
  Prediction p = predict_user(e.support, m);
  const double expect = std::max(0.0, 1.0 + score(p, e.query, m).scalar() - score(p, 6, m).scalar());
  CHECK(q.loss.scalar() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(q.embedding.value() == p.raw.value());
  CHECK(q.loss.scalar() >= 0.0);

  e.query_negatives = {e.query};
  CHECK(query_loss(e, m).loss.scalar() == doctest::Approx(1.0));
}

TEST_CASE("support loss gradient") {
  for (bool clustering : {true, false}) {
    ModelConfig c = small_config(4, clustering);
    c.margin = 5.0;  // keeps every hinge active, away from the kink
    ParameterStore s = random_store(c, 4, 2.0);
    TaskEpisode e = episode(4);
    auto report = check_gradients(
        [&](Binder& b) {
          BoundModel m = BoundModel::bind(b, c);
          return add(support_loss(e, m), query_loss(e, m).loss);
        },
        s, 1e-5);
    INFO(report.worst_parameter, " ", report.analytic, " ", report.numeric);
    CHECK(report.max_relative_error <= 1e-4);
  }
}
