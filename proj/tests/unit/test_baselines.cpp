#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "kgseq/baselines.hpp"
#include "kgseq/error.hpp"
#include "kgseq/eval.hpp"

using namespace kgseq;

TEST_CASE("baseline scores") {
  const std::vector<double> h{1, 0}, r{0, 1}, t{1, 1}, t2{0, 0};
  CHECK(transe_score(h, r, t) == 0.0);
  CHECK(transe_score(h, r, t2) == doctest::Approx(-std::sqrt(2.0)));
  CHECK(transe_score(h, r, t2, Distance::l1) == doctest::Approx(-2.0));
  const std::vector<double> a{1, 2, 3}, b{0.5, -1, 2}, c{2, 1, -1};
  CHECK(distmult_score(a, b, c) == doctest::Approx(1.0 - 2.0 - 6.0));
  CHECK(distmult_score(c, b, a) == distmult_score(a, b, c));
  CHECK(parse_baseline_kind("transe") == BaselineKind::transe);
  CHECK_THROWS_AS(parse_baseline_kind("rescal"), ArgumentError);
  CHECK(parse_distance("l1") == Distance::l1);
  CHECK_THROWS_AS(parse_distance("l3"), ArgumentError);
}

TEST_CASE("distmult is symmetric in head and tail") {
  const auto kg = testutil::random_kg(10, 2, 30, 1);
  BaselineConfig cfg;
  cfg.epochs = 3;
  cfg.dim = 8;
  const auto p = train_distmult(kg, cfg);
  for (EntityId a = 0; a < 10; ++a)
    for (EntityId b = 0; b < 10; ++b) CHECK(distmult_score(p, {a, 1, b}) == doctest::Approx(distmult_score(p, {b, 1, a})).epsilon(1e-12));
}

TEST_CASE("transe initialization and training invariants") {
  const auto kg = testutil::random_kg(40, 4, 200, 3);
  BaselineConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 0;
  const auto init = init_transe(40, 4, cfg);
  CHECK(train_transe(kg, cfg).entity == init.entity);
  CHECK(train_transe(kg, cfg).relation == init.relation);
  const double bound = 6.0 / std::sqrt(16.0);
  for (Eigen::Index i = 0; i < init.relation.rows(); ++i)
    CHECK(init.relation.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  for (Eigen::Index i = 0; i < init.entity.rows(); ++i)
    CHECK(init.entity.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(init.entity.cwiseAbs().maxCoeff() <= bound);

  cfg.epochs = 30;
  std::vector<double> losses;
  int calls = 0;
  const auto trained = train_transe(kg, cfg, [&](const BaselineEpoch& e) {
    CHECK(e.epoch == calls++);
    losses.push_back(e.mean_loss);
  });
  CHECK(calls == 30);
  CHECK(losses.back() < losses.front());
  for (Eigen::Index i = 0; i < trained.entity.rows(); ++i)
    CHECK(std::abs(trained.entity.row(i).norm() - 1.0) < 1e-6);
  CHECK(train_transe(kg, cfg).entity == trained.entity);
}

TEST_CASE("config validation") {
  BaselineConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.margin = -1;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.negatives = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("trained baselines rank through the shared evaluator") {
  const auto kg = testutil::random_kg(25, 2, 150, 5);
  BaselineConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 50;
  cfg.learning_rate = 0.05;
  for (auto kind : {BaselineKind::transe, BaselineKind::distmult}) {
    const auto model = train_baseline(kind, kg, cfg);
    const BaselineScorer scorer(model);
    const auto train_rep = link_prediction_eval(scorer, kg, Split::train);
    // random scores would give about (|E| - 1) / 2 + 1 = 13
    CHECK(train_rep.mean_rank < 8.0);
  }
}

TEST_CASE("baseline checkpoint round trip") {
  const auto kg = testutil::random_kg(12, 3, 40, 2);
  BaselineConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 2;
  cfg.distance = Distance::l1;
  const auto model = train_baseline(BaselineKind::transe, kg, cfg);
  testutil::TempDir dir;
  save_baseline(dir / "b.ckpt", model, cfg);
  const auto back = load_baseline(dir / "b.ckpt");
  CHECK(back.kind == BaselineKind::transe);
  CHECK(back.distance == Distance::l1);
  CHECK(back.params.entity.rows() == 12);
  const auto a = BaselineScorer(model).plausibility(kg.split(Split::test));
  const auto b = BaselineScorer(back).plausibility(kg.split(Split::test));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));
  testutil::write_text(dir / "bad.ckpt", "garbage");
  CHECK_THROWS_AS(load_baseline(dir / "bad.ckpt"), CheckpointError);
}
