#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bvsem/bbem.hpp"
#include "bvsem/common.hpp"
#include "oracles.hpp"

using namespace bvsem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset small_problem(std::uint64_t seed, Eigen::Index n = 30, Eigen::Index p = 12) {
  oracle::Gen gen(seed);
  return gen.regression(n, p, 3, 2.0, 1.0);
}

}  // namespace

TEST_SUITE("bbem") {
  TEST_CASE("marginal sampling weights") {
    Dataset d;
    d.X = (MatrixXd(2, 2) << 1, 0, 0, 1).finished();
    d.y = (VectorXd(2) << 2, -1).finished();
    const VectorXd pi = marginal_weights(d);
    CHECK(pi[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(pi[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    d.X = (MatrixXd(2, 2) << 1, 1, 1, -1).finished();
    d.y = (VectorXd(2) << 1, 1).finished();
    CHECK(marginal_weights(d)[1] == 0.0);

    oracle::Gen gen(41);
    Dataset r;
    r.X = gen.matrix(25, 9);
    r.y = gen.vector(25);
    VectorXd slopes(9);
    for (Eigen::Index j = 0; j < 9; ++j) {
      // |least-squares slope through the origin|
      slopes[j] = std::abs(r.X.col(j).dot(r.y)) / r.X.col(j).squaredNorm();
    }
    slopes /= slopes.sum();
    CHECK((marginal_weights(r) - slopes).cwiseAbs().maxCoeff() <= 1e-12);

    r.X.col(2).setZero();
    CHECK_THROWS_AS(marginal_weights(r), InputError);
  }

  TEST_CASE("Dirichlet weights lie on the simplex with the right mean") {
    Rng rng = make_rng(1, Stream::bootstrap_replicate);
    CHECK(draw_dirichlet_weights(1, rng)[0] == doctest::Approx(1.0));
    VectorXd mean = VectorXd::Zero(5);
    const int draws = 100000;
    for (int k = 0; k < draws; ++k) {
      const VectorXd w = draw_dirichlet_weights(5, rng);
      if (k < 100) {
        CHECK(w.minCoeff() > 0.0);
        CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
      }
      mean += w;
    }
    mean /= draws;
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(mean[i] - 0.2) < 0.005);
  }

  TEST_CASE("subset sampling") {
    Rng rng = make_rng(2, Stream::bootstrap_replicate);
    const VectorXd uniform = VectorXd::Constant(6, 1.0 / 6.0);
    const auto all = sample_subset(uniform, 6, rng);
    CHECK(all == std::vector<Eigen::Index>{0, 1, 2, 3, 4, 5});

    VectorXd point = VectorXd::Zero(6);
    point[4] = 1.0;
    CHECK(sample_subset(point, 1, rng) == std::vector<Eigen::Index>{4});
    CHECK_THROWS_AS(sample_subset(point, 2, rng), InputError);

    const VectorXd two = (VectorXd(2) << 0.7, 0.3).finished();
    int first = 0;
    const int draws = 100000;
    for (int k = 0; k < draws; ++k) first += sample_subset(two, 1, rng)[0] == 0;
    CHECK(std::abs(first / double(draws) - 0.7) < 0.01);

    oracle::Gen gen(42);
    for (int trial = 0; trial < 50; ++trial) {
      const int p = gen.uniform_int(1, 30);
      const VectorXd pi = gen.positive(p);
      const int L = gen.uniform_int(1, p);
      const auto s = sample_subset(pi, L, rng);
      CHECK(static_cast<int>(s.size()) == L);
      CHECK(std::is_sorted(s.begin(), s.end()));
      CHECK(std::set<Eigen::Index>(s.begin(), s.end()).size() == s.size());
    }
  }

  TEST_CASE("aggregate of two replicates") {
    ReplicateRecord a, b;
    a.gamma = {1, 0, 1};
    a.m = (VectorXd(3) << 2, 0, 1).finished();
    b.gamma = {1, 1, 0};
    b.m = (VectorXd(3) << 4, 1, 0).finished();
    const EnsembleResult e = aggregate({a, b}, 3);
    CHECK(e.phi == VectorXd((VectorXd(3) << 1.0, 0.5, 0.5).finished()));
    CHECK(e.m_bar == VectorXd((VectorXd(3) << 3.0, 0.5, 0.5).finished()));
    CHECK(e.failures == 0);
  }

  TEST_CASE("selection frequencies count subset wins") {
    const Dataset d = standardize(small_problem(43));
    BootstrapConfig cfg;
    cfg.K = 20;
    cfg.L = 6;
    cfg.seed = 5;
    const EnsembleResult e = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    REQUIRE(static_cast<int>(e.replicates.size()) == cfg.K);
    VectorXd counts = VectorXd::Zero(d.p());
    for (const auto& rec : e.replicates) {
      CHECK(static_cast<int>(rec.subset.size()) == cfg.L);
      const std::set<Eigen::Index> in(rec.subset.begin(), rec.subset.end());
      for (Eigen::Index j = 0; j < d.p(); ++j) {
        if (!in.count(j)) {
          CHECK(rec.gamma[j] == 0);
          CHECK(rec.m[j] == 0.0);
        }
        counts[j] += rec.gamma[j];
      }
    }
    CHECK((e.phi - counts / cfg.K).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.phi.minCoeff() >= 0.0);
    CHECK(e.phi.maxCoeff() <= 1.0);
  }

  TEST_CASE("ensembles do not depend on jobs or on how replicates are split") {
    const Dataset d = standardize(small_problem(44));
    BootstrapConfig cfg;
    cfg.K = 12;
    cfg.L = 7;
    cfg.seed = 9;
    const EnsembleResult one = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    cfg.jobs = 4;
    const EnsembleResult four = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    CHECK(one.phi == four.phi);
    CHECK(one.m_bar == four.m_bar);

    auto tail = run_replicates(d, HyperParams{}, EmConfig{}, cfg, 5, 7);
    auto head = run_replicates(d, HyperParams{}, EmConfig{}, cfg, 0, 5);
    head.insert(head.end(), tail.begin(), tail.end());
    const EnsembleResult split = aggregate(std::move(head), d.p());
    CHECK(split.phi == one.phi);
    CHECK(split.m_bar == one.m_bar);

    cfg.seed = 10;
    CHECK(run_bbem(d, HyperParams{}, EmConfig{}, cfg).m_bar != one.m_bar);
  }

  TEST_CASE("one unit-weight replicate over all columns is plain EM") {
    const Dataset d = standardize(small_problem(45));
    BootstrapConfig cfg;
    cfg.K = 1;
    cfg.L = static_cast<int>(d.p());
    cfg.unit_weights = true;
    const EnsembleResult e = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    const EmResult em = run_em(d, HyperParams{}, EmConfig{});
    CHECK(e.replicates[0].gamma == em.gamma);
    CHECK((e.m_bar - em.m).cwiseAbs().maxCoeff() <= 1e-12);
    for (Eigen::Index j = 0; j < d.p(); ++j) CHECK(e.phi[j] == double(em.gamma[j]));
  }

  TEST_CASE("weight scale does not change the Dirichlet proportions") {
    const Dataset d = standardize(small_problem(46));
    BootstrapConfig cfg;
    cfg.K = 4;
    cfg.L = 5;
    const auto a = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    cfg.weight_scale = WeightScale::sum_to_1;
    const auto b = run_bbem(d, HyperParams{}, EmConfig{}, cfg);
    for (int k = 0; k < cfg.K; ++k) CHECK(a.replicates[k].subset == b.replicates[k].subset);
    CHECK(weight_scale_from_string("sum_to_1") == WeightScale::sum_to_1);
    CHECK_THROWS_AS(weight_scale_from_string("other"), InputError);
  }

  TEST_CASE("prediction and thresholding") {
    const MatrixXd X = (MatrixXd(1, 2) << 1, 2).finished();
    const VectorXd m = (VectorXd(2) << 3, 1).finished();
    const VectorXd phi = (VectorXd(2) << 1, 0.5).finished();
    CHECK(predict(X, m, phi)[0] == doctest::Approx(4.0));
    CHECK(predict(X, m, VectorXd::Ones(2))[0] == doctest::Approx(5.0));
    Standardization st;
    st.y_mean = 1.5;
    CHECK(predict(X, m, phi, st)[0] == doctest::Approx(5.5));
    CHECK(predict(X, m, VectorXd::Zero(2), st)[0] == 1.5);
    CHECK_THROWS_AS(predict(X, VectorXd::Ones(3), VectorXd::Ones(3)), InputError);

    const VectorXd f = (VectorXd(4) << 0.49, 0.5, 0.51, 1.0).finished();
    CHECK(threshold_phi(f) == Indicator{0, 1, 1, 1});
    CHECK(threshold_phi(f, 0.9) == Indicator{0, 0, 0, 1});
  }

  TEST_CASE("bootstrap configuration checks") {
    BootstrapConfig cfg;
    CHECK(cfg.resolved_L(50, 40) == 25);
    CHECK(cfg.resolved_L(100, 10) == 10);
    cfg.L = 50;
    CHECK_THROWS_AS(cfg.validate(40), InputError);
    cfg.L = 5;
    cfg.K = 0;
    CHECK_THROWS_AS(cfg.validate(40), InputError);
  }
}
