#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>

#include "bvsem/common.hpp"
#include "bvsem/data.hpp"
#include "bvsem/em.hpp"
#include "oracles.hpp"

using namespace bvsem;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name, const std::string& contents = {})
      : path(fs::temp_directory_path() / ("bvsem_test_" + name)) {
    if (!contents.empty()) std::ofstream(path) << contents;
  }
  ~TempFile() { fs::remove(path); }
};

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ac = a.array() - a.mean(), bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("csv with a named response") {
    TempFile f("basic.csv", "x1,x2,y\n1,2,3\n4,5,6\n7,8,10\n");
    const Dataset d = load_csv(f.path, std::string("y"), false);
    REQUIRE(d.n() == 3);
    REQUIRE(d.p() == 2);
    CHECK(d.column_names == std::vector<std::string>{"x1", "x2"});
    CHECK(d.X(2, 1) == 8.0);
    CHECK(d.y[2] == 10.0);
    CHECK_FALSE(d.standardization.has_value());

    const Dataset byidx = load_csv(f.path, std::size_t{0}, false);
    CHECK(byidx.column_names == std::vector<std::string>{"x2", "y"});
    CHECK(byidx.y[1] == 4.0);
  }

  TEST_CASE("csv errors name the problem") {
    TempFile bad("bad.csv", "x1,y\n1,2\nabc,3\n");
    CHECK(message_of([&] { load_csv(bad.path, std::string("y"), false); }).find("non-numeric") !=
          std::string::npos);
    TempFile ok("ok.csv", "x1,y\n1,2\n3,4\n");
    CHECK(message_of([&] { load_csv(ok.path, std::string("target"), false); }).find("absent") !=
          std::string::npos);
    CHECK_THROWS_AS(load_csv(ok.path, std::size_t{5}, false), InputError);
    TempFile ragged("ragged.csv", "x1,x2,y\n1,2,3\n4,5\n");
    CHECK_THROWS_AS(load_csv(ragged.path, std::string("y"), false), InputError);
    TempFile konst("const.csv", "x1,x2,y\n1,2,3\n1,5,6\n1,7,1\n");
    CHECK(message_of([&] { load_csv(konst.path, std::string("y"), true); }).find("constant column") !=
          std::string::npos);
    CHECK_THROWS_AS(load_csv(fs::temp_directory_path() / "bvsem_missing.csv", std::string("y"), false),
                    InputError);
  }

  TEST_CASE("standardized columns have mean 0 and unit sample sd") {
    oracle::Gen gen(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto n = gen.uniform_int(2, 40), p = gen.uniform_int(1, 12);
      Dataset raw;
      raw.X = gen.matrix(n, p) * gen.uniform(0.1, 50.0);
      raw.X.rowwise() += gen.vector(p).transpose() * 10.0;
      raw.y = gen.vector(n).array() + 7.0;
      const Dataset s = standardize(raw);
      for (Eigen::Index j = 0; j < p; ++j) {
        CHECK(std::abs(s.X.col(j).mean()) < 1e-12);
        CHECK(s.X.col(j).squaredNorm() / (n - 1) == doctest::Approx(1.0).epsilon(1e-12));
      }
      CHECK(std::abs(s.y.mean()) < 1e-12);

      const auto [X, y] = unstandardize(s);
      CHECK((X - raw.X).cwiseAbs().maxCoeff() <= 1e-10 * (1 + raw.X.cwiseAbs().maxCoeff()));
      CHECK((y - raw.y).cwiseAbs().maxCoeff() <= 1e-12 * (1 + raw.y.cwiseAbs().maxCoeff()));
      CHECK((apply_standardization(raw.X, *s.standardization) - s.X).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("validate rejects bad shapes and non-finite values") {
    Dataset d;
    d.X = Eigen::MatrixXd::Ones(3, 2);
    d.y = Eigen::VectorXd::Ones(2);
    CHECK_THROWS_AS(d.validate(), InputError);
    d.y = Eigen::VectorXd::Ones(3);
    d.X(0, 0) = std::nan("");
    CHECK_THROWS_AS(d.validate(), InputError);
  }

  TEST_CASE("generators have the documented shapes and supports") {
    const auto t = gen_tibshirani(40, 3.0, 1);
    CHECK(t.data.n() == 40);
    CHECK(t.data.p() == 8);
    CHECK(t.gamma == Indicator{1, 1, 0, 0, 1, 0, 0, 0});
    CHECK(t.beta[4] == 2.0);

    const auto c = gen_correlated(50, 1);
    CHECK(c.data.p() == 40);
    CHECK(count_selected(c.gamma) == 6);
    for (int j = 0; j < 6; ++j) CHECK(c.gamma[j] == 1);

    const auto l = gen_large_p(100, 1000, 1);
    CHECK(l.data.p() == 1000);
    CHECK(l.beta.head(3) == Eigen::Vector3d(1, 2, 3));
    CHECK(l.beta.tail(997).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("generators are deterministic in the seed") {
    for (auto kind : {DesignKind::tibshirani, DesignKind::correlated, DesignKind::large_p}) {
      const auto a = simulate(SimDesign::make(kind, 30, 9, std::nullopt, 50));
      const auto b = simulate(SimDesign::make(kind, 30, 9, std::nullopt, 50));
      const auto c = simulate(SimDesign::make(kind, 30, 10, std::nullopt, 50));
      CHECK(a.data.X == b.data.X);
      CHECK(a.data.y == b.data.y);
      CHECK(a.data.X != c.data.X);
    }
  }

  TEST_CASE("generator covariance structure") {
    const Eigen::Index n = 100000;
    const auto t = gen_tibshirani(n, 3.0, 2);
    for (int j = 0; j < 7; ++j) CHECK(corr(t.data.X.col(j), t.data.X.col(j + 1)) == doctest::Approx(0.5).epsilon(0.02));
    CHECK(corr(t.data.X.col(0), t.data.X.col(2)) == doctest::Approx(0.25).epsilon(0.04));

    const auto c = gen_correlated(n, 2);
    CHECK(std::abs(corr(c.data.X.col(0), c.data.X.col(1)) - 0.9) < 0.01);
    CHECK(std::abs(corr(c.data.X.col(3), c.data.X.col(5)) - 0.9) < 0.01);
    CHECK(std::abs(corr(c.data.X.col(0), c.data.X.col(3))) < 0.01);
    CHECK(std::abs(corr(c.data.X.col(6), c.data.X.col(7))) < 0.01);
    const Eigen::VectorXd resid_c = c.data.y - c.data.X * c.beta;
    CHECK(std::sqrt(resid_c.squaredNorm() / n) == doctest::Approx(6.0).epsilon(0.01));

    const auto l = gen_large_p(n, 10, 2);
    CHECK(std::abs(corr(l.data.X.col(3), l.data.X.col(4)) - 0.6) < 0.01);
    CHECK(std::abs(corr(l.data.X.col(3), l.data.X.col(5)) - 0.36) < 0.01);
    const Eigen::VectorXd resid = l.data.y - l.data.X * l.beta;
    CHECK(std::abs(resid.squaredNorm() / n - 3.0) < 0.05);
  }

  TEST_CASE("write_csv round trips exactly") {
    const auto sim = gen_tibshirani(15, 3.0, 4);
    TempFile f("roundtrip.csv");
    write_csv(f.path, sim.data);
    const Dataset back = load_csv(f.path, std::string("y"), false);
    CHECK(back.X == sim.data.X);
    CHECK(back.y == sim.data.y);
  }

  TEST_CASE("row and column selection") {
    oracle::Gen gen(8);
    Dataset d;
    d.X = gen.matrix(6, 4);
    d.y = gen.vector(6);
    const std::vector<Eigen::Index> cols{3, 1};
    const Dataset c = select_columns(d, cols);
    CHECK(c.X.col(0) == d.X.col(3));
    CHECK(c.y == d.y);
    const std::vector<Eigen::Index> rows{5, 0};
    const Dataset r = select_rows(d, rows);
    CHECK(r.X.row(1) == d.X.row(0));
    CHECK(r.y[0] == d.y[5]);
    const std::vector<Eigen::Index> bad{4};
    CHECK_THROWS_AS(select_columns(d, bad), InputError);
  }

  TEST_CASE("design names parse") {
    CHECK(design_kind_from_string("large_p") == DesignKind::large_p);
    CHECK_THROWS_AS(design_kind_from_string("nope"), InputError);
  }
}
