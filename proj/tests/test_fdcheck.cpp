#include <cmath>
#include <random>
#include <sstream>

#include <doctest.h>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/fdcheck.hpp"

using namespace nimble_mini;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd scalar(double x)
{
  return VectorXd::Constant(1, x);
}

}  // namespace

TEST_CASE("central difference of x^2 at 3")
{
  auto f = [](const VectorXd& x) { return VectorXd(x.array().square()); };
  const MatrixXd J = centralDifference(f, scalar(3.0), 1e-5);
  CHECK(std::abs(J(0, 0) - 6.0) < 1e-9);
}

TEST_CASE("central difference is exact on linear maps for any step")
{
  std::mt19937 rng(3);
  std::normal_distribution<double> g;
  MatrixXd A(4, 3);
  for (int i = 0; i < A.size(); ++i)
    A.data()[i] = g(rng);
  const VectorXd b = VectorXd::Constant(4, 0.5);
  auto f = [&](const VectorXd& x) { return VectorXd(A * x + b); };
  const VectorXd x0 = VectorXd::Constant(3, 0.25);
  for (double h : {1e-1, 1e-3, 1e-6})
    CHECK((centralDifference(f, x0, h) - A).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("central difference default step scales with |x|")
{
  const VectorXd x = (VectorXd(3) << 0.0, 0.5, -40.0).finished();
  const VectorXd h = relativeSteps(x, kCentralStep);
  CHECK(h[0] == kCentralStep);
  CHECK(h[1] == kCentralStep);
  CHECK(h[2] == doctest::Approx(40.0 * kCentralStep));
}

TEST_CASE("central difference is flagged across a kink by step sensitivity")
{
  // A mode switch at x = 0 makes the estimate depend strongly on h.
  auto f = [](const VectorXd& x) { return scalar(x[0] > 0.0 ? 2.0 * x[0] : -x[0]); };
  const VectorXd x0 = scalar(1e-7);
  const double a = centralDifference(f, x0, 1e-4)(0, 0);
  const double b = centralDifference(f, x0, 1e-8)(0, 0);
  CHECK(std::abs(a - b) > 0.1);
}

TEST_CASE("non-finite outputs throw")
{
  auto f = [](const VectorXd& x) { return scalar(std::log(x[0])); };
  CHECK_THROWS_AS(centralDifference(f, scalar(0.0), 1e-3), NonFinite);
  CHECK_THROWS_AS(ridders(f, scalar(0.0)), NonFinite);
}

TEST_CASE("Ridders on smooth scalars")
{
  auto fexp = [](const VectorXd& x) { return VectorXd(x.array().exp()); };
  CHECK(std::abs(ridders(fexp, scalar(0.0)).jacobian(0, 0) - 1.0) < 1e-10);
  auto fabs = [](const VectorXd& x) { return VectorXd(x.array().abs()); };
  CHECK(std::abs(ridders(fabs, scalar(0.5)).jacobian(0, 0) - 1.0) < 1e-10);
}

TEST_CASE("Ridders error estimate bounds the true error on smooth functions")
{
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  auto f = [](const VectorXd& x) {
    return (VectorXd(3) << x[0] * x[0] * x[0], std::sin(x[0]), std::exp(x[0]))
        .finished();
  };
  int bounded = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial)
  {
    const double x = u(rng);
    const RiddersResult r = ridders(f, scalar(x));
    const VectorXd exact
        = (VectorXd(3) << 3.0 * x * x, std::cos(x), std::exp(x)).finished();
    for (int i = 0; i < 3; ++i)
    {
      const double err = std::abs(r.jacobian(i, 0) - exact[i]);
      // Rounding of the exact value itself is below anything measurable.
      const double ulp = 4.0 * std::numeric_limits<double>::epsilon()
                         * std::max(1.0, std::abs(exact[i]));
      bounded += err <= r.error(i, 0) + ulp;
      ++total;
    }
  }
  MESSAGE("bounded " << bounded << " / " << total);
  CHECK(bounded >= 0.99 * total);
}

TEST_CASE("Ridders matches central differences with less error on a smooth map")
{
  auto f = [](const VectorXd& x) {
    return (VectorXd(2) << std::sin(x[0]) * x[1], std::exp(x[0] - x[1])).finished();
  };
  const VectorXd x = (VectorXd(2) << 0.3, -0.7).finished();
  MatrixXd exact(2, 2);
  exact << std::cos(0.3) * -0.7, std::sin(0.3), std::exp(1.0), -std::exp(1.0);
  const double eR = (ridders(f, x).jacobian - exact).cwiseAbs().maxCoeff();
  const double eC = (centralDifference(f, x) - exact).cwiseAbs().maxCoeff();
  CHECK(eR < 1e-11);
  CHECK(eR < eC);
}

TEST_CASE("results do not depend on the worker count")
{
  auto f = [](const VectorXd& x) {
    VectorXd y(x.size());
    for (int i = 0; i < x.size(); ++i)
      y[i] = std::sin(x.head(i + 1).sum()) * x[i];
    return y;
  };
  const VectorXd x = VectorXd::LinSpaced(7, -1.0, 1.0);
  const MatrixXd c1 = centralDifference(f, x, 0.0, 1);
  const MatrixXd c4 = centralDifference(f, x, 0.0, 4);
  CHECK(c1 == c4);
  const RiddersResult r1 = ridders(f, x, 0.0, kRiddersTableau, 1);
  const RiddersResult r4 = ridders(f, x, 0.0, kRiddersTableau, 4);
  CHECK(r1.jacobian == r4.jacobian);
  CHECK(r1.error == r4.error);
}

TEST_CASE("compare on identical inputs passes with zero error")
{
  const MatrixXd A = MatrixXd::Random(3, 4);
  const DiffReport r = compare({{"a", A}}, {{"a", A}}, 1e-12);
  REQUIRE(r.blocks.size() == 1);
  CHECK(r.blocks[0].maxAbs == 0.0);
  CHECK(r.blocks[0].maxRel == 0.0);
  CHECK(r.pass());
  CHECK(r.firstFailure().empty());
}

TEST_CASE("compare names the failing block and entry")
{
  const MatrixXd A = MatrixXd::Ones(3, 3);
  MatrixXd B = A;
  B(2, 1) += 1e-3;
  const DiffReport r = compare({{"x", A}, {"y", A}}, {{"x", A}, {"y", B}}, 1e-6);
  CHECK_FALSE(r.pass());
  CHECK(r.blocks[0].pass);
  CHECK_FALSE(r.blocks[1].pass);
  CHECK(r.blocks[1].row == 2);
  CHECK(r.blocks[1].col == 1);
  CHECK(r.blocks[1].maxRel == doctest::Approx(1e-3 / (1.0 + 1e-3)));
  CHECK(r.firstFailure() == "y (2, 1)");

  // A looser override on the block lets it pass.
  CHECK(compare({{"x", A}, {"y", A}}, {{"x", A}, {"y", B}}, 1e-6, {{"y", 1e-2}}).pass());
}

TEST_CASE("compare relative error uses the floor for tiny oracles")
{
  const MatrixXd A = MatrixXd::Constant(1, 1, 1e-9);
  const MatrixXd B = MatrixXd::Constant(1, 1, 2e-9);
  const DiffReport r = compare({{"z", A}}, {{"z", B}}, 1e-5);
  CHECK(r.blocks[0].maxRel == doctest::Approx(1e-9 / kRelativeFloor));
  CHECK(r.pass());
}

TEST_CASE("compare rejects mismatched shapes, names and non-finite entries")
{
  const MatrixXd A = MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(compare({{"a", A}}, {{"a", MatrixXd::Zero(2, 3)}}, 1e-6), ShapeMismatch);
  CHECK_THROWS_AS(compare({{"a", A}}, {{"b", A}}, 1e-6), ShapeMismatch);
  CHECK_THROWS_AS(compare({{"a", A}}, {}, 1e-6), ShapeMismatch);
  MatrixXd bad = A;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(compare({{"a", bad}}, {{"a", A}}, 1e-6), NonFinite);
}

TEST_CASE("report table has the documented header")
{
  const MatrixXd A = MatrixXd::Identity(2, 2);
  std::ostringstream os;
  compare({{"a", A, 0.0, 0.0}}, {{"a", A, 1e-6, 1e-12}}, 1e-6).write(os);
  const std::string text = os.str();
  CHECK(text.rfind("block,max_abs,max_rel,row,col,step,estimate,tolerance,pass\n", 0) == 0);
  CHECK(text.find("\na,") != std::string::npos);
}
