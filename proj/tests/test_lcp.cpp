#include <limits>
#include <random>
#include <sstream>

#include <doctest.h>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"
#include "nimble_mini/lcp.hpp"
#include "support.hpp"

using namespace nimble_mini;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("assemble")
{
  SUBCASE("unit point mass with one normal row")
  {
    const double g = 9.81, dt = 0.01;
    const LcpProblem p = assemble(MatrixXd::Identity(1, 1), MatrixXd::Ones(1, 1),
                                  VectorXd::Constant(1, -1.0), VectorXd::Zero(1),
                                  VectorXd::Constant(1, g), dt);
    CHECK(p.A(0, 0) == 1.0);
    CHECK(p.b[0] == doctest::Approx(-1.0 - dt * g).epsilon(1e-15));
  }
  SUBCASE("zero rows of J give zero data")
  {
    const LcpProblem p = assemble(MatrixXd::Identity(3, 3), MatrixXd::Zero(2, 3),
                                  VectorXd::Ones(3), VectorXd::Ones(3),
                                  VectorXd::Ones(3), 0.01);
    CHECK(p.A.norm() == 0.0);
    CHECK(p.b.norm() == 0.0);
  }
  SUBCASE("identical rows give a rank one matrix with equal entries")
  {
    MatrixXd J(2, 3);
    J << 0, 1, 0, 0, 1, 0;
    const LcpProblem p = assemble(2.0 * MatrixXd::Identity(3, 3), J,
                                  VectorXd::Zero(3), VectorXd::Zero(3),
                                  VectorXd::Zero(3), 0.01);
    CHECK(p.A.isApprox(MatrixXd::Constant(2, 2, 0.5)));
    CHECK(Eigen::FullPivLU<MatrixXd>(p.A).rank() == 1);
  }
  SUBCASE("dimension errors")
  {
    CHECK_THROWS_AS(assemble(MatrixXd::Identity(2, 2), MatrixXd::Ones(1, 3),
                             VectorXd::Zero(2), VectorXd::Zero(2),
                             VectorXd::Zero(2), 0.01),
                    DimensionMismatch);
    LcpProblem p;
    p.A = MatrixXd::Identity(2, 2);
    p.b = VectorXd::Zero(2);
    p.rows = {LcpRow{1, 0.5}, LcpRow{}};
    CHECK_THROWS_AS(p.validate(), DimensionMismatch);
  }
  SUBCASE("indefinite matrix is rejected")
  {
    LcpProblem p;
    p.A = MatrixXd::Identity(2, 2);
    p.A(1, 1) = -1.0;
    p.b = VectorXd::Zero(2);
    p.rows.resize(2);
    CHECK_THROWS_AS(p.validate(), Error);
  }
}

TEST_CASE("enumeration oracle")
{
  LcpProblem p;
  p.rows.resize(1);
  p.A = MatrixXd::Ones(1, 1);
  SUBCASE("clamping")
  {
    p.b = VectorXd::Constant(1, -1.0);
    const LcpSolution s = solveEnumerate(p);
    CHECK(s.f[0] == 1.0);
    CHECK(s.v[0] == 0.0);
    CHECK(s.classes[0] == RowClass::Clamping);
  }
  SUBCASE("separating")
  {
    p.b = VectorXd::Constant(1, 1.0);
    const LcpSolution s = solveEnumerate(p);
    CHECK(s.f[0] == 0.0);
    CHECK(s.v[0] == 1.0);
    CHECK(s.classes[0] == RowClass::Separating);
  }
  SUBCASE("rank deficient pair splits evenly")
  {
    const double g = 9.81;
    p.rows.resize(2);
    p.A = MatrixXd::Ones(2, 2);
    p.b = VectorXd::Constant(2, -g);
    const LcpSolution s = solveEnumerate(p);
    CHECK((s.f - VectorXd::Constant(2, g / 2)).norm() < 1e-12);
  }
  SUBCASE("infeasible")
  {
    p.A = MatrixXd::Zero(1, 1);
    p.b = VectorXd::Constant(1, -1.0);
    CHECK_THROWS_AS(solveEnumerate(p), Infeasible);
  }
  SUBCASE("size limit")
  {
    p.rows.resize(13);
    p.A = MatrixXd::Identity(13, 13);
    p.b = VectorXd::Zero(13);
    CHECK_THROWS_AS(solveEnumerate(p), DimensionMismatch);
  }
}

TEST_CASE("direct solver agrees with enumeration")
{
  std::mt19937 rng(2024);
  double worstUnique = 0.0, worstMember = 0.0, worstResidual = 0.0;
  int unique = 0;
  for (int trial = 0; trial < 1000; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 8, true);
    const std::vector<LcpSolution> all = enumerateSolutions(p);
    REQUIRE(!all.empty());
    const LcpSolution direct = solveDirect(p);
    CHECK(verify(p, direct.f));
    double member = std::numeric_limits<double>::infinity();
    double spread = 0.0;
    for (const LcpSolution& s : all)
    {
      member = std::min(member, (direct.f - s.f).cwiseAbs().maxCoeff());
      spread = std::max(spread, (all[0].f - s.f).cwiseAbs().maxCoeff());
    }
    worstMember = std::max(worstMember, member);
    if (spread < 1e-8)
    {
      ++unique;
      worstUnique = std::max(
          worstUnique, (direct.f - solveEnumerate(p).f).cwiseAbs().maxCoeff());
    }
    const double scale = 1.0 + direct.f.norm() * direct.v.norm();
    worstResidual
        = std::max(worstResidual, complementarityResidual(p, direct.f) / scale);
  }
  MESSAGE("unique " << unique << "/1000, max |df| " << worstUnique
                    << ", max distance to a feasible class set " << worstMember
                    << ", max residual " << worstResidual);
  CHECK(unique > 800);
  CHECK(worstUnique < 1e-8);
  CHECK(worstMember < 1e-8);
  CHECK(worstResidual < 1e-9);
}

TEST_CASE("least-norm impulses on redundant frictionless contacts")
{
  // Monotone problems: the least-norm solution is unique even when A is
  // singular, so the two solvers must agree.
  std::mt19937 rng(77);
  double worst = 0.0;
  int deficient = 0;
  for (int trial = 0; trial < 500; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 8, false);
    deficient += Eigen::FullPivLU<MatrixXd>(p.A).rank() < p.size();
    worst = std::max(
        worst, (solveDirect(p).f - solveEnumerate(p).f).cwiseAbs().maxCoeff());
  }
  MESSAGE("rank deficient " << deficient << "/500, max |df| " << worst);
  CHECK(deficient > 50);
  CHECK(worst < 1e-8);
}

TEST_CASE("solution invariants")
{
  std::mt19937 rng(7);
  for (int trial = 0; trial < 300; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 12, true);
    const LcpSolution s = solveDirect(p);
    for (int i = 0; i < p.size(); ++i)
    {
      const double tol = rowTolerance(p, s.f, i);
      const LcpRow& row = p.rows[static_cast<size_t>(i)];
      if (row.isNormal())
      {
        CHECK(s.f[i] >= -tol);
        CHECK(s.v[i] >= -tol);
      }
      else
      {
        CHECK(std::abs(s.f[i]) <= row.mu * s.f[row.link] + tol);
      }
    }
    // E: one entry +-mu per row.
    for (int k = 0; k < s.E.rows(); ++k)
    {
      const LcpRow& row = p.rows[static_cast<size_t>(s.bounded[static_cast<size_t>(k)])];
      CHECK((s.E.row(k).array() != 0.0).count() == 1);
      CHECK(std::abs(s.E.row(k).cwiseAbs().sum() - row.mu) == 0.0);
    }
    // Bounded rows sit at their bound.
    for (int i : s.bounded)
    {
      const LcpRow& row = p.rows[static_cast<size_t>(i)];
      CHECK(std::abs(std::abs(s.f[i]) - row.mu * s.f[row.link])
            <= rowTolerance(p, s.f, i));
    }
  }
}

TEST_CASE("stabilization")
{
  const double g = 9.81, dt = 0.01;
  SUBCASE("non-rotating box: two identical contacts split the weight")
  {
    // Unit mass on one vertical slider, two contacts with identical rows.
    const LcpProblem p
        = assemble(MatrixXd::Identity(1, 1), MatrixXd::Ones(2, 1),
                   VectorXd::Zero(1), VectorXd::Zero(1),
                   VectorXd::Constant(1, g), dt);
    const LcpSolution s = solveDirect(p);
    const double w = g * dt;
    CHECK(std::abs(s.f[0] - w / 2) < 1e-10);
    CHECK(std::abs(s.f[1] - w / 2) < 1e-10);
    CHECK(s.rank == 1);
  }
  SUBCASE("idempotent, bit for bit")
  {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 200; ++trial)
    {
      const LcpProblem p = testing::randomContactLcp(rng, 9, true);
      const LcpSolution s = solveDirect(p);
      const LcpSolution once = stabilize(p, s.basis);
      const LcpSolution twice = stabilize(p, once.basis);
      CHECK(once.f == s.f);
      CHECK(twice.f == once.f);
      CHECK(twice.classes == once.classes);
    }
  }
  SUBCASE("full-rank single contact is unchanged")
  {
    LcpProblem p;
    p.rows.resize(1);
    p.A = MatrixXd::Constant(1, 1, 2.0);
    p.b = VectorXd::Constant(1, -3.0);
    const LcpSolution s = solveDirect(p);
    CHECK(stabilize(p, s.classes).f == s.f);
    CHECK(s.f[0] == 1.5);
  }
  SUBCASE("perturbing b within a classification is linear in -A_CC^-1")
  {
    std::mt19937 rng(5);
    int checked = 0;
    for (int trial = 0; trial < 200 && checked < 50; ++trial)
    {
      LcpProblem p = testing::randomContactLcp(rng, 6, false);
      const LcpSolution s = solveDirect(p);
      if (s.hasTied() || s.clamping.empty() || s.rank < static_cast<int>(s.clamping.size()))
        continue;
      VectorXd delta = testing::randomVector(rng, p.size(), 1e-7);
      LcpProblem q = p;
      q.b += delta;
      const LcpSolution t = stabilize(q, s.basis);
      VectorXd deltaC(s.clamping.size());
      for (size_t k = 0; k < s.clamping.size(); ++k)
        deltaC[static_cast<Eigen::Index>(k)] = delta[s.clamping[k]];
      const VectorXd expected = -s.Aeff.inverse() * deltaC;
      for (size_t k = 0; k < s.clamping.size(); ++k)
        CHECK(std::abs(t.f[s.clamping[k]] - s.f[s.clamping[k]]
                       - expected[static_cast<Eigen::Index>(k)])
              < 1e-12);
      ++checked;
    }
    CHECK(checked >= 20);
  }
  SUBCASE("a wrong classification is stale")
  {
    LcpProblem p;
    p.rows.resize(1);
    p.A = MatrixXd::Ones(1, 1);
    p.b = VectorXd::Constant(1, 1.0);
    CHECK_THROWS_AS(stabilize(p, {RowClass::Clamping}), StaleClassification);
  }
}

TEST_CASE("friction saturation on a sliding point mass")
{
  // Rows: normal (y) then one tangent (x). Sliding at 1 m/s.
  const double m = 2.0, g = 9.81, dt = 0.01, mu = 0.1;
  const std::vector<LcpRow> rows = {LcpRow{}, LcpRow{0, mu, 0, 1}};
  MatrixXd J(2, 2);
  J << 0, 1, 1, 0;
  const LcpProblem p = assemble(m * MatrixXd::Identity(2, 2), J,
                                Eigen::Vector2d(1.0, 0.0), VectorXd::Zero(2),
                                Eigen::Vector2d(0.0, m * g), dt, rows);
  const LcpSolution s = solveDirect(p);
  CHECK(s.classes[0] == RowClass::Clamping);
  CHECK(s.classes[1] == RowClass::BoundedMinus);
  CHECK(std::abs(s.f[0] - m * g * dt) < 1e-12);
  CHECK(std::abs(s.f[1] + mu * m * g * dt) < 1e-12);
  CHECK(s.E.rows() == 1);
  CHECK(s.E(0, 0) == -mu);
  // Sticking when the bound is large.
  std::vector<LcpRow> sticky = rows;
  sticky[1].mu = 100.0;
  const LcpProblem q = assemble(m * MatrixXd::Identity(2, 2), J,
                                Eigen::Vector2d(0.01, 0.0), VectorXd::Zero(2),
                                Eigen::Vector2d(0.0, m * g), dt, sticky);
  const LcpSolution t = solveDirect(q);
  CHECK(t.classes[1] == RowClass::Clamping);
  CHECK(std::abs(t.v[1]) < 1e-14);
}

TEST_CASE("warm start")
{
  std::mt19937 rng(31);
  int hits = 0;
  for (int trial = 0; trial < 200; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 9, true);
    const LcpSolution cold = solveDirect(p);
    const LcpSolution warm = solveDirect(p, cold.basis);
    CHECK(warm.warmStarted);
    CHECK((warm.f - cold.f).cwiseAbs().maxCoeff() < 1e-9);
    hits += warm.warmStarted;
    // A wrong hint falls back to pivoting.
    std::vector<RowClass> wrong(static_cast<size_t>(p.size()), RowClass::Separating);
    const LcpSolution fallback = solveDirect(p, wrong);
    CHECK(verify(p, fallback.f));
  }
  CHECK(hits == 200);
}

TEST_CASE("pivot limit raises")
{
  std::mt19937 rng(8);
  bool raised = false;
  for (int trial = 0; trial < 100 && !raised; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 9, true);
    try
    {
      // One pivot cannot fix a guess with several violations.
      solveDirect(p, std::vector<RowClass>(static_cast<size_t>(p.size()),
                                           RowClass::Separating),
                  1);
    }
    catch (const NoConvergence&)
    {
      raised = true;
    }
  }
  CHECK(raised);
}

TEST_CASE("dump round trip")
{
  std::mt19937 rng(1);
  const LcpProblem p = testing::randomContactLcp(rng, 6, true);
  const LcpSolution s = solveDirect(p);
  std::stringstream ss;
  writeLcpDump(ss, p, &s);
  const auto blocks = readMatrices(ss);
  REQUIRE(blocks.size() == 6);
  CHECK(blocks[0].first == "A");
  CHECK(blocks[0].second == p.A);
  CHECK(blocks[1].second == MatrixXd(p.b));
  CHECK(blocks[3].second == MatrixXd(s.f));
  std::istringstream bad("# A 2 2\n1,2\n3\n");
  CHECK_THROWS_AS(readMatrices(bad), ParseError);
}
