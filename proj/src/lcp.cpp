#include "nimble_mini/lcp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/SVD>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"

namespace nimble_mini {

namespace {

bool isBounded(RowClass c)
{
  return c == RowClass::BoundedPlus || c == RowClass::BoundedMinus;
}

/// Friction rows whose normal row does not clamp carry no impulse.
std::vector<RowClass> effectiveBasis(
    const LcpProblem& problem, std::vector<RowClass> basis)
{
  for (int i = 0; i < problem.size(); ++i)
  {
    const LcpRow& row = problem.rows[static_cast<size_t>(i)];
    RowClass& c = basis[static_cast<size_t>(i)];
    if (c == RowClass::Tied)
      c = RowClass::Clamping;
    if (row.isNormal())
    {
      if (isBounded(c))
        c = RowClass::Clamping;
    }
    else if (basis[static_cast<size_t>(row.link)] != RowClass::Clamping
             && problem.rows[static_cast<size_t>(row.link)].isNormal())
    {
      c = RowClass::Separating;
    }
  }
  // A friction row whose link was Tied was mapped to Clamping above.
  return basis;
}

/// Solves for the impulses of `basis` (already effective).
LcpSolution solveBasis(
    const LcpProblem& problem, const std::vector<RowClass>& basis)
{
  const int m = problem.size();
  LcpSolution sol;
  sol.basis = basis;
  std::vector<int> position(static_cast<size_t>(m), -1);
  for (int i = 0; i < m; ++i)
  {
    const RowClass c = basis[static_cast<size_t>(i)];
    if (c == RowClass::Clamping)
    {
      position[static_cast<size_t>(i)] = static_cast<int>(sol.clamping.size());
      sol.clamping.push_back(i);
    }
    else if (isBounded(c))
    {
      sol.bounded.push_back(i);
    }
  }
  const int nc = static_cast<int>(sol.clamping.size());
  const int nb = static_cast<int>(sol.bounded.size());
  sol.E = Eigen::MatrixXd::Zero(nb, nc);
  for (int k = 0; k < nb; ++k)
  {
    const LcpRow& row = problem.rows[static_cast<size_t>(sol.bounded[static_cast<size_t>(k)])];
    const double sign
        = basis[static_cast<size_t>(sol.bounded[static_cast<size_t>(k)])]
                  == RowClass::BoundedPlus
              ? 1.0
              : -1.0;
    sol.E(k, position[static_cast<size_t>(row.link)]) = sign * row.mu;
  }

  sol.Aeff.resize(nc, nc);
  Eigen::VectorXd bC(nc);
  for (int r = 0; r < nc; ++r)
  {
    const int i = sol.clamping[static_cast<size_t>(r)];
    bC[r] = problem.b[i];
    for (int c = 0; c < nc; ++c)
      sol.Aeff(r, c) = problem.A(i, sol.clamping[static_cast<size_t>(c)]);
    for (int k = 0; k < nb; ++k)
    {
      const double a = problem.A(i, sol.bounded[static_cast<size_t>(k)]);
      if (a != 0.0)
        sol.Aeff.row(r) += a * sol.E.row(k);
    }
  }

  sol.f = Eigen::VectorXd::Zero(m);
  if (nc > 0)
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        sol.Aeff, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(kPinvCutoff);
    sol.rank = static_cast<int>(svd.rank());
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(nc);
    for (int k = 0; k < sol.rank; ++k)
      inv[k] = 1.0 / svd.singularValues()[k];
    sol.AeffPinv
        = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    const Eigen::VectorXd fC = -sol.AeffPinv * bC;
    for (int r = 0; r < nc; ++r)
      sol.f[sol.clamping[static_cast<size_t>(r)]] = fC[r];
    const Eigen::VectorXd fB = sol.E * fC;
    for (int k = 0; k < nb; ++k)
      sol.f[sol.bounded[static_cast<size_t>(k)]] = fB[k];
  }
  else
  {
    sol.AeffPinv.resize(0, 0);
  }
  sol.v = problem.A * sol.f + problem.b;
  return sol;
}

double upperBound(const LcpProblem& problem, const Eigen::VectorXd& f, int i)
{
  const LcpRow& row = problem.rows[static_cast<size_t>(i)];
  return row.mu * std::max(0.0, f[row.link]);
}

/// Reported classes with ties marked.
std::vector<RowClass> classify(const LcpProblem& problem, const LcpSolution& s)
{
  std::vector<RowClass> out = s.basis;
  for (int i = 0; i < problem.size(); ++i)
  {
    const double tol = rowTolerance(problem, s.f, i);
    const RowClass b = s.basis[static_cast<size_t>(i)];
    RowClass& c = out[static_cast<size_t>(i)];
    if (problem.rows[static_cast<size_t>(i)].isNormal())
    {
      if (b == RowClass::Clamping && s.f[i] <= tol)
        c = RowClass::Tied;
      else if (b == RowClass::Separating && s.v[i] <= tol)
        c = RowClass::Tied;
    }
    else
    {
      const double hi = upperBound(problem, s.f, i);
      if (b == RowClass::Clamping && hi > tol && std::abs(s.f[i]) >= hi - tol)
        c = RowClass::Tied;
      else if (isBounded(b) && std::abs(s.v[i]) <= tol)
        c = RowClass::Tied;
    }
  }
  return out;
}

LcpSolution finish(const LcpProblem& problem, LcpSolution sol)
{
  sol.classes = classify(problem, sol);
  return sol;
}

/// Class changes that would repair each violated row of `s`.
std::vector<std::pair<int, RowClass>> violations(
    const LcpProblem& problem, const LcpSolution& s)
{
  std::vector<std::pair<int, RowClass>> out;
  for (int i = 0; i < problem.size(); ++i)
  {
    const double tol = rowTolerance(problem, s.f, i);
    const RowClass b = s.basis[static_cast<size_t>(i)];
    const double f = s.f[i], v = s.v[i];
    if (problem.rows[static_cast<size_t>(i)].isNormal())
    {
      if (b == RowClass::Clamping && (f < -tol || v > tol))
        out.emplace_back(i, RowClass::Separating);
      else if (b == RowClass::Separating && v < -tol)
        out.emplace_back(i, RowClass::Clamping);
      continue;
    }
    const double hi = upperBound(problem, s.f, i);
    if (b == RowClass::Clamping)
    {
      if (f > hi + tol || v < -tol)
        out.emplace_back(i, RowClass::BoundedPlus);
      else if (f < -hi - tol || v > tol)
        out.emplace_back(i, RowClass::BoundedMinus);
    }
    else if ((b == RowClass::BoundedPlus && v > tol)
             || (b == RowClass::BoundedMinus && v < -tol))
    {
      out.emplace_back(i, RowClass::Clamping);
    }
  }
  return out;
}

std::vector<RowClass> coldGuess(const LcpProblem& problem)
{
  std::vector<RowClass> basis(static_cast<size_t>(problem.size()));
  for (int i = 0; i < problem.size(); ++i)
  {
    if (problem.rows[static_cast<size_t>(i)].isNormal())
      basis[static_cast<size_t>(i)] = problem.b[i] < 0.0 ? RowClass::Clamping
                                                         : RowClass::Separating;
    else
      basis[static_cast<size_t>(i)] = RowClass::Clamping;
  }
  return basis;
}

/// Lemke's complementary pivoting on w = M z + q, w, z >= 0, w^T z = 0 with
/// a lexicographic ratio test. Returns z; counts pivots.
std::optional<Eigen::VectorXd> lemke(
    const Eigen::MatrixXd& M, const Eigen::VectorXd& q,
    const Eigen::VectorXd& cover, int maxPivots, int& pivots)
{
  const int n = static_cast<int>(q.size());
  if (n == 0 || q.minCoeff() >= 0.0)
    return Eigen::VectorXd::Zero(n);
  // Columns: w (n), z (n), z0, rhs.
  const int z0 = 2 * n, rhs = 2 * n + 1;
  using Tableau = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  Tableau T = Tableau::Zero(n, 2 * n + 2);
  T.leftCols(n).setIdentity();
  T.middleCols(n, n) = -M.cast<long double>();
  T.col(z0) = -cover.cast<long double>();
  T.col(rhs) = q.cast<long double>();
  std::vector<int> basis(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    basis[static_cast<size_t>(i)] = i;

  auto pivot = [&](int row, int col) {
    T.row(row) /= T(row, col);
    for (int i = 0; i < n; ++i)
      if (i != row && T(i, col) != 0.0)
        T.row(i) -= T(i, col) * T.row(row);
    basis[static_cast<size_t>(row)] = col;
    ++pivots;
  };

  int row = 0;
  q.cwiseQuotient(cover).minCoeff(&row);
  int leaving = basis[static_cast<size_t>(row)];
  pivot(row, z0);
  while (pivots < maxPivots)
  {
    const int entering = leaving < n ? leaving + n : leaving - n;
    // Lexicographic minimum ratio over rows with a positive entry.
    int best = -1;
    const long double eps
        = 1e-12L * std::max(1.0L, T.col(entering).cwiseAbs().maxCoeff());
    for (int i = 0; i < n; ++i)
    {
      if (T(i, entering) <= eps)
        continue;
      if (best < 0)
      {
        best = i;
        continue;
      }
      const long double ri = T(i, rhs) / T(i, entering);
      const long double rb = T(best, rhs) / T(best, entering);
      const long double tie = 1e-12L * std::max(1.0L, std::abs(rb));
      if (ri < rb - tie)
      {
        best = i;
      }
      else if (ri <= rb + tie)
      {
        if (basis[static_cast<size_t>(i)] == z0)
        {
          best = i;
          continue;
        }
        if (basis[static_cast<size_t>(best)] == z0)
          continue;
        for (int k = 0; k < n; ++k)
        {
          const long double a = T(i, k) / T(i, entering);
          const long double b = T(best, k) / T(best, entering);
          if (a < b - 1e-14)
          {
            best = i;
            break;
          }
          if (a > b + 1e-14)
            break;
        }
      }
    }
    if (best < 0)
      return std::nullopt;  // ray termination
    leaving = basis[static_cast<size_t>(best)];
    pivot(best, entering);
    if (leaving == z0)
    {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i)
        if (basis[static_cast<size_t>(i)] >= n && basis[static_cast<size_t>(i)] < 2 * n)
          z[basis[static_cast<size_t>(i)] - n] = static_cast<double>(std::max(0.0L, T(i, rhs)));
      return z;
    }
  }
  return std::nullopt;
}

/// Class set read off impulses from an unstabilized solve.
std::vector<RowClass> basisFromImpulses(
    const LcpProblem& problem, const Eigen::VectorXd& f)
{
  std::vector<RowClass> basis(static_cast<size_t>(problem.size()));
  for (int i = 0; i < problem.size(); ++i)
  {
    const double tol = rowTolerance(problem, f, i);
    const LcpRow& row = problem.rows[static_cast<size_t>(i)];
    if (row.isNormal())
    {
      basis[static_cast<size_t>(i)]
          = f[i] > tol ? RowClass::Clamping : RowClass::Separating;
      continue;
    }
    const double hi = upperBound(problem, f, i);
    if (std::abs(f[i]) < hi - tol)
      basis[static_cast<size_t>(i)] = RowClass::Clamping;
    else
      basis[static_cast<size_t>(i)]
          = f[i] > 0.0 ? RowClass::BoundedPlus : RowClass::BoundedMinus;
  }
  return effectiveBasis(problem, basis);
}

/// Impulses of the boxed problem through the standard LCP in which each
/// friction row j becomes (f+_j, f-_j, lambda_j).
std::optional<Eigen::VectorXd> solveByLemke(
    const LcpProblem& problem, double ridgeScale, const Eigen::VectorXd& cover,
    int maxPivots, int& pivots)
{
  const int m = problem.size();
  std::vector<int> normals, friction;
  for (int i = 0; i < m; ++i)
    (problem.rows[static_cast<size_t>(i)].isNormal() ? normals : friction)
        .push_back(i);
  const int nn = static_cast<int>(normals.size());
  const int nf = static_cast<int>(friction.size());
  const int N = nn + 3 * nf;
  // Map from a row to its signed combination of unknowns.
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(m, N);
  std::vector<int> normalIndex(static_cast<size_t>(m), -1);
  for (int k = 0; k < nn; ++k)
  {
    P(normals[static_cast<size_t>(k)], k) = 1.0;
    normalIndex[static_cast<size_t>(normals[static_cast<size_t>(k)])] = k;
  }
  for (int k = 0; k < nf; ++k)
  {
    P(friction[static_cast<size_t>(k)], nn + k) = 1.0;
    P(friction[static_cast<size_t>(k)], nn + nf + k) = -1.0;
  }
  // A small ridge selects the least-norm solution among many; the classes
  // read off are re-solved on the exact A.
  const double ridge
      = ridgeScale * std::max(1.0, problem.A.cwiseAbs().maxCoeff());
  const Eigen::MatrixXd AP
      = (problem.A + ridge * Eigen::MatrixXd::Identity(m, m)) * P;
  Eigen::MatrixXd Mx = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd qx = Eigen::VectorXd::Zero(N);
  for (int k = 0; k < nn; ++k)
  {
    Mx.row(k) = AP.row(normals[static_cast<size_t>(k)]);
    qx[k] = problem.b[normals[static_cast<size_t>(k)]];
  }
  for (int k = 0; k < nf; ++k)
  {
    const int i = friction[static_cast<size_t>(k)];
    const LcpRow& row = problem.rows[static_cast<size_t>(i)];
    const int lambda = nn + 2 * nf + k;
    Mx.row(nn + k) = AP.row(i);
    Mx(nn + k, lambda) += 1.0;
    qx[nn + k] = problem.b[i];
    Mx.row(nn + nf + k) = -AP.row(i);
    Mx(nn + nf + k, lambda) += 1.0;
    qx[nn + nf + k] = -problem.b[i];
    Mx(lambda, normalIndex[static_cast<size_t>(row.link)]) = row.mu;
    Mx(lambda, nn + k) = -1.0;
    Mx(lambda, nn + nf + k) = -1.0;
  }
  const auto z = lemke(Mx, qx, cover.head(N), maxPivots, pivots);
  if (!z)
    return std::nullopt;
  return Eigen::VectorXd(P * *z);
}

/// Among solutions reachable by re-classifying rows that have zero velocity,
/// greedily moves to one with smaller |f|. Redundant contacts make such rows
/// ambiguous; the least-norm choice spreads the load evenly.
LcpSolution preferLeastNorm(const LcpProblem& problem, LcpSolution sol)
{
  const int m = problem.size();
  auto flexible = [&](const LcpSolution& s) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i)
    {
      const LcpRow& row = problem.rows[static_cast<size_t>(i)];
      if (std::abs(s.v[i]) > rowTolerance(problem, s.f, i))
        continue;
      if (row.isNormal()
          || s.basis[static_cast<size_t>(row.link)] == RowClass::Clamping)
        rows.push_back(i);
    }
    return rows;
  };
  auto tryBasis = [&](std::vector<RowClass> basis) -> std::optional<LcpSolution> {
    LcpSolution s = solveBasis(problem, effectiveBasis(problem, std::move(basis)));
    if (verify(problem, s.f) && s.f.norm() < sol.f.norm() * (1.0 - 1e-12))
      return s;
    return std::nullopt;
  };
  auto withFrictionClamped = [&](std::vector<RowClass> basis, int i) {
    for (int j = i + 1; j < m; ++j)
      if (problem.rows[static_cast<size_t>(j)].link == i)
        basis[static_cast<size_t>(j)] = RowClass::Clamping;
    return basis;
  };

  // All ambiguous normal rows clamping at once first.
  {
    std::vector<RowClass> basis = sol.basis;
    bool changed = false;
    for (int i : flexible(sol))
    {
      if (problem.rows[static_cast<size_t>(i)].isNormal())
      {
        changed |= basis[static_cast<size_t>(i)] != RowClass::Clamping;
        basis[static_cast<size_t>(i)] = RowClass::Clamping;
        basis = withFrictionClamped(std::move(basis), i);
      }
      else if (basis[static_cast<size_t>(i)] != RowClass::Clamping)
      {
        changed = true;
        basis[static_cast<size_t>(i)] = RowClass::Clamping;
      }
    }
    if (changed)
      if (auto s = tryBasis(basis))
        sol = std::move(*s);
  }

  for (int pass = 0; pass < m; ++pass)
  {
    bool improved = false;
    for (int i : flexible(sol))
    {
      const LcpRow& row = problem.rows[static_cast<size_t>(i)];
      std::vector<std::vector<RowClass>> options;
      std::vector<RowClass> basis = sol.basis;
      const RowClass current = basis[static_cast<size_t>(i)];
      if (row.isNormal())
      {
        if (current == RowClass::Clamping)
        {
          basis[static_cast<size_t>(i)] = RowClass::Separating;
          options.push_back(basis);
        }
        else
        {
          // Clamp it with every state of its friction rows.
          basis[static_cast<size_t>(i)] = RowClass::Clamping;
          std::vector<int> linked;
          for (int j = i + 1; j < m; ++j)
            if (problem.rows[static_cast<size_t>(j)].link == i)
              linked.push_back(j);
          int combos = 1;
          for (size_t k = 0; k < linked.size(); ++k)
            combos *= 3;
          for (int code = 0; code < combos; ++code)
          {
            int rest = code;
            for (int j : linked)
            {
              basis[static_cast<size_t>(j)] = static_cast<RowClass>(
                  std::array<int, 3>{0, 3, 4}[static_cast<size_t>(rest % 3)]);
              rest /= 3;
            }
            options.push_back(basis);
          }
        }
      }
      else
      {
        for (RowClass c : {RowClass::Clamping, RowClass::BoundedPlus,
                           RowClass::BoundedMinus})
        {
          if (c == current)
            continue;
          basis[static_cast<size_t>(i)] = c;
          options.push_back(basis);
        }
      }
      for (auto& option : options)
      {
        if (auto s = tryBasis(std::move(option)))
        {
          sol = std::move(*s);
          improved = true;
          break;
        }
      }
    }
    if (!improved)
      break;
  }
  return sol;
}

}  // namespace

const char* rowClassName(RowClass c)
{
  switch (c)
  {
    case RowClass::Clamping:
      return "C";
    case RowClass::Separating:
      return "S";
    case RowClass::Tied:
      return "T";
    case RowClass::BoundedPlus:
      return "B+";
    case RowClass::BoundedMinus:
      return "B-";
  }
  return "?";
}

bool LcpSolution::hasTied() const
{
  return std::find(classes.begin(), classes.end(), RowClass::Tied)
         != classes.end();
}

void LcpProblem::validate() const
{
  const int m = size();
  if (A.rows() != m || A.cols() != m || static_cast<int>(rows.size()) != m)
    throw DimensionMismatch("LCP with " + std::to_string(m) + " rows has A of "
                            + std::to_string(A.rows()) + "x"
                            + std::to_string(A.cols()) + " and "
                            + std::to_string(rows.size()) + " row specs");
  for (int i = 0; i < m; ++i)
  {
    const LcpRow& row = rows[static_cast<size_t>(i)];
    if (row.isNormal())
      continue;
    if (row.link >= i || !rows[static_cast<size_t>(row.link)].isNormal())
      throw DimensionMismatch("friction row " + std::to_string(i)
                              + " must link an earlier normal row");
    if (!(row.mu >= 0.0))
      throw DimensionMismatch("friction row " + std::to_string(i)
                              + " has a negative coefficient");
  }
  if (!A.allFinite() || !b.allFinite())
    throw NonFinite("LCP data is not finite");
  if (m == 0)
    return;
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error("LCP matrix is not symmetric");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale)
    throw Error("LCP matrix is not positive semidefinite");
}

LcpProblem assemble(
    const Eigen::MatrixXd& M,
    const Eigen::MatrixXd& J,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& tau,
    const Eigen::VectorXd& c,
    double dt,
    std::vector<LcpRow> rows)
{
  const Eigen::Index n = M.rows();
  if (M.cols() != n || J.cols() != n || qdot.size() != n || tau.size() != n
      || c.size() != n)
    throw DimensionMismatch("assemble: inconsistent dimensions");
  if (rows.empty())
    rows.resize(static_cast<size_t>(J.rows()));
  if (static_cast<Eigen::Index>(rows.size()) != J.rows())
    throw DimensionMismatch("assemble: row specs do not match J");
  LcpProblem p;
  p.rows = std::move(rows);
  if (n == 0 || J.rows() == 0)
  {
    p.A = Eigen::MatrixXd::Zero(J.rows(), J.rows());
    p.b = Eigen::VectorXd::Zero(J.rows());
    p.validate();
    return p;
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SingularMass("assemble: mass matrix is not positive definite");
  const Eigen::MatrixXd MinvJt = ldlt.solve(J.transpose());
  p.A = J * MinvJt;
  p.A = (0.5 * (p.A + p.A.transpose())).eval();
  p.b = J * (qdot + dt * ldlt.solve(tau - c));
  p.validate();
  return p;
}

double rowTolerance(
    const LcpProblem& problem, const Eigen::VectorXd& f, int i)
{
  const double fmax = f.size() > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
  const double arow = problem.A.row(i).cwiseAbs().maxCoeff();
  return kComplementarityTolerance
         * std::max(1.0, std::abs(problem.b[i]) + arow * fmax);
}

bool verify(const LcpProblem& problem, const Eigen::VectorXd& f)
{
  const Eigen::VectorXd v = problem.A * f + problem.b;
  for (int i = 0; i < problem.size(); ++i)
  {
    const double tol = rowTolerance(problem, f, i);
    if (problem.rows[static_cast<size_t>(i)].isNormal())
    {
      if (f[i] < -tol || v[i] < -tol || std::min(f[i], v[i]) > tol)
        return false;
      continue;
    }
    const double hi = upperBound(problem, f, i);
    if (std::abs(f[i]) > hi + tol)
      return false;
    if (v[i] > tol && f[i] > -hi + tol)
      return false;
    if (v[i] < -tol && f[i] < hi - tol)
      return false;
  }
  return true;
}

double complementarityResidual(
    const LcpProblem& problem, const Eigen::VectorXd& f)
{
  const Eigen::VectorXd v = problem.A * f + problem.b;
  double r = 0.0;
  for (int i = 0; i < problem.size(); ++i)
  {
    if (problem.rows[static_cast<size_t>(i)].isNormal())
    {
      r += std::abs(f[i] * v[i]);
      continue;
    }
    const double hi = upperBound(problem, f, i);
    if (v[i] < 0.0)
      r += -v[i] * std::max(0.0, hi - f[i]);
    else
      r += v[i] * std::max(0.0, f[i] + hi);
  }
  return r;
}

LcpSolution solveClasses(
    const LcpProblem& problem, const std::vector<RowClass>& classes)
{
  if (static_cast<int>(classes.size()) != problem.size())
    throw DimensionMismatch("class count does not match the LCP");
  LcpSolution sol = solveBasis(problem, effectiveBasis(problem, classes));
  sol.classes = sol.basis;
  return sol;
}

LcpSolution stabilize(
    const LcpProblem& problem, const std::vector<RowClass>& classes)
{
  LcpSolution sol = solveClasses(problem, classes);
  if (!verify(problem, sol.f))
    throw StaleClassification(
        "stabilized impulses violate the LCP for this classification");
  return finish(problem, std::move(sol));
}

std::vector<LcpSolution> enumerateSolutions(const LcpProblem& problem)
{
  const int m = problem.size();
  if (m > 12)
    throw DimensionMismatch("enumeration supports at most 12 rows");
  std::vector<int> normals, friction;
  for (int i = 0; i < m; ++i)
    (problem.rows[static_cast<size_t>(i)].isNormal() ? normals : friction)
        .push_back(i);

  std::vector<LcpSolution> found;
  std::vector<RowClass> basis(static_cast<size_t>(m), RowClass::Separating);
  auto consider = [&]() {
    LcpSolution s = solveBasis(problem, basis);
    if (verify(problem, s.f))
      found.push_back(finish(problem, std::move(s)));
  };
  auto frictionLevel = [&](auto&& self, size_t k) -> void {
    if (k == friction.size())
    {
      consider();
      return;
    }
    const int i = friction[k];
    const int link = problem.rows[static_cast<size_t>(i)].link;
    if (basis[static_cast<size_t>(link)] != RowClass::Clamping)
    {
      basis[static_cast<size_t>(i)] = RowClass::Separating;
      self(self, k + 1);
      return;
    }
    for (RowClass c :
         {RowClass::Clamping, RowClass::BoundedPlus, RowClass::BoundedMinus})
    {
      basis[static_cast<size_t>(i)] = c;
      self(self, k + 1);
    }
  };
  auto normalLevel = [&](auto&& self, size_t k) -> void {
    if (k == normals.size())
    {
      frictionLevel(frictionLevel, 0);
      return;
    }
    for (RowClass c : {RowClass::Clamping, RowClass::Separating})
    {
      basis[static_cast<size_t>(normals[k])] = c;
      self(self, k + 1);
    }
  };
  normalLevel(normalLevel, 0);
  return found;
}

LcpSolution solveEnumerate(const LcpProblem& problem)
{
  std::vector<LcpSolution> all = enumerateSolutions(problem);
  if (all.empty())
    throw Infeasible("no class set satisfies the LCP");
  size_t best = 0;
  for (size_t k = 1; k < all.size(); ++k)
    if (all[k].f.norm() < all[best].f.norm() * (1.0 - 1e-12))
      best = k;
  return std::move(all[best]);
}

LcpSolution solveDirect(
    const LcpProblem& problem,
    const std::optional<std::vector<RowClass>>& warm,
    int maxPivots)
{
  const int m = problem.size();
  if (maxPivots <= 0)
    maxPivots = std::max(100, 50 * m);
  std::vector<RowClass> basis;
  if (warm && static_cast<int>(warm->size()) == m)
  {
    basis = effectiveBasis(problem, *warm);
    LcpSolution s = solveBasis(problem, basis);
    if (verify(problem, s.f))
    {
      s = preferLeastNorm(problem, std::move(s));
      s.warmStarted = true;
      return finish(problem, std::move(s));
    }
  }
  else
  {
    basis = effectiveBasis(problem, coldGuess(problem));
  }

  int pivots = 0;
  if (verify(problem, Eigen::VectorXd::Zero(m)))
  {
    LcpSolution s = solveBasis(
        problem, std::vector<RowClass>(static_cast<size_t>(m), RowClass::Separating));
    return finish(problem, std::move(s));
  }
  // Degenerate ties can end Lemke on a ray in floating point; a perturbed
  // covering vector and a larger ridge move it off the tie.
  const int unknowns = 3 * m;
  const std::array<std::pair<double, bool>, 3> attempts{
      {{1e-8, false}, {1e-8, true}, {1e-6, true}}};
  for (const auto& [ridgeScale, perturbed] : attempts)
  {
    Eigen::VectorXd cover = Eigen::VectorXd::Ones(unknowns);
    if (perturbed)
      for (int i = 0; i < unknowns; ++i)
        cover[i] += 0.5 * std::sin(1.0 + 7.0 * i) * std::sin(1.0 + 7.0 * i);
    if (const auto f = solveByLemke(problem, ridgeScale, cover, maxPivots, pivots))
    {
      basis = basisFromImpulses(problem, *f);
      break;
    }
  }

  // Repair of classes read off at a tie, and of the rare Lemke failure.
  size_t fewest = std::numeric_limits<size_t>::max();
  int stalls = 0;
  for (; pivots <= maxPivots; ++pivots)
  {
    LcpSolution s = solveBasis(problem, basis);
    const auto bad = violations(problem, s);
    if (bad.empty() && verify(problem, s.f))
    {
      s = preferLeastNorm(problem, std::move(s));
      s.pivots = pivots;
      return finish(problem, std::move(s));
    }
    if (bad.empty())
      break;
    if (bad.size() < fewest)
    {
      fewest = bad.size();
      stalls = 0;
    }
    else
    {
      ++stalls;
    }
    if (stalls < 3)
    {
      for (const auto& [i, c] : bad)
        basis[static_cast<size_t>(i)] = c;
    }
    else
    {
      const auto& [i, c] = bad.back();
      basis[static_cast<size_t>(i)] = c;
    }
    basis = effectiveBasis(problem, basis);
  }
  throw NoConvergence("LCP pivoting did not converge after "
                      + std::to_string(maxPivots) + " pivots");
}

void writeLcpDump(
    std::ostream& os, const LcpProblem& problem, const LcpSolution* solution)
{
  writeMatrix(os, "A", problem.A);
  writeMatrix(os, "b", problem.b);
  Eigen::MatrixXd bounds(problem.size(), 3);
  for (int i = 0; i < problem.size(); ++i)
  {
    const LcpRow& row = problem.rows[static_cast<size_t>(i)];
    bounds(i, 0) = row.link;
    bounds(i, 1) = row.mu;
    bounds(i, 2) = row.contact;
  }
  writeMatrix(os, "bounds_link_mu_contact", bounds);
  if (!solution)
    return;
  writeMatrix(os, "f", solution->f);
  writeMatrix(os, "v", solution->v);
  // 0 C, 1 S, 2 T, 3 B+, 4 B-
  Eigen::VectorXd classes(problem.size());
  for (int i = 0; i < problem.size(); ++i)
    classes[i] = static_cast<int>(solution->classes[static_cast<size_t>(i)]);
  writeMatrix(os, "classes", classes);
}

}  // namespace nimble_mini
