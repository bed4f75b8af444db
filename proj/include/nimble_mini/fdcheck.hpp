#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nimble_mini {

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central differences use h_i = kCentralStep * max(1, |x_i|) by default.
constexpr double kCentralStep = 1e-6;
/// Ridders starts at h_i = kRiddersStep * max(1, |x_i|) by default and
/// shrinks it by kRiddersContraction per tableau column.
constexpr double kRiddersStep = 1e-2;
constexpr double kRiddersContraction = 1.4;
constexpr int kRiddersTableau = 10;

/// Relative errors divide by max(max |oracle|, kRelativeFloor).
constexpr double kRelativeFloor = 1e-3;

/// scale * max(1, |x_i|) for each coordinate.
Eigen::VectorXd relativeSteps(const Eigen::VectorXd& x, double scale);

/// Column i is (fn(x + h_i e_i) - fn(x - h_i e_i)) / (2 h_i). Columns are
/// spread over `threads` workers; the result does not depend on the count.
/// Throws NonFinite.
Eigen::MatrixXd centralDifference(
    const VectorFunction& fn,
    const Eigen::VectorXd& x,
    const Eigen::VectorXd& steps,
    int threads = 1);

/// Uses the absolute step h for every coordinate, or the default relative
/// rule when h <= 0.
Eigen::MatrixXd centralDifference(
    const VectorFunction& fn, const Eigen::VectorXd& x, double h = 0.0,
    int threads = 1);

struct RiddersResult
{
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd error;  ///< extrapolation error estimate per entry
  Eigen::MatrixXd step;  ///< step at which each entry's estimate was taken
};

/// Neville extrapolation of central differences over geometrically
/// shrinking steps. Each entry stops once its error estimate grows by more
/// than a factor two, or when the tableau is exhausted. Throws NonFinite.
RiddersResult ridders(
    const VectorFunction& fn,
    const Eigen::VectorXd& x,
    const Eigen::VectorXd& initialSteps,
    int tableau = kRiddersTableau,
    int threads = 1);

/// Initial step h0 for every coordinate, or the default relative rule when
/// h0 <= 0.
RiddersResult ridders(
    const VectorFunction& fn, const Eigen::VectorXd& x, double h0 = 0.0,
    int tableau = kRiddersTableau, int threads = 1);

struct NamedMatrix
{
  std::string name;
  Eigen::MatrixXd value;
  /// Step size behind an oracle block (0 when not applicable).
  double step = 0.0;
  /// Largest Ridders error estimate in an oracle block (0 when unknown).
  double estimate = 0.0;
};

struct BlockReport
{
  std::string name;
  double maxAbs = 0.0;
  double maxRel = 0.0;
  int row = -1;  ///< entry with the largest absolute error, -1 when empty
  int col = -1;
  double step = 0.0;
  double estimate = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

struct DiffReport
{
  std::vector<BlockReport> blocks;

  bool pass() const;
  /// "block (row, col)" of the first failing block, empty when passing.
  std::string firstFailure() const;
  /// Comma-separated table with a header line.
  void write(std::ostream& os) const;
};

/// Compares analytic blocks against oracle blocks of the same names and
/// order. maxRel = maxAbs / max(max |oracle|, kRelativeFloor); a block
/// passes iff maxRel <= its tolerance (`overrides` by name, else
/// `tolerance`). Throws ShapeMismatch and NonFinite.
DiffReport compare(
    const std::vector<NamedMatrix>& analytic,
    const std::vector<NamedMatrix>& oracle,
    double tolerance,
    const std::map<std::string, double>& overrides = {});

/// Worker count: NIMBLE_MINI_THREADS when set (at least 1), else the
/// hardware concurrency.
int threadCap();

}  // namespace nimble_mini
