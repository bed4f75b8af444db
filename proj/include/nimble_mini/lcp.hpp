#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace nimble_mini {

/// Relative complementarity tolerance.
constexpr double kComplementarityTolerance = 1e-9;

/// Relative singular-value cutoff of every pseudo-inverse in the solver.
constexpr double kPinvCutoff = 1e-10;

/// One LCP row. Normal rows have link < 0 and bounds [0, inf). Friction rows
/// are boxed by +-mu times the impulse of their linked normal row.
struct LcpRow
{
  int link = -1;
  double mu = 0.0;
  int contact = -1;  ///< owning contact, -1 when unknown
  int direction = 0;  ///< 0 normal, 1 and 2 tangents

  bool isNormal() const { return link < 0; }
};

struct LcpProblem
{
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<LcpRow> rows;

  int size() const { return static_cast<int>(b.size()); }

  /// Throws DimensionMismatch for inconsistent sizes or a friction row not
  /// linked to an earlier normal row, and Error when A is not symmetric PSD
  /// to 1e-10 (relative to max |A|).
  void validate() const;
};

enum class RowClass
{
  Clamping,
  Separating,
  Tied,
  BoundedPlus,  ///< friction at +mu f_n
  BoundedMinus  ///< friction at -mu f_n
};

const char* rowClassName(RowClass c);

struct LcpSolution
{
  Eigen::VectorXd f;
  Eigen::VectorXd v;  ///< A f + b
  /// Reported class per row; Tied where impulse and velocity are both zero
  /// at the active bound.
  std::vector<RowClass> classes;
  /// Class set the impulses were computed from (never Tied). A friction row
  /// whose normal row is not clamping is Separating here.
  std::vector<RowClass> basis;
  std::vector<int> clamping;  ///< row indices, ascending
  std::vector<int> bounded;  ///< row indices, ascending
  /// |bounded| x |clamping|; one entry +-mu per row at the linked normal.
  Eigen::MatrixXd E;
  /// A_CC + A_CB E and its pseudo-inverse.
  Eigen::MatrixXd Aeff;
  Eigen::MatrixXd AeffPinv;
  int rank = 0;
  bool warmStarted = false;
  int pivots = 0;

  bool hasTied() const;
};

/// A = J M^-1 J^T, b = J (qdot + dt M^-1 (tau - c)). With no rows every
/// row is a normal row. Throws DimensionMismatch.
LcpProblem assemble(
    const Eigen::MatrixXd& M,
    const Eigen::MatrixXd& J,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& tau,
    const Eigen::VectorXd& c,
    double dt,
    std::vector<LcpRow> rows = {});

/// Impulses and index structure of a class set without checking the LCP
/// conditions. Tied rows count as clamping; friction rows whose normal row
/// does not clamp count as separating.
LcpSolution solveClasses(
    const LcpProblem& problem, const std::vector<RowClass>& classes);

/// Impulses of a class set: f_C = -pinv(A_CC + A_CB E) b_C, f_B = E f_C,
/// f_S = 0. Throws StaleClassification if the result violates the LCP.
LcpSolution stabilize(
    const LcpProblem& problem, const std::vector<RowClass>& classes);

/// Brute force over all class sets; returns the feasible one with the least
/// |f|. Throws DimensionMismatch for m > 12 and Infeasible.
LcpSolution solveEnumerate(const LcpProblem& problem);

/// Every class set whose stabilized impulses satisfy the LCP, in
/// enumeration order. Throws DimensionMismatch for m > 12.
std::vector<LcpSolution> enumerateSolutions(const LcpProblem& problem);

/// Lemke's method on the equivalent standard LCP (each friction row split
/// into two signed impulses and a slack), then the classes read off the
/// result are stabilized; classes at a tie are repaired by principal pivots.
/// A warm class set that verifies is returned without pivoting. Throws
/// NoConvergence once `maxPivots` (default 50 m, at least 100) is spent.
/// Among several solutions (redundant contacts) a least-norm one is sought
/// by local search over zero-velocity rows; with friction the LCP may have
/// distinct solutions and the one returned is any valid member.
LcpSolution solveDirect(
    const LcpProblem& problem,
    const std::optional<std::vector<RowClass>>& warm = std::nullopt,
    int maxPivots = 0);

/// Whether (f, A f + b) satisfies bounds and complementarity.
bool verify(const LcpProblem& problem, const Eigen::VectorXd& f);

/// Sum over rows of |f_i v_i| (normal) or the box analog (friction).
double complementarityResidual(
    const LcpProblem& problem, const Eigen::VectorXd& f);

/// Tolerance used for row i, scaled by its magnitudes.
double rowTolerance(
    const LcpProblem& problem, const Eigen::VectorXd& f, int i);

/// Text dump of A, b, bounds and (optionally) the solution.
void writeLcpDump(
    std::ostream& os,
    const LcpProblem& problem,
    const LcpSolution* solution = nullptr);

}  // namespace nimble_mini
