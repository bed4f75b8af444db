#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/fdcheck.hpp"
#include "nimble_mini/lcp.hpp"
#include "nimble_mini/world.hpp"

namespace nimble_mini {

/// How rows reported Tied are resolved before differentiating. A tied
/// normal row becomes Clamping or Separating; a tied friction row becomes
/// Clamping or takes the bound its impulse sits at.
enum class TiePolicy
{
  Random,  ///< fair coin per row from a seeded generator
  AllClamping,
  AllSeparating
};

struct TieResolution
{
  TiePolicy policy = TiePolicy::AllClamping;
  std::uint64_t seed = 0;
};

/// Classes of `solution` with every Tied row resolved by the policy; the
/// input is returned unchanged when nothing is tied.
std::vector<RowClass> tiedSubgradient(
    const LcpProblem& problem,
    const LcpSolution& solution,
    const TieResolution& resolution);

/// df/dx for each scalar x with known dA/dx and db/dx (one matrix and one
/// column of `db` per x), under the classes of `solution` (or `classes`
/// when given, which must not contain Tied):
///   df_C = -A_eff^+ (dA_eff f_C + db_C) + (I - A_eff^+ A_eff) dA_eff^T A_eff^+T f_C,
///   df_B = E df_C, df_S = 0, with dA_eff = dA_CC + dA_CB E.
/// Throws TiedPresent when the classes contain Tied, StaleClassification when
/// they do not reproduce the solution, DimensionMismatch on shapes.
Eigen::MatrixXd lcpImpulseJacobian(
    const LcpProblem& problem,
    const LcpSolution& solution,
    const std::vector<Eigen::MatrixXd>& dA,
    const Eigen::MatrixXd& db,
    const std::optional<std::vector<RowClass>>& classes = std::nullopt);

/// Block labels used by every export of step Jacobians.
inline constexpr const char* kBlockDqDq = "dq_next_dq";
inline constexpr const char* kBlockDqDqdot = "dq_next_dqdot";
inline constexpr const char* kBlockDqdotDq = "dqdot_next_dq";
inline constexpr const char* kBlockDqdotDqdot = "dqdot_next_dqdot";
inline constexpr const char* kBlockDqdotDtau = "dqdot_next_dtau";
inline constexpr const char* kBlockDqdotDmu = "dqdot_next_dmu";

struct StepJacobians
{
  Eigen::MatrixXd dqNext_dq;
  Eigen::MatrixXd dqNext_dqdot;
  Eigen::MatrixXd dqNext_dtau;
  Eigen::MatrixXd dqdotNext_dq;
  Eigen::MatrixXd dqdotNext_dqdot;
  Eigen::MatrixXd dqdotNext_dtau;
  /// n x 10 bodies; empty unless requested. Built by differencing
  /// inverse dynamics over the inertial parameters, so it is not part of
  /// the fully analytic set.
  Eigen::MatrixXd dqdotNext_dmu;
  /// LCP impulse sensitivities (rows x n).
  Eigen::MatrixXd df_dq;
  Eigen::MatrixXd df_dqdot;
  Eigen::MatrixXd df_dtau;
  /// Classes the blocks were computed under (no Tied).
  std::vector<RowClass> classes;
  /// Position blocks replaced by the bounce least-squares solution.
  bool bounceCorrected = false;
  double dt = 0.0;

  /// The five analytic blocks (and the inertial block when present) in
  /// export order.
  std::vector<NamedMatrix> blocks() const;
};

struct JacobianOptions
{
  /// Required when the solution has Tied rows; TiedPresent otherwise.
  std::optional<TieResolution> ties;
  /// Differentiate under these classes instead of the solution's. The
  /// impulses stay those of the forward step.
  std::optional<std::vector<RowClass>> classes;
  bool inertialParams = false;
  /// Replace the position blocks with the bounce solution when rows bounce.
  bool bouncePositions = true;
};

/// Jacobians of (q, qdot, tau[, mu]) -> (q', qdot') at a completed step.
/// Throws TiedPresent and KindBoundary.
StepJacobians stepJacobians(
    const World& world, const StepRecord& record, const JacobianOptions& options = {});

/// One block of stepJacobians() by name (kBlock*), computing only the
/// linearization it depends on. Equal to the matching entry of blocks().
Eigen::MatrixXd stepJacobianBlock(
    const World& world,
    const StepRecord& record,
    const std::string& block,
    const JacobianOptions& options = {});

/// One bouncing contact row at a step.
struct BounceRow
{
  double restitution = 0.0;
  Eigen::RowVectorXd jacobian;  ///< J_i at t
  Eigen::RowVectorXd jacobianNext;  ///< J_i at t+1
};

struct BouncePositions
{
  Eigen::MatrixXd dq;  ///< X = dq'/dq
  Eigen::MatrixXd dqdot;  ///< dt X
};

/// X closest to the identity (Frobenius) among the least-squares solutions
/// of J_{i,t+1} X pinv(J_{i,t}) = -sigma_i for every row i. With no rows
/// X = I. Throws DegenerateBounceRows when a row Jacobian is zero.
BouncePositions bouncePositionJacobians(
    const std::vector<BounceRow>& rows, int dofs, double dt);

/// Bouncing rows of a step; J_{t+1} is taken equal to J_t.
std::vector<BounceRow> bounceRows(const StepRecord& record);

struct LossGradient
{
  Eigen::VectorXd dq;
  Eigen::VectorXd dqdot;
  Eigen::VectorXd dtau;
  /// dl/dv per LCP row when computed.
  Eigen::VectorXd dv;
};

/// Transpose products of the step blocks.
LossGradient backpropStep(
    const StepJacobians& jac,
    const Eigen::VectorXd& dlDqNext,
    const Eigen::VectorXd& dlDqdotNext);

/// |dl/dqdot|^2 + |dl/dtau|^2 / dt.
double selectionNorm(const LossGradient& g, double dt);

struct AwareGradient
{
  LossGradient gradient;
  /// True when the classes re-derived from the sign of dl/dv won.
  bool reclassified = false;
  std::vector<RowClass> classes;
  double selection = 0.0;  ///< selection norm of the returned gradient
  double standardSelection = 0.0;  ///< selection norm of the true classes
};

/// Backpropagates under the solved classes and under classes set from the
/// sign of dl/dv on normal rows (negative: Separating, positive: Clamping)
/// and keeps the one with the larger selection norm. dl/dv_i is taken as
/// (J M^-1 g)_i with g the loss gradient on qdot' (position part folded in
/// through q' = q + dt qdot').
AwareGradient complementarityAwareBackprop(
    const World& world,
    const StepRecord& record,
    const Eigen::VectorXd& dlDqNext,
    const Eigen::VectorXd& dlDqdotNext,
    const JacobianOptions& options = {});

}  // namespace nimble_mini
