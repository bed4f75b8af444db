#pragma once

#include <array>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/collision.hpp"
#include "nimble_mini/dynamics.hpp"
#include "nimble_mini/lcp.hpp"
#include "nimble_mini/skeleton.hpp"

namespace nimble_mini {

/// A contact row takes part in a bounce when its restitution is positive and
/// the pre-step approach speed exceeds this (m/s).
constexpr double kBounceSpeedThreshold = 1e-8;

struct World
{
  Skeleton skeleton;
  std::vector<Collider> colliders;

  int dofs() const { return skeleton.dofs(); }
};

/// Everything one forward step computed, kept for differentiation.
struct StepRecord
{
  WorldState state;  ///< input at t
  WorldState next;  ///< q and qdot at t+1; tau and dt copied from the input
  Kinematics kinematics;
  std::vector<Contact> contacts;
  /// Per-contact rows (normal, tangent1, tangent2): 3 per contact.
  ContactJacobian contactJacobian;
  /// LCP row r is row jacobianRows[r] of contactJacobian.J. A contact
  /// without friction contributes only its normal row.
  std::vector<int> jacobianRows;
  Eigen::MatrixXd J;  ///< LCP rows x dofs
  /// Restitution of each LCP row taking part in a bounce, 0 otherwise. The
  /// LCP offset b carries restitution * (J qdot) on those rows.
  Eigen::VectorXd restitution;
  Eigen::MatrixXd M;
  Eigen::MatrixXd Minv;
  Eigen::VectorXd c;  ///< Coriolis and gravity term at (q, qdot)
  LcpProblem lcp;
  LcpSolution solution;

  int rows() const { return static_cast<int>(jacobianRows.size()); }
  /// LCP impulses scattered to the 3-per-contact layout.
  Eigen::VectorXd contactImpulses() const;
  /// Whether any row bounces.
  bool bouncing() const;
};

/// Classes of the previous step keyed by (collider A, collider B, feature A,
/// feature B). A hint is offered only when every current contact is known.
class WarmStartCache
{
public:
  std::optional<std::vector<RowClass>> hint(
      const std::vector<Contact>& contacts,
      const std::vector<int>& jacobianRows) const;
  void store(
      const std::vector<Contact>& contacts,
      const std::vector<int>& jacobianRows,
      const std::vector<RowClass>& basis);

  int hits = 0;  ///< solves answered by the hint
  int attempts = 0;  ///< solves with contacts

private:
  using Key = std::array<int, 4>;
  std::map<Key, std::array<RowClass, 3>> mClasses;
};

/// One semi-implicit step with hard contact: detect, solve the LCP and
/// integrate. Throws SingularMass, NoConvergence and the state validation
/// errors.
StepRecord step(
    const World& world, const WorldState& state, WarmStartCache* warm = nullptr);

/// The map (q, qdot, tau) -> (q', qdot') only; shares step().
WorldState stepState(const World& world, const WorldState& state);

}  // namespace nimble_mini
