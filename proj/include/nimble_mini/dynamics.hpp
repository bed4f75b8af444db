#pragma once

#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/skeleton.hpp"
#include "nimble_mini/spatial.hpp"

namespace nimble_mini {

/// Generalized state of a skeleton plus the control and timestep.
struct WorldState
{
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  Eigen::VectorXd tau;
  double dt = 1e-3;

  /// Throws DimensionMismatch or NonFinite.
  void validate(int dofs) const;
};

/// Body poses for one configuration.
struct Kinematics
{
  std::vector<Transform> local;  ///< parent (or world) to body
  std::vector<Transform> world;  ///< world to body
  std::vector<SpatialMotion> worldScrews;  ///< screw of joint i, world frame
};

Kinematics forwardKinematics(const Skeleton& skel, const Eigen::VectorXd& q);

/// Joint-space inertia via composite rigid bodies.
Eigen::MatrixXd massMatrix(const Skeleton& skel, const Eigen::VectorXd& q);

/// Recursive Newton-Euler: M qddot + C(q, qdot) qdot (+ gravity term when
/// `withGravity`). Gravity enters as a base acceleration of -g.
Eigen::VectorXd inverseDynamics(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& qddot,
    bool withGravity);

/// c(q, qdot) so that M qddot + c = tau.
Eigen::VectorXd coriolisGravity(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& qdot);

struct InverseDynamicsDerivatives
{
  Eigen::VectorXd tau;
  Eigen::MatrixXd dq;  ///< d tau / d q
  Eigen::MatrixXd dqdot;  ///< d tau / d qdot
};

/// Analytic partials of inverseDynamics() at fixed qddot.
InverseDynamicsDerivatives inverseDynamicsDerivatives(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& qddot,
    bool withGravity);

/// Articulated-body quantities at zero velocity and gravity. Depends only on
/// (q, mu); solves M x = z in O(n) per right-hand side.
class ArticulatedCache
{
public:
  /// Throws SingularMass when a pivot S^T I^A S is not positive.
  ArticulatedCache(const Skeleton& skel, const Eigen::VectorXd& q);

  Eigen::VectorXd minvTimes(const Eigen::VectorXd& z) const;
  /// Full inverse, one column per unit right-hand side.
  Eigen::MatrixXd minv() const;

  const Kinematics& kinematics() const { return mKin; }

private:
  const Skeleton* mSkel;
  Kinematics mKin;
  std::vector<Mat6> mAdInv;  ///< Ad_{T_i^{-1}} for each local transform
  std::vector<Mat6> mArtInertia;  ///< articulated inertia I^A_i
  std::vector<Vec6> mIS;  ///< I^A_i S_i
  std::vector<double> mPsi;  ///< 1 / (S_i^T I^A_i S_i)
};

Eigen::VectorXd minvTimes(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& z);

/// d(M^-1 z)/dq at fixed z. Uses d(M^-1 z)/dq = -M^-1 (dM/dq) M^-1 z, with
/// the bracket evaluated as an inverse-dynamics derivative.
Eigen::MatrixXd dMinvZdq(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& z);

struct CoriolisDerivatives
{
  Eigen::MatrixXd dq;
  Eigen::MatrixXd dqdot;
};

CoriolisDerivatives dCoriolis(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& qdot);

/// Semi-implicit Euler: qdot' = qdot + M^-1(-dt (c - tau) + jtf), then
/// q' = q + dt qdot'. `jtf` is the joint impulse J^T f.
WorldState unconstrainedStep(
    const Skeleton& skel, const WorldState& state, const Eigen::VectorXd& jtf);

}  // namespace nimble_mini
