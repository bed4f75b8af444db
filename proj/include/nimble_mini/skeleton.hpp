#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/spatial.hpp"

namespace nimble_mini {

enum class JointKind
{
  Revolute,
  Prismatic
};

/// Single-dof joint. `axis` is a unit vector in the joint frame.
struct JointDef
{
  JointKind kind = JointKind::Revolute;
  Vec3 axis = Vec3::UnitZ();
};

/// One body of a kinematic tree together with the joint that connects it to
/// its parent. The body frame coincides with the joint's child frame, so the
/// parent-to-body transform is placement * exp(S * q).
struct Body
{
  std::string name;
  SpatialInertia inertia;
  int parent = -1;  ///< -1 attaches the joint to the world
  Transform placement;
  JointDef joint;
};

/// Kinematic forest of single-dof joints. Generalized coordinate i belongs to
/// the joint of body i. Immutable after construction.
class Skeleton
{
public:
  Skeleton() = default;
  /// Throws ValidationError for out-of-order parents, non-unit axes or
  /// invalid inertias.
  Skeleton(std::vector<Body> bodies, Vec3 gravity);

  int dofs() const { return static_cast<int>(mBodies.size()); }
  const std::vector<Body>& bodies() const { return mBodies; }
  const Body& body(int i) const { return mBodies[static_cast<size_t>(i)]; }
  int parent(int i) const { return body(i).parent; }
  const Vec3& gravity() const { return mGravity; }

  /// Screw axis of joint i in its body frame.
  const SpatialMotion& localScrew(int i) const
  {
    return mScrews[static_cast<size_t>(i)];
  }

  /// True when joint j moves body k, i.e. j is k or one of its ancestors.
  /// Body index -1 (the world) has no ancestors.
  bool moves(int j, int k) const
  {
    return k >= 0 && mAncestry[static_cast<size_t>(k * dofs() + j)] != 0;
  }

  /// Flattened inertial parameters: per body
  /// [mass, com.x, com.y, com.z, Ixx, Iyy, Izz, Ixy, Ixz, Iyz].
  Eigen::VectorXd inertialParams() const;
  /// Copy with inertias replaced from a vector in inertialParams() order.
  Skeleton withInertialParams(const Eigen::VectorXd& mu) const;

  static constexpr int kParamsPerBody = 10;

private:
  std::vector<Body> mBodies;
  Vec3 mGravity = Vec3::Zero();
  std::vector<SpatialMotion> mScrews;
  std::vector<char> mAncestry;
};

}  // namespace nimble_mini
