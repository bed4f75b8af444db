#pragma once

// Spatial (6D) algebra on SE(3). Every spatial vector is ordered
// angular-then-linear: a motion is (omega, v), a force is (torque, force).

#include <Eigen/Dense>

namespace nimble_mini {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Spatial velocity or screw axis, (angular, linear).
using SpatialMotion = Vec6;
/// Wrench, (torque, force).
using SpatialForce = Vec6;

/// Skew-symmetric matrix such that hat(a) * b == a.cross(b).
Mat3 hat(const Vec3& a);

/// Rigid transform x -> rotation * x + translation.
struct Transform
{
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Transform identity() { return {}; }
  static Transform fromTranslation(const Vec3& t);
  /// Quaternion components in (w, x, y, z) order; normalized before use.
  static Transform fromQuaternion(double w, double x, double y, double z,
                                  const Vec3& t = Vec3::Zero());

  Transform inverse() const;
  Vec3 apply(const Vec3& point) const { return rotation * point + translation; }
  Vec3 applyDirection(const Vec3& dir) const { return rotation * dir; }
};

Transform compose(const Transform& a, const Transform& b);
inline Transform operator*(const Transform& a, const Transform& b)
{
  return compose(a, b);
}

/// Exponential map of a unit-time twist (omega, v).
Transform expTwist(const SpatialMotion& twist);

/// Ad_T, mapping motion expressed in the frame of T's child to T's parent.
Mat6 adjoint(const Transform& t);

/// Ad_{T^-1}^T, the force counterpart of adjoint(t) (maps forces in the
/// child frame to the parent frame).
Mat6 dualAdjoint(const Transform& t);

/// Ad_{T^-1} applied to a motion without forming the 6x6 matrix.
SpatialMotion adjointInverseApply(const Transform& t, const SpatialMotion& v);
/// Ad_T applied to a motion.
SpatialMotion adjointApply(const Transform& t, const SpatialMotion& v);
/// Ad_{T^-1}^T applied to a force (child-frame force to parent frame).
SpatialForce dualAdjointApply(const Transform& t, const SpatialForce& f);

/// ad_v w, the Lie bracket [v, w].
inline SpatialMotion lieBracket(const SpatialMotion& v, const SpatialMotion& w)
{
  SpatialMotion out;
  out.head<3>() = v.head<3>().cross(w.head<3>());
  out.tail<3>() = v.head<3>().cross(w.tail<3>()) + v.tail<3>().cross(w.head<3>());
  return out;
}
/// Matrix form of ad_v.
Mat6 adMatrix(const SpatialMotion& v);

/// Force cross product, the negative transpose of ad_v applied to f:
/// <dualBracket(v, f), w> == -<f, lieBracket(v, w)>.
inline SpatialForce dualBracket(const SpatialMotion& v, const SpatialForce& f)
{
  SpatialForce out;
  out.head<3>() = v.head<3>().cross(f.head<3>()) + v.tail<3>().cross(f.tail<3>());
  out.tail<3>() = v.head<3>().cross(f.tail<3>());
  return out;
}

/// Power pairing <F, V>.
inline double pairing(const SpatialForce& f, const SpatialMotion& v)
{
  return f.dot(v);
}

/// Rigid-body inertia about the body frame origin. `rotational` is about the
/// center of mass, expressed in body axes.
struct SpatialInertia
{
  double mass = 1.0;
  Vec3 com = Vec3::Zero();
  Mat3 rotational = Mat3::Identity();

  /// 6x6 matrix mapping body twist to body momentum.
  Mat6 matrix() const;
  /// Throws std::invalid_argument when mass <= 0 or rotational is not SPD.
  void validate() const;
};

}  // namespace nimble_mini
