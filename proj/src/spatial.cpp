#include "nimble_mini/spatial.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nimble_mini {

namespace {
constexpr double kSmallAngle = 1e-8;
}

//==============================================================================
Mat3 hat(const Vec3& a)
{
  Mat3 m;
  m << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
  return m;
}

//==============================================================================
Transform Transform::fromTranslation(const Vec3& t)
{
  Transform out;
  out.translation = t;
  return out;
}

//==============================================================================
Transform Transform::fromQuaternion(
    double w, double x, double y, double z, const Vec3& t)
{
  Eigen::Quaterniond q(w, x, y, z);
  if (q.norm() == 0.0)
    throw std::invalid_argument("zero quaternion");
  q.normalize();
  Transform out;
  out.rotation = q.toRotationMatrix();
  out.translation = t;
  return out;
}

//==============================================================================
Transform Transform::inverse() const
{
  Transform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

//==============================================================================
Transform compose(const Transform& a, const Transform& b)
{
  Transform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

//==============================================================================
Transform expTwist(const SpatialMotion& twist)
{
  const Vec3 w = twist.head<3>();
  const Vec3 v = twist.tail<3>();
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);

  // Coefficients of R = I + a W + b W^2 and V = I + b W + c W^2.
  double a, b, c;
  if (theta < kSmallAngle)
  {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  }
  else
  {
    const double s = std::sin(theta);
    const double co = std::cos(theta);
    a = s / theta;
    b = (1.0 - co) / theta2;
    c = (theta - s) / (theta2 * theta);
  }
  const Mat3 W = hat(w);
  const Mat3 W2 = W * W;
  Transform out;
  out.rotation = Mat3::Identity() + a * W + b * W2;
  out.translation = (Mat3::Identity() + b * W + c * W2) * v;
  return out;
}

//==============================================================================
Mat6 adjoint(const Transform& t)
{
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = t.rotation;
  out.bottomRightCorner<3, 3>() = t.rotation;
  out.bottomLeftCorner<3, 3>() = hat(t.translation) * t.rotation;
  return out;
}

//==============================================================================
Mat6 dualAdjoint(const Transform& t)
{
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = t.rotation;
  out.bottomRightCorner<3, 3>() = t.rotation;
  out.topRightCorner<3, 3>() = hat(t.translation) * t.rotation;
  return out;
}

//==============================================================================
SpatialMotion adjointApply(const Transform& t, const SpatialMotion& v)
{
  SpatialMotion out;
  const Vec3 w = t.rotation * v.head<3>();
  out.head<3>() = w;
  out.tail<3>() = t.translation.cross(w) + t.rotation * v.tail<3>();
  return out;
}

//==============================================================================
SpatialMotion adjointInverseApply(const Transform& t, const SpatialMotion& v)
{
  SpatialMotion out;
  const Vec3 w = v.head<3>();
  out.head<3>() = t.rotation.transpose() * w;
  out.tail<3>()
      = t.rotation.transpose() * (v.tail<3>() - t.translation.cross(w));
  return out;
}

//==============================================================================
SpatialForce dualAdjointApply(const Transform& t, const SpatialForce& f)
{
  SpatialForce out;
  const Vec3 force = t.rotation * f.tail<3>();
  out.tail<3>() = force;
  out.head<3>() = t.rotation * f.head<3>() + t.translation.cross(force);
  return out;
}

//==============================================================================
Mat6 adMatrix(const SpatialMotion& v)
{
  Mat6 out = Mat6::Zero();
  const Mat3 W = hat(v.head<3>());
  out.topLeftCorner<3, 3>() = W;
  out.bottomRightCorner<3, 3>() = W;
  out.bottomLeftCorner<3, 3>() = hat(v.tail<3>());
  return out;
}

//==============================================================================
Mat6 SpatialInertia::matrix() const
{
  const Mat3 C = hat(com);
  Mat6 out;
  out.topLeftCorner<3, 3>() = rotational - mass * C * C;
  out.topRightCorner<3, 3>() = mass * C;
  out.bottomLeftCorner<3, 3>() = -mass * C;
  out.bottomRightCorner<3, 3>() = mass * Mat3::Identity();
  return out;
}

//==============================================================================
void SpatialInertia::validate() const
{
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw std::invalid_argument("mass must be positive and finite");
  if (!com.allFinite() || !rotational.allFinite())
    throw std::invalid_argument("inertia has non-finite entries");
  if ((rotational - rotational.transpose()).cwiseAbs().maxCoeff()
      > 1e-12 * (1.0 + rotational.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("rotational inertia is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> eig(rotational);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument(
        "rotational inertia is not positive definite (min eigenvalue "
        + std::to_string(eig.eigenvalues().minCoeff()) + ")");
}

}  // namespace nimble_mini
