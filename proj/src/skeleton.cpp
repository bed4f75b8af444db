#include "nimble_mini/skeleton.hpp"

#include <cmath>
#include <stdexcept>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

//==============================================================================
Skeleton::Skeleton(std::vector<Body> bodies, Vec3 gravity)
  : mBodies(std::move(bodies)), mGravity(std::move(gravity))
{
  const int n = dofs();
  if (!mGravity.allFinite())
    throw ValidationError("gravity", "non-finite component");
  mScrews.resize(static_cast<size_t>(n));
  mAncestry.assign(static_cast<size_t>(n * n), 0);
  for (int i = 0; i < n; ++i)
  {
    const Body& b = mBodies[static_cast<size_t>(i)];
    const std::string field = "bodies[" + std::to_string(i) + "]";
    if (b.parent >= i || b.parent < -1)
      throw ValidationError(
          field + ".parent",
          "parent must precede the body (got " + std::to_string(b.parent)
              + ")");
    if (std::abs(b.joint.axis.norm() - 1.0) > 1e-12)
      throw ValidationError(field + ".joint.axis", "axis must be unit length");
    try
    {
      b.inertia.validate();
    }
    catch (const std::invalid_argument& e)
    {
      throw ValidationError(field + " (" + b.name + ")", e.what());
    }

    SpatialMotion s = SpatialMotion::Zero();
    if (b.joint.kind == JointKind::Revolute)
      s.head<3>() = b.joint.axis;
    else
      s.tail<3>() = b.joint.axis;
    mScrews[static_cast<size_t>(i)] = s;

    mAncestry[static_cast<size_t>(i * n + i)] = 1;
    if (b.parent >= 0)
      for (int j = 0; j < n; ++j)
        if (mAncestry[static_cast<size_t>(b.parent * n + j)])
          mAncestry[static_cast<size_t>(i * n + j)] = 1;
  }
}

//==============================================================================
Eigen::VectorXd Skeleton::inertialParams() const
{
  Eigen::VectorXd mu(kParamsPerBody * dofs());
  for (int i = 0; i < dofs(); ++i)
  {
    const SpatialInertia& in = body(i).inertia;
    const Mat3& I = in.rotational;
    mu.segment<kParamsPerBody>(kParamsPerBody * i) << in.mass, in.com.x(),
        in.com.y(), in.com.z(), I(0, 0), I(1, 1), I(2, 2), I(0, 1), I(0, 2),
        I(1, 2);
  }
  return mu;
}

//==============================================================================
Skeleton Skeleton::withInertialParams(const Eigen::VectorXd& mu) const
{
  if (mu.size() != kParamsPerBody * dofs())
    throw DimensionMismatch("inertial parameter vector has wrong length");
  std::vector<Body> bodies = mBodies;
  for (int i = 0; i < dofs(); ++i)
  {
    const auto p = mu.segment<kParamsPerBody>(kParamsPerBody * i);
    SpatialInertia& in = bodies[static_cast<size_t>(i)].inertia;
    in.mass = p[0];
    in.com = Vec3(p[1], p[2], p[3]);
    in.rotational << p[4], p[7], p[8], p[7], p[5], p[9], p[8], p[9], p[6];
  }
  return Skeleton(std::move(bodies), mGravity);
}

}  // namespace nimble_mini
