#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/dynamics.hpp"
#include "nimble_mini/skeleton.hpp"
#include "nimble_mini/spatial.hpp"

namespace nimble_mini {

struct Sphere
{
  double radius = 0.5;
};

/// Capsule whose centerline runs along the local z axis from -halfLength to
/// +halfLength.
struct Capsule
{
  double radius = 0.1;
  double halfLength = 0.5;
};

struct Box
{
  Vec3 halfExtents = Vec3::Constant(0.5);
};

/// Solid region {x : normal . x <= offset} in the collider frame.
struct HalfSpace
{
  Vec3 normal = Vec3::UnitY();
  double offset = 0.0;
};

using Shape = std::variant<Sphere, Capsule, Box, HalfSpace>;

/// Throws ValidationError naming `field` for non-positive dimensions or a
/// non-unit half-space normal.
void validateShape(const Shape& shape, const std::string& field);

struct Collider
{
  std::string name;
  int body = -1;  ///< -1 fixes the collider to the world
  Transform local;
  Shape shape;
  double restitution = 0.0;
  double friction = 0.0;
};

enum class ContactKind
{
  VertexFace,
  FaceVertex,
  EdgeEdge,
  SphereFace,
  SphereEdge,
  SphereVertex,
  SphereSphere,
  PipePipe,
  PipeSphere,
  VertexPipe,
  EdgePipe
};

const char* contactKindName(ContactKind kind);

/// World-space input of a contact's geometry: a point or a direction fixed
/// to a body.
struct GeometryFeature
{
  int body = -1;
  Vec3 value = Vec3::Zero();
  bool direction = false;
};

/// How (point, normal) are computed from features; the derivative routines
/// differentiate exactly this recipe.
///  - Face: features {x, nF}; p = x - rA nF, n = nF.
///  - Closest: each side is a point {c} or a line {a0, u}; with closest
///    points ca, cb: p = (rB ca + rA cb) / (rA + rB), n = unit(ca - cb).
///  - EdgeEdge: lines {a0, ua}, {b0, ub}; p = (ca + cb) / 2,
///    n = sign unit(ua x ub).
/// `flip` negates the normal after the recipe (roles reversed with respect to
/// the collider order).
struct ContactRecipe
{
  enum class Type
  {
    Face,
    Closest,
    EdgeEdge
  };
  Type type = Type::Face;
  std::array<GeometryFeature, 4> features{};
  bool lineA = false;
  bool lineB = false;
  double radiusA = 0.0;
  double radiusB = 0.0;
  double sign = 1.0;
  bool flip = false;
};

/// One contact point. The normal points from collider B toward collider A,
/// so a positive relative normal velocity (A minus B) is separating.
struct Contact
{
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();
  double depth = 0.0;
  ContactKind kind = ContactKind::SphereFace;
  int colliderA = -1;
  int colliderB = -1;
  int bodyA = -1;
  int bodyB = -1;
  double restitution = 0.0;
  double friction = 0.0;
  /// Distance (in length or cosine units) to the nearest configuration at
  /// which the kind or feature of this contact changes.
  double margin = 0.0;
  /// Feature identifiers within each collider (vertex, edge, face or end).
  int featureA = 0;
  int featureB = 0;
  ContactRecipe recipe;
};

/// Guard below which a contact is considered to sit on a kind boundary.
constexpr double kKindBoundaryTolerance = 1e-9;

/// All contacts between collider pairs with positive penetration. Pairs on
/// the same body, on a parent/child body pair or both on the world are
/// skipped.
std::vector<Contact> detect(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Collider>& colliders);

std::vector<Contact> detect(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Collider>& colliders);

/// Normal and the two friction directions of one contact.
struct ContactFrame
{
  Vec3 normal;
  Vec3 tangent1;
  Vec3 tangent2;
  /// Gap between the largest and next-largest |n_k|; the tangent basis is
  /// discontinuous where it vanishes.
  double axisMargin = 0.0;
  int axis = 0;  ///< reference axis projected to form tangent1
};

ContactFrame contactFrame(const Vec3& normal);

/// Stacked rows (normal, tangent1, tangent2) per contact: a 3m x n matrix.
struct ContactJacobian
{
  Eigen::MatrixXd J;
  std::vector<Vec3> directions;  ///< one per row
};

ContactJacobian contactJacobian(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts);

ContactJacobian contactJacobian(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts);

/// d p / dq and d n / dq for one contact (3 x n each), plus the derivative of
/// each of its three row directions.
struct ContactGradient
{
  Eigen::Matrix3Xd dPoint;
  Eigen::Matrix3Xd dNormal;
  std::array<Eigen::Matrix3Xd, 3> dDirections;
};

/// Throws KindBoundary when a contact's margin is below
/// kKindBoundaryTolerance (or its tangent basis is at an axis tie while the
/// normal rotates).
std::vector<ContactGradient> contactGradients(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts);

std::vector<ContactGradient> contactGradients(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts);

/// d(J^T f)/dq with f the full per-row impulse vector.
Eigen::MatrixXd dJtfDq(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts,
    const std::vector<ContactGradient>& gradients,
    const Eigen::VectorXd& f);

Eigen::MatrixXd dJtfDq(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts,
    const Eigen::VectorXd& f);

/// d(J w)/dq at fixed joint-space vector w.
Eigen::MatrixXd dJwDq(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts,
    const std::vector<ContactGradient>& gradients,
    const Eigen::VectorXd& w);

/// World transform of a collider.
Transform colliderTransform(const Kinematics& kin, const Collider& collider);

}  // namespace nimble_mini
