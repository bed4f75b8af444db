#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/collision.hpp"
#include "nimble_mini/dynamics.hpp"
#include "nimble_mini/world.hpp"

namespace nimble_mini {

/// Version written by serializeScene() and required by parseScene().
constexpr int kSceneVersion = 1;

/// Pose as stored in scene text; the quaternion (w, x, y, z) is converted to
/// a rotation matrix once, when the world is built.
struct PoseSpec
{
  Vec3 translation = Vec3::Zero();
  Eigen::Vector4d quaternion = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);

  Transform transform() const;
  bool operator==(const PoseSpec&) const = default;
};

struct BodySpec
{
  std::string name;
  std::string parent;  ///< empty attaches the joint to the world
  JointKind joint = JointKind::Revolute;
  Vec3 axis = Vec3::UnitZ();
  PoseSpec placement;
  double mass = 1.0;
  Vec3 com = Vec3::Zero();
  /// Rotational inertia about the com: Ixx, Iyy, Izz, Ixy, Ixz, Iyz.
  Eigen::Matrix<double, 6, 1> inertia = (Eigen::Matrix<double, 6, 1>() << 1, 1, 1, 0, 0, 0).finished();

  bool operator==(const BodySpec&) const = default;
};

struct ColliderSpec
{
  std::string name;
  std::string body;  ///< empty fixes the collider to the world
  PoseSpec pose;
  Shape shape;
  double restitution = 0.0;
  double friction = 0.0;

  bool operator==(const ColliderSpec& o) const;
};

/// Weighted squared distance of the final state to a target, plus a control
/// effort term: sum w_q (q_T - q*)^2 + sum w_v (qdot_T - qdot*)^2
/// + control_weight * sum_t |tau_t|^2.
struct ObjectiveSpec
{
  Eigen::VectorXd targetQ;
  Eigen::VectorXd qWeights;
  Eigen::VectorXd targetQdot;
  Eigen::VectorXd qdotWeights;
  double controlWeight = 0.0;

  bool operator==(const ObjectiveSpec& o) const;
};

/// Optimization settings carried by a scene.
struct TaskSpec
{
  int horizon = 100;
  ObjectiveSpec objective;
  std::string method = "sgd";  ///< "sgd" or "multiple-shooting"
  int iterations = 100;
  double stepSize = 1e-2;
  int segments = 4;
  /// Constant control per dof used as the first iterate.
  Eigen::VectorXd initialControl;

  bool operator==(const TaskSpec& o) const;
};

struct SceneDescription
{
  int version = kSceneVersion;
  std::string name;
  Vec3 gravity = Vec3(0.0, -9.81, 0.0);
  double dt = 1e-2;
  std::vector<BodySpec> bodies;
  std::vector<ColliderSpec> colliders;
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  std::vector<bool> actuated;
  std::optional<TaskSpec> task;

  bool operator==(const SceneDescription& o) const;
};

/// Strict parse of scene text. Throws ParseError with a "line:column"
/// location for malformed text and ValidationError naming the field (for
/// example "bodies[1].mass") for an invalid scene, unknown fields included.
SceneDescription parseScene(const std::string& text);

/// Canonical text: fixed key order, two-space indent, shortest round-trip
/// numbers.
std::string serializeScene(const SceneDescription& scene);

SceneDescription loadScene(const std::string& path);

/// Throws ValidationError.
void validateScene(const SceneDescription& scene);

World buildWorld(const SceneDescription& scene);

/// Initial q, qdot, zero tau and the scene timestep.
WorldState initialState(const SceneDescription& scene);

/// 1 for actuated dofs, 0 otherwise.
Eigen::VectorXd actuationMask(const SceneDescription& scene);

}  // namespace nimble_mini
