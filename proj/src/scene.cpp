#include "nimble_mini/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

namespace {

using Json = nlohmann::ordered_json;

/// "line:column" of a 1-based byte offset into `text`.
std::string locate(const std::string& text, std::size_t byte)
{
  int line = 1, column = 1;
  const std::size_t end = std::min(byte > 0 ? byte - 1 : 0, text.size());
  for (std::size_t i = 0; i < end; ++i)
  {
    if (text[i] == '\n')
    {
      ++line;
      column = 1;
    }
    else
    {
      ++column;
    }
  }
  return std::to_string(line) + ":" + std::to_string(column);
}

/// Typed access to one JSON object that rejects unknown and missing keys.
class Fields
{
public:
  Fields(const Json& j, std::string path, std::set<std::string> allowed)
    : mJson(j), mPath(std::move(path))
  {
    if (!j.is_object())
      throw ValidationError(mPath.empty() ? "scene" : mPath, "must be an object");
    for (const auto& [key, value] : j.items())
      if (!allowed.count(key))
        throw ValidationError(child(key), "unknown field");
  }

  std::string child(const std::string& key) const
  {
    return mPath.empty() ? key : mPath + "." + key;
  }

  bool has(const std::string& key) const { return mJson.contains(key); }

  const Json& at(const std::string& key) const
  {
    if (!has(key))
      throw ValidationError(child(key), "is required");
    return mJson.at(key);
  }

  double number(const std::string& key) const
  {
    const Json& v = at(key);
    if (!v.is_number())
      throw ValidationError(child(key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
      throw ValidationError(child(key), "must be finite");
    return x;
  }

  double number(const std::string& key, double fallback) const
  {
    return has(key) ? number(key) : fallback;
  }

  int integer(const std::string& key) const
  {
    const Json& v = at(key);
    if (!v.is_number_integer())
      throw ValidationError(child(key), "must be an integer");
    return v.get<int>();
  }

  int integer(const std::string& key, int fallback) const
  {
    return has(key) ? integer(key) : fallback;
  }

  std::string string(const std::string& key) const
  {
    const Json& v = at(key);
    if (!v.is_string())
      throw ValidationError(child(key), "must be a string");
    return v.get<std::string>();
  }

  /// A string, or null / absent meaning the world.
  std::string reference(const std::string& key) const
  {
    if (!has(key) || at(key).is_null())
      return {};
    return string(key);
  }

  Eigen::VectorXd vector(const std::string& key, int size = -1) const
  {
    const Json& v = at(key);
    if (!v.is_array())
      throw ValidationError(child(key), "must be an array of numbers");
    if (size >= 0 && static_cast<int>(v.size()) != size)
      throw ValidationError(child(key), "must have " + std::to_string(size)
                                            + " entries");
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
    {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()))
        throw ValidationError(child(key) + "[" + std::to_string(i) + "]",
                              "must be a finite number");
      out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
  }

  Vec3 vec3(const std::string& key) const { return vector(key, 3); }

  const std::string& path() const { return mPath; }

private:
  const Json& mJson;
  std::string mPath;
};

std::string indexed(const std::string& base, std::size_t i)
{
  return base + "[" + std::to_string(i) + "]";
}

const Json& array(const Fields& f, const std::string& key)
{
  const Json& v = f.at(key);
  if (!v.is_array())
    throw ValidationError(f.child(key), "must be an array");
  return v;
}

PoseSpec readPose(const Fields& parent, const std::string& key)
{
  PoseSpec pose;
  if (!parent.has(key))
    return pose;
  const Fields f(parent.at(key), parent.child(key), {"translation", "quaternion"});
  if (f.has("translation"))
    pose.translation = f.vec3("translation");
  if (f.has("quaternion"))
  {
    pose.quaternion = f.vector("quaternion", 4);
    if (pose.quaternion.norm() < 1e-12)
      throw ValidationError(f.child("quaternion"), "must be nonzero");
  }
  return pose;
}

Shape readShape(const Fields& parent)
{
  const Json& j = parent.at("shape");
  const std::string path = parent.child("shape");
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw ValidationError(path + ".type", "is required");
  const std::string type = j.at("type").get<std::string>();
  if (type == "sphere")
  {
    const Fields f(j, path, {"type", "radius"});
    return Sphere{f.number("radius")};
  }
  if (type == "capsule")
  {
    const Fields f(j, path, {"type", "radius", "half_length"});
    return Capsule{f.number("radius"), f.number("half_length")};
  }
  if (type == "box")
  {
    const Fields f(j, path, {"type", "half_extents"});
    return Box{f.vec3("half_extents")};
  }
  if (type == "halfspace")
  {
    const Fields f(j, path, {"type", "normal", "offset"});
    return HalfSpace{f.vec3("normal"), f.number("offset", 0.0)};
  }
  throw ValidationError(path + ".type", "unknown shape '" + type + "'");
}

ObjectiveSpec readObjective(const Fields& parent, int n)
{
  const Fields f(parent.at("objective"), parent.child("objective"),
                 {"target_q", "q_weights", "target_qdot", "qdot_weights",
                  "control_weight"});
  ObjectiveSpec o;
  o.targetQ = f.has("target_q") ? f.vector("target_q", n) : Eigen::VectorXd::Zero(n);
  o.qWeights = f.has("q_weights") ? f.vector("q_weights", n) : Eigen::VectorXd::Zero(n);
  o.targetQdot
      = f.has("target_qdot") ? f.vector("target_qdot", n) : Eigen::VectorXd::Zero(n);
  o.qdotWeights
      = f.has("qdot_weights") ? f.vector("qdot_weights", n) : Eigen::VectorXd::Zero(n);
  o.controlWeight = f.number("control_weight", 0.0);
  return o;
}

TaskSpec readTask(const Fields& parent, int n)
{
  const Fields f(parent.at("task"), "task",
                 {"horizon", "objective", "method", "iterations", "step_size",
                  "segments", "initial_control"});
  TaskSpec t;
  t.horizon = f.integer("horizon");
  t.objective = readObjective(f, n);
  t.method = f.has("method") ? f.string("method") : "sgd";
  t.iterations = f.integer("iterations", t.iterations);
  t.stepSize = f.number("step_size", t.stepSize);
  t.segments = f.integer("segments", t.segments);
  t.initialControl = f.has("initial_control") ? f.vector("initial_control", n)
                                              : Eigen::VectorXd::Zero(n);
  return t;
}

Json vectorJson(const Eigen::VectorXd& v)
{
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    a.push_back(v[i]);
  return a;
}

Json poseJson(const PoseSpec& p)
{
  Json j;
  j["translation"] = vectorJson(p.translation);
  j["quaternion"] = vectorJson(p.quaternion);
  return j;
}

Json shapeJson(const Shape& shape)
{
  Json j;
  if (const auto* s = std::get_if<Sphere>(&shape))
  {
    j["type"] = "sphere";
    j["radius"] = s->radius;
  }
  else if (const auto* c = std::get_if<Capsule>(&shape))
  {
    j["type"] = "capsule";
    j["radius"] = c->radius;
    j["half_length"] = c->halfLength;
  }
  else if (const auto* b = std::get_if<Box>(&shape))
  {
    j["type"] = "box";
    j["half_extents"] = vectorJson(b->halfExtents);
  }
  else
  {
    const auto& h = std::get<HalfSpace>(shape);
    j["type"] = "halfspace";
    j["normal"] = vectorJson(h.normal);
    j["offset"] = h.offset;
  }
  return j;
}

bool sameShape(const Shape& a, const Shape& b)
{
  if (a.index() != b.index())
    return false;
  if (const auto* s = std::get_if<Sphere>(&a))
    return s->radius == std::get<Sphere>(b).radius;
  if (const auto* c = std::get_if<Capsule>(&a))
    return c->radius == std::get<Capsule>(b).radius
           && c->halfLength == std::get<Capsule>(b).halfLength;
  if (const auto* x = std::get_if<Box>(&a))
    return x->halfExtents == std::get<Box>(b).halfExtents;
  const auto& h = std::get<HalfSpace>(a);
  return h.normal == std::get<HalfSpace>(b).normal
         && h.offset == std::get<HalfSpace>(b).offset;
}

bool sameVector(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
  return a.size() == b.size() && a == b;
}

SpatialInertia inertiaOf(const BodySpec& b)
{
  SpatialInertia in;
  in.mass = b.mass;
  in.com = b.com;
  const auto& p = b.inertia;
  in.rotational << p[0], p[3], p[4], p[3], p[1], p[5], p[4], p[5], p[2];
  return in;
}

}  // namespace

Transform PoseSpec::transform() const
{
  return Transform::fromQuaternion(quaternion[0], quaternion[1], quaternion[2],
                                   quaternion[3], translation);
}

bool ColliderSpec::operator==(const ColliderSpec& o) const
{
  return name == o.name && body == o.body && pose == o.pose
         && sameShape(shape, o.shape) && restitution == o.restitution
         && friction == o.friction;
}

bool ObjectiveSpec::operator==(const ObjectiveSpec& o) const
{
  return sameVector(targetQ, o.targetQ) && sameVector(qWeights, o.qWeights)
         && sameVector(targetQdot, o.targetQdot)
         && sameVector(qdotWeights, o.qdotWeights)
         && controlWeight == o.controlWeight;
}

bool TaskSpec::operator==(const TaskSpec& o) const
{
  return horizon == o.horizon && objective == o.objective && method == o.method
         && iterations == o.iterations && stepSize == o.stepSize
         && segments == o.segments && sameVector(initialControl, o.initialControl);
}

bool SceneDescription::operator==(const SceneDescription& o) const
{
  return version == o.version && name == o.name && gravity == o.gravity
         && dt == o.dt && bodies == o.bodies && colliders == o.colliders
         && sameVector(q, o.q) && sameVector(qdot, o.qdot)
         && actuated == o.actuated && task == o.task;
}

SceneDescription parseScene(const std::string& text)
{
  Json root;
  try
  {
    root = Json::parse(text);
  }
  catch (const nlohmann::json::parse_error& e)
  {
    std::string reason = e.what();
    // Drop the library prefix up to the description.
    const auto colon = reason.find(": ", reason.find("parse error"));
    if (colon != std::string::npos)
      reason = reason.substr(colon + 2);
    throw ParseError(locate(text, e.byte), reason);
  }

  const Fields f(root, "",
                 {"version", "name", "gravity", "dt", "bodies", "colliders",
                  "initial", "actuated", "task"});
  SceneDescription s;
  s.version = f.integer("version");
  if (s.version != kSceneVersion)
    throw ValidationError("version", "unsupported version "
                                         + std::to_string(s.version) + " (expected "
                                         + std::to_string(kSceneVersion) + ")");
  s.name = f.has("name") ? f.string("name") : std::string();
  if (f.has("gravity"))
    s.gravity = f.vec3("gravity");
  s.dt = f.number("dt");

  const Json& bodies = array(f, "bodies");
  for (std::size_t i = 0; i < bodies.size(); ++i)
  {
    const Fields b(bodies[i], indexed("bodies", i),
                   {"name", "parent", "joint", "axis", "placement", "mass", "com",
                    "inertia"});
    BodySpec spec;
    spec.name = b.string("name");
    spec.parent = b.reference("parent");
    const std::string joint = b.string("joint");
    if (joint == "revolute")
      spec.joint = JointKind::Revolute;
    else if (joint == "prismatic")
      spec.joint = JointKind::Prismatic;
    else
      throw ValidationError(b.child("joint"), "must be 'revolute' or 'prismatic'");
    spec.axis = b.vec3("axis");
    spec.placement = readPose(b, "placement");
    spec.mass = b.number("mass");
    if (b.has("com"))
      spec.com = b.vec3("com");
    spec.inertia = b.vector("inertia", 6);
    s.bodies.push_back(spec);
  }

  if (f.has("colliders"))
  {
    const Json& colliders = array(f, "colliders");
    for (std::size_t i = 0; i < colliders.size(); ++i)
    {
      const Fields c(colliders[i], indexed("colliders", i),
                     {"name", "body", "pose", "shape", "restitution", "friction"});
      ColliderSpec spec;
      spec.name = c.has("name") ? c.string("name") : std::string();
      spec.body = c.reference("body");
      spec.pose = readPose(c, "pose");
      spec.shape = readShape(c);
      spec.restitution = c.number("restitution", 0.0);
      spec.friction = c.number("friction", 0.0);
      s.colliders.push_back(spec);
    }
  }

  const int n = static_cast<int>(s.bodies.size());
  s.q = Eigen::VectorXd::Zero(n);
  s.qdot = Eigen::VectorXd::Zero(n);
  if (f.has("initial"))
  {
    const Fields init(f.at("initial"), "initial", {"q", "qdot"});
    if (init.has("q"))
      s.q = init.vector("q", n);
    if (init.has("qdot"))
      s.qdot = init.vector("qdot", n);
  }
  s.actuated.assign(static_cast<std::size_t>(n), true);
  if (f.has("actuated"))
  {
    const Json& a = array(f, "actuated");
    if (static_cast<int>(a.size()) != n)
      throw ValidationError("actuated", "must have one entry per body");
    for (std::size_t i = 0; i < a.size(); ++i)
    {
      if (!a[i].is_boolean())
        throw ValidationError(indexed("actuated", i), "must be a boolean");
      s.actuated[i] = a[i].get<bool>();
    }
  }
  if (f.has("task"))
    s.task = readTask(f, n);
  validateScene(s);
  return s;
}

std::string serializeScene(const SceneDescription& s)
{
  Json root;
  root["version"] = s.version;
  root["name"] = s.name;
  root["gravity"] = vectorJson(s.gravity);
  root["dt"] = s.dt;
  root["bodies"] = Json::array();
  for (const BodySpec& b : s.bodies)
  {
    Json j;
    j["name"] = b.name;
    j["parent"] = b.parent.empty() ? Json(nullptr) : Json(b.parent);
    j["joint"] = b.joint == JointKind::Revolute ? "revolute" : "prismatic";
    j["axis"] = vectorJson(b.axis);
    j["placement"] = poseJson(b.placement);
    j["mass"] = b.mass;
    j["com"] = vectorJson(b.com);
    j["inertia"] = vectorJson(b.inertia);
    root["bodies"].push_back(j);
  }
  root["colliders"] = Json::array();
  for (const ColliderSpec& c : s.colliders)
  {
    Json j;
    j["name"] = c.name;
    j["body"] = c.body.empty() ? Json(nullptr) : Json(c.body);
    j["pose"] = poseJson(c.pose);
    j["shape"] = shapeJson(c.shape);
    j["restitution"] = c.restitution;
    j["friction"] = c.friction;
    root["colliders"].push_back(j);
  }
  root["initial"]["q"] = vectorJson(s.q);
  root["initial"]["qdot"] = vectorJson(s.qdot);
  root["actuated"] = Json::array();
  for (bool a : s.actuated)
    root["actuated"].push_back(a);
  if (s.task)
  {
    const TaskSpec& t = *s.task;
    Json j;
    j["horizon"] = t.horizon;
    j["objective"]["target_q"] = vectorJson(t.objective.targetQ);
    j["objective"]["q_weights"] = vectorJson(t.objective.qWeights);
    j["objective"]["target_qdot"] = vectorJson(t.objective.targetQdot);
    j["objective"]["qdot_weights"] = vectorJson(t.objective.qdotWeights);
    j["objective"]["control_weight"] = t.objective.controlWeight;
    j["method"] = t.method;
    j["iterations"] = t.iterations;
    j["step_size"] = t.stepSize;
    j["segments"] = t.segments;
    j["initial_control"] = vectorJson(t.initialControl);
    root["task"] = j;
  }
  return root.dump(2) + "\n";
}

SceneDescription loadScene(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open scene file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parseScene(text.str());
}

void validateScene(const SceneDescription& s)
{
  if (!(s.dt > 0.0) || !std::isfinite(s.dt))
    throw ValidationError("dt", "must be positive");
  if (!s.gravity.allFinite())
    throw ValidationError("gravity", "must be finite");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < s.bodies.size(); ++i)
  {
    const BodySpec& b = s.bodies[i];
    const std::string path = "bodies[" + std::to_string(i) + "]";
    const std::string who = "body '" + b.name + "' ";
    if (b.name.empty())
      throw ValidationError(path + ".name", "must not be empty");
    if (index.count(b.name))
      throw ValidationError(path + ".name", "duplicate body name '" + b.name + "'");
    if (!b.parent.empty() && !index.count(b.parent))
      throw ValidationError(path + ".parent",
                            "'" + b.parent + "' is not an earlier body");
    if (std::abs(b.axis.norm() - 1.0) > 1e-12)
      throw ValidationError(path + ".axis", "must be a unit vector");
    if (!(b.mass > 0.0))
      throw ValidationError(path + ".mass", who + "mass must be positive");
    try
    {
      inertiaOf(b).validate();
    }
    catch (const std::exception&)
    {
      throw ValidationError(path + ".inertia",
                            who + "inertia must be symmetric positive definite");
    }
    index[b.name] = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < s.colliders.size(); ++i)
  {
    const ColliderSpec& c = s.colliders[i];
    const std::string path = "colliders[" + std::to_string(i) + "]";
    if (!c.body.empty() && !index.count(c.body))
      throw ValidationError(path + ".body", "unknown body '" + c.body + "'");
    validateShape(c.shape, path + ".shape");
    if (!(c.restitution >= 0.0 && c.restitution <= 1.0))
      throw ValidationError(path + ".restitution", "must lie in [0, 1]");
    if (!(c.friction >= 0.0) || !std::isfinite(c.friction))
      throw ValidationError(path + ".friction", "must be non-negative");
  }
  const auto n = static_cast<Eigen::Index>(s.bodies.size());
  if (s.q.size() != n || s.qdot.size() != n)
    throw ValidationError("initial", "q and qdot need one entry per body");
  if (static_cast<Eigen::Index>(s.actuated.size()) != n)
    throw ValidationError("actuated", "must have one entry per body");
  if (s.task)
  {
    const TaskSpec& t = *s.task;
    if (t.horizon <= 0)
      throw ValidationError("task.horizon", "must be positive");
    if (t.method != "sgd" && t.method != "multiple-shooting")
      throw ValidationError("task.method", "must be 'sgd' or 'multiple-shooting'");
    if (t.iterations < 0)
      throw ValidationError("task.iterations", "must be non-negative");
    if (!(t.stepSize > 0.0))
      throw ValidationError("task.step_size", "must be positive");
    if (t.segments <= 0 || t.segments > t.horizon)
      throw ValidationError("task.segments", "must lie in [1, horizon]");
  }
}

World buildWorld(const SceneDescription& s)
{
  validateScene(s);
  std::map<std::string, int> index;
  std::vector<Body> bodies;
  for (const BodySpec& spec : s.bodies)
  {
    Body b;
    b.name = spec.name;
    b.parent = spec.parent.empty() ? -1 : index.at(spec.parent);
    b.placement = spec.placement.transform();
    b.joint.kind = spec.joint;
    b.joint.axis = spec.axis;
    b.inertia = inertiaOf(spec);
    index[spec.name] = static_cast<int>(bodies.size());
    bodies.push_back(b);
  }
  World world;
  world.skeleton = Skeleton(std::move(bodies), s.gravity);
  for (const ColliderSpec& spec : s.colliders)
  {
    Collider c;
    c.name = spec.name;
    c.body = spec.body.empty() ? -1 : index.at(spec.body);
    c.local = spec.pose.transform();
    c.shape = spec.shape;
    c.restitution = spec.restitution;
    c.friction = spec.friction;
    world.colliders.push_back(c);
  }
  return world;
}

WorldState initialState(const SceneDescription& s)
{
  WorldState state;
  state.q = s.q;
  state.qdot = s.qdot;
  state.tau = Eigen::VectorXd::Zero(s.q.size());
  state.dt = s.dt;
  return state;
}

Eigen::VectorXd actuationMask(const SceneDescription& s)
{
  Eigen::VectorXd mask(static_cast<Eigen::Index>(s.actuated.size()));
  for (std::size_t i = 0; i < s.actuated.size(); ++i)
    mask[static_cast<Eigen::Index>(i)] = s.actuated[i] ? 1.0 : 0.0;
  return mask;
}

}  // namespace nimble_mini
