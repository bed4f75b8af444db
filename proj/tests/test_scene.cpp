#include <cmath>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/scene.hpp"
#include "support.hpp"

using namespace nimble_mini;

namespace {

const char* kMinimal = R"({
  "version": 1,
  "name": "one",
  "dt": 0.01,
  "bodies": [
    {"name": "arm", "joint": "revolute", "axis": [0, 0, 1],
     "mass": 2.5, "com": [0, -0.5, 0], "inertia": [0.1, 0.1, 0.1, 0, 0, 0]}
  ]
})";

std::vector<std::string> corpusNames()
{
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(NIMBLE_MINI_CORPUS_DIR))
    if (e.path().extension() == ".scene")
      out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

template <class E>
E capture(const std::string& text)
{
  try
  {
    parseScene(text);
  }
  catch (const E& e)
  {
    return e;
  }
  FAIL("expected an error");
  throw;
}

}  // namespace

TEST_CASE("minimal scene fills defaults and round-trips")
{
  const SceneDescription s = parseScene(kMinimal);
  CHECK(s.version == kSceneVersion);
  CHECK(s.bodies.size() == 1);
  CHECK(s.bodies[0].parent.empty());
  CHECK(s.gravity == Vec3(0.0, -9.81, 0.0));
  CHECK(s.q.size() == 1);
  CHECK(s.actuated == std::vector<bool>{true});
  CHECK_FALSE(s.task.has_value());

  const std::string canonical = serializeScene(s);
  CHECK(parseScene(canonical) == s);
  CHECK(serializeScene(parseScene(canonical)) == canonical);
}

TEST_CASE("every corpus scene round-trips bit-identically")
{
  for (const std::string& name : corpusNames())
  {
    INFO(name);
    const SceneDescription s = testing::corpusScene(name);
    const std::string text = serializeScene(s);
    const SceneDescription back = parseScene(text);
    CHECK(back == s);
    CHECK(serializeScene(back) == text);
  }
}

TEST_CASE("awkward doubles survive serialization exactly")
{
  SceneDescription s = parseScene(kMinimal);
  s.dt = 0.1 + 0.2;
  s.bodies[0].mass = 1.0 / 3.0;
  s.q[0] = -std::nextafter(1.0, 2.0);
  s.gravity = Vec3(1e-300, -9.80665, 123456789.123456789);
  const SceneDescription back = parseScene(serializeScene(s));
  CHECK(back.dt == s.dt);
  CHECK(back.bodies[0].mass == s.bodies[0].mass);
  CHECK(back.q[0] == s.q[0]);
  CHECK(back.gravity == s.gravity);
}

TEST_CASE("negative mass names the body")
{
  std::string text = kMinimal;
  text.replace(text.find("2.5"), 3, "-1");
  const ValidationError e = capture<ValidationError>(text);
  CHECK(e.field == "bodies[0].mass");
  CHECK(std::string(e.what()).find("arm") != std::string::npos);
}

TEST_CASE("unknown fields are rejected with their path")
{
  std::string text = kMinimal;
  text.replace(text.find("\"mass\""), 6, "\"colour\": 1, \"mass\"");
  CHECK(capture<ValidationError>(text).field == "bodies[0].colour");

  text = kMinimal;
  text.replace(text.find("\"dt\""), 4, "\"timestep\": 1, \"dt\"");
  CHECK(capture<ValidationError>(text).field == "timestep");
}

TEST_CASE("version is checked")
{
  std::string text = kMinimal;
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 2");
  CHECK(capture<ValidationError>(text).field == "version");
  text = kMinimal;
  text.replace(text.find("\"version\": 1,"), 13, "");
  CHECK(capture<ValidationError>(text).field == "version");
}

TEST_CASE("malformed text reports line and column")
{
  std::string text = kMinimal;
  // Drop the comma after the name on line 3.
  text.replace(text.find("\"one\","), 6, "\"one\"");
  const ParseError e = capture<ParseError>(text);
  CHECK(e.location.rfind("4:", 0) == 0);
  CHECK_FALSE(e.reason.empty());

  CHECK(capture<ParseError>("").location == "1:1");
}

TEST_CASE("structural validation")
{
  auto expectField = [](const std::string& from, const std::string& to,
                        const std::string& field) {
    std::string text = kMinimal;
    REQUIRE(text.find(from) != std::string::npos);
    text.replace(text.find(from), from.size(), to);
    INFO(to);
    CHECK(capture<ValidationError>(text).field == field);
  };
  expectField("\"revolute\"", "\"ball\"", "bodies[0].joint");
  expectField("[0, 0, 1]", "[0, 0, 2]", "bodies[0].axis");
  expectField("[0.1, 0.1, 0.1, 0, 0, 0]", "[0.1, 0.1, -0.1, 0, 0, 0]",
              "bodies[0].inertia");
  expectField("\"joint\"", "\"parent\": \"ghost\", \"joint\"", "bodies[0].parent");
  expectField("0.01", "-0.01", "dt");
  expectField("\"arm\"", "\"\"", "bodies[0].name");
}

TEST_CASE("collider validation uses field paths")
{
  SceneDescription s = parseScene(kMinimal);
  ColliderSpec c;
  c.body = "arm";
  c.shape = Sphere{-0.1};
  s.colliders.push_back(c);
  try
  {
    validateScene(s);
    FAIL("expected ValidationError");
  }
  catch (const ValidationError& e)
  {
    CHECK(e.field == "colliders[0].shape.radius");
  }
  s.colliders[0].shape = Sphere{0.1};
  s.colliders[0].restitution = 1.5;
  CHECK_THROWS_AS(validateScene(s), ValidationError);
  s.colliders[0].restitution = 0.5;
  s.colliders[0].body = "nobody";
  CHECK_THROWS_AS(validateScene(s), ValidationError);
}

TEST_CASE("buildWorld maps names, inertia and quaternions")
{
  const SceneDescription s = testing::corpusScene("double_pendulum");
  const World w = buildWorld(s);
  CHECK(w.dofs() == 2);
  CHECK(w.skeleton.parent(0) == -1);
  CHECK(w.skeleton.parent(1) == 0);
  CHECK(w.skeleton.body(1).placement.translation == Vec3(0.0, -1.0, 0.0));
  CHECK(w.skeleton.body(1).inertia.mass == 0.7);

  SceneDescription r = parseScene(kMinimal);
  const double h = std::sqrt(0.5);
  r.bodies[0].placement.quaternion = Eigen::Vector4d(h, 0.0, 0.0, h);
  r.bodies[0].inertia << 1.0, 2.0, 3.0, 0.1, 0.2, 0.3;
  const World wr = buildWorld(r);
  const Mat3 R = wr.skeleton.body(0).placement.rotation;
  CHECK((R * Vec3::UnitX() - Vec3::UnitY()).norm() < 1e-15);
  const Mat3 I = wr.skeleton.body(0).inertia.rotational;
  CHECK(I(0, 1) == 0.1);
  CHECK(I(2, 0) == 0.2);
  CHECK(I(1, 2) == 0.3);
  CHECK(I(2, 2) == 3.0);
}

TEST_CASE("initial state and actuation mask")
{
  const SceneDescription s = testing::corpusScene("jump_worm");
  const WorldState st = initialState(s);
  CHECK(st.dt == s.dt);
  CHECK(st.tau == Eigen::VectorXd::Zero(5));
  CHECK(actuationMask(s) == (Eigen::VectorXd(5) << 0, 0, 1, 1, 1).finished());
}

TEST_CASE("corpus scenes step 1000 frames with finite bounded state")
{
  for (const std::string& name : corpusNames())
  {
    INFO(name);
    const SceneDescription s = testing::corpusScene(name);
    const World w = buildWorld(s);
    WorldState st = initialState(s);
    double peak = 0.0;
    for (int t = 0; t < 1000; ++t)
    {
      st = stepState(w, st);
      peak = std::max(peak, st.qdot.cwiseAbs().maxCoeff());
    }
    CHECK(st.q.allFinite());
    CHECK(st.qdot.allFinite());
    CHECK(peak < 100.0);
  }
}

TEST_CASE("corpus covers every contact kind")
{
  std::set<ContactKind> seen;
  for (const std::string& name : corpusNames())
  {
    const SceneDescription s = testing::corpusScene(name);
    const World w = buildWorld(s);
    for (const Contact& c : detect(w.skeleton, s.q, w.colliders))
      seen.insert(c.kind);
  }
  for (ContactKind kind :
       {ContactKind::VertexFace, ContactKind::FaceVertex, ContactKind::EdgeEdge,
        ContactKind::SphereFace, ContactKind::SphereEdge, ContactKind::SphereVertex,
        ContactKind::SphereSphere, ContactKind::PipePipe, ContactKind::PipeSphere,
        ContactKind::VertexPipe, ContactKind::EdgePipe})
  {
    INFO(contactKindName(kind));
    CHECK(seen.count(kind) == 1);
  }
}

TEST_CASE("missing files raise an engine error")
{
  CHECK_THROWS_AS(loadScene("/nonexistent/never.scene"), Error);
}
