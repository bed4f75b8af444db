#include <cmath>

#include <doctest.h>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/world.hpp"
#include "support.hpp"

using namespace nimble_mini;
using Eigen::VectorXd;

namespace {

struct Loaded
{
  World world;
  WorldState state;
};

Loaded load(const std::string& name)
{
  const SceneDescription s = testing::corpusScene(name);
  return {buildWorld(s), initialState(s)};
}

/// Mass carried by the ground: bodies from the vertical joint (index 1 in
/// the free-body scenes) down.
double supportedMass(const World& w)
{
  double m = 0.0;
  for (int i = 1; i < w.dofs(); ++i)
    m += w.skeleton.body(i).inertia.mass;
  return m;
}

/// Sum of normal impulses of a step.
double normalImpulse(const StepRecord& rec)
{
  double sum = 0.0;
  for (int r = 0; r < rec.rows(); ++r)
    if (rec.lcp.rows[static_cast<size_t>(r)].isNormal())
      sum += rec.solution.f[r];
  return sum;
}

}  // namespace

TEST_CASE("contact-free step equals the unconstrained step")
{
  Loaded l = load("double_pendulum");
  l.state.tau = VectorXd::Constant(2, 0.3);
  const StepRecord rec = step(l.world, l.state);
  CHECK(rec.rows() == 0);
  const WorldState ref = unconstrainedStep(l.world.skeleton, l.state, VectorXd::Zero(2));
  CHECK((rec.next.qdot - ref.qdot).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rec.next.q - ref.q).cwiseAbs().maxCoeff() < 1e-12);
  // Semi-implicit order: the position update uses the new velocity.
  CHECK((rec.next.q - (l.state.q + l.state.dt * rec.next.qdot)).norm() == 0.0);
}

TEST_CASE("resting contacts carry the weight impulse and hold still")
{
  for (const char* name : {"ball_on_plane", "kind_vertex_face", "kind_edge_edge",
                           "kind_pipe_sphere", "capsule_pair"})
  {
    INFO(name);
    Loaded l = load(name);
    const double weight = supportedMass(l.world) * 9.81 * l.state.dt;
    WorldState s = l.state;
    for (int t = 0; t < 50; ++t)
    {
      const StepRecord rec = step(l.world, s);
      REQUIRE(rec.rows() > 0);
      CHECK(std::abs(normalImpulse(rec) - weight) < 1e-9 * weight + 1e-12);
      CHECK(rec.next.qdot.cwiseAbs().maxCoeff() < 1e-12);
      s = rec.next;
    }
  }
}

TEST_CASE("sliding box: friction rows sit at the Coulomb bound")
{
  Loaded l = load("box_on_plane");
  const StepRecord rec = step(l.world, l.state);
  const double mu = 0.3;
  double normal = 0.0, friction = 0.0;
  for (int r = 0; r < rec.rows(); ++r)
  {
    const LcpRow& row = rec.lcp.rows[static_cast<size_t>(r)];
    if (row.isNormal())
      normal += rec.solution.f[r];
    else if (rec.solution.classes[static_cast<size_t>(r)] == RowClass::BoundedMinus
             || rec.solution.classes[static_cast<size_t>(r)] == RowClass::BoundedPlus)
      friction += std::abs(rec.solution.f[r]);
  }
  CHECK(friction == doctest::Approx(mu * normal).epsilon(1e-12));
  // Kinetic friction on the supported mass decelerates everything moving in x.
  const double moving = l.world.skeleton.body(0).inertia.mass + supportedMass(l.world);
  const double decel = mu * supportedMass(l.world) * 9.81 * l.state.dt / moving;
  CHECK(rec.next.qdot[0] == doctest::Approx(1.0 - decel).epsilon(1e-12));
}

TEST_CASE("elastic bounce reverses the approach speed scaled by restitution")
{
  Loaded l = load("bounce");
  const StepRecord rec = step(l.world, l.state);
  REQUIRE(rec.bouncing());
  CHECK(rec.restitution[0] == doctest::Approx(0.8));
  CHECK(rec.next.qdot[0] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("bouncing ball with restitution one returns to its apex")
{
  SceneDescription s = testing::corpusScene("bounce");
  s.colliders[0].restitution = 1.0;
  s.q[0] = 1.0;
  s.qdot[0] = 0.0;
  s.dt = 1e-3;
  const World w = buildWorld(s);
  WorldState st = initialState(s);
  double apex = 0.0;
  int bounces = 0;
  double previous = 0.0;
  for (int t = 0; t < 4000; ++t)
  {
    const StepRecord rec = step(w, st);
    bounces += rec.bouncing();
    if (bounces > 0 && previous > 0.0 && rec.next.qdot[0] <= 0.0)
      apex = std::max(apex, rec.next.q[0]);
    previous = rec.next.qdot[0];
    st = rec.next;
  }
  CHECK(bounces >= 2);
  // Ballistic drop height 0.9 m above the contact; integrator error O(dt).
  CHECK(std::abs(apex - 1.0) < 2e-2);
}

TEST_CASE("warm start answers resting steps with cold-solve impulses")
{
  for (const char* name : {"ball_on_plane", "kind_vertex_face", "jump_worm"})
  {
    INFO(name);
    Loaded l = load(name);
    WarmStartCache cache;
    WorldState s = l.state;
    double worst = 0.0;
    for (int t = 0; t < 500; ++t)
    {
      const StepRecord warm = step(l.world, s, &cache);
      const StepRecord cold = step(l.world, s);
      if (warm.rows() > 0)
        worst = std::max(worst, (warm.solution.f - cold.solution.f).cwiseAbs().maxCoeff());
      CHECK(warm.next.q == cold.next.q);
      s = warm.next;
    }
    MESSAGE(std::string(name) << ": hits " << cache.hits << " / " << cache.attempts
                 << ", worst impulse difference " << worst);
    REQUIRE(cache.attempts > 0);
    CHECK(cache.hits >= 0.9 * cache.attempts);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("warm-start hint is withheld when a contact is new")
{
  Loaded l = load("ball_on_plane");
  WarmStartCache cache;
  const StepRecord first = step(l.world, l.state, &cache);
  CHECK(cache.attempts == 1);
  CHECK(cache.hits == 0);
  CHECK(cache.hint(first.contacts, first.jacobianRows).has_value());
  step(l.world, first.next, &cache);
  CHECK(cache.hits == 1);
}

TEST_CASE("steps are bit-identical when repeated")
{
  Loaded l = load("chain9");
  WorldState a = l.state, b = l.state;
  for (int t = 0; t < 200; ++t)
  {
    a = stepState(l.world, a);
    b = stepState(l.world, b);
  }
  CHECK(a.q == b.q);
  CHECK(a.qdot == b.qdot);
}

TEST_CASE("invalid states are rejected")
{
  Loaded l = load("pendulum");
  WorldState s = l.state;
  s.q = VectorXd::Zero(3);
  CHECK_THROWS_AS(step(l.world, s), DimensionMismatch);
  s = l.state;
  s.qdot[0] = std::nan("");
  CHECK_THROWS_AS(step(l.world, s), NonFinite);
}
