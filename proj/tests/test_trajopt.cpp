#include <cmath>
#include <sstream>

#include <doctest.h>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/fdcheck.hpp"
#include "nimble_mini/trajopt.hpp"
#include "support.hpp"

using namespace nimble_mini;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Problem
{
  SceneDescription scene;
  World world;
  WorldState initial;
  Objective objective;
  VectorXd mask;
};

Problem fromScene(const SceneDescription& s)
{
  Problem p{s, buildWorld(s), initialState(s), {}, actuationMask(s)};
  if (s.task)
    p.objective = Objective::fromSpec(s.task->objective);
  return p;
}

Problem corpusProblem(const std::string& name)
{
  return fromScene(testing::corpusScene(name));
}

MatrixXd constantControls(const Problem& p)
{
  return p.scene.task->initialControl.transpose().replicate(p.scene.task->horizon, 1);
}

/// One prismatic point mass along x without gravity.
SceneDescription pointMass(double mass, double dt)
{
  SceneDescription s;
  s.name = "point_mass";
  s.dt = dt;
  s.gravity = Vec3::Zero();
  BodySpec b;
  b.name = "mass";
  b.joint = JointKind::Prismatic;
  b.axis = Vec3::UnitX();
  b.mass = mass;
  s.bodies.push_back(b);
  s.q = VectorXd::Constant(1, 0.3);
  s.qdot = VectorXd::Constant(1, -0.2);
  s.actuated = {true};
  return s;
}

Objective quadratic(int n, double target, double qWeight, double qdotWeight, double control)
{
  return {VectorXd::Constant(n, target), VectorXd::Constant(n, qWeight), VectorXd::Zero(n),
          VectorXd::Constant(n, qdotWeight), control};
}

/// Total loss as a function of the flattened (row-major) controls.
VectorFunction lossOfControls(const Problem& p, int horizon)
{
  const int n = p.world.dofs();
  return [&p, horizon, n](const VectorXd& u) {
    const MatrixXd U = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(u.data(), horizon, n);
    return VectorXd::Constant(1, p.objective.loss(rollout(p.world, p.initial, U)));
  };
}

VectorXd flatten(const MatrixXd& U)
{
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = U;
  return Eigen::Map<const VectorXd>(R.data(), R.size());
}

}  // namespace

TEST_CASE("rollout without forces keeps the state")
{
  SceneDescription s = pointMass(1.0, 0.01);
  s.qdot.setZero();
  const Problem p = fromScene(s);
  const Trajectory t = rollout(p.world, p.initial, MatrixXd::Zero(30, 1), "still");
  CHECK(t.steps() == 30);
  CHECK(t.states.size() == 31);
  CHECK(t.scene == "still");
  for (const WorldState& st : t.states)
  {
    CHECK(st.q == p.initial.q);
    CHECK(st.qdot == p.initial.qdot);
  }
}

TEST_CASE("rollout is deterministic and dynamics-consistent")
{
  const Problem p = corpusProblem("jump_worm");
  std::mt19937 rng(4);
  MatrixXd U(80, 5);
  for (int t = 0; t < U.rows(); ++t)
    U.row(t) = testing::randomVector(rng, 5, 2.0).cwiseProduct(p.mask).transpose();
  const Trajectory a = rollout(p.world, p.initial, U);
  const Trajectory b = rollout(p.world, p.initial, U);
  for (size_t k = 0; k < a.states.size(); ++k)
  {
    CHECK(a.states[k].q == b.states[k].q);
    CHECK(a.states[k].qdot == b.states[k].qdot);
  }
  // Re-stepping each state reproduces its successor.
  double worst = 0.0;
  for (int t = 0; t < a.steps(); ++t)
  {
    WorldState s = a.states[static_cast<size_t>(t)];
    s.tau = U.row(t).transpose();
    const WorldState next = stepState(p.world, s);
    worst = std::max(worst, (next.q - a.states[static_cast<size_t>(t) + 1].q).cwiseAbs().maxCoeff());
    worst = std::max(worst,
                     (next.qdot - a.states[static_cast<size_t>(t) + 1].qdot).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("resting box rollout keeps zero velocity under its weight")
{
  const Problem p = corpusProblem("kind_vertex_face");
  const Trajectory t = rollout(p.world, p.initial, MatrixXd::Zero(100, p.world.dofs()));
  double supported = 0.0;
  for (int i = 1; i < p.world.dofs(); ++i)
    supported += p.world.skeleton.body(i).inertia.mass;
  for (const StepRecord& rec : t.records)
  {
    double normal = 0.0;
    for (int r = 0; r < rec.rows(); ++r)
      if (rec.lcp.rows[static_cast<size_t>(r)].isNormal())
        normal += rec.solution.f[r];
    CHECK(normal == doctest::Approx(supported * 9.81 * p.initial.dt).epsilon(1e-9));
    CHECK(rec.next.qdot.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rollout errors carry the step index and keep their type")
{
  const Problem p = corpusProblem("pendulum");
  MatrixXd U = MatrixXd::Zero(10, 1);
  U(3, 0) = std::nan("");
  try
  {
    rollout(p.world, p.initial, U);
    FAIL("expected NonFinite");
  }
  catch (const NonFinite& e)
  {
    CHECK(std::string(e.what()).rfind("step 3: ", 0) == 0);
  }
  CHECK_THROWS_AS(rollout(p.world, p.initial, MatrixXd::Zero(10, 2)), DimensionMismatch);
}

TEST_CASE("objective independent of the final state gives zero gradients")
{
  Problem p = corpusProblem("double_pendulum");
  p.objective = quadratic(2, 0.0, 0.0, 0.0, 0.0);
  const Trajectory t = rollout(p.world, p.initial, MatrixXd::Constant(20, 2, 0.3));
  const TrajectoryGradient g = trajectoryGradient(p.world, t, p.objective, GradientMode::Standard);
  CHECK(g.controls.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.dq0.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("10-step pendulum control gradient matches Ridders")
{
  Problem p = corpusProblem("pendulum");
  p.objective.controlWeight = 0.01;
  const int T = 10;
  std::mt19937 rng(8);
  const MatrixXd U = testing::randomVector(rng, T, 3.0);
  const Trajectory t = rollout(p.world, p.initial, U);
  const TrajectoryGradient g = trajectoryGradient(p.world, t, p.objective, GradientMode::Standard);
  const RiddersResult r = ridders(lossOfControls(p, T), flatten(U), 1e-2);
  CHECK(testing::relError(flatten(g.controls).transpose(), r.jacobian) < 1e-5);
}

TEST_CASE("contact trajectory gradient matches Ridders at stable classes")
{
  for (const char* name : {"ball_on_plane", "jump_worm"})
  {
    INFO(name);
    Problem p = corpusProblem(name);
    const int n = p.world.dofs(), T = 10;
    p.objective = quadratic(n, 0.2, 1.0, 0.5, 1e-3);
    // Sideways pushes keep the contacts sliding or sticking throughout.
    MatrixXd U = MatrixXd::Zero(T, n);
    U.col(0).setConstant(0.05);
    U = (U * p.mask.asDiagonal()).eval();
    if (p.mask.sum() < n)
      U.col(2).setConstant(0.01);
    const Trajectory t = rollout(p.world, p.initial, U);
    const TrajectoryGradient g
        = trajectoryGradient(p.world, t, p.objective, GradientMode::Standard, p.mask);
    const RiddersResult r = ridders(lossOfControls(p, T), flatten(U), 1e-5);
    const MatrixXd oracle = r.jacobian * VectorXd(p.mask.replicate(T, 1)).asDiagonal();
    CHECK(testing::relError(flatten(g.controls).transpose(), oracle) < 1e-4);
    // Unactuated dofs never receive gradient.
    for (int i = 0; i < n; ++i)
      if (p.mask[i] == 0.0)
        CHECK(g.controls.col(i).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("resting actuated ball: standard thrust gradient is zero")
{
  const Problem p = corpusProblem("drone");
  const Trajectory t = rollout(p.world, p.initial, constantControls(p));
  const TrajectoryGradient s
      = trajectoryGradient(p.world, t, p.objective, GradientMode::Standard, p.mask);
  CHECK(s.controls.cwiseAbs().maxCoeff() == 0.0);
  const TrajectoryGradient a
      = trajectoryGradient(p.world, t, p.objective, GradientMode::ComplementarityAware, p.mask);
  CHECK(a.reclassifiedSteps == t.steps());
  // Thrust that raises the drone lowers the loss.
  CHECK(a.controls.maxCoeff() < 0.0);
}

TEST_CASE("SGD converges to the closed-form LQ solution")
{
  const double m = 2.0, dt = 0.05;
  const int T = 20;
  Problem p = fromScene(pointMass(m, dt));
  p.objective = quadratic(1, 1.0, 1.0, 1.0, 0.01);
  // q_T and qdot_T are affine in the controls for the semi-implicit step.
  MatrixXd A(2, T);
  VectorXd r(2);
  for (int t = 0; t < T; ++t)
  {
    A(0, t) = dt * dt * (T - t) / m;
    A(1, t) = dt / m;
  }
  r << 1.0 - (p.initial.q[0] + T * dt * p.initial.qdot[0]), -p.initial.qdot[0];
  const VectorXd lq = (A.transpose() * A + 0.01 * MatrixXd::Identity(T, T))
                          .ldlt()
                          .solve(A.transpose() * r);

  OptimizeConfig c;
  c.iterations = 200;
  c.stepSize = 30.0;
  const OptimizeResult res
      = optimize(p.world, p.initial, p.objective, MatrixXd::Zero(T, 1), p.mask, c);
  CHECK((res.controls.col(0) - lq).norm() < 1e-2 * lq.norm());
  CHECK(res.loss.size() == 201);
}

TEST_CASE("small-step gradient descent never increases a smooth loss")
{
  Problem p = corpusProblem("double_pendulum");
  p.objective = quadratic(2, 1.0, 1.0, 0.1, 1e-4);
  OptimizeConfig c;
  c.iterations = 100;
  c.stepSize = 0.5;
  const OptimizeResult r
      = optimize(p.world, p.initial, p.objective, MatrixXd::Zero(30, 2), VectorXd(), c);
  for (size_t k = 1; k < r.loss.size(); ++k)
    CHECK(r.loss[k] <= r.loss[k - 1]);
  CHECK(r.loss.back() < r.loss.front());
}

TEST_CASE("drone saddle: standard SGD stays, complementarity-aware SGD escapes")
{
  const Problem p = corpusProblem("drone");
  OptimizeConfig c = OptimizeConfig::fromTask(*p.scene.task);
  REQUIRE(c.iterations == 100);

  const OptimizeResult standard
      = optimize(p.world, p.initial, p.objective, constantControls(p), p.mask, c);
  double change = 0.0;
  for (double l : standard.loss)
    change = std::max(change, std::abs(l - standard.loss.front()));
  CHECK(change < 1e-12);

  c.mode = GradientMode::ComplementarityAware;
  c.iterations = 50;
  const OptimizeResult aware
      = optimize(p.world, p.initial, p.objective, constantControls(p), p.mask, c);
  MESSAGE("aware loss " << aware.loss.front() << " -> " << aware.bestLoss << " at iteration "
                        << aware.bestIteration);
  CHECK(aware.bestLoss < 0.5 * aware.loss.front());
}

TEST_CASE("pendulum swing-up by multiple shooting")
{
  const Problem p = corpusProblem("pendulum");
  const OptimizeConfig c = OptimizeConfig::fromTask(*p.scene.task);
  REQUIRE(c.method == Method::MultipleShooting);
  const OptimizeResult r
      = optimize(p.world, p.initial, p.objective, constantControls(p), p.mask, c);
  const Trajectory t = rollout(p.world, p.initial, r.controls);
  const double error = std::abs(t.last().q[0] - p.objective.targetQ[0]);
  MESSAGE("final angle error " << error << ", defect " << r.defect.back());
  CHECK(error < 1e-2);
  CHECK(r.converged);
  for (size_t k = 1; k < r.defect.size(); ++k)
    CHECK(r.defect[k] <= r.defect[k - 1]);
}

TEST_CASE("non-finite optimization diverges")
{
  const Problem p = corpusProblem("pendulum");
  OptimizeConfig c;
  c.iterations = 5;
  c.stepSize = 1e300;
  CHECK_THROWS_AS(optimize(p.world, p.initial, p.objective, constantControls(p), p.mask, c),
                  Diverged);
}

TEST_CASE("configuration and output tables")
{
  CHECK(parseMethod("sgd") == Method::Sgd);
  CHECK(parseMethod("multiple-shooting") == Method::MultipleShooting);
  CHECK_THROWS_AS(parseMethod("ddp"), ValidationError);

  const Problem p = corpusProblem("bounce");
  const Trajectory t = rollout(p.world, p.initial, MatrixXd::Zero(3, 1));
  std::ostringstream os;
  writeTrajectory(os, t);
  const std::string text = os.str();
  CHECK(text.substr(0, text.find('\n')) == "step,time,q0,qdot0,contacts,normal_impulse");
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);

  OptimizeResult r;
  r.loss = {1.0, 0.5};
  std::ostringstream lc;
  writeLossCurve(lc, r);
  CHECK(lc.str() == "iteration,loss\n0,1\n1,0.5\n");
  std::ostringstream cs;
  writeControls(cs, MatrixXd::Constant(1, 2, 0.25));
  CHECK(cs.str() == "step,tau0,tau1\n0,0.25,0.25\n");
}
