#include "nimble_mini/trajopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"

namespace nimble_mini {

namespace {

template <class E>
[[noreturn]] void rethrowAt(const E& e, int t)
{
  throw E("step " + std::to_string(t) + ": " + e.what());
}

/// Runs f, rethrowing engine errors with the step index and their type kept.
template <class F>
auto atStep(int t, F&& f)
{
  try
  {
    return f();
  }
  catch (const SingularMass& e) { rethrowAt(e, t); }
  catch (const DimensionMismatch& e) { rethrowAt(e, t); }
  catch (const KindBoundary& e) { rethrowAt(e, t); }
  catch (const Infeasible& e) { rethrowAt(e, t); }
  catch (const NoConvergence& e) { rethrowAt(e, t); }
  catch (const StaleClassification& e) { rethrowAt(e, t); }
  catch (const TiedPresent& e) { rethrowAt(e, t); }
  catch (const DegenerateBounceRows& e) { rethrowAt(e, t); }
  catch (const NonFinite& e) { rethrowAt(e, t); }
}

Eigen::VectorXd fullMask(const Eigen::VectorXd& mask, int n)
{
  if (mask.size() == 0)
    return Eigen::VectorXd::Ones(n);
  if (mask.size() != n)
    throw DimensionMismatch("actuation mask has " + std::to_string(mask.size())
                            + " entries for " + std::to_string(n) + " dofs");
  return mask;
}

Eigen::MatrixXd masked(const Eigen::MatrixXd& controls, const Eigen::VectorXd& mask)
{
  return controls * mask.asDiagonal();
}

Eigen::VectorXd packState(const WorldState& s)
{
  Eigen::VectorXd x(2 * s.q.size());
  x << s.q, s.qdot;
  return x;
}

WorldState unpackState(const Eigen::VectorXd& x, double dt)
{
  const Eigen::Index n = x.size() / 2;
  WorldState s;
  s.q = x.head(n);
  s.qdot = x.tail(n);
  s.tau = Eigen::VectorXd::Zero(n);
  s.dt = dt;
  return s;
}

double rolloutLoss(
    const World& world,
    const WorldState& initial,
    const Eigen::MatrixXd& controls,
    const Objective& objective)
{
  return objective.loss(rollout(world, initial, controls));
}

// ----------------------------------------------------- multiple shooting --

/// Decision variables of penalty shooting: the controls and the start
/// states (q, qdot) of segments 1..S-1.
struct ShootingPoint
{
  Eigen::MatrixXd controls;
  std::vector<Eigen::VectorXd> starts;

  double squaredNorm() const
  {
    double s = controls.squaredNorm();
    for (const auto& x : starts)
      s += x.squaredNorm();
    return s;
  }

  ShootingPoint axpy(double a, const ShootingPoint& d) const
  {
    ShootingPoint out{controls + a * d.controls, starts};
    for (size_t k = 0; k < starts.size(); ++k)
      out.starts[k] += a * d.starts[k];
    return out;
  }
};

/// Inner product with the control block weighted by w.
double dot(const ShootingPoint& a, const ShootingPoint& b, double w)
{
  double s = w * a.controls.cwiseProduct(b.controls).sum();
  for (size_t k = 0; k < a.starts.size(); ++k)
    s += a.starts[k].dot(b.starts[k]);
  return s;
}

struct ShootingEval
{
  double penalized = 0.0;
  double defect = 0.0;
  std::vector<Trajectory> segments;
  std::vector<Eigen::VectorXd> defects;  ///< end of segment k minus start of k + 1
};

class Shooting
{
public:
  Shooting(const World& world, const WorldState& initial, const Objective& objective,
           const Eigen::VectorXd& mask, const OptimizeConfig& config, int horizon)
    : mWorld(world), mInitial(initial), mObjective(objective), mMask(mask), mConfig(config)
  {
    const int s = config.segments;
    for (int k = 0; k <= s; ++k)
      mBounds.push_back(static_cast<int>(static_cast<long>(k) * horizon / s));
  }

  int segments() const { return static_cast<int>(mBounds.size()) - 1; }

  /// Start states from a rollout of the controls, with weighted positions
  /// interpolated toward the target at the constant velocity that reaches it.
  ShootingPoint initialPoint(const Eigen::MatrixXd& controls) const
  {
    const Trajectory t = rollout(mWorld, mInitial, controls);
    const int horizon = mBounds.back();
    ShootingPoint p{controls, {}};
    for (int k = 1; k < segments(); ++k)
    {
      WorldState s = t.states[static_cast<size_t>(mBounds[static_cast<size_t>(k)])];
      const double frac = static_cast<double>(mBounds[static_cast<size_t>(k)]) / horizon;
      for (Eigen::Index i = 0; i < s.q.size(); ++i)
        if (mObjective.qWeights[i] > 0.0)
        {
          const double span = mObjective.targetQ[i] - mInitial.q[i];
          s.q[i] = mInitial.q[i] + frac * span;
          s.qdot[i] = span / (horizon * mInitial.dt);
        }
      p.starts.push_back(packState(s));
    }
    return p;
  }

  ShootingEval evaluate(const ShootingPoint& p, double rho) const
  {
    ShootingEval e;
    e.penalized = mObjective.controlCost(p.controls);
    double defect2 = 0.0;
    for (int k = 0; k < segments(); ++k)
    {
      const WorldState start = k == 0 ? mInitial : startState(p, k);
      const int b0 = mBounds[static_cast<size_t>(k)];
      const int b1 = mBounds[static_cast<size_t>(k) + 1];
      e.segments.push_back(rollout(mWorld, start, p.controls.middleRows(b0, b1 - b0)));
      const WorldState& end = e.segments.back().last();
      if (k + 1 < segments())
      {
        e.defects.push_back(packState(end) - p.starts[static_cast<size_t>(k)]);
        defect2 += e.defects.back().squaredNorm();
      }
      else
        e.penalized += mObjective.terminal(end);
    }
    e.penalized += rho * defect2;
    e.defect = std::sqrt(defect2);
    return e;
  }

  ShootingPoint gradient(const ShootingPoint& p, const ShootingEval& e, double rho) const
  {
    const Eigen::Index n = mInitial.q.size();
    ShootingPoint g{masked(2.0 * mObjective.controlWeight * p.controls, mMask),
                    std::vector<Eigen::VectorXd>(p.starts.size())};
    for (auto& s : g.starts)
      s = Eigen::VectorXd::Zero(2 * n);
    for (int k = 0; k < segments(); ++k)
    {
      const Trajectory& seg = e.segments[static_cast<size_t>(k)];
      Eigen::VectorXd dq, dqdot;
      if (k + 1 < segments())
      {
        const Eigen::VectorXd d = 2.0 * rho * e.defects[static_cast<size_t>(k)];
        dq = d.head(n);
        dqdot = d.tail(n);
        g.starts[static_cast<size_t>(k)] -= d;
      }
      else
      {
        dq = mObjective.terminalDq(seg.last());
        dqdot = mObjective.terminalDqdot(seg.last());
      }
      const TrajectoryGradient tg
          = backpropTrajectory(mWorld, seg, dq, dqdot, mConfig.mode, mConfig.jacobian);
      const int b0 = mBounds[static_cast<size_t>(k)];
      g.controls.middleRows(b0, seg.steps()) += masked(tg.controls, mMask);
      if (k > 0)
      {
        g.starts[static_cast<size_t>(k) - 1].head(n) += tg.dq0;
        g.starts[static_cast<size_t>(k) - 1].tail(n) += tg.dqdot0;
      }
    }
    return g;
  }

private:
  WorldState startState(const ShootingPoint& p, int k) const
  {
    return unpackState(p.starts[static_cast<size_t>(k) - 1], mInitial.dt);
  }

  const World& mWorld;
  WorldState mInitial;
  const Objective& mObjective;
  Eigen::VectorXd mMask;
  const OptimizeConfig& mConfig;
  std::vector<int> mBounds;
};

void requireFinite(double value, int iteration, const char* what)
{
  if (!std::isfinite(value))
    throw Diverged(std::string(what) + " became non-finite at iteration "
                   + std::to_string(iteration));
}

/// Rollouts that leave the finite range count as divergence.
template <class F>
auto guarded(int iteration, F&& f)
{
  try
  {
    return f();
  }
  catch (const NonFinite& e)
  {
    throw Diverged("iteration " + std::to_string(iteration) + ": " + e.what());
  }
}

OptimizeResult optimizeSgd(
    const World& world,
    const WorldState& initial,
    const Objective& objective,
    Eigen::MatrixXd controls,
    const Eigen::VectorXd& mask,
    const OptimizeConfig& config)
{
  OptimizeResult r;
  r.bestLoss = std::numeric_limits<double>::infinity();
  for (int k = 0;; ++k)
  {
    const Trajectory t = guarded(k, [&] { return rollout(world, initial, controls); });
    const double loss = objective.loss(t);
    requireFinite(loss, k, "loss");
    r.loss.push_back(loss);
    if (loss < r.bestLoss)
    {
      r.bestLoss = loss;
      r.bestIteration = k;
      r.controls = controls;
    }
    if (k == config.iterations)
      break;
    const TrajectoryGradient g
        = trajectoryGradient(world, t, objective, config.mode, mask, config.jacobian);
    requireFinite(g.controls.squaredNorm(), k, "gradient");
    controls -= config.stepSize * g.controls;
  }
  return r;
}

OptimizeResult optimizeShooting(
    const World& world,
    const WorldState& initial,
    const Objective& objective,
    const Eigen::MatrixXd& controls,
    const Eigen::VectorXd& mask,
    const OptimizeConfig& config)
{
  constexpr double kArmijo = 1e-4;
  constexpr int kHalvings = 60;
  const Shooting shooting(world, initial, objective, mask, config,
                          static_cast<int>(controls.rows()));
  ShootingPoint point = shooting.initialPoint(controls);
  double rho = config.penalty;
  const double controlMetric = initial.dt * initial.dt;
  const int interval = std::max(1, (config.iterations + config.penaltyStages - 1)
                                       / std::max(1, config.penaltyStages));
  std::optional<std::pair<ShootingPoint, ShootingPoint>> previous;
  double previousRho = rho;

  OptimizeResult r;
  r.bestLoss = std::numeric_limits<double>::infinity();
  ShootingEval eval = guarded(0, [&] { return shooting.evaluate(point, rho); });
  for (int k = 0;; ++k)
  {
    if (k > 0 && k % interval == 0 && k / interval < config.penaltyStages)
    {
      rho *= config.penaltyGrowth;
      eval = shooting.evaluate(point, rho);
    }
    const double loss
        = guarded(k, [&] { return rolloutLoss(world, initial, point.controls, objective); });
    requireFinite(loss, k, "loss");
    requireFinite(eval.penalized, k, "penalized loss");
    r.loss.push_back(loss);
    r.penalized.push_back(eval.penalized);
    r.defect.push_back(eval.defect);
    if (loss < r.bestLoss)
    {
      r.bestLoss = loss;
      r.bestIteration = k;
      r.controls = point.controls;
    }
    if (k == config.iterations)
      break;

    const ShootingPoint g = shooting.gradient(point, eval, rho);
    // Descent in impulse units tau dt, preconditioned so controls and start
    // states move on comparable scales.
    ShootingPoint d = g;
    d.controls /= controlMetric;
    const double g2 = dot(g, d, 1.0);
    requireFinite(g2, k, "gradient");
    if (g2 == 0.0)
      continue;
    // Barzilai-Borwein trial step in the preconditioned metric.
    double alpha = config.stepSize;
    if (previous && previousRho == rho)
    {
      const ShootingPoint s = point.axpy(-1.0, previous->first);
      const ShootingPoint y = g.axpy(-1.0, previous->second);
      const double sy = dot(s, y, 1.0);
      if (sy > 0.0)
        alpha = dot(s, s, controlMetric) / sy;
    }
    previous = {point, g};
    previousRho = rho;
    // Accepted steps decrease the penalized loss sufficiently and never
    // increase the defect.
    for (int h = 0; h < kHalvings; ++h, alpha *= 0.5)
    {
      const ShootingPoint trial = point.axpy(-alpha, d);
      ShootingEval te;
      try
      {
        te = shooting.evaluate(trial, rho);
      }
      catch (const Error&)
      {
        continue;
      }
      if (std::isfinite(te.penalized)
          && te.penalized <= eval.penalized - kArmijo * alpha * g2
          && te.defect <= eval.defect)
      {
        point = trial;
        eval = std::move(te);
        break;
      }
    }
  }
  r.converged = r.defect.back() < config.defectTolerance;
  return r;
}

}  // namespace

Trajectory rollout(
    const World& world,
    const WorldState& initial,
    const Eigen::MatrixXd& controls,
    const std::string& scene)
{
  const int n = world.dofs();
  if (controls.cols() != n)
    throw DimensionMismatch("controls have " + std::to_string(controls.cols())
                            + " columns for " + std::to_string(n) + " dofs");
  Trajectory t;
  t.scene = scene;
  t.dt = initial.dt;
  t.controls = controls;
  t.states.reserve(static_cast<size_t>(controls.rows()) + 1);
  t.records.reserve(static_cast<size_t>(controls.rows()));
  WorldState s = initial;
  s.tau = Eigen::VectorXd::Zero(n);
  t.states.push_back(s);
  WarmStartCache cache;
  for (int k = 0; k < controls.rows(); ++k)
  {
    s.tau = controls.row(k).transpose();
    t.records.push_back(atStep(k, [&] { return step(world, s, &cache); }));
    s = t.records.back().next;
    t.states.push_back(s);
  }
  return t;
}

Objective Objective::fromSpec(const ObjectiveSpec& spec)
{
  return {spec.targetQ, spec.qWeights, spec.targetQdot, spec.qdotWeights, spec.controlWeight};
}

double Objective::terminal(const WorldState& s) const
{
  return (qWeights.array() * (s.q - targetQ).array().square()).sum()
         + (qdotWeights.array() * (s.qdot - targetQdot).array().square()).sum();
}

Eigen::VectorXd Objective::terminalDq(const WorldState& s) const
{
  return 2.0 * qWeights.cwiseProduct(s.q - targetQ);
}

Eigen::VectorXd Objective::terminalDqdot(const WorldState& s) const
{
  return 2.0 * qdotWeights.cwiseProduct(s.qdot - targetQdot);
}

double Objective::controlCost(const Eigen::MatrixXd& controls) const
{
  return controlWeight * controls.squaredNorm();
}

double Objective::loss(const Trajectory& t) const
{
  return terminal(t.last()) + controlCost(t.controls);
}

TrajectoryGradient backpropTrajectory(
    const World& world,
    const Trajectory& trajectory,
    const Eigen::VectorXd& dlDqT,
    const Eigen::VectorXd& dlDqdotT,
    GradientMode mode,
    const JacobianOptions& options)
{
  const int n = world.dofs();
  TrajectoryGradient out;
  out.controls = Eigen::MatrixXd::Zero(trajectory.steps(), n);
  Eigen::VectorXd dq = dlDqT, dqdot = dlDqdotT;
  for (int t = trajectory.steps() - 1; t >= 0; --t)
  {
    const StepRecord& rec = trajectory.records[static_cast<size_t>(t)];
    LossGradient g;
    if (mode == GradientMode::Standard)
      g = atStep(t, [&] { return backpropStep(stepJacobians(world, rec, options), dq, dqdot); });
    else
    {
      const AwareGradient a
          = atStep(t, [&] { return complementarityAwareBackprop(world, rec, dq, dqdot, options); });
      out.reclassifiedSteps += a.reclassified;
      g = a.gradient;
    }
    out.controls.row(t) = g.dtau.transpose();
    dq = g.dq;
    dqdot = g.dqdot;
  }
  out.dq0 = dq;
  out.dqdot0 = dqdot;
  return out;
}

TrajectoryGradient trajectoryGradient(
    const World& world,
    const Trajectory& trajectory,
    const Objective& objective,
    GradientMode mode,
    const Eigen::VectorXd& mask,
    const JacobianOptions& options)
{
  const Eigen::VectorXd m = fullMask(mask, world.dofs());
  TrajectoryGradient g = backpropTrajectory(
      world, trajectory, objective.terminalDq(trajectory.last()),
      objective.terminalDqdot(trajectory.last()), mode, options);
  g.controls += 2.0 * objective.controlWeight * trajectory.controls;
  g.controls = masked(g.controls, m);
  return g;
}

Method parseMethod(const std::string& name)
{
  if (name == "sgd")
    return Method::Sgd;
  if (name == "multiple-shooting")
    return Method::MultipleShooting;
  throw ValidationError("method", "must be 'sgd' or 'multiple-shooting', got '" + name + "'");
}

OptimizeConfig OptimizeConfig::fromTask(const TaskSpec& task)
{
  OptimizeConfig c;
  c.method = parseMethod(task.method);
  c.iterations = task.iterations;
  c.stepSize = task.stepSize;
  c.segments = task.segments;
  return c;
}

OptimizeResult optimize(
    const World& world,
    const WorldState& initial,
    const Objective& objective,
    const Eigen::MatrixXd& initialControls,
    const Eigen::VectorXd& mask,
    const OptimizeConfig& config)
{
  const int n = world.dofs();
  const Eigen::VectorXd m = fullMask(mask, n);
  if (initialControls.cols() != n || initialControls.rows() < 1)
    throw DimensionMismatch("initial controls must be T x " + std::to_string(n));
  if (objective.targetQ.size() != n || objective.qWeights.size() != n
      || objective.targetQdot.size() != n || objective.qdotWeights.size() != n)
    throw DimensionMismatch("objective vectors must have one entry per dof");
  if (config.iterations < 0 || !(config.stepSize > 0.0))
    throw ValidationError("config", "iterations must be non-negative and the step positive");
  const Eigen::MatrixXd start = masked(initialControls, m);
  if (config.method == Method::Sgd)
    return optimizeSgd(world, initial, objective, start, m, config);
  if (config.segments < 1 || config.segments > initialControls.rows())
    throw ValidationError("segments", "must lie in [1, horizon]");
  return optimizeShooting(world, initial, objective, start, m, config);
}

void writeTrajectory(std::ostream& os, const Trajectory& trajectory)
{
  const Eigen::Index n = trajectory.states.front().q.size();
  os << "step,time";
  for (Eigen::Index i = 0; i < n; ++i)
    os << ",q" << i;
  for (Eigen::Index i = 0; i < n; ++i)
    os << ",qdot" << i;
  os << ",contacts,normal_impulse\n";
  for (int t = 0; t < trajectory.steps(); ++t)
  {
    const StepRecord& rec = trajectory.records[static_cast<size_t>(t)];
    double normal = 0.0;
    for (int r = 0; r < rec.rows(); ++r)
      if (rec.lcp.rows[static_cast<size_t>(r)].isNormal())
        normal += rec.solution.f[r];
    const WorldState& s = trajectory.states[static_cast<size_t>(t) + 1];
    os << t + 1 << ',' << formatDouble((t + 1) * trajectory.dt) << ',' << joinRow(s.q) << ','
       << joinRow(s.qdot) << ',' << rec.contacts.size() << ',' << formatDouble(normal) << '\n';
  }
}

void writeLossCurve(std::ostream& os, const OptimizeResult& result)
{
  const bool shooting = !result.defect.empty();
  os << (shooting ? "iteration,loss,penalized,defect\n" : "iteration,loss\n");
  for (size_t k = 0; k < result.loss.size(); ++k)
  {
    os << k << ',' << formatDouble(result.loss[k]);
    if (shooting)
      os << ',' << formatDouble(result.penalized[k]) << ',' << formatDouble(result.defect[k]);
    os << '\n';
  }
}

void writeControls(std::ostream& os, const Eigen::MatrixXd& controls)
{
  os << "step";
  for (Eigen::Index i = 0; i < controls.cols(); ++i)
    os << ",tau" << i;
  os << '\n';
  for (Eigen::Index t = 0; t < controls.rows(); ++t)
    os << t << ',' << joinRow(controls.row(t).transpose()) << '\n';
}

}  // namespace nimble_mini
