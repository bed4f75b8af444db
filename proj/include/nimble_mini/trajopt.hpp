#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/diffstep.hpp"
#include "nimble_mini/scene.hpp"
#include "nimble_mini/world.hpp"

namespace nimble_mini {

/// States 0..T and the T steps between them. records[t] maps states[t] with
/// controls.row(t) as tau to states[t + 1].
struct Trajectory
{
  std::string scene;
  double dt = 0.0;
  std::vector<WorldState> states;
  Eigen::MatrixXd controls;  ///< T x dofs
  std::vector<StepRecord> records;

  int steps() const { return static_cast<int>(records.size()); }
  const WorldState& last() const { return states.back(); }
};

/// Steps the world T = controls.rows() times. Engine errors are rethrown with
/// the same type and the failing step index prefixed to the message.
Trajectory rollout(
    const World& world,
    const WorldState& initial,
    const Eigen::MatrixXd& controls,
    const std::string& scene = {});

/// Terminal loss sum w_q (q_T - q*)^2 + sum w_v (qdot_T - qdot*)^2 plus
/// control_weight * sum_t |tau_t|^2.
struct Objective
{
  Eigen::VectorXd targetQ;
  Eigen::VectorXd qWeights;
  Eigen::VectorXd targetQdot;
  Eigen::VectorXd qdotWeights;
  double controlWeight = 0.0;

  static Objective fromSpec(const ObjectiveSpec& spec);

  double terminal(const WorldState& s) const;
  Eigen::VectorXd terminalDq(const WorldState& s) const;
  Eigen::VectorXd terminalDqdot(const WorldState& s) const;
  double controlCost(const Eigen::MatrixXd& controls) const;
  double loss(const Trajectory& t) const;
};

enum class GradientMode
{
  Standard,
  ComplementarityAware
};

struct TrajectoryGradient
{
  Eigen::MatrixXd controls;  ///< T x dofs, zero on unactuated dofs
  Eigen::VectorXd dq0;  ///< gradient on the initial q
  Eigen::VectorXd dqdot0;  ///< gradient on the initial qdot
  int reclassifiedSteps = 0;  ///< steps where the aware candidate won
};

/// Reverse accumulation of a terminal gradient (dl/dq_T, dl/dqdot_T) through
/// every step. Standard mode uses stepJacobians(options) and so throws
/// TiedPresent when a step ties and options.ties is unset.
TrajectoryGradient backpropTrajectory(
    const World& world,
    const Trajectory& trajectory,
    const Eigen::VectorXd& dlDqT,
    const Eigen::VectorXd& dlDqdotT,
    GradientMode mode,
    const JacobianOptions& options = {});

/// Gradient of objective.loss() on the controls. An empty mask actuates
/// every dof.
TrajectoryGradient trajectoryGradient(
    const World& world,
    const Trajectory& trajectory,
    const Objective& objective,
    GradientMode mode,
    const Eigen::VectorXd& mask = {},
    const JacobianOptions& options = {});

enum class Method
{
  Sgd,
  MultipleShooting
};

/// Throws ValidationError for names other than "sgd" and "multiple-shooting".
Method parseMethod(const std::string& name);

struct OptimizeConfig
{
  Method method = Method::Sgd;
  int iterations = 100;
  /// Fixed step for SGD. Shooting uses it as the first trial step of the
  /// backtracking search; later trials use the Barzilai-Borwein step.
  double stepSize = 1e-2;
  int segments = 4;
  GradientMode mode = GradientMode::Standard;
  JacobianOptions jacobian;
  /// Shooting penalty weight: starts at penalty and is multiplied by
  /// penaltyGrowth at the start of each of penaltyStages equal slices of
  /// the iterations after the first.
  double penalty = 1.0;
  double penaltyGrowth = 10.0;
  int penaltyStages = 5;
  double defectTolerance = 1e-6;

  static OptimizeConfig fromTask(const TaskSpec& task);
};

struct OptimizeResult
{
  Eigen::MatrixXd controls;  ///< best iterate, T x dofs
  /// Objective of each iterate from a single rollout of its controls: entry
  /// k before update k, one more entry after the last update.
  std::vector<double> loss;
  /// Shooting only: penalized objective and defect norm per iterate.
  std::vector<double> penalized;
  std::vector<double> defect;
  double bestLoss = 0.0;
  int bestIteration = 0;
  /// Shooting: final defect below tolerance. SGD: always true.
  bool converged = true;
};

/// Gradient-based control optimization from initialControls. Throws Diverged
/// when a loss or gradient becomes non-finite.
OptimizeResult optimize(
    const World& world,
    const WorldState& initial,
    const Objective& objective,
    const Eigen::MatrixXd& initialControls,
    const Eigen::VectorXd& mask,
    const OptimizeConfig& config);

/// One frame per step: step, time, q, qdot, contact count and summed normal
/// impulse after the step, comma separated with a header line.
void writeTrajectory(std::ostream& os, const Trajectory& trajectory);

/// iteration,loss[,penalized,defect] table.
void writeLossCurve(std::ostream& os, const OptimizeResult& result);

/// Controls table with header step,tau0,...
void writeControls(std::ostream& os, const Eigen::MatrixXd& controls);

}  // namespace nimble_mini
