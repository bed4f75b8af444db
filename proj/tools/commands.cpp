#include "commands.hpp"

#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "nimble_mini/benchmark.hpp"
#include "nimble_mini/diffstep.hpp"
#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"
#include "nimble_mini/lcp.hpp"
#include "nimble_mini/scene.hpp"
#include "nimble_mini/trajopt.hpp"

namespace nimble_mini::cli {

namespace {

/// Ridders start steps: contact-free steps tolerate a wide bracket; contact
/// steps must stay inside the current classification.
constexpr double kRiddersStepFree = 1e-3;
constexpr double kRiddersStepContact = 1e-5;
constexpr double kToleranceFree = 1e-6;
constexpr double kToleranceContact = 1e-4;

/// Writes to `path`, or to `fallback` when the path is empty.
void emit(const std::string& path, std::ostream& fallback,
          const std::function<void(std::ostream&)>& write)
{
  if (path.empty())
  {
    write(fallback);
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file)
    throw Error("cannot open '" + path + "' for writing");
  write(file);
  if (!file)
    throw Error("failed writing '" + path + "'");
}

std::optional<TieResolution> parseTies(const std::string& name, std::uint64_t seed)
{
  if (name.empty())
    return std::nullopt;
  if (name == "clamping")
    return TieResolution{TiePolicy::AllClamping, seed};
  if (name == "separating")
    return TieResolution{TiePolicy::AllSeparating, seed};
  if (name == "random")
    return TieResolution{TiePolicy::Random, seed};
  throw ValidationError("ties", "must be 'clamping', 'separating' or 'random', got '" + name + "'");
}

struct Loaded
{
  SceneDescription scene;
  World world;
  WorldState initial;
};

Loaded load(const std::string& path)
{
  Loaded l{loadScene(path), {}, {}};
  l.world = buildWorld(l.scene);
  l.initial = initialState(l.scene);
  return l;
}

struct SimulateArgs
{
  std::string scene;
  int steps = 0;
  std::string out;
};

void simulate(const SimulateArgs& a, std::ostream& out)
{
  const Loaded l = load(a.scene);
  int steps = a.steps;
  if (steps <= 0)
    steps = l.scene.task ? l.scene.task->horizon : 100;
  const Trajectory t = rollout(
      l.world, l.initial, Eigen::MatrixXd::Zero(steps, l.world.dofs()), l.scene.name);
  emit(a.out, out, [&](std::ostream& os) { writeTrajectory(os, t); });
}

struct JacobianArgs
{
  std::string scene;
  int atStep = 0;
  std::string check;
  double tol = 0.0;
  double step = 0.0;
  std::string ties;
  bool mu = false;
  std::string out;
  std::string report;
  std::string dumpLcp;
};

int jacobian(const JacobianArgs& a, std::uint64_t seed, std::ostream& out, std::ostream& err)
{
  const Loaded l = load(a.scene);
  if (a.atStep < 0)
    throw ValidationError("at-step", "must be non-negative");
  const Trajectory t = rollout(
      l.world, l.initial, Eigen::MatrixXd::Zero(a.atStep + 1, l.world.dofs()), l.scene.name);
  const StepRecord& record = t.records.back();
  if (!a.dumpLcp.empty())
    emit(a.dumpLcp, out, [&](std::ostream& os) { writeLcpDump(os, record.lcp, &record.solution); });

  JacobianOptions options;
  options.ties = parseTies(a.ties, seed);
  options.inertialParams = a.mu;
  StepJacobians jac;
  try
  {
    jac = stepJacobians(l.world, record, options);
  }
  catch (const KindBoundary& e)
  {
    err << "warning: KindBoundary at step " << a.atStep << ": " << e.what() << '\n';
    return kExitError;
  }
  const std::vector<NamedMatrix> blocks = jac.blocks();
  emit(a.out, out, [&](std::ostream& os) {
    for (const NamedMatrix& b : blocks)
      writeMatrix(os, b.name, b.value);
  });
  if (a.check.empty())
    return kExitOk;

  const FdMethod method = parseFdMethod(a.check);
  const bool contact = !record.contacts.empty();
  double h = a.step;
  if (h <= 0.0 && method == FdMethod::Ridders)
    h = contact ? kRiddersStepContact : kRiddersStepFree;
  const double tol = a.tol > 0.0 ? a.tol : contact ? kToleranceContact : kToleranceFree;
  const std::vector<NamedMatrix> oracle
      = differenceBlocks(l.world, record.state, method, h, threadCap());
  // The inertial block has no step-map oracle; only the state and control
  // blocks are checked.
  const std::vector<NamedMatrix> checked(blocks.begin(), blocks.begin() + 5);
  const DiffReport report = compare(checked, oracle, tol);
  emit(a.report, out, [&](std::ostream& os) { report.write(os); });
  if (report.pass())
    return kExitOk;
  err << "gradient check failed: " << report.firstFailure() << '\n';
  return kExitCheckFailed;
}

struct BenchmarkArgs
{
  std::vector<std::string> scenes;
  int reps = 100;
  int warmup = 5;
  bool noRidders = false;
  std::vector<std::string> jacobians;
  std::string out;
};

void benchmark(const BenchmarkArgs& a, std::ostream& out)
{
  if (a.reps < 100)
    throw ValidationError("reps", "the median needs at least 100 repetitions");
  BenchmarkOptions options;
  options.repetitions = a.reps;
  options.warmup = a.warmup;
  options.ridders = !a.noRidders;
  options.jacobians = a.jacobians;
  std::vector<BenchmarkRow> rows;
  for (const std::string& path : a.scenes)
  {
    const Loaded l = load(path);
    const std::vector<BenchmarkRow> r = benchmarkScene(l.scene.name, l.world, l.initial, options);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  emit(a.out, out, [&](std::ostream& os) { writeBenchmark(os, rows); });
}

struct OptimizeArgs
{
  std::string scene;
  std::string method;
  int iterations = -1;
  double stepSize = 0.0;
  bool aware = false;
  std::string ties;
  std::string out;
  std::string controls;
  std::string trajectory;
};

int optimizeCommand(const OptimizeArgs& a, std::uint64_t seed, std::ostream& out, std::ostream& err)
{
  const Loaded l = load(a.scene);
  if (!l.scene.task)
    throw ValidationError("task", "scene '" + a.scene + "' has no task");
  const TaskSpec& task = *l.scene.task;
  OptimizeConfig config = OptimizeConfig::fromTask(task);
  if (!a.method.empty())
    config.method = parseMethod(a.method);
  if (a.iterations >= 0)
    config.iterations = a.iterations;
  if (a.stepSize > 0.0)
    config.stepSize = a.stepSize;
  config.mode = a.aware ? GradientMode::ComplementarityAware : GradientMode::Standard;
  config.jacobian.ties = parseTies(a.ties, seed);

  const Eigen::MatrixXd start = task.initialControl.transpose().replicate(task.horizon, 1);
  const OptimizeResult r = optimize(l.world, l.initial, Objective::fromSpec(task.objective), start,
                                    actuationMask(l.scene), config);
  emit(a.out, out, [&](std::ostream& os) { writeLossCurve(os, r); });
  if (!a.controls.empty())
    emit(a.controls, out, [&](std::ostream& os) { writeControls(os, r.controls); });
  if (!a.trajectory.empty())
  {
    const Trajectory t = rollout(l.world, l.initial, r.controls, l.scene.name);
    emit(a.trajectory, out, [&](std::ostream& os) { writeTrajectory(os, t); });
  }
  if (!r.converged)
    err << "warning: multiple shooting did not close the defects (final defect "
        << formatDouble(r.defect.empty() ? 0.0 : r.defect.back()) << ")\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Differentiable rigid-body simulation with hard contact", "nimble-mini"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for randomized tie resolution")->capture_default_str();

  SimulateArgs sim;
  CLI::App* simCmd = app.add_subcommand("simulate", "Roll a scene out with zero controls");
  simCmd->add_option("scene", sim.scene, "Scene file")->required();
  simCmd->add_option("--steps", sim.steps, "Steps to take (default: task horizon, else 100)");
  simCmd->add_option("-o,--out", sim.out, "Trajectory CSV (default: stdout)");

  JacobianArgs jac;
  CLI::App* jacCmd = app.add_subcommand("jacobian", "Export and optionally check step Jacobians");
  jacCmd->add_option("scene", jac.scene, "Scene file")->required();
  jacCmd->add_option("--at-step", jac.atStep, "Differentiate the step taken from state k");
  jacCmd->add_option("--check", jac.check, "Difference oracle")
      ->check(CLI::IsMember({"central", "ridders"}));
  jacCmd->add_option("--tol", jac.tol, "Relative tolerance (default 1e-6, 1e-4 with contacts)");
  jacCmd->add_option("--step", jac.step, "Difference step (default: method rule)");
  jacCmd->add_option("--ties", jac.ties, "Tie policy: clamping, separating or random");
  jacCmd->add_flag("--mu", jac.mu, "Also export the inertial-parameter block");
  jacCmd->add_option("-o,--out", jac.out, "Matrix blocks (default: stdout)");
  jacCmd->add_option("--report", jac.report, "Check report CSV (default: stdout)");
  jacCmd->add_option("--dump-lcp", jac.dumpLcp, "Write the step's LCP and solution");

  BenchmarkArgs bench;
  CLI::App* benchCmd
      = app.add_subcommand("benchmark", "Time analytic against difference Jacobians");
  benchCmd->add_option("scenes", bench.scenes, "Scene files")->required();
  benchCmd->add_option("--reps", bench.reps, "Measured repetitions (at least 100)");
  benchCmd->add_option("--warmup", bench.warmup, "Untimed repetitions first");
  benchCmd->add_flag("--no-ridders", bench.noRidders, "Skip Ridders timings");
  benchCmd->add_option("--jacobian", bench.jacobians, "Block name or All (repeatable)");
  benchCmd->add_option("-o,--out", bench.out, "Benchmark CSV (default: stdout)");

  OptimizeArgs opt;
  CLI::App* optCmd = app.add_subcommand("optimize", "Optimize controls for the scene's task");
  optCmd->add_option("scene", opt.scene, "Scene file with a task")->required();
  optCmd->add_option("--method", opt.method, "sgd or multiple-shooting (default: task)");
  optCmd->add_option("--iterations", opt.iterations, "Iterations (default: task)");
  optCmd->add_option("--step-size", opt.stepSize, "Step size (default: task)");
  optCmd->add_flag("--complementarity-aware", opt.aware, "Use complementarity-aware gradients");
  optCmd->add_option("--ties", opt.ties, "Tie policy: clamping, separating or random");
  optCmd->add_option("-o,--out", opt.out, "Loss curve CSV (default: stdout)");
  optCmd->add_option("--controls", opt.controls, "Best controls CSV");
  optCmd->add_option("--trajectory", opt.trajectory, "Trajectory CSV of the best controls");

  try
  {
    // CLI11 consumes the argument list from the back.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  }
  catch (const CLI::ParseError& e)
  {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }

  try
  {
    if (simCmd->parsed())
      simulate(sim, out);
    else if (jacCmd->parsed())
      return jacobian(jac, seed, out, err);
    else if (benchCmd->parsed())
      benchmark(bench, out);
    else if (optCmd->parsed())
      return optimizeCommand(opt, seed, out, err);
    return kExitOk;
  }
  catch (const Diverged& e)
  {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  }
  catch (const std::exception& e)
  {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace nimble_mini::cli
