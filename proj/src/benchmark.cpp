#include "nimble_mini/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"

namespace nimble_mini {

namespace {

constexpr const char* kAll = "All";

Eigen::VectorXd packNext(const WorldState& s)
{
  Eigen::VectorXd y(2 * s.q.size());
  y << s.q, s.qdot;
  return y;
}

Eigen::VectorXd& group(WorldState& s, StepInput input)
{
  return input == StepInput::Q ? s.q : input == StepInput::Qdot ? s.qdot : s.tau;
}

StepInput blockInput(const std::string& block)
{
  if (block == kBlockDqDq || block == kBlockDqdotDq)
    return StepInput::Q;
  if (block == kBlockDqDqdot || block == kBlockDqdotDqdot)
    return StepInput::Qdot;
  if (block == kBlockDqdotDtau)
    return StepInput::Tau;
  throw ShapeMismatch("no difference oracle for block '" + block + "'");
}

struct Difference
{
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd error;
  double step = 0.0;
};

Difference difference(const VectorFunction& fn, const Eigen::VectorXd& x, FdMethod method,
                      double step, int threads)
{
  Difference d;
  if (method == FdMethod::Central)
  {
    const Eigen::VectorXd h = step > 0.0 ? Eigen::VectorXd::Constant(x.size(), step)
                                         : relativeSteps(x, kCentralStep);
    d.jacobian = centralDifference(fn, x, h, threads);
    d.step = h.size() ? h.maxCoeff() : 0.0;
  }
  else
  {
    const RiddersResult r = ridders(fn, x, step, kRiddersTableau, threads);
    d.jacobian = r.jacobian;
    d.error = r.error;
    d.step = r.step.size() ? r.step.maxCoeff() : 0.0;
  }
  return d;
}

/// Whole step map over the packed input (q, qdot, tau).
Eigen::MatrixXd differenceAll(const World& world, const WorldState& state, FdMethod method,
                              int threads)
{
  const Eigen::Index n = state.q.size();
  Eigen::VectorXd x(3 * n);
  x << state.q, state.qdot, state.tau;
  const VectorFunction fn = [&](const Eigen::VectorXd& v) {
    WorldState s = state;
    s.q = v.head(n);
    s.qdot = v.segment(n, n);
    s.tau = v.tail(n);
    return packNext(stepState(world, s));
  };
  return difference(fn, x, method, 0.0, threads).jacobian;
}

template <class F>
double medianSeconds(F&& f, int repetitions, int warmup)
{
  using Clock = std::chrono::steady_clock;
  double sink = 0.0;
  for (int i = 0; i < warmup; ++i)
    sink += f();
  std::vector<double> times;
  times.reserve(static_cast<size_t>(repetitions));
  for (int i = 0; i < repetitions; ++i)
  {
    const auto t0 = Clock::now();
    sink += f();
    times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  // Keeps the timed work observable.
  volatile double keep = sink;
  (void)keep;
  std::nth_element(times.begin(), times.begin() + repetitions / 2, times.end());
  return times[static_cast<size_t>(repetitions / 2)];
}

}  // namespace

FdMethod parseFdMethod(const std::string& name)
{
  if (name == "central")
    return FdMethod::Central;
  if (name == "ridders")
    return FdMethod::Ridders;
  throw ValidationError("check", "must be 'central' or 'ridders', got '" + name + "'");
}

Eigen::MatrixXd differenceStep(
    const World& world,
    const WorldState& state,
    StepInput input,
    FdMethod method,
    double step,
    int threads)
{
  WorldState base = state;
  const Eigen::VectorXd x = group(base, input);
  const VectorFunction fn = [&world, base, input](const Eigen::VectorXd& v) {
    WorldState s = base;
    group(s, input) = v;
    return packNext(stepState(world, s));
  };
  return difference(fn, x, method, step, threads).jacobian;
}

std::vector<NamedMatrix> differenceBlocks(
    const World& world,
    const WorldState& state,
    FdMethod method,
    double step,
    int threads)
{
  const Eigen::Index n = state.q.size();
  std::vector<NamedMatrix> out;
  for (StepInput input : {StepInput::Q, StepInput::Qdot, StepInput::Tau})
  {
    WorldState base = state;
    const Eigen::VectorXd x = group(base, input);
    const VectorFunction fn = [&world, base, input](const Eigen::VectorXd& v) {
      WorldState s = base;
      group(s, input) = v;
      return packNext(stepState(world, s));
    };
    const Difference d = difference(fn, x, method, step, threads);
    auto add = [&](const char* name, Eigen::Index row) {
      NamedMatrix b{name, d.jacobian.middleRows(row, n), d.step, 0.0};
      if (d.error.size())
        b.estimate = d.error.middleRows(row, n).maxCoeff();
      out.push_back(b);
    };
    if (input == StepInput::Q)
    {
      add(kBlockDqDq, 0);
      add(kBlockDqdotDq, n);
    }
    else if (input == StepInput::Qdot)
    {
      add(kBlockDqDqdot, 0);
      add(kBlockDqdotDqdot, n);
    }
    else
      add(kBlockDqdotDtau, n);
  }
  // Export order of StepJacobians::blocks().
  const std::vector<std::string> order{kBlockDqDq, kBlockDqDqdot, kBlockDqdotDq,
                                       kBlockDqdotDqdot, kBlockDqdotDtau};
  std::vector<NamedMatrix> sorted;
  for (const std::string& name : order)
    sorted.push_back(*std::find_if(out.begin(), out.end(),
                                   [&](const NamedMatrix& b) { return b.name == name; }));
  return sorted;
}

std::vector<BenchmarkRow> benchmarkScene(
    const std::string& scene,
    const World& world,
    const WorldState& state,
    const BenchmarkOptions& options)
{
  if (options.repetitions < 1 || options.warmup < 0)
    throw ValidationError("repetitions", "must be at least 1");
  std::vector<std::string> names = options.jacobians;
  if (names.empty())
    names = {kBlockDqDq, kBlockDqDqdot, kBlockDqdotDq, kBlockDqdotDqdot, kBlockDqdotDtau, kAll};
  const StepRecord record = step(world, state);
  const int reps = options.repetitions, warm = options.warmup;

  std::vector<BenchmarkRow> rows;
  for (const std::string& name : names)
  {
    BenchmarkRow row;
    row.scene = scene;
    row.jacobian = name;
    if (name == kAll)
    {
      row.analytic = medianSeconds(
          [&] { return stepJacobians(world, record).dqdotNext_dq(0, 0); }, reps, warm);
      row.central = medianSeconds(
          [&] { return differenceAll(world, state, FdMethod::Central, 1)(0, 0); }, reps, warm);
      if (options.ridders)
        row.ridders = medianSeconds(
            [&] { return differenceAll(world, state, FdMethod::Ridders, 1)(0, 0); }, reps, warm);
    }
    else
    {
      const StepInput input = blockInput(name);
      row.analytic = medianSeconds(
          [&] { return stepJacobianBlock(world, record, name)(0, 0); }, reps, warm);
      row.central = medianSeconds(
          [&] { return differenceStep(world, state, input, FdMethod::Central, 0.0, 1)(0, 0); },
          reps, warm);
      if (options.ridders)
        row.ridders = medianSeconds(
            [&] { return differenceStep(world, state, input, FdMethod::Ridders, 0.0, 1)(0, 0); },
            reps, warm);
    }
    rows.push_back(row);
  }
  return rows;
}

void writeBenchmark(std::ostream& os, const std::vector<BenchmarkRow>& rows)
{
  os << "scene,jacobian,analytic,central,speedup,ridders,speedup\n";
  for (const BenchmarkRow& r : rows)
    os << r.scene << ',' << r.jacobian << ',' << formatDouble(r.analytic) << ','
       << formatDouble(r.central) << ',' << formatDouble(r.centralSpeedup()) << ','
       << formatDouble(r.ridders) << ',' << formatDouble(r.riddersSpeedup()) << '\n';
}

}  // namespace nimble_mini
