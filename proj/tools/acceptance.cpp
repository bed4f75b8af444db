// Acceptance report: one PASS/FAIL line per primary criterion. Exits 0
// once every criterion has been evaluated; --strict exits 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "nimble_mini/benchmark.hpp"
#include "nimble_mini/diffstep.hpp"
#include "nimble_mini/dynamics.hpp"
#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"
#include "nimble_mini/lcp.hpp"
#include "nimble_mini/scene.hpp"
#include "nimble_mini/trajopt.hpp"
#include "support.hpp"

using namespace nimble_mini;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome
{
  bool pass = false;
  std::string detail;
};

struct Criterion
{
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(double x)
{
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

struct Loaded
{
  SceneDescription scene;
  World world;
  WorldState state;
};

Loaded load(const std::string& name)
{
  Loaded l{testing::corpusScene(name), {}, {}};
  l.world = buildWorld(l.scene);
  l.state = initialState(l.scene);
  return l;
}

VectorXd& group(WorldState& s, StepInput input)
{
  return input == StepInput::Q ? s.q : input == StepInput::Qdot ? s.qdot : s.tau;
}

/// Reported classes are unchanged under +-h (relative) on every step input.
bool classificationStable(const World& world, const WorldState& base, double h)
{
  const auto classes = step(world, base).solution.classes;
  for (StepInput input : {StepInput::Q, StepInput::Qdot, StepInput::Tau})
    for (Eigen::Index i = 0; i < base.q.size(); ++i)
      for (double sign : {-1.0, 1.0})
      {
        WorldState p = base;
        VectorXd& y = group(p, input);
        y[i] += sign * h * std::max(1.0, std::abs(y[i]));
        if (step(world, p).solution.classes != classes)
          return false;
      }
  return true;
}

Outcome gradientCorrectness()
{
  struct Case
  {
    const char* scene;
    double tol;
    double h0;
  };
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;
  for (const Case& c : {Case{"pendulum", 1e-6, 1e-3}, Case{"double_pendulum", 1e-6, 1e-3},
                        Case{"ball_on_plane", 1e-4, 1e-5}, Case{"box_on_plane", 1e-4, 1e-5},
                        Case{"capsule_pair", 1e-4, 1e-5}, Case{"jump_worm", 1e-4, 1e-5}})
  {
    const Loaded l = load(c.scene);
    if (!classificationStable(l.world, l.state, c.h0))
    {
      pass = false;
      detail += std::string(c.scene) + " not classification-stable; ";
      continue;
    }
    std::vector<NamedMatrix> analytic = stepJacobians(l.world, step(l.world, l.state)).blocks();
    analytic.resize(5);
    const std::vector<NamedMatrix> oracle
        = differenceBlocks(l.world, l.state, FdMethod::Ridders, c.h0, threadCap());
    const DiffReport r = compare(analytic, oracle, c.tol);
    double worst = 0.0;
    for (const BlockReport& b : r.blocks)
      worst = std::max(worst, b.maxRel);
    pass = pass && r.pass();
    detail += std::string(c.scene) + " " + fmt(worst) + "; ";
  }
  const double seconds
      = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass = pass && seconds < 60.0;
  return {pass, "max rel error per scene: " + detail + "suite " + fmt(seconds) + " s"};
}

Outcome lcpOracle()
{
  std::mt19937 rng(20240);
  double worstUnique = 0.0, worstMember = 0.0, worstResidual = 0.0;
  int unique = 0;
  for (int trial = 0; trial < 1000; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 8, true);
    const std::vector<LcpSolution> all = enumerateSolutions(p);
    const LcpSolution direct = solveDirect(p);
    // Friction LCPs may have several solutions; the direct answer must be
    // one of them, and equal the oracle's whenever the solution is unique.
    double member = std::numeric_limits<double>::infinity(), spread = 0.0;
    for (const LcpSolution& s : all)
    {
      member = std::min(member, (direct.f - s.f).cwiseAbs().maxCoeff());
      spread = std::max(spread, (all[0].f - s.f).cwiseAbs().maxCoeff());
    }
    worstMember = std::max(worstMember, member);
    if (spread < 1e-8)
    {
      ++unique;
      worstUnique
          = std::max(worstUnique, (direct.f - solveEnumerate(p).f).cwiseAbs().maxCoeff());
    }
    for (const LcpSolution* s : {&direct, &all.front()})
      worstResidual = std::max(
          worstResidual, complementarityResidual(p, s->f) / (1.0 + s->f.norm() * s->v.norm()));
  }
  const bool pass = worstUnique < 1e-8 && worstMember < 1e-8 && worstResidual < 1e-9;
  return {pass, "max |df| " + fmt(worstUnique) + " on " + std::to_string(unique)
                    + " unique problems, " + fmt(worstMember)
                    + " to the nearest oracle solution on all 1000, max residual "
                    + fmt(worstResidual)};
}

/// Box on a vertical slider, rotated so one edge rests on the ground: two
/// vertex contacts with identical normal rows.
SceneDescription edgeBox()
{
  SceneDescription s;
  s.name = "edge_box";
  s.dt = 0.01;
  BodySpec b;
  b.name = "slider";
  b.joint = JointKind::Prismatic;
  b.axis = Vec3::UnitY();
  b.mass = 1.5;
  s.bodies.push_back(b);
  ColliderSpec box;
  box.name = "box";
  box.body = "slider";
  box.shape = Box{Vec3(0.2, 0.1, 0.1)};
  const double h = std::sqrt(0.5);
  box.pose.quaternion = Eigen::Vector4d(std::cos(M_PI / 8), std::sin(M_PI / 8), 0.0, 0.0);
  box.friction = 0.5;
  ColliderSpec ground;
  ground.name = "ground";
  ground.shape = HalfSpace{Vec3::UnitY(), 0.0};
  ground.friction = 0.5;
  s.colliders = {box, ground};
  s.q = VectorXd::Constant(1, 0.2 * h - 1e-4);
  s.qdot = VectorXd::Zero(1);
  s.actuated = {false};
  return s;
}

Outcome stabilization()
{
  const SceneDescription s = edgeBox();
  const World w = buildWorld(s);
  const StepRecord r = step(w, initialState(s));
  if (r.contacts.size() != 2)
    return {false, "edge box produced " + std::to_string(r.contacts.size()) + " contacts"};
  const double weight = s.bodies[0].mass * 9.81 * s.dt;
  const VectorXd f = r.contactImpulses();
  const double split = std::max(std::abs(f[0] - weight / 2), std::abs(f[3] - weight / 2));

  std::mt19937 rng(77);
  bool idempotent = true;
  for (int trial = 0; trial < 200; ++trial)
  {
    const LcpProblem p = testing::randomContactLcp(rng, 9, true);
    const LcpSolution once = stabilize(p, solveDirect(p).basis);
    const LcpSolution twice = stabilize(p, once.basis);
    idempotent = idempotent && twice.f == once.f && twice.classes == once.classes;
  }
  const LcpSolution again = stabilize(r.lcp, r.solution.basis);
  idempotent = idempotent && again.f == r.solution.f;
  return {split < 1e-10 && idempotent,
          "two-contact box |f - w/2| " + fmt(split) + " (rank " + std::to_string(r.solution.rank)
              + "), idempotent on 201 problems: " + (idempotent ? "yes" : "no")};
}

Outcome warmStart()
{
  bool pass = true;
  std::string detail;
  for (const char* name : {"ball_on_plane", "kind_vertex_face", "jump_worm"})
  {
    const Loaded l = load(name);
    WarmStartCache cache;
    WorldState s = l.state;
    double worst = 0.0;
    for (int t = 0; t < 500; ++t)
    {
      const StepRecord warm = step(l.world, s, &cache);
      const StepRecord cold = step(l.world, s);
      if (warm.rows() > 0)
        worst = std::max(worst, (warm.solution.f - cold.solution.f).cwiseAbs().maxCoeff());
      s = warm.next;
    }
    const double rate = cache.attempts ? double(cache.hits) / cache.attempts : 0.0;
    pass = pass && cache.attempts > 0 && rate >= 0.9 && worst < 1e-9;
    detail += std::string(name) + " hit rate " + fmt(100.0 * rate) + "%, max |df| " + fmt(worst)
              + "; ";
  }
  return {pass, detail};
}

Outcome bounce()
{
  double worstQ = 0.0, worstV = 0.0;
  for (double sigma : {0.2, 0.5, 1.0})
  {
    SceneDescription s = testing::corpusScene("bounce");
    s.colliders[0].restitution = sigma;
    const World w = buildWorld(s);
    const StepRecord rec = step(w, initialState(s));
    if (!rec.bouncing())
      return {false, "bounce scene does not bounce at sigma " + fmt(sigma)};
    const StepJacobians j = stepJacobians(w, rec);
    worstQ = std::max(worstQ, std::abs(j.dqNext_dq(0, 0) + sigma));
    worstV = std::max(worstV, std::abs(j.dqNext_dqdot(0, 0) + sigma * s.dt));
  }

  // Minimum-norm Kronecker least squares as the dense oracle.
  std::mt19937 rng(31);
  double worstMulti = 0.0;
  for (int trial = 0; trial < 40; ++trial)
  {
    const int n = 2 + trial % 5, k = 1 + trial % 4;
    std::vector<BounceRow> rows;
    for (int i = 0; i < k; ++i)
      rows.push_back({0.1 + 0.2 * i, testing::randomVector(rng, n).transpose(),
                      testing::randomVector(rng, n).transpose()});
    MatrixXd W(k, n * n);
    VectorXd target(k);
    for (int i = 0; i < k; ++i)
    {
      const BounceRow& r = rows[static_cast<size_t>(i)];
      const VectorXd pinv = r.jacobian.transpose() / r.jacobian.squaredNorm();
      const VectorXd a = r.jacobianNext.transpose();
      for (int c = 0; c < n; ++c)
        for (int rr = 0; rr < n; ++rr)
          W(i, c * n + rr) = pinv[c] * a[rr];
      target[i] = -r.restitution;
    }
    const VectorXd id = MatrixXd::Identity(n, n).reshaped();
    const Eigen::BDCSVD<MatrixXd> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const MatrixXd oracle = (id + svd.solve(VectorXd(target - W * id))).reshaped(n, n);
    worstMulti = std::max(
        worstMulti, (bouncePositionJacobians(rows, n, 0.02).dq - oracle).cwiseAbs().maxCoeff());
  }
  // "Exact" is read as agreement to the last bits of a double: 4 ulp of 1.
  const double exact = 4.0 * std::numeric_limits<double>::epsilon();
  return {worstQ <= exact && worstV <= exact && worstMulti < 1e-8,
          "single bounce |dq'/dq + sigma| " + fmt(worstQ) + ", |dq'/dqdot + sigma dt| "
              + fmt(worstV) + ", multi-bounce vs oracle " + fmt(worstMulti)};
}

Outcome saddleEscape()
{
  const Loaded l = load("drone");
  const TaskSpec& task = *l.scene.task;
  const Objective objective = Objective::fromSpec(task.objective);
  const MatrixXd start = task.initialControl.transpose().replicate(task.horizon, 1);
  const VectorXd mask = actuationMask(l.scene);

  OptimizeConfig config = OptimizeConfig::fromTask(task);
  config.method = Method::Sgd;
  config.iterations = 100;
  const OptimizeResult standard = optimize(l.world, l.state, objective, start, mask, config);
  double change = 0.0;
  for (double v : standard.loss)
    change = std::max(change, std::abs(v - standard.loss.front()));

  config.iterations = 50;
  config.mode = GradientMode::ComplementarityAware;
  const OptimizeResult aware = optimize(l.world, l.state, objective, start, mask, config);
  double best = aware.loss.front();
  for (double v : aware.loss)
    best = std::min(best, v);
  const double reduction = 1.0 - best / aware.loss.front();
  return {change < 1e-12 && reduction > 0.5,
          "standard loss change " + fmt(change) + " over 100 iterations, aware reduction "
              + fmt(100.0 * reduction) + "% within 50"};
}

Outcome performance()
{
  // Each round times both scenes back to back (median of 100 repetitions
  // each), alternating their order; per-scene medians over the rounds keep
  // machine-load drift from deciding the comparison.
  constexpr int kRounds = 7;
  BenchmarkOptions options;
  options.repetitions = 100;
  options.warmup = 10;
  options.ridders = false;
  options.jacobians = {"All"};
  const std::vector<std::string> names{"jump_worm", "chain9"};
  std::vector<Loaded> scenes;
  for (const std::string& name : names)
    scenes.push_back(load(name));
  std::vector<std::vector<double>> speedups(names.size());
  for (int round = 0; round < kRounds; ++round)
    for (size_t k = 0; k < names.size(); ++k)
    {
      const size_t i = round % 2 ? names.size() - 1 - k : k;
      const Loaded& l = scenes[i];
      speedups[i].push_back(
          benchmarkScene(names[i], l.world, l.state, options).front().centralSpeedup());
    }
  std::vector<double> median;
  std::string detail;
  for (size_t i = 0; i < names.size(); ++i)
  {
    std::vector<double> v = speedups[i];
    std::nth_element(v.begin(), v.begin() + kRounds / 2, v.end());
    median.push_back(v[kRounds / 2]);
    const Loaded& l = scenes[i];
    detail += names[i] + " (" + std::to_string(l.world.dofs()) + " dofs, "
              + std::to_string(step(l.world, l.state).contacts.size()) + " contacts) "
              + fmt(median.back()) + "x; ";
  }
  const bool pass = scenes[1].world.dofs() == 9 && median[1] >= 5.0 && median[1] > median[0];
  return {pass, detail + "central differences over analytic All, one thread, median of "
                    + std::to_string(kRounds) + " rounds of 100"};
}

Outcome dynamicsOracles()
{
  std::mt19937 rng(404);
  double minvErr = 0.0, derivErr = 0.0, closedErr = 0.0;
  for (int k = 0; k < 50; ++k)
  {
    const int n = 1 + k % 9;
    const Skeleton skel = testing::randomChain(rng, n);
    const VectorXd q = testing::randomVector(rng, n, 2.0);
    const MatrixXd M = massMatrix(skel, q);
    minvErr = std::max(minvErr, testing::relError(ArticulatedCache(skel, q).minv(), M.inverse()));
  }
  for (int k = 0; k < 8; ++k)
  {
    const int n = 2 + k;
    const Skeleton skel = testing::randomChain(rng, n);
    const VectorXd q = testing::randomVector(rng, n, 2.0);
    const VectorXd v = testing::randomVector(rng, n);
    const VectorXd z = testing::randomVector(rng, n);
    auto minvZ = [&](const VectorXd& x) { return minvTimes(skel, x, z); };
    auto biasQ = [&](const VectorXd& x) { return coriolisGravity(skel, x, v); };
    auto biasV = [&](const VectorXd& x) { return coriolisGravity(skel, q, x); };
    const CoriolisDerivatives d = dCoriolis(skel, q, v);
    using testing::relError, testing::riddersJacobian;
    derivErr = std::max({derivErr, relError(dMinvZdq(skel, q, z), riddersJacobian(minvZ, q)),
                         relError(d.dq, riddersJacobian(biasQ, q)),
                         relError(d.dqdot, riddersJacobian(biasV, v))});
  }
  const testing::DoublePendulumOracle o{1.3, 0.7, 1.1, 0.6, 9.81};
  const Skeleton pend = testing::planarChain({o.m1, o.m2}, {o.l1, o.l2}, o.g, 1e-14);
  for (int k = 0; k < 20; ++k)
  {
    const VectorXd q = testing::randomVector(rng, 2, 3.0);
    const VectorXd v = testing::randomVector(rng, 2, 2.0);
    closedErr = std::max({closedErr, testing::relError(massMatrix(pend, q), o.mass(q)),
                          testing::relError(coriolisGravity(pend, q, v), o.bias(q, v))});
  }
  return {minvErr < 1e-9 && derivErr < 1e-6 && closedErr < 1e-10,
          "M^-1 vs dense inverse " + fmt(minvErr) + ", derivative blocks vs Ridders "
              + fmt(derivErr) + ", double pendulum closed form " + fmt(closedErr)};
}

Outcome determinism()
{
  const std::vector<std::vector<std::string>> commands{
      {"--seed", "5", "simulate", testing::corpusPath("jump_worm"), "--steps", "200"},
      {"--seed", "5", "simulate", testing::corpusPath("bounce")},
      {"--seed", "5", "jacobian", testing::corpusPath("capsule_pair"), "--check", "ridders"},
      {"--seed", "5", "jacobian", testing::corpusPath("box_on_plane"), "--ties", "random", "--mu"},
      {"--seed", "5", "optimize", testing::corpusPath("drone"), "--iterations", "30",
       "--complementarity-aware"},
      {"--seed", "5", "optimize", testing::corpusPath("pendulum"), "--iterations", "40"},
  };
  int identical = 0;
  for (const auto& c : commands)
  {
    std::ostringstream out1, err1, out2, err2;
    const int a = cli::run(c, out1, err1), b = cli::run(c, out2, err2);
    if (a == b && out1.str() == out2.str() && err1.str() == err2.str() && !out1.str().empty())
      ++identical;
  }
  // Benchmark tables carry wall-clock times; their layout and labels are
  // compared instead.
  auto labels = [](const std::string& table) {
    std::istringstream in(table);
    std::string line, out;
    while (std::getline(in, line))
    {
      const size_t second = line.find(',', line.find(',') + 1);
      out += line.substr(0, second) + '\n';
    }
    return out;
  };
  const std::vector<std::string> bench{"--seed", "5", "benchmark", testing::corpusPath("pendulum"),
                                       "--no-ridders"};
  std::ostringstream b1, b2, e;
  const bool benchSame = cli::run(bench, b1, e) == 0 && cli::run(bench, b2, e) == 0
                         && labels(b1.str()) == labels(b2.str());
  return {identical == static_cast<int>(commands.size()) && benchSame,
          std::to_string(identical) + "/" + std::to_string(commands.size())
              + " commands byte-identical on repeat; benchmark labels identical: "
              + (benchSame ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Primary acceptance criteria", "acceptance"};
  bool strict = false;
  app.add_flag("--strict", strict, "Exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"gradient correctness", gradientCorrectness},
      {"LCP oracle equivalence", lcpOracle},
      {"stabilization", stabilization},
      {"warm start", warmStart},
      {"bounce Jacobian", bounce},
      {"complementarity-aware saddle escape", saddleEscape},
      {"performance", performance},
      {"dynamics oracles", dynamicsOracles},
      {"determinism", determinism},
  };
  int passed = 0;
  for (const Criterion& c : criteria)
  {
    Outcome o;
    try
    {
      o = c.run();
    }
    catch (const std::exception& e)
    {
      o = {false, std::string("threw: ") + e.what()};
    }
    passed += o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << passed << "/" << criteria.size() << " criteria passed" << std::endl;
  return strict && passed != static_cast<int>(criteria.size()) ? 1 : 0;
}
