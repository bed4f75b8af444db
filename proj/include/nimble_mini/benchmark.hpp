#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nimble_mini/diffstep.hpp"
#include "nimble_mini/fdcheck.hpp"
#include "nimble_mini/world.hpp"

namespace nimble_mini {

enum class FdMethod
{
  Central,
  Ridders
};

/// Throws ValidationError for names other than "central" and "ridders".
FdMethod parseFdMethod(const std::string& name);

/// Input group of the step map (q, qdot, tau) -> (q', qdot').
enum class StepInput
{
  Q,
  Qdot,
  Tau
};

/// (2n x n) difference Jacobian of (q', qdot') over one input group, through
/// stepState() only. step <= 0 selects the method's default relative rule.
Eigen::MatrixXd differenceStep(
    const World& world,
    const WorldState& state,
    StepInput input,
    FdMethod method,
    double step = 0.0,
    int threads = 1);

/// Difference oracle for the five blocks of StepJacobians::blocks(), in the
/// same order and with step and Ridders error estimates attached.
std::vector<NamedMatrix> differenceBlocks(
    const World& world,
    const WorldState& state,
    FdMethod method,
    double step = 0.0,
    int threads = 1);

/// Median wall-clock seconds per Jacobian. Speedups are difference time over
/// analytic time.
struct BenchmarkRow
{
  std::string scene;
  std::string jacobian;  ///< block name or "All"
  double analytic = 0.0;
  double central = 0.0;
  double ridders = 0.0;  ///< 0 when Ridders timing was skipped

  double centralSpeedup() const { return central / analytic; }
  double riddersSpeedup() const { return ridders > 0.0 ? ridders / analytic : 0.0; }
};

struct BenchmarkOptions
{
  int repetitions = 100;
  int warmup = 5;
  bool ridders = true;
  /// Rows to time: block names and/or "All". Empty times every block and
  /// "All".
  std::vector<std::string> jacobians;
};

/// Times one step's Jacobians on a single thread. The forward step is
/// shared: analytic timings start from its record, difference timings call
/// the same step per perturbation.
std::vector<BenchmarkRow> benchmarkScene(
    const std::string& scene,
    const World& world,
    const WorldState& state,
    const BenchmarkOptions& options = {});

/// Header: scene,jacobian,analytic,central,speedup,ridders,speedup
void writeBenchmark(std::ostream& os, const std::vector<BenchmarkRow>& rows);

}  // namespace nimble_mini
