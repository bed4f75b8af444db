#include "nimble_mini/fdcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <ostream>
#include <thread>

#include "nimble_mini/errors.hpp"
#include "nimble_mini/io.hpp"

namespace nimble_mini {

namespace {

Eigen::VectorXd evaluate(const VectorFunction& fn, const Eigen::VectorXd& x)
{
  Eigen::VectorXd y = fn(x);
  if (!y.allFinite())
    throw NonFinite("function returned a non-finite value");
  return y;
}

/// Runs body(j) for j in [0, count) on up to `threads` workers. The first
/// exception thrown by any worker is rethrown.
template <typename Body>
void forColumns(int count, int threads, const Body& body)
{
  threads = std::clamp(threads, 1, std::max(1, count));
  if (threads == 1)
  {
    for (int j = 0; j < count; ++j)
      body(j);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
  {
    pool.emplace_back([&, t] {
      try
      {
        for (int j = t; j < count; j += threads)
          body(j);
      }
      catch (...)
      {
        errors[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool)
    th.join();
  for (const auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

}  // namespace

Eigen::VectorXd relativeSteps(const Eigen::VectorXd& x, double scale)
{
  Eigen::VectorXd h(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    h[i] = scale * std::max(1.0, std::abs(x[i]));
  return h;
}

Eigen::MatrixXd centralDifference(
    const VectorFunction& fn,
    const Eigen::VectorXd& x,
    const Eigen::VectorXd& steps,
    int threads)
{
  if (steps.size() != x.size())
    throw ShapeMismatch("one step per coordinate is required");
  const Eigen::Index rows = evaluate(fn, x).size();
  Eigen::MatrixXd jac(rows, x.size());
  forColumns(static_cast<int>(x.size()), threads, [&](int j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += steps[j];
    xm[j] -= steps[j];
    const Eigen::VectorXd d = evaluate(fn, xp) - evaluate(fn, xm);
    if (d.size() != rows)
      throw ShapeMismatch("function output size changed between evaluations");
    jac.col(j) = d / (2.0 * steps[j]);
  });
  return jac;
}

Eigen::MatrixXd centralDifference(
    const VectorFunction& fn, const Eigen::VectorXd& x, double h, int threads)
{
  const Eigen::VectorXd steps = h > 0.0
                                    ? Eigen::VectorXd::Constant(x.size(), h)
                                    : relativeSteps(x, kCentralStep);
  return centralDifference(fn, x, steps, threads);
}

RiddersResult ridders(
    const VectorFunction& fn,
    const Eigen::VectorXd& x,
    const Eigen::VectorXd& initialSteps,
    int tableau,
    int threads)
{
  if (initialSteps.size() != x.size())
    throw ShapeMismatch("one step per coordinate is required");
  tableau = std::max(2, tableau);
  constexpr double kCon2 = kRiddersContraction * kRiddersContraction;
  constexpr double kSafe = 2.0;
  // Relative rounding of one function evaluation, with margin.
  constexpr double kRoundoff = 4.0 * std::numeric_limits<double>::epsilon();
  const Eigen::Index rows = evaluate(fn, x).size();
  RiddersResult out;
  out.jacobian.resize(rows, x.size());
  out.error.resize(rows, x.size());
  out.step.resize(rows, x.size());

  forColumns(static_cast<int>(x.size()), threads, [&](int j) {
    // noise[i]: rounding error of the i-th difference, amplified below.
    std::vector<Eigen::VectorXd> noise(static_cast<size_t>(tableau));
    auto diff = [&](double h, int i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const Eigen::VectorXd fp = evaluate(fn, xp), fm = evaluate(fn, xm);
      if (fp.size() != rows || fm.size() != rows)
        throw ShapeMismatch("function output size changed between evaluations");
      // Divide by the representable step so x +- h rounding cancels.
      const double span = xp[j] - xm[j];
      noise[static_cast<size_t>(i)]
          = kRoundoff * (fp.cwiseAbs() + fm.cwiseAbs()) / span;
      return Eigen::VectorXd((fp - fm) / span);
    };
    // a[k][i]: k extrapolation orders applied to the i-th step.
    std::vector<std::vector<Eigen::VectorXd>> a(
        static_cast<size_t>(tableau),
        std::vector<Eigen::VectorXd>(static_cast<size_t>(tableau)));
    Eigen::VectorXd err
        = Eigen::VectorXd::Constant(rows, std::numeric_limits<double>::infinity());
    std::vector<bool> active(static_cast<size_t>(rows), true);
    double h = initialSteps[j];
    a[0][0] = diff(h, 0);
    out.jacobian.col(j) = a[0][0];
    out.step.col(j).setConstant(h);
    for (int i = 1; i < tableau; ++i)
    {
      h /= kRiddersContraction;
      a[0][static_cast<size_t>(i)] = diff(h, i);
      double fac = kCon2;
      for (int k = 1; k <= i; ++k)
      {
        auto& cur = a[static_cast<size_t>(k)][static_cast<size_t>(i)];
        const auto& lower = a[static_cast<size_t>(k - 1)][static_cast<size_t>(i)];
        const auto& prev = a[static_cast<size_t>(k - 1)][static_cast<size_t>(i - 1)];
        cur = (lower * fac - prev) / (fac - 1.0);
        fac *= kCon2;
        for (Eigen::Index e = 0; e < rows; ++e)
        {
          if (!active[static_cast<size_t>(e)])
            continue;
          // Each extrapolation order at most triples the rounding error.
          const double floor
              = noise[static_cast<size_t>(i)][e] * std::pow(3.0, k);
          const double errt = std::max({std::abs(cur[e] - lower[e]),
                                        std::abs(cur[e] - prev[e]), floor});
          if (errt <= err[e])
          {
            err[e] = errt;
            out.jacobian(e, j) = cur[e];
            out.step(e, j) = h;
          }
        }
      }
      bool any = false;
      const auto& diag = a[static_cast<size_t>(i)][static_cast<size_t>(i)];
      const auto& diagPrev = a[static_cast<size_t>(i - 1)][static_cast<size_t>(i - 1)];
      for (Eigen::Index e = 0; e < rows; ++e)
      {
        if (active[static_cast<size_t>(e)]
            && std::abs(diag[e] - diagPrev[e]) >= kSafe * err[e])
          active[static_cast<size_t>(e)] = false;
        any = any || active[static_cast<size_t>(e)];
      }
      if (!any)
        break;
    }
    out.error.col(j) = err;
  });
  return out;
}

RiddersResult ridders(
    const VectorFunction& fn, const Eigen::VectorXd& x, double h0, int tableau,
    int threads)
{
  const Eigen::VectorXd steps = h0 > 0.0
                                    ? Eigen::VectorXd::Constant(x.size(), h0)
                                    : relativeSteps(x, kRiddersStep);
  return ridders(fn, x, steps, tableau, threads);
}

bool DiffReport::pass() const
{
  return std::all_of(blocks.begin(), blocks.end(),
                     [](const BlockReport& b) { return b.pass; });
}

std::string DiffReport::firstFailure() const
{
  for (const auto& b : blocks)
    if (!b.pass)
      return b.name + " (" + std::to_string(b.row) + ", " + std::to_string(b.col)
             + ")";
  return {};
}

void DiffReport::write(std::ostream& os) const
{
  os << "block,max_abs,max_rel,row,col,step,estimate,tolerance,pass\n";
  for (const auto& b : blocks)
  {
    os << b.name << ',' << formatDouble(b.maxAbs) << ',' << formatDouble(b.maxRel)
       << ',' << b.row << ',' << b.col << ',' << formatDouble(b.step) << ','
       << formatDouble(b.estimate) << ',' << formatDouble(b.tolerance) << ','
       << (b.pass ? "pass" : "fail") << '\n';
  }
}

DiffReport compare(
    const std::vector<NamedMatrix>& analytic,
    const std::vector<NamedMatrix>& oracle,
    double tolerance,
    const std::map<std::string, double>& overrides)
{
  if (analytic.size() != oracle.size())
    throw ShapeMismatch("analytic and oracle block counts differ");
  DiffReport report;
  for (size_t k = 0; k < analytic.size(); ++k)
  {
    const NamedMatrix& a = analytic[k];
    const NamedMatrix& o = oracle[k];
    if (a.name != o.name)
      throw ShapeMismatch("block " + std::to_string(k) + " is '" + a.name
                          + "' analytically but '" + o.name + "' in the oracle");
    if (a.value.rows() != o.value.rows() || a.value.cols() != o.value.cols())
      throw ShapeMismatch("block '" + a.name + "' is "
                          + std::to_string(a.value.rows()) + "x"
                          + std::to_string(a.value.cols()) + " but the oracle is "
                          + std::to_string(o.value.rows()) + "x"
                          + std::to_string(o.value.cols()));
    if (!a.value.allFinite() || !o.value.allFinite())
      throw NonFinite("block '" + a.name + "' has non-finite entries");
    BlockReport b;
    b.name = a.name;
    b.step = o.step;
    b.estimate = o.estimate;
    const auto it = overrides.find(a.name);
    b.tolerance = it != overrides.end() ? it->second : tolerance;
    if (a.value.size() > 0)
    {
      Eigen::Index r = 0, c = 0;
      b.maxAbs = (a.value - o.value).cwiseAbs().maxCoeff(&r, &c);
      b.row = static_cast<int>(r);
      b.col = static_cast<int>(c);
      b.maxRel = b.maxAbs
                 / std::max(o.value.cwiseAbs().maxCoeff(), kRelativeFloor);
    }
    b.pass = b.maxRel <= b.tolerance;
    report.blocks.push_back(b);
  }
  return report;
}

int threadCap()
{
  const int hardware = static_cast<int>(std::thread::hardware_concurrency());
  const char* env = std::getenv("NIMBLE_MINI_THREADS");
  if (!env)
    return std::max(1, hardware);
  return std::max(1, std::atoi(env));
}

}  // namespace nimble_mini
