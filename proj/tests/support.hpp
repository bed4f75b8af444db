#pragma once

// Test-only helpers: random fixtures and a small Ridders differentiator that
// is deliberately independent of the library's fdcheck module.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "nimble_mini/skeleton.hpp"
#include "nimble_mini/spatial.hpp"

namespace testing {

using namespace nimble_mini;

inline Vec3 randomVec3(std::mt19937& rng, double scale = 1.0)
{
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

inline Vec6 randomVec6(std::mt19937& rng, double scale = 1.0)
{
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec6 v;
  for (int i = 0; i < 6; ++i)
    v[i] = u(rng);
  return v;
}

inline Eigen::VectorXd randomVector(std::mt19937& rng, int n, double scale = 1.0)
{
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i)
    v[i] = u(rng);
  return v;
}

inline Transform randomTransform(std::mt19937& rng)
{
  std::normal_distribution<double> g;
  return Transform::fromQuaternion(g(rng), g(rng), g(rng), g(rng),
                                   randomVec3(rng, 2.0));
}

inline SpatialInertia randomInertia(std::mt19937& rng)
{
  std::uniform_real_distribution<double> u(0.5, 2.0);
  SpatialInertia in;
  in.mass = u(rng);
  in.com = randomVec3(rng, 0.3);
  const Mat3 R = randomTransform(rng).rotation;
  const Vec3 d(u(rng), u(rng), u(rng));
  in.rotational = 0.1 * R * d.asDiagonal() * R.transpose();
  in.rotational = 0.5 * (in.rotational + in.rotational.transpose()).eval();
  return in;
}

/// Random tree of n bodies with mixed revolute / prismatic joints.
inline Skeleton randomChain(std::mt19937& rng, int n, bool branching = true)
{
  std::vector<Body> bodies;
  for (int i = 0; i < n; ++i)
  {
    Body b;
    b.name = "b" + std::to_string(i);
    b.inertia = randomInertia(rng);
    if (i == 0)
      b.parent = -1;
    else if (branching)
      b.parent = std::uniform_int_distribution<int>(0, i - 1)(rng);
    else
      b.parent = i - 1;
    b.placement = randomTransform(rng);
    b.placement.translation *= 0.5;
    b.joint.kind = (rng() % 3 == 0) ? JointKind::Prismatic : JointKind::Revolute;
    b.joint.axis = randomVec3(rng).normalized();
    bodies.push_back(b);
  }
  return Skeleton(bodies, Vec3(0.0, -9.81, 0.0));
}

/// Planar pendulum chain in the x-y plane, revolute about z. Each link has a
/// point-like mass (tiny rotational inertia) at distance `length` along -y.
inline Skeleton planarChain(const std::vector<double>& masses,
                            const std::vector<double>& lengths,
                            double g = 9.81,
                            double pointInertia = 1e-9)
{
  std::vector<Body> bodies;
  for (size_t i = 0; i < masses.size(); ++i)
  {
    Body b;
    b.name = "link" + std::to_string(i);
    b.inertia.mass = masses[i];
    b.inertia.com = Vec3(0.0, -lengths[i], 0.0);
    b.inertia.rotational = pointInertia * Mat3::Identity();
    b.parent = static_cast<int>(i) - 1;
    b.placement = i == 0 ? Transform::identity()
                         : Transform::fromTranslation(
                               Vec3(0.0, -lengths[i - 1], 0.0));
    b.joint.kind = JointKind::Revolute;
    b.joint.axis = Vec3::UnitZ();
    bodies.push_back(b);
  }
  return Skeleton(bodies, Vec3(0.0, -g, 0.0));
}

/// Ridders' extrapolated central difference of a vector function, returned
/// column by column.
inline Eigen::MatrixXd riddersJacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x,
    double h0 = 1e-2)
{
  constexpr int kTableau = 10;
  constexpr double kCon = 1.4;
  constexpr double kCon2 = kCon * kCon;
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (int j = 0; j < x.size(); ++j)
  {
    std::vector<std::vector<Eigen::VectorXd>> a(
        kTableau, std::vector<Eigen::VectorXd>(kTableau));
    double h = h0 * std::max(1.0, std::abs(x[j]));
    double err = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best;
    auto diff = [&](double step) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      return Eigen::VectorXd((f(xp) - f(xm)) / (2.0 * step));
    };
    a[0][0] = diff(h);
    best = a[0][0];
    for (int i = 1; i < kTableau; ++i)
    {
      h /= kCon;
      a[0][i] = diff(h);
      double fac = kCon2;
      for (int k = 1; k <= i; ++k)
      {
        a[k][i] = (a[k - 1][i] * fac - a[k - 1][i - 1]) / (fac - 1.0);
        fac *= kCon2;
        const double e
            = std::max((a[k][i] - a[k - 1][i]).cwiseAbs().maxCoeff(),
                       (a[k][i] - a[k - 1][i - 1]).cwiseAbs().maxCoeff());
        if (e <= err)
        {
          err = e;
          best = a[k][i];
        }
      }
      if ((a[i][i] - a[i - 1][i - 1]).cwiseAbs().maxCoeff() >= 2.0 * err)
        break;
    }
    jac.col(j) = best;
  }
  return jac;
}

/// max |a - b| / max(max |b|, floor).
inline double relError(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                       double floor = 1e-3)
{
  if (a.size() == 0)
    return 0.0;
  return (a - b).cwiseAbs().maxCoeff()
         / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace testing

namespace testing {

/// Appends a free body: prismatic x, y, z then revolute x, y, z. Only the
/// last body carries `inertia`; returns its index.
inline int appendFreeBody(std::vector<nimble_mini::Body>& bodies,
                          const nimble_mini::SpatialInertia& inertia,
                          const std::string& name)
{
  using namespace nimble_mini;
  for (int k = 0; k < 6; ++k)
  {
    Body b;
    b.name = name + "_" + std::to_string(k);
    b.parent = k == 0 ? -1 : static_cast<int>(bodies.size()) - 1;
    b.joint.kind = k < 3 ? JointKind::Prismatic : JointKind::Revolute;
    b.joint.axis = Vec3::Unit(k % 3);
    if (k == 5)
      b.inertia = inertia;
    else
    {
      b.inertia.mass = 1e-3;
      b.inertia.rotational = Mat3::Identity() * 1e-5;
    }
    bodies.push_back(b);
  }
  return static_cast<int>(bodies.size()) - 1;
}

}  // namespace testing

#include "nimble_mini/lcp.hpp"
#include "nimble_mini/scene.hpp"

namespace testing {

inline std::string corpusPath(const std::string& name)
{
  return std::string(NIMBLE_MINI_CORPUS_DIR) + "/" + name + ".scene";
}

inline nimble_mini::SceneDescription corpusScene(const std::string& name)
{
  return nimble_mini::loadScene(corpusPath(name));
}

/// Contact-shaped problem: A = J M^-1 J^T with a random SPD M, some contacts
/// carrying two friction rows. Rank-deficient whenever m exceeds n.
inline nimble_mini::LcpProblem randomContactLcp(std::mt19937& rng, int maxRows, bool friction)
{
  std::uniform_int_distribution<int> dofs(2, 10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  using namespace nimble_mini;
  std::vector<LcpRow> rows;
  while (true)
  {
    const bool withFriction = friction && u(rng) < 0.6;
    const int need = withFriction ? 3 : 1;
    if (static_cast<int>(rows.size()) + need > maxRows)
      break;
    LcpRow normal;
    normal.contact = static_cast<int>(rows.size());
    const int link = static_cast<int>(rows.size());
    rows.push_back(normal);
    if (withFriction)
    {
      const double mu = 0.1 + 0.9 * u(rng);
      for (int d = 1; d <= 2; ++d)
        rows.push_back(LcpRow{link, mu, normal.contact, d});
    }
    if (u(rng) < 0.3)
      break;
  }
  const int m = static_cast<int>(rows.size());
  const int n = dofs(rng);
  const Eigen::MatrixXd B = randomVector(rng, n * n).reshaped(n, n);
  const Eigen::MatrixXd M = B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd J = randomVector(rng, m * n).reshaped(m, n);
  const Eigen::VectorXd qdot = randomVector(rng, n);
  const Eigen::VectorXd tau = randomVector(rng, n);
  const Eigen::VectorXd c = randomVector(rng, n, 3.0);
  return assemble(M, J, qdot, tau, c, 0.1, rows);
}

/// Lagrangian closed form of a planar double pendulum with point masses,
/// angles measured from the downward vertical.
struct DoublePendulumOracle
{
  double m1, m2, l1, l2, g;

  Eigen::Matrix2d mass(const Eigen::VectorXd& q) const
  {
    const double c = std::cos(q[1]);
    Eigen::Matrix2d M;
    M(0, 0) = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c;
    M(0, 1) = M(1, 0) = m2 * l2 * l2 + m2 * l1 * l2 * c;
    M(1, 1) = m2 * l2 * l2;
    return M;
  }

  Eigen::Vector2d bias(const Eigen::VectorXd& q, const Eigen::VectorXd& v) const
  {
    const double s = std::sin(q[1]);
    const double h = m2 * l1 * l2 * s;
    Eigen::Vector2d c;
    c[0] = -h * (2 * v[0] * v[1] + v[1] * v[1])
           + (m1 + m2) * g * l1 * std::sin(q[0])
           + m2 * g * l2 * std::sin(q[0] + q[1]);
    c[1] = h * v[0] * v[0] + m2 * g * l2 * std::sin(q[0] + q[1]);
    return c;
  }
};

}  // namespace testing
