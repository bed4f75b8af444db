#include "nimble_mini/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

namespace {

using Mat6X = Eigen::Matrix<double, 6, Eigen::Dynamic>;

void checkSize(const Eigen::VectorXd& v, int n, const char* what)
{
  if (v.size() != n)
    throw DimensionMismatch(
        std::string(what) + " has length " + std::to_string(v.size())
        + ", expected " + std::to_string(n));
}

// Matrix of v -> dualBracket(v, h), which is linear in v.
Mat6 dualBracketInFirst(const SpatialForce& h)
{
  Mat6 out = Mat6::Zero();
  const Mat3 m = hat(h.head<3>());
  const Mat3 f = hat(h.tail<3>());
  out.topLeftCorner<3, 3>() = -m;
  out.topRightCorner<3, 3>() = -f;
  out.bottomLeftCorner<3, 3>() = -f;
  return out;
}

}  // namespace

//==============================================================================
void WorldState::validate(int dofs) const
{
  checkSize(q, dofs, "q");
  checkSize(qdot, dofs, "qdot");
  checkSize(tau, dofs, "tau");
  if (!q.allFinite() || !qdot.allFinite() || !tau.allFinite())
    throw NonFinite("state contains non-finite entries");
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw NonFinite("timestep must be positive and finite");
}

//==============================================================================
Kinematics forwardKinematics(const Skeleton& skel, const Eigen::VectorXd& q)
{
  const int n = skel.dofs();
  checkSize(q, n, "q");
  Kinematics kin;
  kin.local.resize(static_cast<size_t>(n));
  kin.world.resize(static_cast<size_t>(n));
  kin.worldScrews.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
  {
    const auto k = static_cast<size_t>(i);
    const SpatialMotion& s = skel.localScrew(i);
    kin.local[k] = skel.body(i).placement * expTwist(s * q[i]);
    const int p = skel.parent(i);
    kin.world[k] = p < 0 ? kin.local[k]
                         : kin.world[static_cast<size_t>(p)] * kin.local[k];
    kin.worldScrews[k] = adjointApply(kin.world[k], s);
  }
  return kin;
}

//==============================================================================
Eigen::MatrixXd massMatrix(const Skeleton& skel, const Eigen::VectorXd& q)
{
  const int n = skel.dofs();
  const Kinematics kin = forwardKinematics(skel, q);
  std::vector<Mat6> composite(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    composite[static_cast<size_t>(i)] = skel.body(i).inertia.matrix();

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int i = n - 1; i >= 0; --i)
  {
    const auto k = static_cast<size_t>(i);
    const Mat6 X = adjoint(kin.local[k].inverse());
    const int p = skel.parent(i);
    if (p >= 0)
      composite[static_cast<size_t>(p)] += X.transpose() * composite[k] * X;

    SpatialForce f = composite[k] * skel.localScrew(i);
    M(i, i) = skel.localScrew(i).dot(f);
    int j = i;
    while (skel.parent(j) >= 0)
    {
      f = dualAdjointApply(kin.local[static_cast<size_t>(j)], f);
      j = skel.parent(j);
      M(i, j) = M(j, i) = skel.localScrew(j).dot(f);
    }
  }
  return M;
}

//==============================================================================
Eigen::VectorXd inverseDynamics(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& qddot,
    bool withGravity)
{
  const int n = skel.dofs();
  checkSize(qdot, n, "qdot");
  checkSize(qddot, n, "qddot");
  const Kinematics kin = forwardKinematics(skel, q);

  SpatialMotion baseAcc = SpatialMotion::Zero();
  if (withGravity)
    baseAcc.tail<3>() = -skel.gravity();

  std::vector<SpatialMotion> V(static_cast<size_t>(n)), A(V.size());
  std::vector<SpatialForce> F(V.size());
  for (int i = 0; i < n; ++i)
  {
    const auto k = static_cast<size_t>(i);
    const int p = skel.parent(i);
    const SpatialMotion& s = skel.localScrew(i);
    const Transform& T = kin.local[k];
    if (p < 0)
    {
      V[k] = s * qdot[i];
      A[k] = adjointInverseApply(T, baseAcc) + s * qddot[i];
    }
    else
    {
      const auto pk = static_cast<size_t>(p);
      V[k] = adjointInverseApply(T, V[pk]) + s * qdot[i];
      A[k] = adjointInverseApply(T, A[pk]) + lieBracket(V[k], s) * qdot[i]
             + s * qddot[i];
    }
    const Mat6 I = skel.body(i).inertia.matrix();
    F[k] = I * A[k] + dualBracket(V[k], I * V[k]);
  }

  Eigen::VectorXd tau(n);
  for (int i = n - 1; i >= 0; --i)
  {
    const auto k = static_cast<size_t>(i);
    tau[i] = skel.localScrew(i).dot(F[k]);
    const int p = skel.parent(i);
    if (p >= 0)
      F[static_cast<size_t>(p)] += dualAdjointApply(kin.local[k], F[k]);
  }
  return tau;
}

//==============================================================================
Eigen::VectorXd coriolisGravity(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& qdot)
{
  return inverseDynamics(
      skel, q, qdot, Eigen::VectorXd::Zero(skel.dofs()), true);
}

//==============================================================================
InverseDynamicsDerivatives inverseDynamicsDerivatives(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const Eigen::VectorXd& qdot,
    const Eigen::VectorXd& qddot,
    bool withGravity)
{
  const int n = skel.dofs();
  checkSize(qdot, n, "qdot");
  checkSize(qddot, n, "qddot");
  const Kinematics kin = forwardKinematics(skel, q);
  const auto nb = static_cast<size_t>(n);

  SpatialMotion baseAcc = SpatialMotion::Zero();
  if (withGravity)
    baseAcc.tail<3>() = -skel.gravity();

  // Partials over (q, qdot) side by side: columns 0..n-1 for q, n..2n-1
  // for qdot. Parents precede children, so motion partials of body i vanish
  // outside columns 0..i of each half and force partials outside its
  // ancestors and subtree; width[i] bounds the columns that can be nonzero.
  std::vector<SpatialMotion> V(nb), A(nb);
  std::vector<SpatialForce> F(nb);
  std::vector<Mat6X> dV(nb), dA(nb), dF(nb);
  std::vector<Mat6> X(nb);
  std::vector<int> width(nb);
  // Applies f to the leading w columns of each half of m. Products use
  // lazyProduct: the blocks are too small for the blocked GEMM path.
  const auto halves = [n](Mat6X& m, int w, const auto& f) {
    f(m.middleCols(0, w), 0);
    f(m.middleCols(n, w), n);
  };

  for (int i = 0; i < n; ++i)
  {
    const auto k = static_cast<size_t>(i);
    const int p = skel.parent(i);
    const SpatialMotion& s = skel.localScrew(i);
    const Mat6 adS = adMatrix(s);
    X[k] = adjoint(kin.local[k].inverse());

    const int w = i + 1;
    width[k] = w;
    SpatialMotion XVp = SpatialMotion::Zero();
    SpatialMotion XAp;
    dV[k] = Mat6X::Zero(6, 2 * n);
    dA[k] = Mat6X::Zero(6, 2 * n);
    if (p < 0)
      XAp = X[k] * baseAcc;
    else
    {
      const auto pk = static_cast<size_t>(p);
      XVp = X[k] * V[pk];
      XAp = X[k] * A[pk];
      halves(dV[k], p + 1, [&](auto out, int c) {
        out.noalias() = X[k].lazyProduct(dV[pk].middleCols(c, p + 1));
      });
      halves(dA[k], p + 1, [&](auto out, int c) {
        out.noalias() = X[k].lazyProduct(dA[pk].middleCols(c, p + 1));
      });
    }
    // d Ad_{T^-1} / dq_i = -ad_S Ad_{T^-1}.
    dV[k].col(i) -= adS * XVp;
    dV[k].col(n + i) += s;
    dA[k].col(i) -= adS * XAp;

    V[k] = XVp + s * qdot[i];
    A[k] = XAp + lieBracket(V[k], s) * qdot[i] + s * qddot[i];
    // d/dx [V, S] qdot_i = -ad_S dV/dx qdot_i.
    const Mat6 adSq = adS * qdot[i];
    halves(dA[k], w, [&](auto out, int c) {
      out.noalias() -= adSq.lazyProduct(dV[k].middleCols(c, w));
    });
    dA[k].col(n + i) += lieBracket(V[k], s);

    const Mat6 I = skel.body(i).inertia.matrix();
    const SpatialForce h = I * V[k];
    const Mat6 dFdV = dualBracketInFirst(h) - adMatrix(V[k]).transpose() * I;
    F[k] = I * A[k] + dualBracket(V[k], h);
    dF[k] = Mat6X::Zero(6, 2 * n);
    halves(dF[k], w, [&](auto out, int c) {
      out.noalias() = I.lazyProduct(dA[k].middleCols(c, w));
      out.noalias() += dFdV.lazyProduct(dV[k].middleCols(c, w));
    });
  }

  InverseDynamicsDerivatives out;
  out.tau.resize(n);
  out.dq = Eigen::MatrixXd::Zero(n, n);
  out.dqdot = Eigen::MatrixXd::Zero(n, n);
  for (int i = n - 1; i >= 0; --i)
  {
    const auto k = static_cast<size_t>(i);
    const SpatialMotion& s = skel.localScrew(i);
    out.tau[i] = s.dot(F[k]);
    const int w = width[k];
    out.dq.row(i).head(w).noalias() = s.transpose() * dF[k].middleCols(0, w);
    out.dqdot.row(i).head(w).noalias() = s.transpose() * dF[k].middleCols(n, w);
    const int p = skel.parent(i);
    if (p < 0)
      continue;
    const auto pk = static_cast<size_t>(p);
    const Mat6 XT = X[k].transpose();
    F[pk] += XT * F[k];
    halves(dF[pk], w, [&](auto out, int c) {
      out.noalias() += XT.lazyProduct(dF[k].middleCols(c, w));
    });
    width[pk] = std::max(width[pk], w);
    dF[pk].col(i) += XT * dualBracket(s, F[k]);
  }
  return out;
}

//==============================================================================
ArticulatedCache::ArticulatedCache(
    const Skeleton& skel, const Eigen::VectorXd& q)
  : mSkel(&skel), mKin(forwardKinematics(skel, q))
{
  const int n = skel.dofs();
  const auto nb = static_cast<size_t>(n);
  mAdInv.resize(nb);
  mArtInertia.resize(nb);
  mIS.resize(nb);
  mPsi.resize(nb);
  for (int i = 0; i < n; ++i)
  {
    const auto k = static_cast<size_t>(i);
    mAdInv[k] = adjoint(mKin.local[k].inverse());
    mArtInertia[k] = skel.body(i).inertia.matrix();
  }
  for (int i = n - 1; i >= 0; --i)
  {
    const auto k = static_cast<size_t>(i);
    const SpatialMotion& s = skel.localScrew(i);
    mIS[k] = mArtInertia[k] * s;
    const double d = s.dot(mIS[k]);
    if (!(d > 1e-14 * (1.0 + mArtInertia[k].norm())) || !std::isfinite(d))
      throw SingularMass(
          "articulated pivot of joint " + std::to_string(i)
          + " is not positive");
    mPsi[k] = 1.0 / d;
    const int p = skel.parent(i);
    if (p >= 0)
    {
      const Mat6 Pi = mArtInertia[k] - mIS[k] * mPsi[k] * mIS[k].transpose();
      mArtInertia[static_cast<size_t>(p)]
          += mAdInv[k].transpose() * Pi * mAdInv[k];
    }
  }
}

//==============================================================================
Eigen::VectorXd ArticulatedCache::minvTimes(const Eigen::VectorXd& z) const
{
  const int n = mSkel->dofs();
  checkSize(z, n, "z");
  const auto nb = static_cast<size_t>(n);
  std::vector<SpatialForce> bias(nb, SpatialForce::Zero());
  std::vector<double> alpha(nb);
  for (int i = n - 1; i >= 0; --i)
  {
    const auto k = static_cast<size_t>(i);
    alpha[k] = z[i] - mSkel->localScrew(i).dot(bias[k]);
    const int p = mSkel->parent(i);
    if (p >= 0)
    {
      const SpatialForce beta = bias[k] + mIS[k] * (mPsi[k] * alpha[k]);
      bias[static_cast<size_t>(p)] += mAdInv[k].transpose() * beta;
    }
  }

  Eigen::VectorXd x(n);
  std::vector<SpatialMotion> acc(nb);
  for (int i = 0; i < n; ++i)
  {
    const auto k = static_cast<size_t>(i);
    const int p = mSkel->parent(i);
    const SpatialMotion a = p < 0 ? SpatialMotion::Zero().eval()
                                  : (mAdInv[k] * acc[static_cast<size_t>(p)])
                                        .eval();
    x[i] = mPsi[k] * (alpha[k] - mIS[k].dot(a));
    acc[k] = a + mSkel->localScrew(i) * x[i];
  }
  return x;
}

//==============================================================================
Eigen::MatrixXd ArticulatedCache::minv() const
{
  const int n = mSkel->dofs();
  Eigen::MatrixXd out(n, n);
  for (int j = 0; j < n; ++j)
    out.col(j) = minvTimes(Eigen::VectorXd::Unit(n, j));
  return out;
}

//==============================================================================
Eigen::VectorXd minvTimes(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& z)
{
  return ArticulatedCache(skel, q).minvTimes(z);
}

//==============================================================================
Eigen::MatrixXd dMinvZdq(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& z)
{
  const int n = skel.dofs();
  const ArticulatedCache cache(skel, q);
  const Eigen::VectorXd x = cache.minvTimes(z);
  // d(M x)/dq at fixed x is the q-partial of zero-velocity inverse dynamics.
  const Eigen::MatrixXd dMx
      = inverseDynamicsDerivatives(
            skel, q, Eigen::VectorXd::Zero(n), x, false)
            .dq;
  Eigen::MatrixXd out(n, n);
  for (int j = 0; j < n; ++j)
    out.col(j) = -cache.minvTimes(dMx.col(j));
  return out;
}

//==============================================================================
CoriolisDerivatives dCoriolis(
    const Skeleton& skel, const Eigen::VectorXd& q, const Eigen::VectorXd& qdot)
{
  auto d = inverseDynamicsDerivatives(
      skel, q, qdot, Eigen::VectorXd::Zero(skel.dofs()), true);
  return {std::move(d.dq), std::move(d.dqdot)};
}

//==============================================================================
WorldState unconstrainedStep(
    const Skeleton& skel, const WorldState& state, const Eigen::VectorXd& jtf)
{
  const int n = skel.dofs();
  state.validate(n);
  checkSize(jtf, n, "joint impulse");
  const Eigen::VectorXd c = coriolisGravity(skel, state.q, state.qdot);
  const ArticulatedCache cache(skel, state.q);
  WorldState next = state;
  next.qdot = state.qdot + cache.minvTimes(-state.dt * (c - state.tau) + jtf);
  next.q = state.q + state.dt * next.qdot;
  return next;
}

}  // namespace nimble_mini
