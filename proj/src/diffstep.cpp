#include "nimble_mini/diffstep.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nimble_mini/dynamics.hpp"
#include "nimble_mini/errors.hpp"

namespace nimble_mini {

namespace {

/// dq'/dx and dv/dx at fixed impulses, where v = J qdot' + restitution
/// offset is the LCP row velocity.
struct Linearization
{
  Eigen::MatrixXd Vq, Vqdot, Vtau, Vmu;
  Eigen::MatrixXd dvq, dvqdot, dvtau, dvmu;
};

/// Inertial-parameter steps that keep every perturbed body valid: a fraction
/// of the mass, of the com scale and of the smallest principal inertia.
Eigen::VectorXd inertialSteps(const Skeleton& skel)
{
  constexpr double kFraction = 1e-2;
  Eigen::VectorXd h(Skeleton::kParamsPerBody * skel.dofs());
  for (int i = 0; i < skel.dofs(); ++i)
  {
    const SpatialInertia& in = skel.body(i).inertia;
    const double lambda = Eigen::SelfAdjointEigenSolver<Mat3>(
                              in.rotational, Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .minCoeff();
    auto seg = h.segment<Skeleton::kParamsPerBody>(Skeleton::kParamsPerBody * i);
    seg[0] = kFraction * in.mass;
    seg.segment<3>(1).setConstant(kFraction * std::max(0.1, in.com.norm()));
    // Off-diagonal steps of lambda / 10 keep the perturbed matrix SPD.
    seg.segment<6>(4).setConstant(0.1 * kFraction * lambda);
  }
  return h;
}

/// Input groups a linearization covers.
struct Parts
{
  bool q = true;
  bool qdot = true;
  bool tau = true;
  bool mu = false;
};

Linearization linearize(const World& world, const StepRecord& rec, const Parts& parts)
{
  const Skeleton& skel = world.skeleton;
  const int n = skel.dofs();
  const int m = rec.rows();
  const double dt = rec.state.dt;
  const Eigen::VectorXd& q = rec.state.q;
  const Eigen::VectorXd& qdot = rec.state.qdot;
  const Eigen::VectorXd accel = (rec.next.qdot - qdot) / dt;

  // With a = (qdot' - qdot) / dt, dt ID(q, qdot, a) = dt tau + J^T f, so at
  // fixed f: dqdot' = M^-1 (-dt dID + d(J^T f)).
  Linearization lin;
  if (parts.q || parts.qdot)
  {
    const InverseDynamicsDerivatives id
        = inverseDynamicsDerivatives(skel, q, qdot, accel, true);
    if (parts.q)
      lin.Vq = -dt * rec.Minv * id.dq;
    if (parts.qdot)
      lin.Vqdot = Eigen::MatrixXd::Identity(n, n) - dt * rec.Minv * id.dqdot;
  }
  if (parts.tau)
    lin.Vtau = dt * rec.Minv;

  if (parts.mu)
  {
    const VectorFunction inverse = [&](const Eigen::VectorXd& mu) {
      return inverseDynamics(skel.withInertialParams(mu), q, qdot, accel, true);
    };
    const Eigen::VectorXd mu = skel.inertialParams();
    const Eigen::MatrixXd dId = ridders(inverse, mu, inertialSteps(skel)).jacobian;
    lin.Vmu = -dt * rec.Minv * dId;
  }

  if (parts.q)
  {
    lin.dvq = Eigen::MatrixXd::Zero(m, n);
    if (m > 0)
    {
      const auto grads = contactGradients(skel, rec.kinematics, rec.contacts);
      lin.Vq += rec.Minv
                * dJtfDq(skel, rec.kinematics, rec.contacts, grads,
                         rec.contactImpulses());
      const Eigen::MatrixXd dJwNext
          = dJwDq(skel, rec.kinematics, rec.contacts, grads, rec.next.qdot);
      Eigen::MatrixXd dJw;
      if (rec.bouncing())
        dJw = dJwDq(skel, rec.kinematics, rec.contacts, grads, qdot);
      for (int r = 0; r < m; ++r)
      {
        const int jr = rec.jacobianRows[static_cast<size_t>(r)];
        lin.dvq.row(r) = dJwNext.row(jr);
        if (rec.restitution[r] > 0.0)
          lin.dvq.row(r) += rec.restitution[r] * dJw.row(jr);
      }
    }
    lin.dvq += rec.J * lin.Vq;
  }
  if (parts.qdot)
  {
    lin.dvqdot = rec.J * lin.Vqdot;
    lin.dvqdot += rec.restitution.asDiagonal() * rec.J;
  }
  if (parts.tau)
    lin.dvtau = rec.J * lin.Vtau;
  if (parts.mu)
    lin.dvmu = rec.J * lin.Vmu;
  return lin;
}

/// m x m map from row velocity changes at fixed f to impulse changes.
Eigen::MatrixXd impulseMap(const LcpSolution& s, int m)
{
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m, m);
  const int nc = static_cast<int>(s.clamping.size());
  for (int p = 0; p < nc; ++p)
    for (int c = 0; c < nc; ++c)
      K(s.clamping[static_cast<size_t>(p)], s.clamping[static_cast<size_t>(c)])
          = -s.AeffPinv(p, c);
  for (size_t k = 0; k < s.bounded.size(); ++k)
    for (int p = 0; p < nc; ++p)
      if (s.E(static_cast<Eigen::Index>(k), p) != 0.0)
        K.row(s.bounded[k])
            += s.E(static_cast<Eigen::Index>(k), p) * K.row(s.clamping[static_cast<size_t>(p)]);
  return K;
}

std::vector<RowClass> resolvedClasses(
    const StepRecord& rec, const JacobianOptions& options)
{
  if (options.classes)
  {
    if (static_cast<int>(options.classes->size()) != rec.rows())
      throw DimensionMismatch("forced classes do not match the LCP rows");
    if (std::find(options.classes->begin(), options.classes->end(), RowClass::Tied)
        != options.classes->end())
      throw TiedPresent("forced classes contain Tied rows");
    return *options.classes;
  }
  if (rec.solution.hasTied())
  {
    if (!options.ties)
      throw TiedPresent("the contact solution has tied rows; choose a subgradient policy");
    return tiedSubgradient(rec.lcp, rec.solution, *options.ties);
  }
  return rec.solution.classes;
}

StepJacobians assembleJacobians(
    const StepRecord& rec,
    const Linearization& lin,
    const std::vector<RowClass>& classes,
    const JacobianOptions& options)
{
  const int n = static_cast<int>(rec.state.q.size());
  const int m = rec.rows();
  const double dt = rec.state.dt;
  StepJacobians jac;
  jac.dt = dt;
  const LcpSolution structure = solveClasses(rec.lcp, classes);
  jac.classes = structure.basis;
  const Eigen::MatrixXd K = impulseMap(structure, m);
  jac.df_dq = K * lin.dvq;
  jac.df_dqdot = K * lin.dvqdot;
  jac.df_dtau = K * lin.dvtau;
  const Eigen::MatrixXd MinvJt = rec.Minv * rec.J.transpose();
  jac.dqdotNext_dq = lin.Vq + MinvJt * jac.df_dq;
  jac.dqdotNext_dqdot = lin.Vqdot + MinvJt * jac.df_dqdot;
  jac.dqdotNext_dtau = lin.Vtau + MinvJt * jac.df_dtau;
  if (lin.Vmu.size() > 0)
    jac.dqdotNext_dmu = lin.Vmu + MinvJt * (K * lin.dvmu);

  jac.dqNext_dq = Eigen::MatrixXd::Identity(n, n) + dt * jac.dqdotNext_dq;
  jac.dqNext_dqdot = dt * jac.dqdotNext_dqdot;
  jac.dqNext_dtau = dt * jac.dqdotNext_dtau;
  if (options.bouncePositions && rec.bouncing())
  {
    const BouncePositions b = bouncePositionJacobians(bounceRows(rec), n, dt);
    jac.dqNext_dq = b.dq;
    jac.dqNext_dqdot = b.dqdot;
    jac.bounceCorrected = true;
  }
  return jac;
}

}  // namespace

std::vector<RowClass> tiedSubgradient(
    const LcpProblem& problem,
    const LcpSolution& solution,
    const TieResolution& resolution)
{
  std::vector<RowClass> out = solution.classes;
  std::mt19937_64 rng(resolution.seed);
  for (int i = 0; i < problem.size(); ++i)
  {
    RowClass& c = out[static_cast<size_t>(i)];
    if (c != RowClass::Tied)
      continue;
    bool clamp = resolution.policy == TiePolicy::AllClamping;
    if (resolution.policy == TiePolicy::Random)
      clamp = (rng() & 1u) != 0;
    if (clamp)
      c = RowClass::Clamping;
    else if (problem.rows[static_cast<size_t>(i)].isNormal())
      c = RowClass::Separating;
    else
      c = solution.f[i] >= 0.0 ? RowClass::BoundedPlus : RowClass::BoundedMinus;
  }
  return out;
}

Eigen::MatrixXd lcpImpulseJacobian(
    const LcpProblem& problem,
    const LcpSolution& solution,
    const std::vector<Eigen::MatrixXd>& dA,
    const Eigen::MatrixXd& db,
    const std::optional<std::vector<RowClass>>& classes)
{
  const int m = problem.size();
  const std::vector<RowClass>& cls = classes ? *classes : solution.classes;
  if (static_cast<int>(cls.size()) != m || solution.f.size() != m)
    throw DimensionMismatch("classes or impulses do not match the LCP");
  if (std::find(cls.begin(), cls.end(), RowClass::Tied) != cls.end())
    throw TiedPresent("the classification has tied rows; choose a subgradient policy");
  if (db.rows() != m || static_cast<Eigen::Index>(dA.size()) != db.cols())
    throw DimensionMismatch("one dA and one db column are required per variable");

  const LcpSolution s = solveClasses(problem, cls);
  const double scale = std::max(1.0, solution.f.cwiseAbs().maxCoeff());
  if ((s.f - solution.f).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw StaleClassification("the classification does not reproduce the impulses");

  const int nc = static_cast<int>(s.clamping.size());
  const int nb = static_cast<int>(s.bounded.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, db.cols());
  if (nc == 0)
    return out;
  Eigen::VectorXd fC(nc);
  for (int p = 0; p < nc; ++p)
    fC[p] = s.f[s.clamping[static_cast<size_t>(p)]];
  const Eigen::MatrixXd nullProjector
      = Eigen::MatrixXd::Identity(nc, nc) - s.AeffPinv * s.Aeff;
  const Eigen::VectorXd pinvTf = s.AeffPinv.transpose() * fC;

  for (Eigen::Index x = 0; x < db.cols(); ++x)
  {
    const Eigen::MatrixXd& d = dA[static_cast<size_t>(x)];
    if (d.rows() != m || d.cols() != m)
      throw DimensionMismatch("dA must be m x m");
    Eigen::MatrixXd dAeff(nc, nc);
    Eigen::VectorXd dbC(nc);
    for (int r = 0; r < nc; ++r)
    {
      const int i = s.clamping[static_cast<size_t>(r)];
      dbC[r] = db(i, x);
      for (int c = 0; c < nc; ++c)
        dAeff(r, c) = d(i, s.clamping[static_cast<size_t>(c)]);
      for (int k = 0; k < nb; ++k)
        dAeff.row(r) += d(i, s.bounded[static_cast<size_t>(k)]) * s.E.row(k);
    }
    const Eigen::VectorXd dfC = -s.AeffPinv * (dAeff * fC + dbC)
                                + nullProjector * (dAeff.transpose() * pinvTf);
    for (int p = 0; p < nc; ++p)
      out(s.clamping[static_cast<size_t>(p)], x) = dfC[p];
    const Eigen::VectorXd dfB = s.E * dfC;
    for (int k = 0; k < nb; ++k)
      out(s.bounded[static_cast<size_t>(k)], x) = dfB[k];
  }
  return out;
}

std::vector<NamedMatrix> StepJacobians::blocks() const
{
  std::vector<NamedMatrix> out{{kBlockDqDq, dqNext_dq},
                               {kBlockDqDqdot, dqNext_dqdot},
                               {kBlockDqdotDq, dqdotNext_dq},
                               {kBlockDqdotDqdot, dqdotNext_dqdot},
                               {kBlockDqdotDtau, dqdotNext_dtau}};
  if (dqdotNext_dmu.size() > 0)
    out.push_back({kBlockDqdotDmu, dqdotNext_dmu});
  return out;
}

StepJacobians stepJacobians(
    const World& world, const StepRecord& record, const JacobianOptions& options)
{
  const std::vector<RowClass> classes = resolvedClasses(record, options);
  Parts parts;
  parts.mu = options.inertialParams;
  const Linearization lin = linearize(world, record, parts);
  return assembleJacobians(record, lin, classes, options);
}

Eigen::MatrixXd stepJacobianBlock(
    const World& world,
    const StepRecord& record,
    const std::string& block,
    const JacobianOptions& options)
{
  const int n = world.dofs();
  const double dt = record.state.dt;
  const bool position = block == kBlockDqDq || block == kBlockDqDqdot;
  if (position && options.bouncePositions && record.bouncing())
  {
    const BouncePositions b = bouncePositionJacobians(bounceRows(record), n, dt);
    return block == kBlockDqDq ? b.dq : b.dqdot;
  }
  Parts parts{false, false, false, false};
  if (block == kBlockDqDq || block == kBlockDqdotDq)
    parts.q = true;
  else if (block == kBlockDqDqdot || block == kBlockDqdotDqdot)
    parts.qdot = true;
  else if (block == kBlockDqdotDtau)
    parts.tau = true;
  else if (block == kBlockDqdotDmu)
    parts.mu = true;
  else
    throw ShapeMismatch("unknown Jacobian block '" + block + "'");
  const Linearization lin = linearize(world, record, parts);
  const Eigen::MatrixXd& V = parts.q ? lin.Vq : parts.qdot ? lin.Vqdot : parts.tau ? lin.Vtau : lin.Vmu;
  const Eigen::MatrixXd& dv
      = parts.q ? lin.dvq : parts.qdot ? lin.dvqdot : parts.tau ? lin.dvtau : lin.dvmu;
  Eigen::MatrixXd velocity = V;
  if (record.rows() > 0)
  {
    const std::vector<RowClass> classes = resolvedClasses(record, options);
    const Eigen::MatrixXd K
        = impulseMap(solveClasses(record.lcp, classes), record.rows());
    velocity += record.Minv * (record.J.transpose() * (K * dv));
  }
  if (block == kBlockDqDq)
    return Eigen::MatrixXd::Identity(n, n) + dt * velocity;
  if (block == kBlockDqDqdot)
    return dt * velocity;
  return velocity;
}

std::vector<BounceRow> bounceRows(const StepRecord& record)
{
  std::vector<BounceRow> out;
  for (int r = 0; r < record.rows(); ++r)
    if (record.restitution[r] > 0.0)
      out.push_back({record.restitution[r], record.J.row(r), record.J.row(r)});
  return out;
}

BouncePositions bouncePositionJacobians(
    const std::vector<BounceRow>& rows, int dofs, double dt)
{
  const int n = dofs;
  const int k = static_cast<int>(rows.size());
  BouncePositions out;
  if (k == 0)
  {
    out.dq = Eigen::MatrixXd::Identity(n, n);
    out.dqdot = dt * out.dq;
    return out;
  }
  // Row i of W^T holds the coefficients of vec(X) (column-major) in
  // J_{i,t+1} X pinv(J_{i,t}).
  Eigen::MatrixXd Wt(k, n * n);
  Eigen::VectorXd r(k);
  for (int i = 0; i < k; ++i)
  {
    const BounceRow& row = rows[static_cast<size_t>(i)];
    if (row.jacobian.size() != n || row.jacobianNext.size() != n)
      throw DimensionMismatch("bounce row Jacobian has the wrong width");
    const double norm2 = row.jacobian.squaredNorm();
    if (norm2 == 0.0 || row.jacobianNext.squaredNorm() == 0.0)
      throw DegenerateBounceRows("bounce row " + std::to_string(i)
                                 + " has a zero Jacobian");
    const Eigen::RowVectorXd pinv = row.jacobian / norm2;
    for (int b = 0; b < n; ++b)
      for (int a = 0; a < n; ++a)
        Wt(i, b * n + a) = row.jacobianNext[a] * pinv[b];
    r[i] = row.restitution;
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd center = I.reshaped();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Wt);
  cod.setThreshold(kPinvCutoff);
  const Eigen::VectorXd v = center - cod.solve(Eigen::VectorXd(r + Wt * center));
  out.dq = v.reshaped(n, n);
  out.dqdot = dt * out.dq;
  return out;
}

LossGradient backpropStep(
    const StepJacobians& jac,
    const Eigen::VectorXd& dlDqNext,
    const Eigen::VectorXd& dlDqdotNext)
{
  LossGradient g;
  g.dq = jac.dqNext_dq.transpose() * dlDqNext
         + jac.dqdotNext_dq.transpose() * dlDqdotNext;
  g.dqdot = jac.dqNext_dqdot.transpose() * dlDqNext
            + jac.dqdotNext_dqdot.transpose() * dlDqdotNext;
  g.dtau = jac.dqNext_dtau.transpose() * dlDqNext
           + jac.dqdotNext_dtau.transpose() * dlDqdotNext;
  return g;
}

double selectionNorm(const LossGradient& g, double dt)
{
  return g.dqdot.squaredNorm() + g.dtau.squaredNorm() / dt;
}

AwareGradient complementarityAwareBackprop(
    const World& world,
    const StepRecord& record,
    const Eigen::VectorXd& dlDqNext,
    const Eigen::VectorXd& dlDqdotNext,
    const JacobianOptions& options)
{
  JacobianOptions base = options;
  if (!base.ties)
    base.ties = TieResolution{TiePolicy::AllClamping, 0};
  const std::vector<RowClass> classes = resolvedClasses(record, base);
  const Linearization lin = linearize(world, record, Parts{});
  base.inertialParams = false;

  AwareGradient out;
  out.classes = classes;
  out.gradient = backpropStep(
      assembleJacobians(record, lin, classes, base), dlDqNext, dlDqdotNext);
  out.selection = selectionNorm(out.gradient, record.state.dt);
  out.standardSelection = out.selection;

  const int m = record.rows();
  if (m == 0)
    return out;
  const Eigen::VectorXd g = dlDqdotNext + record.state.dt * dlDqNext;
  const Eigen::VectorXd dv = record.J * (record.Minv * g);
  out.gradient.dv = dv;

  std::vector<RowClass> alternative = classes;
  for (int i = 0; i < m; ++i)
  {
    const LcpRow& row = record.lcp.rows[static_cast<size_t>(i)];
    if (!row.isNormal() || dv[i] == 0.0)
      continue;
    const bool clamp = dv[i] > 0.0;
    const bool wasClamping = classes[static_cast<size_t>(i)] == RowClass::Clamping;
    alternative[static_cast<size_t>(i)]
        = clamp ? RowClass::Clamping : RowClass::Separating;
    // A newly clamped contact sticks in every tangent direction.
    if (clamp && !wasClamping)
      for (int j = i + 1; j < m; ++j)
        if (record.lcp.rows[static_cast<size_t>(j)].link == i)
          alternative[static_cast<size_t>(j)] = RowClass::Clamping;
  }
  if (alternative == classes)
    return out;

  LossGradient candidate = backpropStep(
      assembleJacobians(record, lin, alternative, base), dlDqNext, dlDqdotNext);
  candidate.dv = dv;
  const double selection = selectionNorm(candidate, record.state.dt);
  if (selection > out.selection)
  {
    out.gradient = std::move(candidate);
    out.classes = alternative;
    out.selection = selection;
    out.reclassified = true;
  }
  return out;
}

}  // namespace nimble_mini
