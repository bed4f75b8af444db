#include "nimble_mini/world.hpp"

#include <algorithm>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

namespace {

std::array<int, 4> contactKey(const Contact& c)
{
  return {c.colliderA, c.colliderB, c.featureA, c.featureB};
}

}  // namespace

Eigen::VectorXd StepRecord::contactImpulses() const
{
  Eigen::VectorXd out
      = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * contacts.size()));
  for (int r = 0; r < rows(); ++r)
    out[jacobianRows[static_cast<size_t>(r)]] = solution.f[r];
  return out;
}

bool StepRecord::bouncing() const
{
  return restitution.size() > 0 && restitution.maxCoeff() > 0.0;
}

std::optional<std::vector<RowClass>> WarmStartCache::hint(
    const std::vector<Contact>& contacts,
    const std::vector<int>& jacobianRows) const
{
  std::vector<RowClass> out;
  out.reserve(jacobianRows.size());
  for (int row : jacobianRows)
  {
    const auto it = mClasses.find(contactKey(contacts[static_cast<size_t>(row / 3)]));
    if (it == mClasses.end())
      return std::nullopt;
    out.push_back(it->second[static_cast<size_t>(row % 3)]);
  }
  return out;
}

void WarmStartCache::store(
    const std::vector<Contact>& contacts,
    const std::vector<int>& jacobianRows,
    const std::vector<RowClass>& basis)
{
  mClasses.clear();
  for (size_t r = 0; r < jacobianRows.size(); ++r)
  {
    const int row = jacobianRows[r];
    auto& slot = mClasses[contactKey(contacts[static_cast<size_t>(row / 3)])];
    if (row % 3 == 0)
      slot.fill(RowClass::Separating);
    slot[static_cast<size_t>(row % 3)] = basis[r];
  }
}

StepRecord step(const World& world, const WorldState& state, WarmStartCache* warm)
{
  const Skeleton& skel = world.skeleton;
  const int n = skel.dofs();
  state.validate(n);

  StepRecord rec;
  rec.state = state;
  rec.kinematics = forwardKinematics(skel, state.q);
  rec.contacts = detect(skel, rec.kinematics, world.colliders);
  rec.contactJacobian = contactJacobian(skel, rec.kinematics, rec.contacts);

  std::vector<LcpRow> rows;
  for (size_t k = 0; k < rec.contacts.size(); ++k)
  {
    const Contact& contact = rec.contacts[k];
    const int normal = static_cast<int>(rows.size());
    rec.jacobianRows.push_back(static_cast<int>(3 * k));
    rows.push_back(LcpRow{-1, 0.0, static_cast<int>(k), 0});
    if (contact.friction <= 0.0)
      continue;
    for (int d = 1; d <= 2; ++d)
    {
      rec.jacobianRows.push_back(static_cast<int>(3 * k) + d);
      rows.push_back(LcpRow{normal, contact.friction, static_cast<int>(k), d});
    }
  }
  const int m = rec.rows();
  rec.J.resize(m, n);
  for (int r = 0; r < m; ++r)
    rec.J.row(r) = rec.contactJacobian.J.row(rec.jacobianRows[static_cast<size_t>(r)]);

  rec.M = massMatrix(skel, state.q);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(rec.M);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SingularMass("mass matrix is not positive definite");
  rec.Minv = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
  rec.c = coriolisGravity(skel, state.q, state.qdot);
  const Eigen::VectorXd qdotFree
      = state.qdot + state.dt * rec.Minv * (state.tau - rec.c);

  rec.lcp.rows = std::move(rows);
  rec.lcp.A = rec.J * rec.Minv * rec.J.transpose();
  rec.lcp.A = (0.5 * (rec.lcp.A + rec.lcp.A.transpose())).eval();
  rec.lcp.b = rec.J * qdotFree;

  // Restitution targets a post-step normal speed of -sigma times the
  // approach speed: v' = J qdot' >= -sigma (J qdot) on bouncing rows.
  rec.restitution = Eigen::VectorXd::Zero(m);
  for (int r = 0; r < m; ++r)
  {
    const LcpRow& row = rec.lcp.rows[static_cast<size_t>(r)];
    const double sigma = rec.contacts[static_cast<size_t>(row.contact)].restitution;
    if (!row.isNormal() || sigma <= 0.0)
      continue;
    const double approach = rec.J.row(r).dot(state.qdot);
    if (approach < -kBounceSpeedThreshold)
    {
      rec.restitution[r] = sigma;
      rec.lcp.b[r] += sigma * approach;
    }
  }
  rec.lcp.validate();

  std::optional<std::vector<RowClass>> hint;
  if (warm && m > 0)
  {
    hint = warm->hint(rec.contacts, rec.jacobianRows);
    ++warm->attempts;
  }
  rec.solution = solveDirect(rec.lcp, hint);
  if (warm)
  {
    if (m > 0 && rec.solution.warmStarted)
      ++warm->hits;
    warm->store(rec.contacts, rec.jacobianRows, rec.solution.basis);
  }

  rec.next = state;
  rec.next.qdot = qdotFree + rec.Minv * (rec.J.transpose() * rec.solution.f);
  rec.next.q = state.q + state.dt * rec.next.qdot;
  return rec;
}

WorldState stepState(const World& world, const WorldState& state)
{
  return step(world, state).next;
}

}  // namespace nimble_mini
