#include "nimble_mini/collision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nimble_mini/errors.hpp"

namespace nimble_mini {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kParallel = 1e-10;

// Feature ids within a box collider.
int boxFaceId(int axis, double sign) { return 2 * axis + (sign > 0 ? 1 : 0); }
int boxEdgeId(int axis, int bits) { return 6 + 4 * axis + bits; }
int boxVertexId(int bits) { return 18 + bits; }

Vec3 boxVertex(const Vec3& h, int bits)
{
  return Vec3(
      (bits & 1) ? h.x() : -h.x(),
      (bits & 2) ? h.y() : -h.y(),
      (bits & 4) ? h.z() : -h.z());
}

int vertexBits(const Vec3& signs)
{
  return (signs.x() > 0 ? 1 : 0) | (signs.y() > 0 ? 2 : 0)
         | (signs.z() > 0 ? 4 : 0);
}

double signOf(double x) { return x >= 0.0 ? 1.0 : -1.0; }

struct Placed
{
  int index;
  const Collider* collider;
  Transform T;
};

GeometryFeature pointFeature(const Placed& c, const Vec3& world)
{
  return {c.collider->body, world, false};
}

GeometryFeature dirFeature(const Placed& c, const Vec3& world)
{
  return {c.collider->body, world, true};
}

struct ClosestPair
{
  Vec3 ca, cb;
  double s = 0.0, t = 0.0;
};

// Closest points of the (infinite) lines a0 + s ua and b0 + t ub.
ClosestPair lineLine(const Vec3& a0, const Vec3& ua, const Vec3& b0,
                     const Vec3& ub)
{
  const Vec3 w = a0 - b0;
  const double a = ua.dot(ua), b = ua.dot(ub), c = ub.dot(ub);
  const double d = ua.dot(w), e = ub.dot(w);
  const double D = a * c - b * b;
  ClosestPair out;
  out.s = (b * e - c * d) / D;
  out.t = (a * e - b * d) / D;
  out.ca = a0 + out.s * ua;
  out.cb = b0 + out.t * ub;
  return out;
}

struct RecipeSides
{
  Vec3 ca, cb;
};

RecipeSides closestOfRecipe(const ContactRecipe& r)
{
  const auto& f = r.features;
  RecipeSides out;
  if (r.lineA && r.lineB)
  {
    const ClosestPair cp
        = lineLine(f[0].value, f[1].value, f[2].value, f[3].value);
    out.ca = cp.ca;
    out.cb = cp.cb;
  }
  else if (r.lineA)
  {
    out.cb = f[2].value;
    out.ca = f[0].value + (out.cb - f[0].value).dot(f[1].value) * f[1].value;
  }
  else if (r.lineB)
  {
    out.ca = f[0].value;
    out.cb = f[2].value + (out.ca - f[2].value).dot(f[3].value) * f[3].value;
  }
  else
  {
    out.ca = f[0].value;
    out.cb = f[2].value;
  }
  return out;
}

void evaluateRecipe(const ContactRecipe& r, Vec3& p, Vec3& n)
{
  const auto& f = r.features;
  switch (r.type)
  {
    case ContactRecipe::Type::Face:
      n = f[1].value;
      p = f[0].value - r.radiusA * n;
      break;
    case ContactRecipe::Type::Closest:
    {
      const RecipeSides s = closestOfRecipe(r);
      p = (r.radiusB * s.ca + r.radiusA * s.cb) / (r.radiusA + r.radiusB);
      n = (s.ca - s.cb).normalized();
      break;
    }
    case ContactRecipe::Type::EdgeEdge:
    {
      const ClosestPair cp
          = lineLine(f[0].value, f[1].value, f[2].value, f[3].value);
      p = 0.5 * (cp.ca + cp.cb);
      n = r.sign * f[1].value.cross(f[3].value).normalized();
      break;
    }
  }
  if (r.flip)
    n = -n;
}

// Derivative of x / |x|.
Vec3 dUnit(const Vec3& x, const Vec3& dx)
{
  const double len = x.norm();
  const Vec3 u = x / len;
  return (dx - u * u.dot(dx)) / len;
}

// Tangent of the closest points of two lines.
void dLineLine(const Vec3& a0, const Vec3& ua, const Vec3& b0, const Vec3& ub,
               const Vec3& da0, const Vec3& dua, const Vec3& db0,
               const Vec3& dub, Vec3& dca, Vec3& dcb)
{
  const Vec3 w = a0 - b0;
  const Vec3 dw = da0 - db0;
  const double a = ua.dot(ua), b = ua.dot(ub), c = ub.dot(ub);
  const double d = ua.dot(w), e = ub.dot(w);
  const double D = a * c - b * b;
  const double s = (b * e - c * d) / D;
  const double t = (a * e - b * d) / D;
  const double da = 2.0 * ua.dot(dua);
  const double db = dua.dot(ub) + ua.dot(dub);
  const double dc = 2.0 * ub.dot(dub);
  const double dd = dua.dot(w) + ua.dot(dw);
  const double de = dub.dot(w) + ub.dot(dw);
  const double dD = da * c + a * dc - 2.0 * b * db;
  const double ds = (db * e + b * de - dc * d - c * dd - s * dD) / D;
  const double dt = (da * e + a * de - db * d - b * dd - t * dD) / D;
  dca = da0 + ds * ua + s * dua;
  dcb = db0 + dt * ub + t * dub;
}

// Tangent of the projection of point c onto line a0 + s u (unit u).
Vec3 dProjectOnLine(const Vec3& a0, const Vec3& u, const Vec3& c,
                    const Vec3& da0, const Vec3& du, const Vec3& dc)
{
  const double s = (c - a0).dot(u);
  const double ds = (dc - da0).dot(u) + (c - a0).dot(du);
  return da0 + ds * u + s * du;
}

void recipeTangent(const ContactRecipe& r, const std::array<Vec3, 4>& df,
                   Vec3& dp, Vec3& dn)
{
  const auto& f = r.features;
  switch (r.type)
  {
    case ContactRecipe::Type::Face:
      dn = df[1];
      dp = df[0] - r.radiusA * dn;
      break;
    case ContactRecipe::Type::Closest:
    {
      const RecipeSides s = closestOfRecipe(r);
      Vec3 dca, dcb;
      if (r.lineA && r.lineB)
      {
        dLineLine(f[0].value, f[1].value, f[2].value, f[3].value, df[0],
                  df[1], df[2], df[3], dca, dcb);
      }
      else if (r.lineA)
      {
        dcb = df[2];
        dca = dProjectOnLine(f[0].value, f[1].value, s.cb, df[0], df[1], dcb);
      }
      else if (r.lineB)
      {
        dca = df[0];
        dcb = dProjectOnLine(f[2].value, f[3].value, s.ca, df[2], df[3], dca);
      }
      else
      {
        dca = df[0];
        dcb = df[2];
      }
      dp = (r.radiusB * dca + r.radiusA * dcb) / (r.radiusA + r.radiusB);
      dn = dUnit(s.ca - s.cb, dca - dcb);
      break;
    }
    case ContactRecipe::Type::EdgeEdge:
    {
      Vec3 dca, dcb;
      dLineLine(f[0].value, f[1].value, f[2].value, f[3].value, df[0], df[1],
                df[2], df[3], dca, dcb);
      dp = 0.5 * (dca + dcb);
      const Vec3 m = f[1].value.cross(f[3].value);
      const Vec3 dm = df[1].cross(f[3].value) + f[1].value.cross(df[3]);
      dn = r.sign * dUnit(m, dm);
      break;
    }
  }
  if (r.flip)
    dn = -dn;
}

class PairDetector
{
public:
  explicit PairDetector(std::vector<Contact>& out) : mOut(out) {}

  // Emits a contact with roles (x, y); the caller normalizes to collider
  // order afterwards.
  void emit(ContactKind kind, const Placed& x, const Placed& y,
            const ContactRecipe& recipe, double depth, double margin,
            int featureX, int featureY)
  {
    Contact c;
    c.kind = kind;
    c.colliderA = x.index;
    c.colliderB = y.index;
    c.bodyA = x.collider->body;
    c.bodyB = y.collider->body;
    c.depth = depth;
    c.margin = std::min(margin, depth);
    c.featureA = featureX;
    c.featureB = featureY;
    c.recipe = recipe;
    evaluateRecipe(c.recipe, c.point, c.normal);
    mOut.push_back(c);
  }

  void face(ContactKind kind, const Placed& x, const Vec3& point,
            double radius, const Placed& y, const Vec3& faceNormal,
            double depth, double margin, int fx, int fy)
  {
    ContactRecipe r;
    r.type = ContactRecipe::Type::Face;
    r.features[0] = pointFeature(x, point);
    r.features[1] = dirFeature(y, faceNormal);
    r.radiusA = radius;
    emit(kind, x, y, r, depth, margin, fx, fy);
  }

  // Side descriptions for Closest recipes: a point, or a line (point, dir).
  struct Side
  {
    const Placed* c;
    Vec3 point;
    Vec3 dir;
    bool line;
    double radius;
    int feature;
  };

  void closest(ContactKind kind, const Side& a, const Side& b, double depth,
               double margin)
  {
    ContactRecipe r;
    r.type = ContactRecipe::Type::Closest;
    r.features[0] = pointFeature(*a.c, a.point);
    r.lineA = a.line;
    if (a.line)
      r.features[1] = dirFeature(*a.c, a.dir);
    r.features[2] = pointFeature(*b.c, b.point);
    r.lineB = b.line;
    if (b.line)
      r.features[3] = dirFeature(*b.c, b.dir);
    r.radiusA = a.radius;
    r.radiusB = b.radius;
    emit(kind, *a.c, *b.c, r, depth, margin, a.feature, b.feature);
  }

  void sphereSphere(const Placed& x, const Placed& y);
  void sphereHalfSpace(const Placed& x, const Placed& y);
  void capsuleHalfSpace(const Placed& x, const Placed& y);
  void boxHalfSpace(const Placed& x, const Placed& y);
  void capsuleSphere(const Placed& x, const Placed& y);
  void capsuleCapsule(const Placed& x, const Placed& y);
  void sphereBox(const Placed& x, const Placed& y);
  void capsuleBox(const Placed& x, const Placed& y);
  void boxBox(const Placed& x, const Placed& y);

private:
  // Sphere (center c, radius r, owner x, feature fx) against box y. With
  // `checkInward`, vertex and edge contacts are only reported if moving the
  // center along `inward` does not get closer to the box.
  void sphereAgainstBox(const Placed& x, const Vec3& c, double r, int fx,
                        const Placed& y, const Vec3& inward,
                        bool checkInward);
  // Kinds are named in role order; detect() relabels after reordering.
  void boxFacePass(const Placed& ref, int refAxis, const Vec3& n,
                   const Placed& inc, double axisMargin);

  std::vector<Contact>& mOut;
};

struct HalfSpaceWorld
{
  Vec3 normal;
  double offset;
};

HalfSpaceWorld worldHalfSpace(const Placed& y)
{
  const auto& h = std::get<HalfSpace>(y.collider->shape);
  HalfSpaceWorld out;
  out.normal = y.T.applyDirection(h.normal);
  out.offset = out.normal.dot(y.T.apply(h.offset * h.normal));
  return out;
}

//==============================================================================
void PairDetector::sphereSphere(const Placed& x, const Placed& y)
{
  const double ra = std::get<Sphere>(x.collider->shape).radius;
  const double rb = std::get<Sphere>(y.collider->shape).radius;
  const Vec3 ca = x.T.translation, cb = y.T.translation;
  const double dist = (ca - cb).norm();
  const double depth = ra + rb - dist;
  if (depth <= 0.0)
    return;
  closest(ContactKind::SphereSphere, {&x, ca, {}, false, ra, 0},
          {&y, cb, {}, false, rb, 0}, depth, dist);
}

//==============================================================================
void PairDetector::sphereHalfSpace(const Placed& x, const Placed& y)
{
  const double r = std::get<Sphere>(x.collider->shape).radius;
  const HalfSpaceWorld h = worldHalfSpace(y);
  const Vec3 c = x.T.translation;
  const double depth = h.offset - (h.normal.dot(c) - r);
  if (depth <= 0.0)
    return;
  face(ContactKind::SphereFace, x, c, r, y, h.normal, depth, kInf, 0, 0);
}

//==============================================================================
void PairDetector::capsuleHalfSpace(const Placed& x, const Placed& y)
{
  const auto& cap = std::get<Capsule>(x.collider->shape);
  const HalfSpaceWorld h = worldHalfSpace(y);
  const Vec3 axis = x.T.applyDirection(Vec3::UnitZ());
  for (int end = 0; end < 2; ++end)
  {
    const Vec3 c = x.T.translation + (end ? 1.0 : -1.0) * cap.halfLength * axis;
    const double depth = h.offset - (h.normal.dot(c) - cap.radius);
    if (depth > 0.0)
      face(ContactKind::SphereFace, x, c, cap.radius, y, h.normal, depth, kInf,
           end, 0);
  }
}

//==============================================================================
void PairDetector::boxHalfSpace(const Placed& x, const Placed& y)
{
  const Vec3& he = std::get<Box>(x.collider->shape).halfExtents;
  const HalfSpaceWorld h = worldHalfSpace(y);
  for (int bits = 0; bits < 8; ++bits)
  {
    const Vec3 v = x.T.apply(boxVertex(he, bits));
    const double depth = h.offset - h.normal.dot(v);
    if (depth > 0.0)
      face(ContactKind::VertexFace, x, v, 0.0, y, h.normal, depth, kInf,
           boxVertexId(bits), 0);
  }
}

//==============================================================================
void PairDetector::capsuleSphere(const Placed& x, const Placed& y)
{
  const auto& cap = std::get<Capsule>(x.collider->shape);
  const double rs = std::get<Sphere>(y.collider->shape).radius;
  const Vec3 a0 = x.T.translation;
  const Vec3 u = x.T.applyDirection(Vec3::UnitZ());
  const Vec3 c = y.T.translation;
  const double t = (c - a0).dot(u);
  if (std::abs(t) < cap.halfLength)
  {
    const Vec3 ca = a0 + t * u;
    const double dist = (ca - c).norm();
    const double depth = cap.radius + rs - dist;
    if (depth <= 0.0)
      return;
    closest(ContactKind::PipeSphere, {&x, a0, u, true, cap.radius, 2},
            {&y, c, {}, false, rs, 0}, depth,
            std::min(cap.halfLength - std::abs(t), dist));
  }
  else
  {
    const int end = t > 0 ? 1 : 0;
    const Vec3 e = a0 + signOf(t) * cap.halfLength * u;
    const double dist = (e - c).norm();
    const double depth = cap.radius + rs - dist;
    if (depth <= 0.0)
      return;
    closest(ContactKind::SphereSphere, {&x, e, {}, false, cap.radius, end},
            {&y, c, {}, false, rs, 0}, depth,
            std::min(std::abs(t) - cap.halfLength, dist));
  }
}

//==============================================================================
void PairDetector::capsuleCapsule(const Placed& x, const Placed& y)
{
  const auto& ka = std::get<Capsule>(x.collider->shape);
  const auto& kb = std::get<Capsule>(y.collider->shape);
  const Vec3 a0 = x.T.translation, ua = x.T.applyDirection(Vec3::UnitZ());
  const Vec3 b0 = y.T.translation, ub = y.T.applyDirection(Vec3::UnitZ());
  const double ha = ka.halfLength, hb = kb.halfLength;
  const Vec3 w = a0 - b0;
  const double b = ua.dot(ub), d = ua.dot(w), e = ub.dot(w);
  const double D = 1.0 - b * b;

  double s, t;
  double margin = kInf;
  if (D < kParallel)
  {
    // Parallel axes: the closest pair is not unique; use the middle of the
    // overlap of B's projection onto A.
    const double p0 = -d - hb * b, p1 = -d + hb * b;
    const double lo = std::max(-ha, std::min(p0, p1));
    const double hi = std::min(ha, std::max(p0, p1));
    s = lo <= hi ? 0.5 * (lo + hi) : std::clamp(0.5 * (p0 + p1), -ha, ha);
    t = std::clamp(e + s * b, -hb, hb);
    margin = 0.0;
  }
  else
  {
    s = std::clamp((b * e - d) / D, -ha, ha);
    t = e + s * b;
    if (std::abs(t) > hb)
    {
      t = std::clamp(t, -hb, hb);
      s = std::clamp(t * b - d, -ha, ha);
    }
    margin = std::sqrt(D);
  }
  const Vec3 ca = a0 + s * ua, cb = b0 + t * ub;
  const double dist = (ca - cb).norm();
  const double depth = ka.radius + kb.radius - dist;
  if (depth <= 0.0)
    return;
  margin = std::min(margin, dist);

  const bool sIn = std::abs(s) < ha, tIn = std::abs(t) < hb;
  const int endA = s > 0 ? 1 : 0, endB = t > 0 ? 1 : 0;
  const Side pipeA{&x, a0, ua, true, ka.radius, 2};
  const Side pipeB{&y, b0, ub, true, kb.radius, 2};
  const Side endPointA{&x, ca, {}, false, ka.radius, endA};
  const Side endPointB{&y, cb, {}, false, kb.radius, endB};
  // Margins of an interior parameter: distance to the segment end. Margins
  // of a clamped one: slope of the distance moving inward from the end.
  const double inA = sIn ? ha - std::abs(s) : std::abs((cb - ca).dot(ua));
  const double inB = tIn ? hb - std::abs(t) : std::abs((ca - cb).dot(ub));
  margin = std::min({margin, inA, inB});
  if (sIn && tIn)
    closest(ContactKind::PipePipe, pipeA, pipeB, depth, margin);
  else if (sIn)
    closest(ContactKind::PipeSphere, pipeA, endPointB, depth, margin);
  else if (tIn)
    closest(ContactKind::PipeSphere, pipeB, endPointA, depth, margin);
  else
    closest(ContactKind::SphereSphere, endPointA, endPointB, depth, margin);
}

//==============================================================================
// Signed distance from a box-frame point to the box, with the closest point,
// the outward gradient and the region (number of clamped coordinates).
struct BoxQuery
{
  double distance;
  Vec3 closest;
  Vec3 gradient;
  int outside;
  int faceAxis;  // for inside points: least-penetrated axis
  double regionMargin;
};

BoxQuery queryBox(const Vec3& h, const Vec3& x)
{
  BoxQuery out;
  out.outside = 0;
  out.regionMargin = kInf;
  out.closest = x;
  for (int k = 0; k < 3; ++k)
  {
    const double excess = std::abs(x[k]) - h[k];
    out.regionMargin = std::min(out.regionMargin, std::abs(excess));
    if (excess > 0.0)
    {
      ++out.outside;
      out.closest[k] = signOf(x[k]) * h[k];
    }
  }
  out.faceAxis = 0;
  if (out.outside == 0)
  {
    double best = kInf, second = kInf;
    for (int k = 0; k < 3; ++k)
    {
      const double pen = h[k] - std::abs(x[k]);
      if (pen < best)
      {
        second = best;
        best = pen;
        out.faceAxis = k;
      }
      else if (pen < second)
      {
        second = pen;
      }
    }
    out.distance = -best;
    out.gradient = Vec3::Zero();
    out.gradient[out.faceAxis] = signOf(x[out.faceAxis]);
    out.closest[out.faceAxis] = signOf(x[out.faceAxis]) * h[out.faceAxis];
    out.regionMargin = std::min(out.regionMargin, second - best);
  }
  else
  {
    const Vec3 diff = x - out.closest;
    out.distance = diff.norm();
    out.gradient = diff / out.distance;
  }
  return out;
}

//==============================================================================
void PairDetector::sphereAgainstBox(const Placed& x, const Vec3& c, double r,
                                    int fx, const Placed& y,
                                    const Vec3& inward, bool checkInward)
{
  const Vec3& he = std::get<Box>(y.collider->shape).halfExtents;
  const Vec3 xl = y.T.inverse().apply(c);
  const BoxQuery qb = queryBox(he, xl);
  const double depth = r - qb.distance;
  if (depth <= 0.0)
    return;
  double margin = qb.regionMargin;
  if (checkInward && qb.outside >= 2)
  {
    const double slope = qb.gradient.dot(y.T.rotation.transpose() * inward);
    if (slope < 0.0)
      return;
    margin = std::min(margin, slope);
  }

  if (qb.outside <= 1)
  {
    int axis = qb.faceAxis;
    if (qb.outside == 1)
      for (int k = 0; k < 3; ++k)
        if (std::abs(xl[k]) > he[k])
          axis = k;
    const double s = signOf(xl[axis]);
    const Vec3 nF = y.T.rotation.col(axis) * s;
    face(ContactKind::SphereFace, x, c, r, y, nF, depth, margin, fx,
         boxFaceId(axis, s));
  }
  else if (qb.outside == 2)
  {
    int axis = 0;
    for (int k = 0; k < 3; ++k)
      if (std::abs(xl[k]) <= he[k])
        axis = k;
    const Vec3 signs = xl.cwiseSign();
    int bits = 0, bit = 0;
    for (int k = 0; k < 3; ++k)
      if (k != axis)
        bits |= (signs[k] > 0 ? 1 : 0) << bit++;
    closest(ContactKind::SphereEdge, {&x, c, {}, false, r, fx},
            {&y, y.T.apply(qb.closest), y.T.rotation.col(axis), true, 0.0,
             boxEdgeId(axis, bits)},
            depth, margin);
  }
  else
  {
    closest(ContactKind::SphereVertex, {&x, c, {}, false, r, fx},
            {&y, y.T.apply(qb.closest), {}, false, 0.0,
             boxVertexId(vertexBits(xl.cwiseSign()))},
            depth, margin);
  }
}

//==============================================================================
void PairDetector::sphereBox(const Placed& x, const Placed& y)
{
  sphereAgainstBox(x, x.T.translation,
                   std::get<Sphere>(x.collider->shape).radius, 0, y,
                   Vec3::Zero(), false);
}

//==============================================================================
void PairDetector::capsuleBox(const Placed& x, const Placed& y)
{
  const auto& cap = std::get<Capsule>(x.collider->shape);
  const Vec3& he = std::get<Box>(y.collider->shape).halfExtents;
  const double h = cap.halfLength, r = cap.radius;
  const Vec3 a0 = x.T.translation, u = x.T.applyDirection(Vec3::UnitZ());
  const Transform toBox = y.T.inverse();
  const Vec3 m = toBox.apply(a0), ul = toBox.applyDirection(u);

  // End spheres.
  for (int end = 0; end < 2; ++end)
  {
    const double sgn = end ? 1.0 : -1.0;
    sphereAgainstBox(x, a0 + sgn * h * u, r, end, y, -sgn * u, true);
  }

  // Interior minimum of the (convex) signed distance along the centerline.
  auto phi = [&](double t) { return queryBox(he, m + t * ul).distance; };
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = -h, hi = h;
  double t1 = hi - g * (hi - lo), t2 = lo + g * (hi - lo);
  double f1 = phi(t1), f2 = phi(t2);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + h); ++it)
  {
    if (f1 <= f2)
    {
      hi = t2;
      t2 = t1;
      f2 = f1;
      t1 = hi - g * (hi - lo);
      f1 = phi(t1);
    }
    else
    {
      lo = t1;
      t1 = t2;
      f1 = f2;
      t2 = lo + g * (hi - lo);
      f2 = phi(t2);
    }
  }
  const double ts = 0.5 * (lo + hi);
  const double endGap = h - std::abs(ts);
  if (endGap <= 1e-9 * (1.0 + h))
    return;
  const BoxQuery qb = queryBox(he, m + ts * ul);
  const double depth = r - qb.distance;
  if (depth <= 0.0 || qb.outside == 0)
    return;
  const Side pipe{&x, a0, u, true, r, 2};
  const Vec3 pl = m + ts * ul;

  if (qb.outside == 3)
  {
    const int bits = vertexBits(pl.cwiseSign());
    closest(ContactKind::VertexPipe,
            {&y, y.T.apply(qb.closest), {}, false, 0.0, boxVertexId(bits)},
            pipe, depth, std::min(qb.regionMargin, endGap));
    return;
  }

  auto edgeContact = [&](int axis, const Vec3& edgePointLocal, double margin) {
    const Vec3 e0 = y.T.apply(edgePointLocal);
    const Vec3 eu = y.T.rotation.col(axis);
    const double sinAngle = eu.cross(u).norm();
    if (sinAngle < std::sqrt(kParallel))
      return;
    const ClosestPair cp = lineLine(e0, eu, a0, u);
    const double along = (cp.ca - y.T.apply(Vec3::Zero())).dot(eu);
    int bits = 0, bit = 0;
    for (int k = 0; k < 3; ++k)
      if (k != axis)
        bits |= (edgePointLocal[k] > 0 ? 1 : 0) << bit++;
    const double d = (cp.ca - cp.cb).norm();
    margin = std::min({margin, he[axis] - std::abs(along), h - std::abs(cp.t),
                       sinAngle, d});
    closest(ContactKind::EdgePipe,
            {&y, e0, eu, true, 0.0, boxEdgeId(axis, bits)}, pipe, r - d,
            margin);
  };

  if (qb.outside == 2)
  {
    int axis = 0;
    for (int k = 0; k < 3; ++k)
      if (std::abs(pl[k]) <= he[k])
        axis = k;
    edgeContact(axis, qb.closest, std::min(qb.regionMargin, endGap));
    return;
  }

  // Face region at an interior minimum: the centerline is parallel to the
  // face. Report edge-pipe contacts where the centerline leaves the face.
  int faceAxis = 0;
  for (int k = 0; k < 3; ++k)
    if (std::abs(pl[k]) > he[k])
      faceAxis = k;
  for (int k = 0; k < 3; ++k)
  {
    if (k == faceAxis || std::abs(ul[k]) < 1e-12)
      continue;
    for (double s : {-1.0, 1.0})
    {
      const double t = (s * he[k] - m[k]) / ul[k];
      if (std::abs(t) >= h)
        continue;
      const Vec3 at = m + t * ul;
      const int other = 3 - faceAxis - k;
      if (std::abs(at[other]) > he[other])
        continue;
      Vec3 edgePoint = Vec3::Zero();
      edgePoint[faceAxis] = signOf(pl[faceAxis]) * he[faceAxis];
      edgePoint[k] = s * he[k];
      edgeContact(other, edgePoint, 0.0);
    }
  }
}

//==============================================================================
void PairDetector::boxFacePass(const Placed& ref, int refAxis, const Vec3& n,
                               const Placed& inc, double axisMargin)
{
  // n is the outward normal of the reference face, pointing toward `inc`.
  const Vec3& hr = std::get<Box>(ref.collider->shape).halfExtents;
  const Vec3& hi = std::get<Box>(inc.collider->shape).halfExtents;
  const double s = signOf(ref.T.rotation.col(refAxis).dot(n));
  const double planeOffset = n.dot(ref.T.translation) + hr[refAxis];
  const Transform refInv = ref.T.inverse();

  // Incident vertices below the reference face, inside its rectangle.
  for (int bits = 0; bits < 8; ++bits)
  {
    const Vec3 v = inc.T.apply(boxVertex(hi, bits));
    const double depth = planeOffset - n.dot(v);
    if (depth <= 0.0)
      continue;
    const Vec3 vl = refInv.apply(v);
    double margin = axisMargin;
    bool inside = true;
    for (int k = 0; k < 3; ++k)
    {
      if (k == refAxis)
        continue;
      const double room = hr[k] - std::abs(vl[k]);
      inside = inside && room > 0.0;
      margin = std::min(margin, std::abs(room));
    }
    if (inside)
      face(ContactKind::VertexFace, inc, v, 0.0, ref, n, depth, margin, boxVertexId(bits),
           boxFaceId(refAxis, s));
  }

  // Reference vertices contained in the incident box, against the incident
  // face most opposed to n.
  const Mat3 Ri = inc.T.rotation;
  int incAxis = 0;
  double best = -kInf;
  for (int k = 0; k < 3; ++k)
  {
    const double a = std::abs(Ri.col(k).dot(n));
    if (a > best)
    {
      best = a;
      incAxis = k;
    }
  }
  const double si = -signOf(Ri.col(incAxis).dot(n));
  const Vec3 fIncident = si * Ri.col(incAxis);
  const Transform incInv = inc.T.inverse();
  for (int bits = 0; bits < 8; ++bits)
  {
    const Vec3 v = ref.T.apply(boxVertex(hr, bits));
    const Vec3 vl = incInv.apply(v);
    double margin = axisMargin;
    bool inside = true;
    for (int k = 0; k < 3; ++k)
    {
      const double room = hi[k] - std::abs(vl[k]);
      inside = inside && room > 0.0;
      margin = std::min(margin, std::abs(room));
    }
    if (!inside)
      continue;
    const double depth = hi[incAxis] - si * vl[incAxis];
    face(ContactKind::VertexFace, ref, v, 0.0, inc, fIncident, depth, margin,
         boxVertexId(bits), boxFaceId(incAxis, si));
  }
}

//==============================================================================
void PairDetector::boxBox(const Placed& x, const Placed& y)
{
  const Vec3& ha = std::get<Box>(x.collider->shape).halfExtents;
  const Vec3& hb = std::get<Box>(y.collider->shape).halfExtents;
  const Mat3& Ra = x.T.rotation;
  const Mat3& Rb = y.T.rotation;
  const Vec3 d = x.T.translation - y.T.translation;  // from B to A

  struct Axis
  {
    Vec3 dir;
    int type;  // 0: face of x, 1: face of y, 2: edge pair
    int i, j;
    double overlap;
  };
  std::vector<Axis> axes;
  auto test = [&](Vec3 L, int type, int i, int j) {
    const double len = L.norm();
    if (len < 1e-6)
      return true;
    L /= len;
    for (const Axis& a : axes)
      if (std::abs(a.dir.dot(L)) > 1.0 - 1e-9)
        return true;
    double ra = 0.0, rb = 0.0;
    for (int k = 0; k < 3; ++k)
    {
      ra += ha[k] * std::abs(L.dot(Ra.col(k)));
      rb += hb[k] * std::abs(L.dot(Rb.col(k)));
    }
    const double overlap = ra + rb - std::abs(L.dot(d));
    if (overlap <= 0.0)
      return false;
    if (L.dot(d) < 0.0)
      L = -L;
    axes.push_back({L, type, i, j, overlap});
    return true;
  };
  for (int i = 0; i < 3; ++i)
    if (!test(Ra.col(i), 0, i, -1))
      return;
  for (int j = 0; j < 3; ++j)
    if (!test(Rb.col(j), 1, -1, j))
      return;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (!test(Ra.col(i).cross(Rb.col(j)), 2, i, j))
        return;

  size_t best = 0;
  for (size_t k = 1; k < axes.size(); ++k)
    if (axes[k].overlap < axes[best].overlap)
      best = k;
  double gap = kInf;
  for (size_t k = 0; k < axes.size(); ++k)
    if (k != best)
      gap = std::min(gap, axes[k].overlap - axes[best].overlap);
  const Axis& ax = axes[best];
  const Vec3 n = ax.dir;  // from y toward x

  if (ax.type == 1)
  {
    boxFacePass(y, ax.j, n, x, gap);
    return;
  }
  if (ax.type == 0)
  {
    boxFacePass(x, ax.i, -n, y, gap);
    return;
  }

  // Edge-edge: support edge of x toward y (direction -n) and of y toward x.
  double margin = gap;
  Vec3 ea = Vec3::Zero(), eb = Vec3::Zero();
  int bitsA = 0, bitsB = 0, bit = 0;
  for (int k = 0; k < 3; ++k)
  {
    if (k == ax.i)
      continue;
    const double c = Ra.col(k).dot(n);
    margin = std::min(margin, std::abs(c));
    const double s = -signOf(c);
    ea[k] = s * ha[k];
    bitsA |= (s > 0 ? 1 : 0) << bit++;
  }
  bit = 0;
  for (int k = 0; k < 3; ++k)
  {
    if (k == ax.j)
      continue;
    const double c = Rb.col(k).dot(n);
    margin = std::min(margin, std::abs(c));
    const double s = signOf(c);
    eb[k] = s * hb[k];
    bitsB |= (s > 0 ? 1 : 0) << bit++;
  }
  const Vec3 a0 = x.T.apply(ea), ua = Ra.col(ax.i);
  const Vec3 b0 = y.T.apply(eb), ub = Rb.col(ax.j);
  const ClosestPair cp = lineLine(a0, ua, b0, ub);
  if (std::abs(cp.s) >= ha[ax.i] || std::abs(cp.t) >= hb[ax.j])
    return;
  margin = std::min({margin, ha[ax.i] - std::abs(cp.s),
                     hb[ax.j] - std::abs(cp.t), ua.cross(ub).norm()});
  ContactRecipe r;
  r.type = ContactRecipe::Type::EdgeEdge;
  r.features[0] = pointFeature(x, a0);
  r.features[1] = dirFeature(x, ua);
  r.features[2] = pointFeature(y, b0);
  r.features[3] = dirFeature(y, ub);
  r.sign = signOf(ua.cross(ub).dot(n));
  emit(ContactKind::EdgeEdge, x, y, r, ax.overlap, margin,
       boxEdgeId(ax.i, bitsA), boxEdgeId(ax.j, bitsB));
}

void flipContact(Contact& c)
{
  std::swap(c.colliderA, c.colliderB);
  std::swap(c.bodyA, c.bodyB);
  std::swap(c.featureA, c.featureB);
  c.normal = -c.normal;
  c.recipe.flip = !c.recipe.flip;
  if (c.kind == ContactKind::VertexFace)
    c.kind = ContactKind::FaceVertex;
  else if (c.kind == ContactKind::FaceVertex)
    c.kind = ContactKind::VertexFace;
}

}  // namespace

//==============================================================================
const char* contactKindName(ContactKind kind)
{
  switch (kind)
  {
    case ContactKind::VertexFace: return "vertex-face";
    case ContactKind::FaceVertex: return "face-vertex";
    case ContactKind::EdgeEdge: return "edge-edge";
    case ContactKind::SphereFace: return "sphere-face";
    case ContactKind::SphereEdge: return "sphere-edge";
    case ContactKind::SphereVertex: return "sphere-vertex";
    case ContactKind::SphereSphere: return "sphere-sphere";
    case ContactKind::PipePipe: return "pipe-pipe";
    case ContactKind::PipeSphere: return "pipe-sphere";
    case ContactKind::VertexPipe: return "vertex-pipe";
    case ContactKind::EdgePipe: return "edge-pipe";
  }
  return "unknown";
}

//==============================================================================
void validateShape(const Shape& shape, const std::string& field)
{
  auto positive = [&](double v, const std::string& name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ValidationError(field + "." + name, "must be positive and finite");
  };
  if (const auto* s = std::get_if<Sphere>(&shape))
    positive(s->radius, "radius");
  else if (const auto* c = std::get_if<Capsule>(&shape))
  {
    positive(c->radius, "radius");
    positive(c->halfLength, "half_length");
  }
  else if (const auto* b = std::get_if<Box>(&shape))
  {
    for (int k = 0; k < 3; ++k)
      positive(b->halfExtents[k], "half_extents");
  }
  else
  {
    const auto& h = std::get<HalfSpace>(shape);
    if (std::abs(h.normal.norm() - 1.0) > 1e-12)
      throw ValidationError(field + ".normal", "must be unit length");
    if (!std::isfinite(h.offset))
      throw ValidationError(field + ".offset", "must be finite");
  }
}

//==============================================================================
Transform colliderTransform(const Kinematics& kin, const Collider& collider)
{
  if (collider.body < 0)
    return collider.local;
  return kin.world[static_cast<size_t>(collider.body)] * collider.local;
}

//==============================================================================
std::vector<Contact> detect(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Collider>& colliders)
{
  std::vector<Contact> out;
  PairDetector det(out);
  std::vector<Placed> placed;
  placed.reserve(colliders.size());
  for (size_t i = 0; i < colliders.size(); ++i)
    placed.push_back({static_cast<int>(i), &colliders[i],
                      colliderTransform(kin, colliders[i])});

  for (size_t i = 0; i < colliders.size(); ++i)
  {
    for (size_t j = i + 1; j < colliders.size(); ++j)
    {
      const int bi = colliders[i].body, bj = colliders[j].body;
      if (bi == bj)
        continue;
      if (bi >= 0 && bj >= 0
          && (skel.parent(bi) == bj || skel.parent(bj) == bi))
        continue;
      // Dispatch with the lower shape index first.
      const Placed* x = &placed[i];
      const Placed* y = &placed[j];
      if (x->collider->shape.index() > y->collider->shape.index())
        std::swap(x, y);
      const size_t before = out.size();
      const size_t tx = x->collider->shape.index();
      const size_t ty = y->collider->shape.index();
      constexpr size_t kS = 0, kC = 1, kB = 2, kH = 3;
      if (tx == kS && ty == kS)
        det.sphereSphere(*x, *y);
      else if (tx == kS && ty == kC)
        det.capsuleSphere(*y, *x);
      else if (tx == kS && ty == kB)
        det.sphereBox(*x, *y);
      else if (tx == kS && ty == kH)
        det.sphereHalfSpace(*x, *y);
      else if (tx == kC && ty == kC)
        det.capsuleCapsule(*x, *y);
      else if (tx == kC && ty == kB)
        det.capsuleBox(*x, *y);
      else if (tx == kC && ty == kH)
        det.capsuleHalfSpace(*x, *y);
      else if (tx == kB && ty == kB)
        det.boxBox(*x, *y);
      else if (tx == kB && ty == kH)
        det.boxHalfSpace(*x, *y);

      for (size_t k = before; k < out.size(); ++k)
      {
        Contact& c = out[k];
        if (c.colliderA != static_cast<int>(i))
          flipContact(c);
        c.restitution = colliders[i].restitution * colliders[j].restitution;
        c.friction = std::min(colliders[i].friction, colliders[j].friction);
      }
    }
  }
  return out;
}

//==============================================================================
std::vector<Contact> detect(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Collider>& colliders)
{
  return detect(skel, forwardKinematics(skel, q), colliders);
}

//==============================================================================
ContactFrame contactFrame(const Vec3& normal)
{
  ContactFrame f;
  f.normal = normal;
  // Reference axis follows the dominant normal component, so axis-aligned
  // normals sit far from the switch; the basis jumps only where the two
  // largest |n_k| tie.
  const Vec3 a = normal.cwiseAbs();
  int major = 0;
  for (int k = 1; k < 3; ++k)
    if (a[k] > a[major])
      major = k;
  double second = 0.0;
  for (int k = 0; k < 3; ++k)
    if (k != major)
      second = std::max(second, a[k]);
  f.axis = (major + 1) % 3;
  f.axisMargin = a[major] - second;
  const Vec3 e = Vec3::Unit(f.axis);
  f.tangent1 = (e - e.dot(normal) * normal).normalized();
  f.tangent2 = normal.cross(f.tangent1);
  return f;
}

//==============================================================================
ContactJacobian contactJacobian(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts)
{
  const int n = skel.dofs();
  const int m = static_cast<int>(contacts.size());
  ContactJacobian out;
  out.J = Eigen::MatrixXd::Zero(3 * m, n);
  out.directions.reserve(static_cast<size_t>(3 * m));
  for (int k = 0; k < m; ++k)
  {
    const Contact& c = contacts[static_cast<size_t>(k)];
    const ContactFrame fr = contactFrame(c.normal);
    const std::array<Vec3, 3> dirs = {fr.normal, fr.tangent1, fr.tangent2};
    for (int r = 0; r < 3; ++r)
    {
      const Vec3& d = dirs[static_cast<size_t>(r)];
      out.directions.push_back(d);
      SpatialForce w;
      w << c.point.cross(d), d;
      for (int i = 0; i < n; ++i)
      {
        const double psi = (skel.moves(i, c.bodyA) ? 1.0 : 0.0)
                           - (skel.moves(i, c.bodyB) ? 1.0 : 0.0);
        if (psi != 0.0)
          out.J(3 * k + r, i) = psi * kin.worldScrews[static_cast<size_t>(i)].dot(w);
      }
    }
  }
  return out;
}

//==============================================================================
ContactJacobian contactJacobian(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts)
{
  return contactJacobian(skel, forwardKinematics(skel, q), contacts);
}

//==============================================================================
std::vector<ContactGradient> contactGradients(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts)
{
  const int n = skel.dofs();
  std::vector<ContactGradient> out;
  out.reserve(contacts.size());
  for (size_t k = 0; k < contacts.size(); ++k)
  {
    const Contact& c = contacts[k];
    if (c.margin < kKindBoundaryTolerance)
      throw KindBoundary(
          std::string("contact ") + std::to_string(k) + " ("
          + contactKindName(c.kind) + ") is within tolerance of a kind boundary");
    ContactGradient g;
    g.dPoint.resize(3, n);
    g.dNormal.resize(3, n);
    for (int j = 0; j < n; ++j)
    {
      const SpatialMotion& s = kin.worldScrews[static_cast<size_t>(j)];
      const Vec3 w = s.head<3>(), v = s.tail<3>();
      std::array<Vec3, 4> df;
      for (size_t f = 0; f < 4; ++f)
      {
        const GeometryFeature& feat = c.recipe.features[f];
        if (!skel.moves(j, feat.body))
          df[f] = Vec3::Zero();
        else if (feat.direction)
          df[f] = w.cross(feat.value);
        else
          df[f] = w.cross(feat.value) + v;
      }
      Vec3 dp, dn;
      recipeTangent(c.recipe, df, dp, dn);
      g.dPoint.col(j) = dp;
      g.dNormal.col(j) = dn;
    }

    const ContactFrame fr = contactFrame(c.normal);
    if (fr.axisMargin < kKindBoundaryTolerance
        && g.dNormal.cwiseAbs().maxCoeff() > 1e-12)
      throw KindBoundary(
          "contact " + std::to_string(k)
          + " has a rotating normal at a tangent-axis tie");
    const Vec3 e = Vec3::Unit(fr.axis);
    const Vec3 gt = e - e.dot(c.normal) * c.normal;
    for (auto& d : g.dDirections)
      d.resize(3, n);
    for (int j = 0; j < n; ++j)
    {
      const Vec3 dn = g.dNormal.col(j);
      const Vec3 dgt = -e.dot(dn) * c.normal - e.dot(c.normal) * dn;
      const Vec3 dt1 = dUnit(gt, dgt);
      g.dDirections[0].col(j) = dn;
      g.dDirections[1].col(j) = dt1;
      g.dDirections[2].col(j) = dn.cross(fr.tangent1) + c.normal.cross(dt1);
    }
    out.push_back(std::move(g));
  }
  return out;
}

//==============================================================================
std::vector<ContactGradient> contactGradients(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts)
{
  return contactGradients(skel, forwardKinematics(skel, q), contacts);
}

namespace {

// Wrench of one row and its q-derivative, plus the row's sign pattern psi.
struct RowWrench
{
  SpatialForce F;
  Eigen::Matrix<double, 6, Eigen::Dynamic> dF;
};

RowWrench rowWrench(const Contact& c, const ContactGradient& g, int r,
                    const Vec3& d, int n)
{
  RowWrench out;
  out.F << c.point.cross(d), d;
  out.dF.resize(6, n);
  for (int j = 0; j < n; ++j)
  {
    const Vec3 dp = g.dPoint.col(j);
    const Vec3 dd = g.dDirections[static_cast<size_t>(r)].col(j);
    out.dF.col(j) << dp.cross(d) + c.point.cross(dd), dd;
  }
  return out;
}

}  // namespace

//==============================================================================
Eigen::MatrixXd dJtfDq(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts,
    const std::vector<ContactGradient>& gradients,
    const Eigen::VectorXd& f)
{
  const int n = skel.dofs();
  if (f.size() != 3 * static_cast<int>(contacts.size()))
    throw DimensionMismatch("impulse vector does not match contact rows");
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  for (size_t k = 0; k < contacts.size(); ++k)
  {
    const Contact& c = contacts[k];
    const ContactFrame fr = contactFrame(c.normal);
    const std::array<Vec3, 3> dirs = {fr.normal, fr.tangent1, fr.tangent2};
    for (int r = 0; r < 3; ++r)
    {
      const double fr_ = f[static_cast<int>(3 * k) + r];
      if (fr_ == 0.0)
        continue;
      const RowWrench rw
          = rowWrench(c, gradients[k], r, dirs[static_cast<size_t>(r)], n);
      for (int i = 0; i < n; ++i)
      {
        const double psi = (skel.moves(i, c.bodyA) ? 1.0 : 0.0)
                           - (skel.moves(i, c.bodyB) ? 1.0 : 0.0);
        if (psi == 0.0)
          continue;
        const SpatialMotion& Ai = kin.worldScrews[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j)
        {
          double v = Ai.dot(rw.dF.col(j));
          if (j != i && skel.moves(j, i))
            v += lieBracket(kin.worldScrews[static_cast<size_t>(j)], Ai)
                     .dot(rw.F);
          H(i, j) += psi * fr_ * v;
        }
      }
    }
  }
  return H;
}

//==============================================================================
Eigen::MatrixXd dJtfDq(
    const Skeleton& skel,
    const Eigen::VectorXd& q,
    const std::vector<Contact>& contacts,
    const Eigen::VectorXd& f)
{
  const Kinematics kin = forwardKinematics(skel, q);
  return dJtfDq(skel, kin, contacts, contactGradients(skel, kin, contacts), f);
}

//==============================================================================
Eigen::MatrixXd dJwDq(
    const Skeleton& skel,
    const Kinematics& kin,
    const std::vector<Contact>& contacts,
    const std::vector<ContactGradient>& gradients,
    const Eigen::VectorXd& w)
{
  const int n = skel.dofs();
  if (w.size() != n)
    throw DimensionMismatch("joint vector has wrong length");
  const int m = static_cast<int>(contacts.size());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(3 * m, n);
  for (int k = 0; k < m; ++k)
  {
    const Contact& c = contacts[static_cast<size_t>(k)];
    const ContactFrame fr = contactFrame(c.normal);
    const std::array<Vec3, 3> dirs = {fr.normal, fr.tangent1, fr.tangent2};
    // Relative spatial velocity of the two bodies under w, and its
    // q-derivative.
    SpatialMotion V = SpatialMotion::Zero();
    Eigen::Matrix<double, 6, Eigen::Dynamic> dV
        = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, n);
    for (int i = 0; i < n; ++i)
    {
      const double psi = (skel.moves(i, c.bodyA) ? 1.0 : 0.0)
                         - (skel.moves(i, c.bodyB) ? 1.0 : 0.0);
      if (psi == 0.0 || w[i] == 0.0)
        continue;
      const SpatialMotion& Ai = kin.worldScrews[static_cast<size_t>(i)];
      V += psi * w[i] * Ai;
      for (int j = 0; j < n; ++j)
        if (j != i && skel.moves(j, i))
          dV.col(j) += psi * w[i]
                       * lieBracket(kin.worldScrews[static_cast<size_t>(j)], Ai);
    }
    for (int r = 0; r < 3; ++r)
    {
      const RowWrench rw = rowWrench(c, gradients[static_cast<size_t>(k)], r,
                                     dirs[static_cast<size_t>(r)], n);
      D.row(3 * k + r) = V.transpose() * rw.dF + rw.F.transpose() * dV;
    }
  }
  return D;
}

}  // namespace nimble_mini
