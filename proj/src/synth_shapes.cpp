#include <sstream>

#include "ddfpose/synth.hpp"

namespace ddfpose::synth {

using geom::Vec3;

double sdf_primitive(const Primitive& prim, const Vec3& p) {
  const Vec3 q = p - prim.center;
  switch (prim.kind) {
    case Primitive::Kind::Sphere:
      return q.norm() - prim.params.x;
    case Primitive::Kind::Box: {
      const Vec3 d = q.cwiseAbs() - prim.params;
      const Vec3 outside = d.cwiseMax({0, 0, 0});
      return outside.norm() + std::min(d.maxCoeff(), 0.0);
    }
    case Primitive::Kind::Cylinder: {
      const double dr = std::hypot(q.x, q.y) - prim.params.x;
      const double dz = std::abs(q.z) - prim.params.y;
      const double ox = std::max(dr, 0.0), oz = std::max(dz, 0.0);
      return std::hypot(ox, oz) + std::min(std::max(dr, dz), 0.0);
    }
  }
  return 0.0;
}

double sdf_eval(const ShapeSpec& shape, const Vec3& p) {
  double d = std::numeric_limits<double>::max();
  for (const Primitive& prim : shape.prims) d = std::min(d, sdf_primitive(prim, p));
  return d;
}

namespace {

void primitive_bounds(const Primitive& prim, Vec3* lo, Vec3* hi) {
  Vec3 ext;
  switch (prim.kind) {
    case Primitive::Kind::Sphere:
      ext = {prim.params.x, prim.params.x, prim.params.x};
      break;
    case Primitive::Kind::Box:
      ext = prim.params;
      break;
    case Primitive::Kind::Cylinder:
      ext = {prim.params.x, prim.params.x, prim.params.y};
      break;
  }
  *lo = prim.center - ext;
  *hi = prim.center + ext;
}

}  // namespace

void ShapeSpec::bounds(Vec3* lo, Vec3* hi) const {
  Vec3 l{1e300, 1e300, 1e300}, h{-1e300, -1e300, -1e300};
  for (const Primitive& prim : prims) {
    Vec3 pl, ph;
    primitive_bounds(prim, &pl, &ph);
    l = {std::min(l.x, pl.x), std::min(l.y, pl.y), std::min(l.z, pl.z)};
    h = {std::max(h.x, ph.x), std::max(h.y, ph.y), std::max(h.z, ph.z)};
  }
  *lo = l;
  *hi = h;
}

ShapeSpec ShapeSpec::make(std::vector<Primitive> prims, std::string category, int id) {
  if (prims.empty() || prims.size() > 4)
    throw std::invalid_argument("ShapeSpec: need 1..4 primitives");
  ShapeSpec s;
  s.prims = std::move(prims);
  s.category = std::move(category);
  s.id = id;

  // Normalize: bounding box centered at the origin with unit diagonal.
  Vec3 lo, hi;
  s.bounds(&lo, &hi);
  const Vec3 center = (lo + hi) * 0.5;
  const double diag = (hi - lo).norm();
  if (diag < 1e-9) throw std::invalid_argument("ShapeSpec: degenerate bounds");
  const double k = 1.0 / diag;
  for (Primitive& prim : s.prims) {
    prim.center = (prim.center - center) * k;
    prim.params = prim.params * k;
  }
  return s;
}

std::string ShapeSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << category << ' ' << id;
  for (const Primitive& prim : prims) {
    switch (prim.kind) {
      case Primitive::Kind::Sphere: os << " sphere"; break;
      case Primitive::Kind::Box: os << " box"; break;
      case Primitive::Kind::Cylinder: os << " cylinder"; break;
    }
    os << ' ' << prim.center.x << ' ' << prim.center.y << ' ' << prim.center.z << ' '
       << prim.params.x << ' ' << prim.params.y << ' ' << prim.params.z;
  }
  return os.str();
}

ShapeSpec ShapeSpec::from_text(const std::string& text) {
  std::istringstream is(text);
  ShapeSpec s;
  is >> s.category >> s.id;
  std::string kind;
  while (is >> kind) {
    Primitive prim;
    if (kind == "sphere") prim.kind = Primitive::Kind::Sphere;
    else if (kind == "box") prim.kind = Primitive::Kind::Box;
    else if (kind == "cylinder") prim.kind = Primitive::Kind::Cylinder;
    else throw std::runtime_error("ShapeSpec::from_text: unknown primitive '" + kind + "'");
    is >> prim.center.x >> prim.center.y >> prim.center.z >> prim.params.x >> prim.params.y >>
        prim.params.z;
    if (!is) throw std::runtime_error("ShapeSpec::from_text: truncated record");
    s.prims.push_back(prim);
  }
  if (s.prims.empty()) throw std::runtime_error("ShapeSpec::from_text: no primitives");
  return s;  // stored parameters are already normalized
}

// ---------------------------------------------------------------------------
// Categories. Parameters are drawn from per-family ranges with a splitmix of
// (seed, instance id) so instances are stable across runs.
// ---------------------------------------------------------------------------

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

ShapeSpec make_category_instance(const std::string& category, int instance_id, uint64_t seed) {
  std::mt19937_64 rng(splitmix(seed * 1315423911ull + uint64_t(instance_id) + 1));
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  std::vector<Primitive> prims;
  if (category == "boxpost") {
    // Flat base box with an off-center post and a side knob: orientation-unique.
    const double bx = uni(0.30, 0.42), by = uni(0.22, 0.32), bz = uni(0.06, 0.10);
    prims.push_back({Primitive::Kind::Box, {0, 0, 0}, {bx, by, bz}});
    const double pr = uni(0.07, 0.11), ph = uni(0.20, 0.34);
    prims.push_back({Primitive::Kind::Cylinder, {bx * 0.55, -by * 0.35, bz + ph * 0.8}, {pr, ph, 0}});
    const double kr = uni(0.08, 0.13);
    prims.push_back({Primitive::Kind::Sphere, {-bx * 0.6, by * 0.45, bz + kr * 0.6}, {kr, 0, 0}});
  } else if (category == "legtable") {
    // Slab on a single corner leg plus a back wall: a chunky asymmetric L.
    const double sx = uni(0.28, 0.40), sy = uni(0.24, 0.34), sz = uni(0.05, 0.08);
    const double lift = uni(0.16, 0.26);
    prims.push_back({Primitive::Kind::Box, {0, 0, lift}, {sx, sy, sz}});
    const double lr = uni(0.06, 0.10);
    prims.push_back({Primitive::Kind::Cylinder, {-sx * 0.6, -sy * 0.6, lift * 0.5 - sz}, {lr, lift * 0.5 + sz, 0}});
    const double wz = uni(0.14, 0.22);
    prims.push_back({Primitive::Kind::Box, {sx * 0.8, 0, lift + sz + wz * 0.8}, {sx * 0.18, sy * 0.9, wz}});
  } else if (category == "sphere") {
    prims.push_back({Primitive::Kind::Sphere, {0, 0, 0}, {uni(0.25, 0.45), 0, 0}});
  } else if (category == "box") {
    prims.push_back({Primitive::Kind::Box, {0, 0, 0}, {uni(0.2, 0.4), uni(0.2, 0.4), uni(0.2, 0.4)}});
  } else if (category == "sqbox") {
    // Square cross-section about z: 4-fold rotational symmetry.
    const double a = uni(0.2, 0.35);
    prims.push_back({Primitive::Kind::Box, {0, 0, 0}, {a, a, uni(0.15, 0.45)}});
  } else {
    throw std::runtime_error("unknown category '" + category + "'");
  }
  return ShapeSpec::make(std::move(prims), category, instance_id);
}

std::string category_symmetry_name(const std::string& category) {
  if (category == "sqbox") return "c4_z";
  if (category == "sphere") return "c4_z";  // proxy; spheres are fully symmetric
  return "none";
}

std::vector<geom::Mat3> category_symmetry(const std::string& symmetry_name) {
  std::vector<geom::Mat3> rots{geom::Mat3::identity()};
  if (symmetry_name == "none") return rots;
  int order = 0;
  if (symmetry_name == "c2_z") order = 2;
  else if (symmetry_name == "c4_z") order = 4;
  else throw std::runtime_error("unknown symmetry '" + symmetry_name + "'");
  for (int i = 1; i < order; ++i)
    rots.push_back(geom::axis_angle({0, 0, 1}, 2.0 * M_PI * i / order));
  return rots;
}

}  // namespace ddfpose::synth
