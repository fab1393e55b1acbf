#pragma once

// Test-side oracles, kept independent of the library implementations they
// check.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "ddfpose/geom.hpp"

namespace oracles {

using ddfpose::geom::Mat3;
using ddfpose::geom::Vec3;

struct Quat {
  double w, x, y, z;
};

inline Quat quat_from_matrix(const Mat3& m) {
  Quat q;
  const double tr = m.trace();
  if (tr > 0) {
    double s = std::sqrt(tr + 1.0) * 2;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q;
}

// Geodesic rotation angle via the quaternion inner product.
inline double quat_angle(const Mat3& a, const Mat3& b) {
  const Quat qa = quat_from_matrix(a);
  const Quat qb = quat_from_matrix(b);
  const double dot =
      std::abs(qa.w * qb.w + qa.x * qb.x + qa.y * qb.y + qa.z * qb.z);
  return 2.0 * std::acos(std::min(1.0, dot));
}

// Exhaustive symmetric chamfer (squared, per-direction means, /scale^2).
inline double chamfer_brute(std::span<const Vec3> a, std::span<const Vec3> b, double scale) {
  auto dir = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double acc = 0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        const double d2 = (p - q).squaredNorm();
        if (d2 < best) best = d2;
      }
      acc += best;
    }
    return acc / double(from.size());
  };
  return (dir(a, b) + dir(b, a)) / (scale * scale);
}

// Ray-box intersection by the slab method; returns the entry distance.
inline bool ray_box(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi,
                    double* t_hit) {
  double tmin = -1e300, tmax = 1e300;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dir[i]) < 1e-15) {
      if (origin[i] < lo[i] || origin[i] > hi[i]) return false;
      continue;
    }
    double t0 = (lo[i] - origin[i]) / dir[i];
    double t1 = (hi[i] - origin[i]) / dir[i];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
  }
  if (tmax < tmin || tmax < 0) return false;
  *t_hit = tmin >= 0 ? tmin : tmax;
  return true;
}

// Closed-form ray-sphere first hit.
inline bool ray_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius,
                       double* t_hit) {
  const Vec3 oc = origin - center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double t = -b - std::sqrt(disc);
  if (t < 0) return false;
  *t_hit = t;
  return true;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  const double l = std::sqrt(w * w + x * x + y * y + z * z);
  w /= l; x /= l; y /= l; z /= l;
  Mat3 m;
  m.m = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
         2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
  return m;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v{n(rng), n(rng), n(rng)};
  while (v.norm() < 1e-9) v = Vec3{n(rng), n(rng), n(rng)};
  return v.normalized();
}

}  // namespace oracles
