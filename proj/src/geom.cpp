#include "ddfpose/geom.hpp"

#include <atomic>
#include <cstdio>

namespace ddfpose::geom {

Mat3 axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r.m = {t * a.x * a.x + c,         t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y,
         t * a.x * a.y + s * a.z,   t * a.y * a.y + c,       t * a.y * a.z - s * a.x,
         t * a.x * a.z - s * a.y,   t * a.y * a.z + s * a.x, t * a.z * a.z + c};
  return r;
}

Mat3 rotation_from_axes(const Vec3& d_g, const Vec3& d_r) {
  const double ng = d_g.norm();
  const double nr = d_r.norm();
  if (ng < 1e-8 || nr < 1e-8) throw DegenerateAxes("rotation_from_axes: near-zero axis");
  const double cosang = d_g.dot(d_r) / (ng * nr);
  if (std::abs(cosang) > 1.0 - 1e-8)
    throw DegenerateAxes("rotation_from_axes: axes nearly parallel");
  const Vec3 a1 = d_g / ng;
  const Vec3 ortho = d_r - a1 * d_r.dot(a1);
  const Vec3 a2 = ortho.normalized();
  return Mat3::from_cols(a1, a2, a1.cross(a2));
}

Vec3 world_from_object(const Pose9& pose, const Mat3& rot, const Vec3& q) {
  return rot * q.cwiseMul(pose.s) + pose.p;
}

Vec3 object_from_world(const Pose9& pose, const Mat3& rot, const Vec3& w) {
  return (rot.transpose() * (w - pose.p)).cwiseDiv(pose.s);
}

std::optional<CanonicalRay> canonicalize_ray(const Ray& ray) {
  const double b = ray.origin.dot(ray.dir);
  const double c = ray.origin.squaredNorm() - kCanonicalRadius * kCanonicalRadius;
  if (c > 0.0) {  // origin outside the sphere
    if (b >= 0.0) return std::nullopt;           // pointing away; closest approach is the origin
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;         // closest approach of the line exceeds the radius
    const double t = -b - std::sqrt(disc);
    return CanonicalRay{ray.origin + ray.dir * t, ray.dir, t};
  }
  // Inside (or on) the sphere: the backward intersection always exists.
  const double disc = b * b - c;
  const double t = -b - std::sqrt(disc);
  return CanonicalRay{ray.origin + ray.dir * t, ray.dir, t};
}

Ray object_ray_from_world(const Pose9& pose, const Mat3& rot, const Ray& world,
                          double* metric_ratio) {
  const Vec3 o = object_from_world(pose, rot, world.origin);
  const Vec3 d = (rot.transpose() * world.dir).cwiseDiv(pose.s);
  const double m = d.norm();
  if (metric_ratio) *metric_ratio = m;
  return {o, d / m};
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_deg,
               int height, int width) {
  Vec3 back = (eye - target);  // camera +z points away from the target
  back = back.normalized();
  Vec3 right = up.cross(back);
  if (right.norm() < 1e-9) {
    const Vec3 alt = std::abs(back.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    right = alt.cross(back);
  }
  right = right.normalized();
  const Vec3 cam_up = back.cross(right);
  Camera cam;
  cam.rot = Mat3::from_cols(right, cam_up, back);
  cam.trans = eye;
  cam.fov_deg = fov_deg;
  cam.height = height;
  cam.width = width;
  return cam;
}

namespace {
std::atomic<bool> g_surface_map_warn{false};
std::atomic<bool> g_surface_map_warned{false};
}  // namespace

void set_surface_map_warnings(bool enabled) {
  g_surface_map_warn.store(enabled);
  g_surface_map_warned.store(false);
}

SurfaceMap depth_to_surface_map(const DepthImage& img, const Camera& cam, const Pose9& pose) {
  const Mat3 rot = rotation_from_axes(pose.d_g, pose.d_r);
  SurfaceMap out(img.height, img.width);
  size_t out_of_range = 0;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const size_t i = img.idx(r, c);
      if (!img.mask[i]) continue;
      const Ray ray = cam.pixel_ray(r, c);
      const Vec3 w = ray.origin + ray.dir * double(img.depth[i]);
      const Vec3 q = object_from_world(pose, rot, w);
      out.mask[i] = 1;
      out.coords[3 * i + 0] = float(q.x);
      out.coords[3 * i + 1] = float(q.y);
      out.coords[3 * i + 2] = float(q.z);
      if (q.cwiseAbs().maxCoeff() > 0.5 + 1e-4) ++out_of_range;
    }
  }
  if (out_of_range > 0 && g_surface_map_warn.load() && !g_surface_map_warned.exchange(true)) {
    std::fprintf(stderr,
                 "[geom] surface map: %zu coordinates outside [-0.5,0.5]^3 "
                 "(expected while the pose estimate is off)\n",
                 out_of_range);
  }
  return out;
}

std::vector<float> normals_from_depth(const DepthImage& img, const Camera& cam) {
  std::vector<float> normals(size_t(img.height) * img.width * 3, 0.f);
  auto point = [&](int r, int c) {
    const Ray ray = cam.pixel_ray(r, c);
    return ray.origin + ray.dir * double(img.at(r, c));
  };
  for (int r = 1; r + 1 < img.height; ++r) {
    for (int c = 1; c + 1 < img.width; ++c) {
      if (!img.in(r, c) || !img.in(r, c - 1) || !img.in(r, c + 1) || !img.in(r - 1, c) ||
          !img.in(r + 1, c))
        continue;
      const Vec3 dx = point(r, c + 1) - point(r, c - 1);
      const Vec3 dy = point(r + 1, c) - point(r - 1, c);
      Vec3 n = dx.cross(dy);
      const double len = n.norm();
      if (len < 1e-12) continue;
      n = n / len;
      if (n.dot(cam.pixel_ray(r, c).dir) > 0.0) n = -n;  // face the camera
      const size_t i = img.idx(r, c);
      normals[3 * i + 0] = float(n.x);
      normals[3 * i + 1] = float(n.y);
      normals[3 * i + 2] = float(n.z);
    }
  }
  return normals;
}

double riemannian_distance(const Mat3& r1, const Mat3& r2) {
  const Mat3 rel = r1.transpose() * r2;
  const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
  // atan2 form of arccos((tr-1)/2): same geodesic angle, stable near 0 and pi.
  const Vec3 skew{rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)};
  return std::atan2(0.5 * skew.norm(), c);
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b, double scale) {
  if (a.empty() || b.empty()) throw EmptyCloud{};
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    double acc = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::max();
      for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
      acc += best;
    }
    return acc / double(from.size());
  };
  return (one_way(a, b) + one_way(b, a)) / (scale * scale);
}

std::array<double, 7> viewing_condition(const Camera& cam, const Pose9& pose) {
  const Mat3 rot = rotation_from_axes(pose.d_g, pose.d_r);
  const Vec3 cam_obj = object_from_world(pose, rot, cam.trans);
  const double dist = cam_obj.norm();
  if (dist < 1e-9) throw ZeroBBox("viewing_condition: camera at the object center");
  const Vec3 to_center = -cam_obj / dist;

  // Project the canonical unit-diagonal cube.
  const double e = 0.5 / std::sqrt(3.0);
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner{(i & 1) ? e : -e, (i & 2) ? e : -e, (i & 4) ? e : -e};
    const Vec3 w = world_from_object(pose, rot, corner);
    const auto proj = cam.project(w);
    if (!proj) throw ZeroBBox("viewing_condition: object behind the camera");
    umin = std::min(umin, (*proj)[0]);
    umax = std::max(umax, (*proj)[0]);
    vmin = std::min(vmin, (*proj)[1]);
    vmax = std::max(vmax, (*proj)[1]);
  }
  const double bbox_diag = std::hypot(umax - umin, vmax - vmin);
  if (bbox_diag < 1.0) throw ZeroBBox("viewing_condition: projection under 2 pixels");
  const double img_diag = std::hypot(double(cam.width), double(cam.height));
  return {cam_obj.x, cam_obj.y, cam_obj.z, to_center.x, to_center.y, to_center.z,
          img_diag / bbox_diag};
}

}  // namespace ddfpose::geom
