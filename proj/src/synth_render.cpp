#include "ddfpose/synth.hpp"

namespace ddfpose::synth {

using geom::Camera;
using geom::Mat3;
using geom::Pose9;
using geom::Ray;
using geom::Vec3;

std::optional<double> trace_ray(const ShapeSpec& shape, const Ray& ray, const TraceConfig& tc) {
  double t = 0.0;
  for (int step = 0; step < tc.max_steps; ++step) {
    const Vec3 p = ray.origin + ray.dir * t;
    if (p.norm() > tc.escape_radius && step > 0) return std::nullopt;
    const double d = sdf_eval(shape, p);
    if (std::abs(d) < tc.hit_eps) {
      // Newton refinement along the ray; plain marching leaves an along-ray
      // residual of hit_eps / cos(incidence) at grazing angles.
      for (int it = 0; it < 3; ++it) {
        const double h = 1e-6;
        const double f0 = sdf_eval(shape, ray.origin + ray.dir * t);
        const double g = (sdf_eval(shape, ray.origin + ray.dir * (t + h)) -
                          sdf_eval(shape, ray.origin + ray.dir * (t - h))) /
                         (2.0 * h);
        if (std::abs(g) < 1e-4) break;
        const double dt = f0 / g;
        if (std::abs(dt) > 1e-2) break;
        t -= dt;
      }
      return t;
    }
    t += d;
    if (t < 0.0) return std::nullopt;  // marched behind the origin
  }
  return std::nullopt;  // grazing ray, treated as a miss
}

namespace {

Vec3 sdf_gradient(const ShapeSpec& shape, const Vec3& p, double h = 1e-5) {
  const double gx = sdf_eval(shape, {p.x + h, p.y, p.z}) - sdf_eval(shape, {p.x - h, p.y, p.z});
  const double gy = sdf_eval(shape, {p.x, p.y + h, p.z}) - sdf_eval(shape, {p.x, p.y - h, p.z});
  const double gz = sdf_eval(shape, {p.x, p.y, p.z + h}) - sdf_eval(shape, {p.x, p.y, p.z - h});
  Vec3 g{gx, gy, gz};
  const double n = g.norm();
  return n > 1e-12 ? g / n : Vec3{0, 0, 0};
}

}  // namespace

RenderResult render_depth(const ShapeSpec& shape, const Camera& cam, const TraceConfig& tc) {
  RenderResult out;
  out.depth = geom::DepthImage(cam.height, cam.width);
  out.normals.assign(size_t(cam.height) * cam.width * 3, 0.f);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Ray ray = cam.pixel_ray(r, c);
      const auto hit = trace_ray(shape, ray, tc);
      if (!hit) continue;
      const size_t i = out.depth.idx(r, c);
      out.depth.depth[i] = float(*hit);
      out.depth.mask[i] = 1;
      const Vec3 n = sdf_gradient(shape, ray.origin + ray.dir * *hit);
      out.normals[3 * i + 0] = float(n.x);
      out.normals[3 * i + 1] = float(n.y);
      out.normals[3 * i + 2] = float(n.z);
    }
  }
  return out;
}

RenderResult render_depth_posed(const ShapeSpec& shape, const Camera& cam, const Pose9& pose,
                                const TraceConfig& tc) {
  const Mat3 rot = geom::rotation_from_axes(pose.d_g, pose.d_r);
  RenderResult out;
  out.depth = geom::DepthImage(cam.height, cam.width);
  out.normals.assign(size_t(cam.height) * cam.width * 3, 0.f);
  // Normals transform by the inverse transpose of A = R diag(s).
  const Vec3 inv_s{1.0 / pose.s.x, 1.0 / pose.s.y, 1.0 / pose.s.z};
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Ray world = cam.pixel_ray(r, c);
      double metric = 1.0;
      const Ray obj = geom::object_ray_from_world(pose, rot, world, &metric);
      const auto hit = trace_ray(shape, obj, tc);
      if (!hit) continue;
      const size_t i = out.depth.idx(r, c);
      out.depth.depth[i] = float(*hit / metric);
      out.depth.mask[i] = 1;
      const Vec3 n_obj = sdf_gradient(shape, obj.origin + obj.dir * *hit);
      Vec3 n = rot * n_obj.cwiseMul(inv_s);
      const double len = n.norm();
      if (len > 1e-12) n = n / len;
      out.normals[3 * i + 0] = float(n.x);
      out.normals[3 * i + 1] = float(n.y);
      out.normals[3 * i + 2] = float(n.z);
    }
  }
  return out;
}

}  // namespace ddfpose::synth
