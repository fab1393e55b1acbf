#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddfpose::geom {

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra. Double precision throughout; images are
// float32 (the on-disk format) with geometry promoted to double on use.
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
  Vec3 operator/(double k) const { return {x / k, y / k, z / k}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  Vec3 cwiseMul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  Vec3 cwiseDiv(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }
  Vec3 cwiseAbs() const { return {std::abs(x), std::abs(y), std::abs(z)}; }
  Vec3 cwiseMax(const Vec3& o) const {
    return {std::max(x, o.x), std::max(y, o.y), std::max(z, o.z)};
  }
  double maxCoeff() const { return std::max(x, std::max(y, z)); }
  double squaredNorm() const { return dot(*this); }
  double norm() const { return std::sqrt(squaredNorm()); }
  Vec3 normalized() const { return *this / norm(); }
};

inline Vec3 operator*(double k, const Vec3& v) { return v * k; }

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return Mat3{}; }
  static Mat3 from_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    Mat3 r;
    r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
    return r;
  }

  double operator()(int r, int c) const { return m[3 * r + c]; }
  double& operator()(int r, int c) { return m[3 * r + c]; }

  Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }
  Mat3 transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  double trace() const { return m[0] + m[4] + m[8]; }
  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Rotation about a unit axis by angle (radians), Rodrigues form.
Mat3 axis_angle(const Vec3& axis, double angle);

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct DegenerateAxes : std::runtime_error {
  explicit DegenerateAxes(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyCloud : std::runtime_error {
  EmptyCloud() : std::runtime_error("chamfer_distance: empty point cloud") {}
};
struct ZeroBBox : std::runtime_error {
  explicit ZeroBBox(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Pose: translation, two rotation axis vectors, anisotropic scale.
// ---------------------------------------------------------------------------

struct Pose9 {
  Vec3 p{0, 0, 0};
  Vec3 d_g{1, 0, 0};
  Vec3 d_r{0, 1, 0};
  Vec3 s{1, 1, 1};
};

// Gram-Schmidt rotation from the two axis vectors: columns
// [a1, a2, a1 x a2] with a1 = normalize(d_g), a2 the orthogonalized d_r.
// Throws DegenerateAxes for near-zero or near-parallel inputs.
Mat3 rotation_from_axes(const Vec3& d_g, const Vec3& d_r);

inline Mat3 rotation_of(const Pose9& pose) { return rotation_from_axes(pose.d_g, pose.d_r); }

// Pose maps normalized object coordinates q to world: R (s .* q) + p.
Vec3 world_from_object(const Pose9& pose, const Mat3& rot, const Vec3& q);
Vec3 object_from_world(const Pose9& pose, const Mat3& rot, const Vec3& w);

// ---------------------------------------------------------------------------
// Rays and the canonical sphere (radius 1, object-frame origin).
// ---------------------------------------------------------------------------

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

struct CanonicalRay {
  Vec3 p_sphere;   // on the unit sphere
  Vec3 dir;        // unit, same as the source ray
  double offset;   // signed distance from the source origin to p_sphere
};

inline constexpr double kCanonicalRadius = 1.0;

// Reparameterizes a ray onto the canonical sphere. Origins outside the sphere
// take the first intersection along +dir; inside origins take the backward
// intersection (offset < 0). Returns nullopt when the ray misses the sphere.
std::optional<CanonicalRay> canonicalize_ray(const Ray& ray);

// Maps a world-frame ray into the normalized object frame. The direction is
// re-normalized; metric_ratio converts distances: dist_obj = dist_world * ratio.
Ray object_ray_from_world(const Pose9& pose, const Mat3& rot, const Ray& world,
                          double* metric_ratio);

// ---------------------------------------------------------------------------
// Camera: rigid world-from-camera transform, vertical FoV, resolution.
// Camera frame looks down -z, x right, y up; pixel rows grow downward.
// Depth images store the Euclidean distance along the pixel ray.
// ---------------------------------------------------------------------------

struct Camera {
  Mat3 rot;          // world-from-camera rotation
  Vec3 trans;        // camera center in world
  double fov_deg = 50.0;
  int height = 64;
  int width = 64;

  double focal() const { return 0.5 * height / std::tan(0.5 * fov_deg * M_PI / 180.0); }

  Ray pixel_ray(int row, int col) const {
    const double f = focal();
    Vec3 d{(col + 0.5 - 0.5 * width) / f, -(row + 0.5 - 0.5 * height) / f, -1.0};
    return {trans, (rot * d).normalized()};
  }

  // Projects a world point; returns (col, row, depth_along_-z) or nullopt when
  // the point is behind the camera.
  std::optional<std::array<double, 3>> project(const Vec3& w) const {
    const Vec3 c = rot.transpose() * (w - trans);
    const double depth = -c.z;
    if (depth <= 1e-12) return std::nullopt;
    const double f = focal();
    return std::array<double, 3>{c.x / depth * f + 0.5 * width - 0.5,
                                 -c.y / depth * f + 0.5 * height - 0.5, depth};
  }
};

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_deg,
               int height, int width);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

inline constexpr float kBackgroundDepth = std::numeric_limits<float>::infinity();

struct DepthImage {
  int height = 0, width = 0;
  std::vector<float> depth;   // distance along the pixel ray; inf on background
  std::vector<uint8_t> mask;  // 1 inside the object

  DepthImage() = default;
  DepthImage(int h, int w)
      : height(h), width(w), depth(size_t(h) * w, kBackgroundDepth), mask(size_t(h) * w, 0) {}

  size_t idx(int r, int c) const { return size_t(r) * width + c; }
  float at(int r, int c) const { return depth[idx(r, c)]; }
  bool in(int r, int c) const { return mask[idx(r, c)] != 0; }
};

struct SurfaceMap {
  int height = 0, width = 0;
  std::vector<float> coords;  // H*W*3, zeros outside the mask
  std::vector<uint8_t> mask;

  SurfaceMap() = default;
  SurfaceMap(int h, int w)
      : height(h), width(w), coords(size_t(h) * w * 3, 0.f), mask(size_t(h) * w, 0) {}

  size_t idx(int r, int c) const { return size_t(r) * width + c; }
};

// Back-projects masked pixels into the normalized object frame under `pose`.
// Out-of-range coordinates are kept (the pose estimate may be wrong while an
// optimization is running); a one-time process warning can be enabled.
SurfaceMap depth_to_surface_map(const DepthImage& img, const Camera& cam, const Pose9& pose);
void set_surface_map_warnings(bool enabled);

// Unit surface normals from back-projected 4-neighborhoods (central
// differences), oriented toward the camera; zero where any neighbor is masked
// out or the cross product degenerates. World frame. Returns H*W*3.
std::vector<float> normals_from_depth(const DepthImage& img, const Camera& cam);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Geodesic angle of R1^T R2 on SO(3), radians.
double riemannian_distance(const Mat3& r1, const Mat3& r2);

// Symmetric mean squared nearest-neighbor distance, divided by scale^2.
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b, double scale);

// 7D viewing condition: camera position in the normalized object frame (3),
// unit direction from it toward the object center (3), and the ratio of the
// full image diagonal to the projected bounding-box diagonal (1). The object
// extent is modeled as the canonical unit-diagonal cube (edge 1/sqrt(3)).
std::array<double, 7> viewing_condition(const Camera& cam, const Pose9& pose);

}  // namespace ddfpose::geom
