#pragma once

#include <random>
#include <string>
#include <vector>

#include "ddfpose/geom.hpp"

namespace ddfpose::synth {

// ---------------------------------------------------------------------------
// Analytic primitives. Cylinders are axis-aligned with +z.
// ---------------------------------------------------------------------------

struct Primitive {
  enum class Kind { Sphere, Box, Cylinder };
  Kind kind = Kind::Sphere;
  geom::Vec3 center;
  // Sphere: params.x = radius. Box: params = half extents.
  // Cylinder: params.x = radius, params.y = half height.
  geom::Vec3 params;
};

double sdf_primitive(const Primitive& prim, const geom::Vec3& p);

// A shape is a union of 1..4 primitives, normalized on construction so the
// bounding box is centered at the origin with unit diagonal.
struct ShapeSpec {
  std::vector<Primitive> prims;
  std::string category;
  int id = 0;

  static ShapeSpec make(std::vector<Primitive> prims, std::string category, int id);

  std::string to_text() const;
  static ShapeSpec from_text(const std::string& text);

  // Axis-aligned bounds of the union (tight per primitive).
  void bounds(geom::Vec3* lo, geom::Vec3* hi) const;
};

double sdf_eval(const ShapeSpec& shape, const geom::Vec3& p);

// ---------------------------------------------------------------------------
// Oracle renderer: sphere tracing with analytic SDF normals.
// ---------------------------------------------------------------------------

struct RenderResult {
  geom::DepthImage depth;
  std::vector<float> normals;  // H*W*3, world frame, zeros on background
};

struct TraceConfig {
  double hit_eps = 1e-6;
  int max_steps = 256;
  double escape_radius = 4.0;
};

// Canonical object frame (identity pose).
RenderResult render_depth(const ShapeSpec& shape, const geom::Camera& cam,
                          const TraceConfig& tc = {});
// Shape placed at `pose` in the world; cam is a world camera.
RenderResult render_depth_posed(const ShapeSpec& shape, const geom::Camera& cam,
                                const geom::Pose9& pose, const TraceConfig& tc = {});

// Single-ray trace in the canonical frame; returns hit distance or nullopt.
std::optional<double> trace_ray(const ShapeSpec& shape, const geom::Ray& ray,
                                const TraceConfig& tc = {});

// ---------------------------------------------------------------------------
// Camera trajectories: viewpoints on a 0.3-spaced grid inside the upper
// hemisphere of radius 1.5 (z >= 0 in the object's rotated frame), moving at
// most 2 grid steps per axis between views; directions rejection-sampled for
// at least 2% mask coverage.
// ---------------------------------------------------------------------------

struct TrajectoryConfig {
  int n_views = 5;
  double grid_radius = 1.5;
  double grid_interval = 0.3;
  int max_move = 2;              // per-axis grid steps (L-inf)
  double min_view_dist = 0.9;    // keeps the camera outside the object
  double min_coverage = 0.02;
  int max_attempts = 100;
  double fov_deg = 50.0;
  int resolution = 64;
  double lookat_jitter = 0.2;
};

struct CoverageUnsatisfiable : std::runtime_error {
  CoverageUnsatisfiable() : std::runtime_error("trajectory: coverage constraint unsatisfiable") {}
};

struct Trajectory {
  std::vector<geom::Camera> cameras;  // world frame
  geom::Pose9 gt_pose;
  int shape_id = 0;
  double scale_factor = 1.0;  // isotropic instance scale, U[0.8, 1.2]
};

// Samples a trajectory around `shape` posed at gt (drawn from rng): viewpoints
// live on the grid in the rotated object frame and are mapped to the world.
Trajectory sample_trajectory(std::mt19937_64& rng, const ShapeSpec& shape,
                             const TrajectoryConfig& cfg = {});

// Grid viewpoints in the object's rotated frame, before the world transform.
// Exposed for tests of the grid invariants.
std::vector<geom::Vec3> sample_grid_viewpoints(std::mt19937_64& rng, const TrajectoryConfig& cfg);

geom::Pose9 sample_gt_pose(std::mt19937_64& rng, double scale_factor);
geom::Mat3 random_rotation(std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Toy categories: parametric families of primitive unions. Instances are a
// deterministic function of (category, instance id, seed).
// ---------------------------------------------------------------------------

ShapeSpec make_category_instance(const std::string& category, int instance_id, uint64_t seed);

// Discrete rotational symmetry of a category (identity always included).
std::vector<geom::Mat3> category_symmetry(const std::string& symmetry_name);
std::string category_symmetry_name(const std::string& category);

}  // namespace ddfpose::synth
