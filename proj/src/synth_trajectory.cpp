#include "ddfpose/synth.hpp"

namespace ddfpose::synth {

using geom::Camera;
using geom::Mat3;
using geom::Pose9;
using geom::Vec3;

Mat3 random_rotation(std::mt19937_64& rng) {
  // Uniform over SO(3) via a normalized random quaternion.
  std::normal_distribution<double> n(0.0, 1.0);
  double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  const double len = std::sqrt(w * w + x * x + y * y + z * z);
  w /= len; x /= len; y /= len; z /= len;
  Mat3 r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
         2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
  return r;
}

geom::Pose9 sample_gt_pose(std::mt19937_64& rng, double scale_factor) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Pose9 pose;
  pose.p = {u(rng), u(rng), u(rng)};
  const Mat3 rot = random_rotation(rng);
  pose.d_g = rot.col(0);
  pose.d_r = rot.col(1);
  pose.s = {scale_factor, scale_factor, scale_factor};
  return pose;
}

namespace {

struct Cell {
  int x, y, z;
};

bool cell_valid(const Cell& c, const TrajectoryConfig& cfg) {
  const double r2 = double(c.x * c.x + c.y * c.y + c.z * c.z) * cfg.grid_interval *
                    cfg.grid_interval;
  return c.z >= 0 && r2 <= cfg.grid_radius * cfg.grid_radius &&
         r2 >= cfg.min_view_dist * cfg.min_view_dist;
}

std::vector<Cell> valid_cells(const TrajectoryConfig& cfg) {
  const int reach = int(std::floor(cfg.grid_radius / cfg.grid_interval));
  std::vector<Cell> cells;
  for (int z = 0; z <= reach; ++z)
    for (int y = -reach; y <= reach; ++y)
      for (int x = -reach; x <= reach; ++x)
        if (cell_valid({x, y, z}, cfg)) cells.push_back({x, y, z});
  return cells;
}

}  // namespace

std::vector<Vec3> sample_grid_viewpoints(std::mt19937_64& rng, const TrajectoryConfig& cfg) {
  const std::vector<Cell> cells = valid_cells(cfg);
  if (cells.empty()) throw std::runtime_error("trajectory: no valid grid cells");
  std::uniform_int_distribution<size_t> pick(0, cells.size() - 1);
  Cell cur = cells[pick(rng)];
  std::uniform_int_distribution<int> step(-cfg.max_move, cfg.max_move);

  std::vector<Vec3> points;
  points.push_back(Vec3{cur.x * cfg.grid_interval, cur.y * cfg.grid_interval,
                        cur.z * cfg.grid_interval});
  for (int v = 1; v < cfg.n_views; ++v) {
    Cell next = cur;
    for (int attempt = 0;; ++attempt) {
      next = {cur.x + step(rng), cur.y + step(rng), cur.z + step(rng)};
      const bool moved = next.x != cur.x || next.y != cur.y || next.z != cur.z;
      if (moved && cell_valid(next, cfg)) break;
      if (attempt >= 200) {  // deterministic fallback: first valid neighbor
        bool found = false;
        for (int dz = -cfg.max_move; dz <= cfg.max_move && !found; ++dz)
          for (int dy = -cfg.max_move; dy <= cfg.max_move && !found; ++dy)
            for (int dx = -cfg.max_move; dx <= cfg.max_move && !found; ++dx) {
              if (!dx && !dy && !dz) continue;
              const Cell cand{cur.x + dx, cur.y + dy, cur.z + dz};
              if (cell_valid(cand, cfg)) { next = cand; found = true; }
            }
        if (!found) throw std::runtime_error("trajectory: stuck grid walk");
        break;
      }
    }
    cur = next;
    points.push_back(Vec3{cur.x * cfg.grid_interval, cur.y * cfg.grid_interval,
                          cur.z * cfg.grid_interval});
  }
  return points;
}

Trajectory sample_trajectory(std::mt19937_64& rng, const ShapeSpec& shape,
                             const TrajectoryConfig& cfg) {
  Trajectory traj;
  std::uniform_real_distribution<double> scale_dist(0.8, 1.2);
  traj.scale_factor = scale_dist(rng);
  traj.gt_pose = sample_gt_pose(rng, traj.scale_factor);
  traj.shape_id = shape.id;

  const Mat3 rot = geom::rotation_from_axes(traj.gt_pose.d_g, traj.gt_pose.d_r);
  const std::vector<Vec3> grid = sample_grid_viewpoints(rng, cfg);

  std::uniform_real_distribution<double> jitter(-cfg.lookat_jitter, cfg.lookat_jitter);
  const size_t min_pixels = size_t(cfg.min_coverage * cfg.resolution * cfg.resolution);
  for (const Vec3& v : grid) {
    const Vec3 eye = traj.gt_pose.p + rot * v;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const Vec3 target = traj.gt_pose.p + Vec3{jitter(rng), jitter(rng), jitter(rng)};
      if ((eye - target).norm() < 1e-6) continue;
      const Camera cam = geom::look_at(eye, target, {0, 0, 1}, cfg.fov_deg, cfg.resolution,
                                       cfg.resolution);
      const RenderResult r = render_depth_posed(shape, cam, traj.gt_pose);
      size_t covered = 0;
      for (uint8_t m : r.depth.mask) covered += m;
      if (covered >= min_pixels) {
        traj.cameras.push_back(cam);
        placed = true;
        break;
      }
    }
    if (!placed) throw CoverageUnsatisfiable{};
  }
  return traj;
}

}  // namespace ddfpose::synth
