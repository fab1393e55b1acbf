#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ddfpose/dataset.hpp"
#include "ddfpose/synth.hpp"
#include "oracles.hpp"

using namespace ddfpose;
using geom::Camera;
using geom::Ray;
using geom::Vec3;
using synth::Primitive;
using synth::ShapeSpec;

namespace {
ShapeSpec raw_shape(std::vector<Primitive> prims) {
  ShapeSpec s;  // bypasses ::make so the tests control exact primitive sizes
  s.prims = std::move(prims);
  s.category = "raw";
  return s;
}
}  // namespace

TEST_CASE("primitive signed distances") {
  Primitive sphere{Primitive::Kind::Sphere, {0, 0, 0}, {0.3, 0, 0}};
  CHECK(synth::sdf_primitive(sphere, {0.5, 0, 0}) == doctest::Approx(0.2));
  CHECK(synth::sdf_primitive(sphere, {0, 0, 0}) == doctest::Approx(-0.3));

  Primitive box{Primitive::Kind::Box, {0, 0, 0}, {0.2, 0.2, 0.2}};
  CHECK(synth::sdf_primitive(box, {0.4, 0, 0}) == doctest::Approx(0.2));
  CHECK(synth::sdf_primitive(box, {0, 0, 0}) == doctest::Approx(-0.2));
  CHECK(synth::sdf_primitive(box, {0.3, 0.3, 0}) ==
        doctest::Approx(std::sqrt(2.0) * 0.1));

  Primitive cyl{Primitive::Kind::Cylinder, {0, 0, 0}, {0.2, 0.3, 0}};
  CHECK(synth::sdf_primitive(cyl, {0.5, 0, 0}) == doctest::Approx(0.3));
  CHECK(synth::sdf_primitive(cyl, {0, 0, 0.5}) == doctest::Approx(0.2));
}

TEST_CASE("union takes the primitive minimum") {
  auto shape = raw_shape({{Primitive::Kind::Sphere, {0.4, 0, 0}, {0.2, 0, 0}},
                          {Primitive::Kind::Box, {-0.4, 0, 0}, {0.1, 0.1, 0.1}}});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    const double want = std::min(synth::sdf_primitive(shape.prims[0], p),
                                 synth::sdf_primitive(shape.prims[1], p));
    CHECK(synth::sdf_eval(shape, p) == doctest::Approx(want));
  }
}

TEST_CASE("ShapeSpec::make normalizes to a centered unit-diagonal bounding box") {
  for (const char* cat : {"boxpost", "legtable", "sqbox", "sphere", "box"}) {
    for (int id = 0; id < 6; ++id) {
      const auto shape = synth::make_category_instance(cat, id, 99);
      Vec3 lo, hi;
      shape.bounds(&lo, &hi);
      CHECK((hi - lo).norm() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK((lo + hi).norm() < 1e-9);
    }
  }
}

TEST_CASE("ShapeSpec text round-trip") {
  const auto shape = synth::make_category_instance("boxpost", 3, 42);
  const auto back = ShapeSpec::from_text(shape.to_text());
  CHECK(back.category == shape.category);
  CHECK(back.id == shape.id);
  REQUIRE(back.prims.size() == shape.prims.size());
  for (size_t i = 0; i < shape.prims.size(); ++i) {
    CHECK((back.prims[i].center - shape.prims[i].center).norm() == 0.0);
    CHECK((back.prims[i].params - shape.prims[i].params).norm() == 0.0);
  }
}

TEST_CASE("sphere render hits the closed-form depth") {
  auto sphere = raw_shape({{Primitive::Kind::Sphere, {0, 0, 0}, {0.3, 0, 0}}});
  Camera cam = geom::look_at({0, 0, 1}, {0, 0, 0}, {0, 1, 0}, 60, 41, 41);
  const auto r = synth::render_depth(sphere, cam);
  REQUIRE(r.depth.in(20, 20));
  CHECK(r.depth.at(20, 20) == doctest::Approx(0.7).epsilon(1e-5));

  // Off-silhouette agreement with the analytic solution everywhere.
  int checked = 0;
  for (int row = 0; row < 41; ++row)
    for (int col = 0; col < 41; ++col) {
      const Ray ray = cam.pixel_ray(row, col);
      double t_true;
      const bool hits = oracles::ray_sphere(ray.origin, ray.dir, {0, 0, 0}, 0.3, &t_true);
      if (!hits) {
        CHECK_FALSE(r.depth.in(row, col));
        continue;
      }
      // Grazing rays may stall; skip the thin silhouette band.
      const Vec3 closest = ray.origin + ray.dir * (-(ray.origin.dot(ray.dir)));
      if (closest.norm() > 0.28) continue;
      REQUIRE(r.depth.in(row, col));
      CHECK(std::abs(double(r.depth.at(row, col)) - t_true) < 1e-5);
      ++checked;
    }
  CHECK(checked > 300);
}

TEST_CASE("box render matches the slab-method oracle") {
  const Vec3 he{0.25, 0.17, 0.31};
  auto box = raw_shape({{Primitive::Kind::Box, {0, 0, 0}, he}});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 origin = oracles::random_unit(rng) * 1.5;
    const Vec3 target{0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)};
    const Vec3 dir = (target - origin).normalized();
    double t_true;
    if (!oracles::ray_box(origin, dir, he * -1.0, he, &t_true)) continue;
    const auto traced = synth::trace_ray(box, {origin, dir});
    if (!traced) continue;  // grazing rays may stall in 256 steps
    CHECK(std::abs(*traced - t_true) < 1e-5);
    ++hits;
  }
  CHECK(hits > 400);
}

TEST_CASE("rays that miss are masked out") {
  auto sphere = raw_shape({{Primitive::Kind::Sphere, {0, 0, 0}, {0.2, 0, 0}}});
  Camera cam = geom::look_at({0, 0, 1.5}, {0, 0, 0}, {0, 1, 0}, 60, 16, 16);
  const auto r = synth::render_depth(sphere, cam);
  CHECK_FALSE(r.depth.in(0, 0));
  CHECK(r.depth.at(0, 0) == geom::kBackgroundDepth);
}

TEST_CASE("posed render equals canonical render through the pose transform") {
  const auto shape = synth::make_category_instance("legtable", 1, 9);
  std::mt19937_64 rng(13);
  const geom::Pose9 pose = synth::sample_gt_pose(rng, 1.1);
  const geom::Mat3 rot = geom::rotation_from_axes(pose.d_g, pose.d_r);
  const Camera cam =
      geom::look_at(pose.p + rot * Vec3{0.2, -1.2, 0.9}, pose.p, {0, 0, 1}, 55, 32, 32);
  const auto posed = synth::render_depth_posed(shape, cam, pose);
  int checked = 0;
  for (int row = 0; row < 32; ++row)
    for (int col = 0; col < 32; ++col) {
      if (!posed.depth.in(row, col)) continue;
      double metric = 1.0;
      const Ray obj = geom::object_ray_from_world(pose, rot, cam.pixel_ray(row, col), &metric);
      const auto t_obj = synth::trace_ray(shape, obj);
      REQUIRE(t_obj.has_value());
      CHECK(std::abs(*t_obj / metric - double(posed.depth.at(row, col))) < 1e-6);
      ++checked;
    }
  CHECK(checked > 50);
}

TEST_CASE("grid viewpoints satisfy the hemisphere-walk invariants") {
  synth::TrajectoryConfig cfg;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pts = synth::sample_grid_viewpoints(rng, cfg);
    REQUIRE(pts.size() == 5);
    for (size_t i = 0; i < pts.size(); ++i) {
      const Vec3& v = pts[i];
      CHECK(v.norm() <= 1.5 + 1e-9);
      CHECK(v.z >= -1e-12);
      for (int a = 0; a < 3; ++a) {
        const double cells = v[a] / cfg.grid_interval;
        CHECK(std::abs(cells - std::round(cells)) < 1e-9);
      }
      if (i > 0) {
        const Vec3 d = (pts[i] - pts[i - 1]).cwiseAbs();
        CHECK(d.maxCoeff() <= 2 * cfg.grid_interval + 1e-9);
        CHECK(d.maxCoeff() > 1e-9);  // the walk always moves
      }
    }
  }
}

TEST_CASE("trajectories are a deterministic function of the seed") {
  const auto shape = synth::make_category_instance("boxpost", 0, 5);
  synth::TrajectoryConfig cfg;
  cfg.resolution = 24;
  std::mt19937_64 a(99), b(99);
  const auto ta = synth::sample_trajectory(a, shape, cfg);
  const auto tb = synth::sample_trajectory(b, shape, cfg);
  REQUIRE(ta.cameras.size() == tb.cameras.size());
  CHECK(ta.scale_factor == tb.scale_factor);
  for (size_t i = 0; i < ta.cameras.size(); ++i) {
    CHECK((ta.cameras[i].trans - tb.cameras[i].trans).norm() == 0.0);
    for (int j = 0; j < 9; ++j) CHECK(ta.cameras[i].rot.m[j] == tb.cameras[i].rot.m[j]);
  }
}

TEST_CASE("trajectory views keep minimum mask coverage") {
  const auto shape = synth::make_category_instance("legtable", 2, 5);
  synth::TrajectoryConfig cfg;
  cfg.resolution = 32;
  std::mt19937_64 rng(23);
  const auto traj = synth::sample_trajectory(rng, shape, cfg);
  for (const Camera& cam : traj.cameras) {
    const auto r = synth::render_depth_posed(shape, cam, traj.gt_pose);
    size_t covered = 0;
    for (uint8_t m : r.depth.mask) covered += m;
    CHECK(double(covered) / double(32 * 32) >= 0.02);
  }
}

TEST_CASE("unsatisfiable coverage raises after bounded retries") {
  const auto shape = synth::make_category_instance("boxpost", 0, 5);
  synth::TrajectoryConfig cfg;
  cfg.resolution = 16;
  cfg.min_coverage = 0.99;
  cfg.max_attempts = 5;
  std::mt19937_64 rng(29);
  CHECK_THROWS_AS(synth::sample_trajectory(rng, shape, cfg), synth::CoverageUnsatisfiable);
}

TEST_CASE("dataset build, save, and lossless reload") {
  std::vector<ShapeSpec> shapes{synth::make_category_instance("boxpost", 0, 5),
                                synth::make_category_instance("boxpost", 1, 5)};
  synth::TrajectoryConfig cfg;
  cfg.resolution = 24;
  std::mt19937_64 rng(31);
  auto ds = synth::build_trajectory_dataset(shapes, 3, rng, cfg);
  CHECK(ds.records.size() == 6);
  for (const auto& rec : ds.records) CHECK(rec.frames.size() == 5);

  const auto dir = std::filesystem::temp_directory_path() / "ddfpose_test_ds";
  std::filesystem::remove_all(dir);
  ds.manifest.seed = 31;
  synth::save_dataset(dir, ds.manifest, ds.records);
  const auto back = synth::load_dataset(dir);
  CHECK(back.manifest.category == "boxpost");
  CHECK(back.manifest.record_count == 6);
  CHECK(back.manifest.move_norm == "linf");
  CHECK(back.manifest.seed == 31);
  REQUIRE(back.records.size() == 6);
  for (size_t i = 0; i < 6; ++i) {
    const auto& a = ds.records[i];
    const auto& b = back.records[i];
    CHECK(a.shape.to_text() == b.shape.to_text());
    REQUIRE(b.frames.size() == a.frames.size());
    for (size_t f = 0; f < a.frames.size(); ++f) {
      CHECK(a.frames[f].depth.depth == b.frames[f].depth.depth);  // bit-identical
      CHECK(a.frames[f].depth.mask == b.frames[f].depth.mask);
      CHECK(a.frames[f].normals == b.frames[f].normals);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("stored ground truth reproduces the renders") {
  std::vector<ShapeSpec> shapes{synth::make_category_instance("legtable", 0, 5)};
  synth::TrajectoryConfig cfg;
  cfg.resolution = 24;
  std::mt19937_64 rng(37);
  auto ds = synth::build_trajectory_dataset(shapes, 1, rng, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "ddfpose_test_rerender";
  std::filesystem::remove_all(dir);
  synth::save_dataset(dir, ds.manifest, ds.records);
  const auto back = synth::load_dataset(dir);

  const auto& rec = back.records[0];
  int mask_mismatch = 0;
  double max_diff = 0;
  size_t compared = 0;
  for (const auto& frame : rec.frames) {
    const auto re = synth::render_depth_posed(rec.shape, frame.cam, rec.gt_pose);
    for (size_t i = 0; i < re.depth.depth.size(); ++i) {
      if (frame.depth.mask[i] != re.depth.mask[i]) {
        ++mask_mismatch;
        continue;
      }
      if (!frame.depth.mask[i]) continue;
      max_diff = std::max(max_diff, std::abs(double(frame.depth.depth[i]) - re.depth.depth[i]));
      ++compared;
    }
  }
  CHECK(compared > 100);
  CHECK(max_diff < 1e-5);
  // float32 storage can flip a handful of silhouette pixels
  CHECK(mask_mismatch < int(0.005 * 5 * 24 * 24));
  std::filesystem::remove_all(dir);
}

TEST_CASE("ddf views dataset places cameras on the canonical sphere") {
  std::vector<ShapeSpec> shapes{synth::make_category_instance("boxpost", 0, 5)};
  std::mt19937_64 rng(41);
  auto ds = synth::build_ddf_views_dataset(shapes, 6, rng, 24, 50.0);
  REQUIRE(ds.records.size() == 1);
  REQUIRE(ds.records[0].frames.size() == 6);
  for (const auto& f : ds.records[0].frames) {
    CHECK(f.cam.trans.norm() == doctest::Approx(1.0).epsilon(1e-9));
    size_t covered = 0;
    for (uint8_t m : f.depth.mask) covered += m;
    CHECK(double(covered) / (24.0 * 24.0) >= 0.02);
  }
  // Identity ground-truth pose marks the canonical frame.
  CHECK(ds.records[0].gt_pose.p.norm() == 0.0);
  CHECK(ds.records[0].gt_pose.s.x == 1.0);
}

TEST_CASE("category symmetry groups") {
  CHECK(synth::category_symmetry("none").size() == 1);
  const auto c4 = synth::category_symmetry("c4_z");
  REQUIRE(c4.size() == 4);
  // Each group element maps the square box onto itself.
  const auto shape = synth::make_category_instance("sqbox", 0, 5);
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (const auto& rot : c4) {
    for (int i = 0; i < 200; ++i) {
      const Vec3 p{u(rng), u(rng), u(rng)};
      CHECK(synth::sdf_eval(shape, p) ==
            doctest::Approx(synth::sdf_eval(shape, rot * p)).epsilon(1e-9));
    }
  }
}
