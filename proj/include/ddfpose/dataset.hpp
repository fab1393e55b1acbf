#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddfpose/synth.hpp"

namespace ddfpose::synth {

struct DatasetFrame {
  geom::Camera cam;
  geom::DepthImage depth;
  std::vector<float> normals;  // H*W*3
};

struct DatasetRecord {
  ShapeSpec shape;
  geom::Pose9 gt_pose;
  std::vector<DatasetFrame> frames;
};

struct DatasetManifest {
  int schema_version = 1;
  int resolution = 64;
  double fov_deg = 50.0;
  std::string category;
  std::string symmetry = "none";
  int record_count = 0;
  std::string kind = "trajectory";  // trajectory | ddf_views
  std::string move_norm = "linf";   // grid-step norm used by the camera walk
  uint64_t seed = 0;

  std::map<std::string, std::string> extra;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DatasetRecord> records;
};

void save_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                  const std::vector<DatasetRecord>& records);
Dataset load_dataset(const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

// Renders a trajectory dataset: `n_trajectories` per shape, 5 views each.
Dataset build_trajectory_dataset(const std::vector<ShapeSpec>& shapes, int n_trajectories,
                                 std::mt19937_64& rng, const TrajectoryConfig& cfg);

// Renders per-instance views from cameras on the unit canonical sphere with
// the shape at identity pose (the auto-decoder training protocol).
Dataset build_ddf_views_dataset(const std::vector<ShapeSpec>& shapes, int views_per_instance,
                                std::mt19937_64& rng, int resolution, double fov_deg,
                                double min_coverage = 0.02);

}  // namespace ddfpose::synth
