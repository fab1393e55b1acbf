#include <bit>
#include <cstring>
#include <fstream>

#include "ddfpose/dataset.hpp"

namespace ddfpose::synth {

namespace fs = std::filesystem;
using geom::Camera;
using geom::Mat3;
using geom::Vec3;

static_assert(std::endian::native == std::endian::little,
              "dataset blobs are little-endian; big-endian hosts are unsupported");

namespace {

constexpr uint32_t kMagic = 0x52464444;  // "DDFR"
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("dataset: truncated record");
  return v;
}

void put_f32(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
}

void get_f32(std::istream& is, std::vector<float>& v, size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(float)));
  if (!is) throw std::runtime_error("dataset: truncated float block");
}

void write_record(const fs::path& path, const DatasetRecord& rec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot write " + path.string());
  const int h = rec.frames.empty() ? 0 : rec.frames[0].depth.height;
  const int w = rec.frames.empty() ? 0 : rec.frames[0].depth.width;
  put(os, kMagic);
  put(os, kVersion);
  put(os, uint32_t(h));
  put(os, uint32_t(w));
  put(os, uint32_t(rec.frames.size()));

  const geom::Pose9& pose = rec.gt_pose;
  const float pose_vals[12] = {
      float(pose.p.x),   float(pose.p.y),   float(pose.p.z),   float(pose.d_g.x),
      float(pose.d_g.y), float(pose.d_g.z), float(pose.d_r.x), float(pose.d_r.y),
      float(pose.d_r.z), float(pose.s.x),   float(pose.s.y),   float(pose.s.z)};
  os.write(reinterpret_cast<const char*>(pose_vals), sizeof(pose_vals));

  const std::string shape_text = rec.shape.to_text();
  put(os, uint32_t(shape_text.size()));
  os.write(shape_text.data(), std::streamsize(shape_text.size()));

  for (const DatasetFrame& f : rec.frames) {
    float cam_mat[16] = {0};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cam_mat[4 * r + c] = float(f.cam.rot(r, c));
      cam_mat[4 * r + 3] = float(f.cam.trans[r]);
    }
    cam_mat[15] = 1.f;
    os.write(reinterpret_cast<const char*>(cam_mat), sizeof(cam_mat));
    put_f32(os, f.depth.depth);
    os.write(reinterpret_cast<const char*>(f.depth.mask.data()),
             std::streamsize(f.depth.mask.size()));
    put_f32(os, f.normals);
  }
  if (!os) throw std::runtime_error("dataset: write failed for " + path.string());
}

DatasetRecord read_record(const fs::path& path, const DatasetManifest& manifest) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot read " + path.string());
  if (get<uint32_t>(is) != kMagic) throw std::runtime_error("dataset: bad magic in " + path.string());
  if (get<uint32_t>(is) != kVersion) throw std::runtime_error("dataset: unsupported version");
  const int h = int(get<uint32_t>(is));
  const int w = int(get<uint32_t>(is));
  const int n_frames = int(get<uint32_t>(is));

  DatasetRecord rec;
  float pose_vals[12];
  is.read(reinterpret_cast<char*>(pose_vals), sizeof(pose_vals));
  rec.gt_pose.p = {pose_vals[0], pose_vals[1], pose_vals[2]};
  rec.gt_pose.d_g = {pose_vals[3], pose_vals[4], pose_vals[5]};
  rec.gt_pose.d_r = {pose_vals[6], pose_vals[7], pose_vals[8]};
  rec.gt_pose.s = {pose_vals[9], pose_vals[10], pose_vals[11]};

  const uint32_t text_len = get<uint32_t>(is);
  std::string shape_text(text_len, '\0');
  is.read(shape_text.data(), text_len);
  rec.shape = ShapeSpec::from_text(shape_text);

  for (int k = 0; k < n_frames; ++k) {
    DatasetFrame f;
    float cam_mat[16];
    is.read(reinterpret_cast<char*>(cam_mat), sizeof(cam_mat));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) f.cam.rot(r, c) = cam_mat[4 * r + c];
      f.cam.trans[r] = cam_mat[4 * r + 3];
    }
    f.cam.fov_deg = manifest.fov_deg;
    f.cam.height = h;
    f.cam.width = w;
    f.depth.height = h;
    f.depth.width = w;
    get_f32(is, f.depth.depth, size_t(h) * w);
    f.depth.mask.resize(size_t(h) * w);
    is.read(reinterpret_cast<char*>(f.depth.mask.data()), std::streamsize(f.depth.mask.size()));
    get_f32(is, f.normals, size_t(h) * w * 3);
    rec.frames.push_back(std::move(f));
  }
  if (!is) throw std::runtime_error("dataset: truncated record " + path.string());
  return rec;
}

}  // namespace

void save_dataset(const fs::path& dir, const DatasetManifest& manifest,
                  const std::vector<DatasetRecord>& records) {
  fs::create_directories(dir);
  std::ofstream os(dir / "manifest.txt");
  if (!os) throw std::runtime_error("dataset: cannot write manifest in " + dir.string());
  os << "schema_version = " << manifest.schema_version << "\n";
  os << "resolution = " << manifest.resolution << "\n";
  os << "fov = " << manifest.fov_deg << "\n";
  os << "category = " << manifest.category << "\n";
  os << "symmetry = " << manifest.symmetry << "\n";
  os << "record_count = " << records.size() << "\n";
  os << "kind = " << manifest.kind << "\n";
  os << "move_norm = " << manifest.move_norm << "\n";
  os << "seed = " << manifest.seed << "\n";
  for (const auto& [k, v] : manifest.extra) os << k << " = " << v << "\n";

  char name[32];
  for (size_t i = 0; i < records.size(); ++i) {
    std::snprintf(name, sizeof(name), "rec_%05zu.bin", i);
    write_record(dir / name, records[i]);
  }
}

DatasetManifest load_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw std::runtime_error("dataset: missing manifest in " + dir.string());
  DatasetManifest m;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "schema_version") m.schema_version = std::stoi(val);
    else if (key == "resolution") m.resolution = std::stoi(val);
    else if (key == "fov") m.fov_deg = std::stod(val);
    else if (key == "category") m.category = val;
    else if (key == "symmetry") m.symmetry = val;
    else if (key == "record_count") m.record_count = std::stoi(val);
    else if (key == "kind") m.kind = val;
    else if (key == "move_norm") m.move_norm = val;
    else if (key == "seed") m.seed = std::stoull(val);
    else m.extra[key] = val;
  }
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  char name[32];
  for (int i = 0; i < ds.manifest.record_count; ++i) {
    std::snprintf(name, sizeof(name), "rec_%05d.bin", i);
    ds.records.push_back(read_record(dir / name, ds.manifest));
  }
  return ds;
}

Dataset build_trajectory_dataset(const std::vector<ShapeSpec>& shapes, int n_trajectories,
                                 std::mt19937_64& rng, const TrajectoryConfig& cfg) {
  if (shapes.empty()) throw std::invalid_argument("build_trajectory_dataset: no shapes");
  Dataset ds;
  ds.manifest.resolution = cfg.resolution;
  ds.manifest.fov_deg = cfg.fov_deg;
  ds.manifest.category = shapes[0].category;
  ds.manifest.symmetry = category_symmetry_name(shapes[0].category);
  ds.manifest.kind = "trajectory";

  for (const ShapeSpec& shape : shapes) {
    for (int j = 0; j < n_trajectories; ++j) {
      Trajectory traj;
      bool ok = false;
      for (int retry = 0; retry < 20 && !ok; ++retry) {
        try {
          traj = sample_trajectory(rng, shape, cfg);
          ok = true;
        } catch (const CoverageUnsatisfiable&) {
          // retry with a fresh grid start
        }
      }
      if (!ok) throw CoverageUnsatisfiable{};

      DatasetRecord rec;
      rec.shape = shape;
      rec.gt_pose = traj.gt_pose;
      for (const Camera& cam : traj.cameras) {
        DatasetFrame f;
        f.cam = cam;
        RenderResult r = render_depth_posed(shape, cam, traj.gt_pose);
        f.depth = std::move(r.depth);
        f.normals = std::move(r.normals);
        rec.frames.push_back(std::move(f));
      }
      ds.records.push_back(std::move(rec));
    }
  }
  ds.manifest.record_count = int(ds.records.size());
  return ds;
}

Dataset build_ddf_views_dataset(const std::vector<ShapeSpec>& shapes, int views_per_instance,
                                std::mt19937_64& rng, int resolution, double fov_deg,
                                double min_coverage) {
  if (shapes.empty()) throw std::invalid_argument("build_ddf_views_dataset: no shapes");
  Dataset ds;
  ds.manifest.resolution = resolution;
  ds.manifest.fov_deg = fov_deg;
  ds.manifest.category = shapes[0].category;
  ds.manifest.symmetry = category_symmetry_name(shapes[0].category);
  ds.manifest.kind = "ddf_views";

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  const size_t min_pixels = size_t(min_coverage * resolution * resolution);

  for (const ShapeSpec& shape : shapes) {
    DatasetRecord rec;
    rec.shape = shape;
    rec.gt_pose = geom::Pose9{};  // identity: canonical frame
    for (int v = 0; v < views_per_instance; ++v) {
      for (int attempt = 0;; ++attempt) {
        Vec3 eye{gauss(rng), gauss(rng), gauss(rng)};
        if (eye.norm() < 1e-6) continue;
        eye = eye.normalized() * geom::kCanonicalRadius;
        const Vec3 target{jitter(rng), jitter(rng), jitter(rng)};
        const Camera cam = geom::look_at(eye, target, {0, 0, 1}, fov_deg, resolution, resolution);
        RenderResult r = render_depth(shape, cam);
        size_t covered = 0;
        for (uint8_t m : r.depth.mask) covered += m;
        if (covered < min_pixels) {
          if (attempt > 200) throw CoverageUnsatisfiable{};
          continue;
        }
        DatasetFrame f;
        f.cam = cam;
        f.depth = std::move(r.depth);
        f.normals = std::move(r.normals);
        rec.frames.push_back(std::move(f));
        break;
      }
    }
    ds.records.push_back(std::move(rec));
  }
  ds.manifest.record_count = int(ds.records.size());
  return ds;
}

}  // namespace ddfpose::synth
