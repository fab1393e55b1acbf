#include "ddfpose/ddf.hpp"

namespace ddfpose::ddf {

using geom::Camera;
using geom::Pose9;
using geom::Ray;
using geom::Vec3;

bool RayBatchBuilder::add(const Ray& object_ray, double metric_ratio, int64_t pixel) {
  const auto cray = geom::canonicalize_ray(object_ray);
  if (!cray) return false;
  p_sphere.insert(p_sphere.end(), {cray->p_sphere.x, cray->p_sphere.y, cray->p_sphere.z});
  dir.insert(dir.end(), {cray->dir.x, cray->dir.y, cray->dir.z});
  offset.push_back(cray->offset);
  metric.push_back(metric_ratio);
  pixel_index.push_back(pixel);
  return true;
}

RayBatch RayBatchBuilder::finish(int height, int width, torch::Dtype dtype) const {
  RayBatch batch;
  batch.height = height;
  batch.width = width;
  const int64_t n = int64_t(offset.size());
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  if (n > 0) {
    batch.p_sphere = torch::from_blob(const_cast<double*>(p_sphere.data()), {n, 3}, opts)
                         .clone().to(dtype);
    batch.dir = torch::from_blob(const_cast<double*>(dir.data()), {n, 3}, opts).clone().to(dtype);
    batch.offset = torch::from_blob(const_cast<double*>(offset.data()), {n}, opts).clone().to(dtype);
    batch.metric = torch::from_blob(const_cast<double*>(metric.data()), {n}, opts).clone().to(dtype);
  }
  batch.pixel_index = pixel_index;
  return batch;
}

RayBatch build_ray_batch(const Camera& cam, const Pose9* pose, torch::Dtype dtype) {
  RayBatchBuilder builder;
  std::optional<geom::Mat3> rot;
  if (pose) rot = geom::rotation_from_axes(pose->d_g, pose->d_r);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Ray world = cam.pixel_ray(r, c);
      double metric = 1.0;
      const Ray obj = pose ? geom::object_ray_from_world(*pose, *rot, world, &metric) : world;
      builder.add(obj, metric, int64_t(r) * cam.width + c);
    }
  }
  return builder.finish(cam.height, cam.width, dtype);
}

torch::Tensor invd_for_rays(DdfModel& model, const torch::Tensor& grid, const RayBatch& rays) {
  const auto dtype = grid.scalar_type();
  const auto dists = sample_distances(model->cfg.n_samples, dtype);        // [N]
  auto points = rays.p_sphere.unsqueeze(1) +
                rays.dir.unsqueeze(1) * dists.view({1, -1, 1});            // [P, N, 3]
  auto features = model->sample_ray_features(grid, points.unsqueeze(0));   // [1, P, N*C]
  return model->run_mlp(features.squeeze(0));
}

namespace {

RenderOut render_impl(DdfModel& model, const torch::Tensor& z, const Camera& cam,
                      const Pose9* pose) {
  const auto dtype = z.scalar_type();
  RenderOut out;
  out.invd = torch::zeros({cam.height, cam.width}, torch::TensorOptions().dtype(dtype));
  out.depth = geom::DepthImage(cam.height, cam.width);

  const RayBatch rays = build_ray_batch(cam, pose, dtype);
  if (rays.size() == 0) return out;

  auto grid = model->decode_voxels(z);
  auto invd = invd_for_rays(model, grid, rays);

  auto idx = torch::from_blob(const_cast<int64_t*>(rays.pixel_index.data()),
                              {int64_t(rays.pixel_index.size())}, torch::kInt64).clone();
  out.invd = out.invd.view({-1}).index_put({idx}, invd).view({cam.height, cam.width});

  // Threshold into a depth image (detached values; the tensor carries the graph).
  auto invd_cpu = invd.detach().to(torch::kFloat64);
  auto offset_cpu = rays.offset.to(torch::kFloat64);
  auto metric_cpu = rays.metric.to(torch::kFloat64);
  const double* iv = invd_cpu.const_data_ptr<double>();
  const double* off = offset_cpu.const_data_ptr<double>();
  const double* met = metric_cpu.const_data_ptr<double>();
  for (int64_t i = 0; i < rays.size(); ++i) {
    if (iv[i] <= model->cfg.tau_bg) continue;
    const double depth_obj = 1.0 / iv[i] + off[i];
    const double depth_world = depth_obj / met[i];
    out.depth.depth[rays.pixel_index[i]] = float(depth_world);
    out.depth.mask[rays.pixel_index[i]] = 1;
  }
  return out;
}

}  // namespace

RenderOut render_ddf(DdfModel& model, const torch::Tensor& z, const Camera& cam) {
  return render_impl(model, z, cam, nullptr);
}

RenderOut render_ddf_posed(DdfModel& model, const torch::Tensor& z, const Camera& cam,
                           const Pose9& pose) {
  return render_impl(model, z, cam, &pose);
}

torch::Tensor observed_invd(const geom::DepthImage& img, const RayBatch& rays) {
  std::vector<double> vals(rays.pixel_index.size(), 0.0);
  auto offset_cpu = rays.offset.to(torch::kFloat64);
  auto metric_cpu = rays.metric.to(torch::kFloat64);
  const double* off = offset_cpu.const_data_ptr<double>();
  const double* met = metric_cpu.const_data_ptr<double>();
  for (size_t i = 0; i < rays.pixel_index.size(); ++i) {
    const int64_t pix = rays.pixel_index[i];
    if (!img.mask[pix]) continue;  // background target: inverse distance 0
    const double depth_obj = double(img.depth[pix]) * met[i];
    vals[i] = 1.0 / (depth_obj - off[i]);
  }
  return torch::from_blob(vals.data(), {int64_t(vals.size())}, torch::kFloat64)
      .clone().to(rays.offset.dtype());
}

std::vector<Vec3> backproject(const geom::DepthImage& img, const Camera& cam) {
  std::vector<Vec3> points;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (!img.in(r, c)) continue;
      const Ray ray = cam.pixel_ray(r, c);
      points.push_back(ray.origin + ray.dir * double(img.at(r, c)));
    }
  return points;
}

std::vector<Vec3> extract_pointcloud(DdfModel& model, const torch::Tensor& z, int n_views,
                                     int resolution, double fov_deg) {
  if (n_views < 1) throw std::invalid_argument("extract_pointcloud: n_views >= 1");
  torch::NoGradGuard no_grad;
  std::vector<Vec3> cloud;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_views; ++i) {
    const double zc = n_views == 1 ? 0.0 : 1.0 - 2.0 * (i + 0.5) / n_views;
    const double rad = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const double phi = golden * i;
    const Vec3 eye{rad * std::cos(phi), rad * std::sin(phi), zc};
    const Camera cam = geom::look_at(eye * geom::kCanonicalRadius, {0, 0, 0}, {0, 0, 1},
                                     fov_deg, resolution, resolution);
    const RenderOut ro = render_ddf(model, z, cam);
    auto pts = backproject(ro.depth, cam);
    cloud.insert(cloud.end(), pts.begin(), pts.end());
  }
  return cloud;
}

}  // namespace ddfpose::ddf
