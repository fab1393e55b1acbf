#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "ddfpose/geom.hpp"

namespace ddfpose::ddf {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Configuration. The latent voxel grid covers the cube of edge 1 centered at
// the origin; rays are parameterized on the unit canonical sphere.
// ---------------------------------------------------------------------------

struct DdfConfig {
  int latent_dim = 64;
  int voxel_res = 8;        // V
  int voxel_channels = 16;  // C
  int seed_res = 2;         // edge of the reshaped seed volume before the deconvolutions
  int n_samples = 32;       // N points per ray
  int hidden = 128;         // MLP width
  int first_width = 0;      // width of the first MLP layer (also the skip width); 0 = hidden
  double lambda_nrm = 1e-2;
  double lambda_ltn = 1e-4;
  double tau_bg = 0.05;     // inverse-distance threshold separating background

  static DdfConfig paper_scale() {
    DdfConfig c;
    c.latent_dim = 256;
    c.voxel_res = 16;
    c.voxel_channels = 32;
    c.seed_res = 1;
    c.n_samples = 32;
    c.hidden = 250;
    c.first_width = 250;
    return c;
  }

  int n_deconvs() const;
  int seed_channels() const { return voxel_channels << n_deconvs(); }
  int lift_dim() const { return seed_res * seed_res * seed_res * seed_channels(); }
  int feature_dim() const { return n_samples * voxel_channels; }
  int skip_width() const { return first_width > 0 ? first_width : hidden; }

  std::string to_text() const;
  static DdfConfig from_text(const std::string& text);
};

struct DdfLossWeights {
  double lambda_nrm = 1e-2;
  double lambda_ltn = 1e-4;
};

struct FitWeights {
  double lambda_d = 10.0;
  double lambda_r = 1.0;
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

// Latent code -> seed volume (FC lift) -> stride-2 transposed convolutions
// with leaky ReLU, channels halving, up to the configured V^3 x C grid.
struct VoxelDecoderImpl : torch::nn::Module {
  explicit VoxelDecoderImpl(const DdfConfig& cfg);
  torch::Tensor forward(const torch::Tensor& z);  // [B, L] -> [B, C, V, V, V]

  DdfConfig cfg;
  torch::nn::Linear lift{nullptr};
  torch::nn::ModuleList deconvs;
};
TORCH_MODULE(VoxelDecoder);

// 12 fully connected layers over the concatenated ray features; the
// first-layer activation is concatenated to the input of layer 7; softplus
// output (inverse distance, 0 = background).
struct RayMlpImpl : torch::nn::Module {
  explicit RayMlpImpl(const DdfConfig& cfg);
  torch::Tensor forward(const torch::Tensor& features);  // [P, N*C] -> [P]

  DdfConfig cfg;
  torch::nn::ModuleList layers;
};
TORCH_MODULE(RayMlp);

struct DdfModelImpl : torch::nn::Module {
  explicit DdfModelImpl(const DdfConfig& cfg);

  // [L] or [B, L] -> [B, C, V, V, V]. Counts one decoder call.
  torch::Tensor decode_voxels(const torch::Tensor& z);

  // Trilinear features at `points` [B, P, N, 3] (cube coordinates) from
  // `grid` [B, C, V, V, V]; zero outside the unit cube. Returns [B, P, N*C]
  // concatenated near-to-far.
  torch::Tensor sample_ray_features(const torch::Tensor& grid, const torch::Tensor& points) const;

  // [P, N*C] -> [P] inverse distances. Counts one MLP batch.
  torch::Tensor run_mlp(const torch::Tensor& features);

  void reset_counters() { decode_calls = 0; mlp_batches = 0; }

  DdfConfig cfg;
  VoxelDecoder decoder{nullptr};
  RayMlp mlp{nullptr};
  int64_t decode_calls = 0;
  int64_t mlp_batches = 0;
};
TORCH_MODULE(DdfModel);

// Equally spaced sample distances on [1 - sqrt(3)/2, 1 + sqrt(3)/2].
torch::Tensor sample_distances(int n_samples, torch::Dtype dtype);

// ---------------------------------------------------------------------------
// Ray batches and rendering
// ---------------------------------------------------------------------------

// Canonicalized per-pixel rays of a camera; rays that miss the canonical
// sphere are left out (their inverse distance is identically 0).
struct RayBatch {
  torch::Tensor p_sphere;           // [P, 3]
  torch::Tensor dir;                // [P, 3]
  torch::Tensor offset;             // [P] signed origin -> sphere distance (object frame)
  torch::Tensor metric;             // [P] object-frame distance per world unit
  std::vector<int64_t> pixel_index; // row -> flat pixel
  int height = 0, width = 0;

  int64_t size() const { return p_sphere.defined() ? p_sphere.size(0) : 0; }
};

RayBatch build_ray_batch(const geom::Camera& cam, const geom::Pose9* pose, torch::Dtype dtype);

// Canonicalizes a single object-frame ray into tensors appended to a batch
// builder; used by training paths that sample pixels.
struct RayBatchBuilder {
  std::vector<double> p_sphere, dir;
  std::vector<double> offset, metric;
  std::vector<int64_t> pixel_index;

  bool add(const geom::Ray& object_ray, double metric_ratio, int64_t pixel);
  RayBatch finish(int height, int width, torch::Dtype dtype) const;
};

struct RenderOut {
  torch::Tensor invd;     // [H, W] inverse distance, 0 where the sphere is missed
  geom::DepthImage depth; // thresholded at tau_bg; world-unit depths
};

// Full-image render: one decoder call and one MLP batch regardless of
// resolution. Differentiable in z (callers wrap in NoGradGuard when not).
RenderOut render_ddf(DdfModel& model, const torch::Tensor& z, const geom::Camera& cam);
RenderOut render_ddf_posed(DdfModel& model, const torch::Tensor& z, const geom::Camera& cam,
                           const geom::Pose9& pose);

// Inverse distances for an already-built ray batch (shared by the render and
// training paths). grid is [1, C, V, V, V].
torch::Tensor invd_for_rays(DdfModel& model, const torch::Tensor& grid, const RayBatch& rays);

// Observed depth image -> per-ray canonical inverse distances aligned with
// `rays` (background and sphere-missing pixels excluded by construction).
torch::Tensor observed_invd(const geom::DepthImage& img, const RayBatch& rays);

// ---------------------------------------------------------------------------
// Loss and point clouds
// ---------------------------------------------------------------------------

// mean |invd_est - invd_gt| + lambda_nrm * mean |n_est - n_gt| + lambda_ltn * ||z||.
torch::Tensor ddf_loss(const torch::Tensor& pred_invd, const torch::Tensor& gt_invd,
                       const torch::Tensor& pred_normals, const torch::Tensor& gt_normals,
                       const torch::Tensor& z, const DdfLossWeights& w);

// Back-projected union of masked pixels from n_views viewpoints uniformly
// distributed on the canonical sphere (Fibonacci lattice).
std::vector<geom::Vec3> extract_pointcloud(DdfModel& model, const torch::Tensor& z, int n_views,
                                           int resolution = 64, double fov_deg = 70.0);

std::vector<geom::Vec3> backproject(const geom::DepthImage& img, const geom::Camera& cam);

}  // namespace ddfpose::ddf
