#pragma once

#include <filesystem>

#include "ddfpose/dataset.hpp"
#include "ddfpose/ddf.hpp"

namespace ddfpose::ddf {

struct EmptyDataset : std::runtime_error {
  EmptyDataset() : std::runtime_error("train_autodecoder: empty dataset") {}
};

struct TrainDdfConfig {
  int epochs = 1500;
  double lr_params = 1e-4;
  double lr_latent = 5e-4;
  double p_inside = 0.2;    // pixel sampling probability inside the dilated mask
  double p_outside = 2e-3;  // and outside it
  int dilate_px_at64 = 5;   // dilation radius at 64x64, scaled with resolution
  uint64_t seed = 1;
  bool deterministic = false;
  int log_every = 50;
};

struct DdfCheckpoint {
  DdfModel model{nullptr};
  torch::Tensor latents;      // [n_instances, L]
  torch::Tensor mean_latent;  // [L]
  DdfConfig cfg;
  std::string category;
  std::string symmetry = "none";
  std::vector<int> instance_ids;
  std::vector<std::string> shape_texts;
};

struct TrainDdfResult {
  DdfCheckpoint checkpoint;
  std::vector<double> loss_trace;  // one entry per epoch
};

// Auto-decoder training: per epoch and instance, one random view, importance
// pixel sampling over the dilated mask, loss on inverse distances, neighbor
// normals, and the latent regularizer; Adam with split learning rates.
TrainDdfResult train_autodecoder(const synth::Dataset& data, const DdfConfig& cfg,
                                 const TrainDdfConfig& tc);

// Single-view latent fit (known camera and pose): 200 Adam steps at 1e-3 on
// lambda_d * mean|I_obs - I_est(z)| + lambda_r * ||z||, from the mean latent.
torch::Tensor fit_latent(DdfModel& model, const geom::DepthImage& observed,
                         const geom::Camera& cam, const geom::Pose9& pose,
                         const torch::Tensor& z_init, const FitWeights& w = {},
                         int steps = 200, double lr = 1e-3);

void save_ddf_checkpoint(const std::filesystem::path& path, const DdfCheckpoint& ckpt);
DdfCheckpoint load_ddf_checkpoint(const std::filesystem::path& path);

// A stable content hash of all model parameters (used to verify freezing).
uint64_t parameter_hash(const torch::nn::Module& module);

// Binary dilation of a mask by `radius` (Chebyshev disc).
std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int h, int w, int radius);

}  // namespace ddfpose::ddf
