#pragma once

#include <filesystem>

#include "ddfpose/dataset.hpp"
#include "ddfpose/ddf_train.hpp"
#include "ddfpose/kvconfig.hpp"
#include "ddfpose/tposer_optimize.hpp"

namespace ddfpose::harness {

struct CategoryMismatch : std::runtime_error {
  explicit CategoryMismatch(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainTpConfig {
  int epochs = 512;
  int warmup_epochs = 80;  // short-horizon warmup
  int warmup_T = 5;
  int T = 10;
  double lr = 1e-4;
  int batch_size = 8;
  tposer::TPLossWeights weights;
  uint64_t seed = 1;
  double val_fraction = 0.2;
  int val_every = 5;
  bool deterministic = false;
  tposer::NetConfig net;  // latent_dim is taken from the DDF checkpoint
};

// Initialization noise: translation gt + U[-0.3,0.3], rotation uniform over
// SO(3), scale U[0.7,1.3] per component, shape from the category-mean latent.
tposer::StateX sample_init_state(std::mt19937_64& rng, const geom::Pose9& gt_pose,
                                 const torch::Tensor& mean_latent);

struct TrainTpResult {
  tposer::TpCheckpoint best;
  std::vector<double> train_loss;             // per epoch (sum of step losses, batch mean)
  std::vector<std::pair<int, double>> val_loss;  // (epoch, loss)
  std::vector<int> epoch_T;                   // horizon used per epoch
  uint64_t ddf_hash_before = 0;
  uint64_t ddf_hash_after = 0;
  int skipped_steps = 0;
};

TrainTpResult train_transposer(const synth::Dataset& data, const ddf::DdfCheckpoint& ddf_ckpt,
                               const TrainTpConfig& cfg, const std::filesystem::path& outdir);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string category;
  int n = 0;
  double trans_mse = 0, rot_riemannian = 0, chamfer = 0;
  double trans_mse_median = 0, rot_median = 0, chamfer_median = 0;
  double init_trans_mse_median = 0, init_rot_median = 0;
};

struct TrajectoryMetrics {
  int record = 0;
  double trans_mse = 0, rot = 0, chamfer = 0;
  double init_trans_mse = 0, init_rot = 0;
};

struct EvalConfig {
  int T = 10;
  uint64_t seed = 7;
  int cloud_views = 5;       // DeepDDF views integrated into the estimated cloud
  int cloud_resolution = 48;
  int oracle_views = 8;      // analytic oracle cloud
  int oracle_resolution = 48;
  bool deterministic = false;
};

struct EvalResult {
  MetricsRow row;
  std::vector<TrajectoryMetrics> detail;
};

EvalResult evaluate(tposer::TpCheckpoint& model_ckpt, ddf::DdfCheckpoint& ddf_ckpt,
                    const synth::Dataset& testset, const EvalConfig& cfg);

// Pure metric computation, reused by tests that inject oracle estimates.
TrajectoryMetrics metrics_for(const tposer::StateX& final_x, const tposer::StateX& init_x,
                              const geom::Pose9& gt_pose,
                              const std::vector<geom::Vec3>& est_cloud,
                              const std::vector<geom::Vec3>& oracle_cloud);

std::vector<geom::Vec3> oracle_pointcloud(const synth::ShapeSpec& shape, int n_views,
                                          int resolution);

// CSV with one row per category plus a class-average row; values follow the
// (1e-2, 1e-1, 1e-3) scaling conventions named in the header.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
void write_detail_csv(const std::filesystem::path& path, const std::string& category,
                      const std::vector<TrajectoryMetrics>& detail);

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblateResult {
  std::string variant;
  TrainTpResult train;
  EvalResult eval;
};

AblateResult ablate(const std::string& variant, const synth::Dataset& train_data,
                    const synth::Dataset& test_data, const ddf::DdfCheckpoint& ddf_ckpt,
                    const TrainTpConfig& base_cfg, const EvalConfig& eval_cfg,
                    const std::filesystem::path& outdir);

// ---------------------------------------------------------------------------
// Latent-space export
// ---------------------------------------------------------------------------

struct TooFewInstances : std::runtime_error {
  TooFewInstances() : std::runtime_error("export_pca: need at least 3 instance latents") {}
};

// Mean-centered 2-component PCA over the instance latents. Writes a
// coordinates CSV, a scatter plot, and midpoint-interpolation renders for the
// requested latent index pairs. Returns the n x 2 embedding.
torch::Tensor export_pca(const ddf::DdfCheckpoint& ckpt, const std::filesystem::path& outdir,
                         const std::vector<std::pair<int, int>>& interp_pairs = {});

}  // namespace ddfpose::harness
