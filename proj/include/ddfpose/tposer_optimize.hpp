#pragma once

#include <filesystem>

#include "ddfpose/ddf.hpp"
#include "ddfpose/tposer.hpp"

namespace ddfpose::tposer {

struct ViewObservation {
  geom::Camera cam;
  geom::DepthImage depth;
};

// Observation count at step t: one view, growing by one every 2 steps,
// capped by the stream length.
int k_schedule(int t, int n_views);

// Raw token inputs of one step for a batch of trajectories: map stacks
// [B,K,3,C,H,W] and viewing conditions [B,K,7]. Renders run without grad; the
// caller keeps these around to build the next step's decoder queries.
struct StepInputs {
  torch::Tensor maps;
  torch::Tensor vc;
  int K = 0;
};

StepInputs build_step_inputs(const std::vector<const std::vector<ViewObservation>*>& trajs,
                             const std::vector<StateX>& states, int K, ddf::DdfModel& ddf_model,
                             const NetConfig& cfg, torch::Dtype dtype);

// Encoder over the current tokens, decoder over the previous step's queries
// plus the newly added view (when the camera moved), heads over the pooled
// decoder output. prev == nullptr bootstraps step 0 from the current inputs.
UpdateTensors forward_step(TransposerModel& model, const StepInputs& cur, const StepInputs* prev,
                           bool view_added);

struct OptimizeResult {
  std::vector<StateX> history;  // length T+1 including x0
  std::vector<int> k_trace;     // K^t per step
};

OptimizeResult optimize(const std::vector<ViewObservation>& stream, const StateX& x0,
                        TransposerModel& model, ddf::DdfModel& ddf_model, int T);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct TpCheckpoint {
  TransposerModel model{nullptr};
  NetConfig cfg;
  std::string category;
  std::string symmetry = "none";
  std::string ddf_ref;  // path of the DDF checkpoint this model was trained against
};

void save_tp_checkpoint(const std::filesystem::path& path, const TpCheckpoint& ckpt);
TpCheckpoint load_tp_checkpoint(const std::filesystem::path& path);

}  // namespace ddfpose::tposer
