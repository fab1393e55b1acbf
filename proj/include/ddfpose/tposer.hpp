#pragma once

#include <torch/torch.h>

#include "ddfpose/geom.hpp"

namespace ddfpose::tposer {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyMemory : std::runtime_error {
  EmptyMemory() : std::runtime_error("decoder_forward: empty memory") {}
};

enum class Variant { Full, Baseline, NoDecoder, NoNocs, NoCameraPe, NoCurrentToken };
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class Role { Encoder, DecoderPast, DecoderCurrent };

struct TPLossWeights {
  double lambda_p = 10.0;
  double lambda_g = 1.0;
  double lambda_r = 1.0;
  double lambda_s = 1.0;
  double lambda_z = 1.0;
};

struct NetConfig {
  int d_model = 256;
  int d_ff = 1024;
  int heads = 8;
  double dropout = 0.1;
  int enc_layers = 3;
  int dec_layers = 3;
  std::vector<int> backbone_channels{16, 32, 64, 128};
  int head_hidden = 256;
  int latent_dim = 64;
  Variant variant = Variant::Full;

  // Surface maps enter the backbone as coords+mask; raw depth+mask without NOCS.
  int map_channels() const { return variant == Variant::NoNocs ? 2 : 4; }

  std::string to_text() const;
  static NetConfig from_text(const std::string& text);
};

// ---------------------------------------------------------------------------
// Attention stack. Pre-residual blocks, x + Sublayer(x), with no
// normalization layers anywhere; stability comes from the init.
// ---------------------------------------------------------------------------

struct MultiheadAttentionImpl : torch::nn::Module {
  MultiheadAttentionImpl(int d_model, int heads, double dropout);
  // q [B,Sq,D], k/v [B,Sk,D] -> [B,Sq,D]
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

  torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
  torch::nn::Dropout attn_drop{nullptr};
  int heads = 8;
  bool capture_weights = false;
  torch::Tensor last_weights;  // [B, h, Sq, Sk] post-softmax, set when capturing
};
TORCH_MODULE(MultiheadAttention);

struct EncoderBlockImpl : torch::nn::Module {
  EncoderBlockImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  MultiheadAttention attn{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
  torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(EncoderBlock);

struct DecoderBlockImpl : torch::nn::Module {
  DecoderBlockImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& memory);

  MultiheadAttention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
  torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(DecoderBlock);

// Strided conv feature extractor with global average pooling.
struct ConvBackboneImpl : torch::nn::Module {
  ConvBackboneImpl(int in_channels, const std::vector<int>& channels);
  torch::Tensor forward(const torch::Tensor& x);  // [B*,C,H,W] -> [B*, channels.back()]

  torch::nn::ModuleList convs;
};
TORCH_MODULE(ConvBackbone);

// Object-frame update emitted by the heads; converted to the world frame
// before being applied.
struct UpdateTensors {
  torch::Tensor dp, ddg, ddr, ds, dz;  // [B,3] x4, [B,L]
};

struct TransposerModelImpl : torch::nn::Module {
  explicit TransposerModelImpl(const NetConfig& cfg);

  // maps [B,S,3,C,H,W], vc [B,S,7] -> tokens [B,S,d_model]
  torch::Tensor tokenize(const torch::Tensor& maps, const torch::Tensor& vc, Role role);
  torch::Tensor encode(const torch::Tensor& tokens);
  torch::Tensor decode(const torch::Tensor& queries, const torch::Tensor& memory);
  UpdateTensors run_heads(const torch::Tensor& pooled);  // [B,D]

  void set_capture_attention(bool on);

  NetConfig cfg;
  ConvBackbone backbone{nullptr};
  torch::nn::Linear proj_enc{nullptr}, proj_dec_past{nullptr}, proj_dec_cur{nullptr};
  torch::Tensor w_pe;  // [7, d_model]
  torch::nn::ModuleList enc_blocks, dec_blocks;
  torch::nn::Sequential head_p{nullptr}, head_dg{nullptr}, head_dr{nullptr}, head_s{nullptr},
      head_z{nullptr};
};
TORCH_MODULE(TransposerModel);

// Depth-scaled initialization for the normalization-free stack; throws
// ConfigError if any normalization layer is present. Deterministic per seed.
void t_fixup_init(TransposerModel& model, uint64_t seed);
bool contains_normalization(const torch::nn::Module& module);

// ---------------------------------------------------------------------------
// State, updates, loss
// ---------------------------------------------------------------------------

struct StateX {
  geom::Pose9 pose;
  torch::Tensor z;
};

struct UpdateDX {
  geom::Vec3 dp, ddg, ddr, ds;
  torch::Tensor dz;
};

// p += dp; axes normalized after their additive update; s Hadamard-scaled;
// z += dz. Throws DegenerateAxes when an updated axis collapses.
StateX apply_update(const StateX& x, const UpdateDX& dx);

// Batched torch states used by the training loop.
struct StateBatch {
  torch::Tensor p, dg, dr, s, z;

  static StateBatch from_states(const std::vector<StateX>& xs, torch::Dtype dtype);
  StateX state(int b) const;
  StateBatch detached() const;
};

torch::Tensor rotation_batch(const torch::Tensor& dg, const torch::Tensor& dr);  // [B,3,3]

// Heads emit updates in the (estimated) object frame; translation picks up the
// estimated rotation and scale, the axis nudges the rotation only.
UpdateTensors to_world_update(const UpdateTensors& local, const StateBatch& x);

StateBatch apply_update_batch(const StateBatch& x, const UpdateTensors& world_dx);

// Per-parameter loss; the two rotation terms are jointly minimized over the
// declared symmetry group before weighting. Differentiable, mean over batch.
torch::Tensor transposer_loss_batch(const StateBatch& x, const StateBatch& gt,
                                    const TPLossWeights& w,
                                    const std::vector<geom::Mat3>& symmetry);

double transposer_loss(const StateX& x, const StateX& gt, const TPLossWeights& w,
                       const std::vector<geom::Mat3>& symmetry);

// ---------------------------------------------------------------------------
// Spec-level token ops (thin wrappers over the batched model methods).
// ---------------------------------------------------------------------------

struct ViewToken {
  torch::Tensor embedding;  // [d_model]
  int view_index = 0;
  int step_index = 0;
};

ViewToken make_token(const geom::SurfaceMap& observed, const geom::SurfaceMap& predicted,
                     const std::vector<uint8_t>& mask, const std::array<double, 7>& vc,
                     Role role, TransposerModel& model);
std::vector<ViewToken> encoder_forward(const std::vector<ViewToken>& tokens,
                                       TransposerModel& model);
std::vector<ViewToken> decoder_forward(const std::vector<ViewToken>& queries,
                                       const std::vector<ViewToken>& memory,
                                       TransposerModel& model);
UpdateDX heads_forward(const std::vector<ViewToken>& decoder_out, TransposerModel& model);

// [B,S,3,C,H,W] map stack for one view (observed, predicted, difference).
torch::Tensor view_maps_tensor(const geom::SurfaceMap& observed, const geom::SurfaceMap& predicted,
                               const std::vector<uint8_t>& mask, torch::Dtype dtype);
torch::Tensor view_maps_tensor_depth(const geom::DepthImage& observed,
                                     const geom::DepthImage& predicted, torch::Dtype dtype);

}  // namespace ddfpose::tposer
