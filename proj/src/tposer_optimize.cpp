#include "ddfpose/tposer_optimize.hpp"

namespace ddfpose::tposer {

using geom::Camera;
using geom::Pose9;
using geom::SurfaceMap;

int k_schedule(int t, int n_views) { return std::min(1 + t / 2, n_views); }

StepInputs build_step_inputs(const std::vector<const std::vector<ViewObservation>*>& trajs,
                             const std::vector<StateX>& states, int K, ddf::DdfModel& ddf_model,
                             const NetConfig& cfg, torch::Dtype dtype) {
  torch::NoGradGuard no_grad;
  const auto ddf_dtype = ddf_model->parameters().front().scalar_type();
  const int64_t B = int64_t(trajs.size());
  std::vector<torch::Tensor> all_maps, all_vc;
  all_maps.reserve(size_t(B));
  all_vc.reserve(size_t(B));

  for (int64_t b = 0; b < B; ++b) {
    const auto& views = *trajs[b];
    const Pose9& pose = states[b].pose;
    const auto z = states[b].z.detach().to(ddf_dtype);
    std::vector<torch::Tensor> maps_k, vc_k;
    for (int k = 0; k < K; ++k) {
      const ViewObservation& obs = views[size_t(k)];
      const auto pred = ddf::render_ddf_posed(ddf_model, z, obs.cam, pose);
      torch::Tensor maps;
      if (cfg.variant == Variant::NoNocs) {
        maps = view_maps_tensor_depth(obs.depth, pred.depth, dtype);
      } else {
        const SurfaceMap obs_map = geom::depth_to_surface_map(obs.depth, obs.cam, pose);
        const SurfaceMap pred_map = geom::depth_to_surface_map(pred.depth, obs.cam, pose);
        maps = view_maps_tensor(obs_map, pred_map, obs.depth.mask, dtype);
      }
      maps_k.push_back(maps.unsqueeze(0));
      const auto vc = geom::viewing_condition(obs.cam, pose);
      vc_k.push_back(torch::tensor({vc[0], vc[1], vc[2], vc[3], vc[4], vc[5], vc[6]},
                                   torch::TensorOptions().dtype(dtype))
                         .unsqueeze(0));
    }
    all_maps.push_back(torch::cat(maps_k, 0).unsqueeze(0));
    all_vc.push_back(torch::cat(vc_k, 0).unsqueeze(0));
  }
  StepInputs si;
  si.maps = torch::cat(all_maps, 0);
  si.vc = torch::cat(all_vc, 0);
  si.K = K;
  return si;
}

UpdateTensors forward_step(TransposerModel& model, const StepInputs& cur, const StepInputs* prev,
                           bool view_added) {
  const Variant variant = model->cfg.variant;
  const auto B = cur.maps.size(0);

  if (variant == Variant::Baseline) {
    // Per-view head updates, averaged; no attention, no momentum.
    auto tokens = model->tokenize(cur.maps, cur.vc, Role::Encoder);  // [B,K,D]
    auto flat = tokens.reshape({B * cur.K, tokens.size(2)});
    auto u = model->run_heads(flat);
    UpdateTensors avg;
    avg.dp = u.dp.view({B, cur.K, 3}).mean(1);
    avg.ddg = u.ddg.view({B, cur.K, 3}).mean(1);
    avg.ddr = u.ddr.view({B, cur.K, 3}).mean(1);
    avg.ds = u.ds.view({B, cur.K, 3}).mean(1);
    avg.dz = u.dz.view({B, cur.K, -1}).mean(1);
    return avg;
  }

  auto enc_tokens = model->tokenize(cur.maps, cur.vc, Role::Encoder);
  auto memory = model->encode(enc_tokens);

  if (variant == Variant::NoDecoder) {
    return model->run_heads(memory.mean(1));
  }

  torch::Tensor queries;
  if (prev == nullptr) {
    // Step 0: no past exists; the step-0 inputs themselves act as queries.
    queries = model->tokenize(cur.maps, cur.vc, Role::DecoderPast);
  } else {
    queries = model->tokenize(prev->maps, prev->vc, Role::DecoderPast);
    if (view_added && variant != Variant::NoCurrentToken) {
      auto new_maps = cur.maps.narrow(1, cur.K - 1, 1);
      auto new_vc = cur.vc.narrow(1, cur.K - 1, 1);
      auto new_token = model->tokenize(new_maps, new_vc, Role::DecoderCurrent);
      queries = torch::cat({queries, new_token}, 1);
    }
  }
  auto out = model->decode(queries, memory);
  return model->run_heads(out.mean(1));
}

OptimizeResult optimize(const std::vector<ViewObservation>& stream, const StateX& x0,
                        TransposerModel& model, ddf::DdfModel& ddf_model, int T) {
  if (T < 1) throw std::invalid_argument("optimize: T >= 1");
  if (stream.empty()) throw std::invalid_argument("optimize: empty view stream");
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();  // dropout off during the optimization loop
  ddf_model->eval();

  const auto dtype = model->parameters().front().scalar_type();
  OptimizeResult result;
  result.history.push_back(x0);
  StateX x = x0;
  StepInputs prev;
  int prev_k = 0;

  for (int t = 0; t < T; ++t) {
    const int K = k_schedule(t, int(stream.size()));
    StepInputs cur = build_step_inputs({&stream}, {x}, K, ddf_model, model->cfg, dtype);
    const UpdateTensors local =
        forward_step(model, cur, t == 0 ? nullptr : &prev, K > prev_k);
    auto xb = StateBatch::from_states({x}, dtype);
    auto next = apply_update_batch(xb, to_world_update(local, xb));
    StateX nx = next.state(0);
    nx.z = nx.z.to(x.z.scalar_type());
    x = nx;
    result.history.push_back(x);
    result.k_trace.push_back(K);
    prev = std::move(cur);
    prev_k = K;
  }
  if (was_training) model->train();
  return result;
}

void save_tp_checkpoint(const std::filesystem::path& path, const TpCheckpoint& ckpt) {
  torch::serialize::OutputArchive ar;
  ar.write("format_version", torch::tensor(int64_t(1)));
  ar.write("config", c10::IValue(ckpt.cfg.to_text()));
  ar.write("category", c10::IValue(ckpt.category));
  ar.write("symmetry", c10::IValue(ckpt.symmetry));
  ar.write("ddf_ref", c10::IValue(ckpt.ddf_ref));
  torch::serialize::OutputArchive params;
  for (const auto& p : ckpt.model->named_parameters()) params.write(p.key(), p.value());
  ar.write("params", params);
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  ar.save_to(path.string());
}

TpCheckpoint load_tp_checkpoint(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path.string());
  TpCheckpoint ckpt;
  c10::IValue iv;
  ar.read("config", iv);
  ckpt.cfg = NetConfig::from_text(iv.toStringRef());
  ar.read("category", iv);
  ckpt.category = iv.toStringRef();
  ar.read("symmetry", iv);
  ckpt.symmetry = iv.toStringRef();
  ar.read("ddf_ref", iv);
  ckpt.ddf_ref = iv.toStringRef();
  ckpt.model = TransposerModel(ckpt.cfg);
  torch::serialize::InputArchive params;
  ar.read("params", params);
  torch::NoGradGuard no_grad;
  for (auto& p : ckpt.model->named_parameters()) {
    torch::Tensor loaded;
    params.read(p.key(), loaded);
    p.value().copy_(loaded);
  }
  return ckpt;
}

}  // namespace ddfpose::tposer
