#include <fstream>
#include <numeric>

#include "ddfpose/harness.hpp"

namespace ddfpose::harness {

using tposer::StateBatch;
using tposer::StateX;
using tposer::StepInputs;
using tposer::UpdateTensors;
using tposer::ViewObservation;

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<ViewObservation> observations_of(const synth::DatasetRecord& rec) {
  std::vector<ViewObservation> views;
  views.reserve(rec.frames.size());
  for (const auto& f : rec.frames) views.push_back({f.cam, f.depth});
  return views;
}

}  // namespace

StateX sample_init_state(std::mt19937_64& rng, const geom::Pose9& gt_pose,
                         const torch::Tensor& mean_latent) {
  std::uniform_real_distribution<double> tr(-0.3, 0.3);
  std::uniform_real_distribution<double> sc(0.7, 1.3);
  StateX x;
  x.pose.p = gt_pose.p + geom::Vec3{tr(rng), tr(rng), tr(rng)};
  const geom::Mat3 rot = synth::random_rotation(rng);
  x.pose.d_g = rot.col(0);
  x.pose.d_r = rot.col(1);
  x.pose.s = {sc(rng), sc(rng), sc(rng)};
  x.z = mean_latent.detach().clone();
  return x;
}

TrainTpResult train_transposer(const synth::Dataset& data, const ddf::DdfCheckpoint& ddf_ckpt,
                               const TrainTpConfig& cfg, const std::filesystem::path& outdir) {
  if (data.manifest.category != ddf_ckpt.category)
    throw CategoryMismatch("train_transposer: dataset category '" + data.manifest.category +
                           "' vs DDF '" + ddf_ckpt.category + "'");
  if (data.records.empty()) throw std::runtime_error("train_transposer: empty dataset");
  if (cfg.deterministic) at::set_num_threads(1);

  std::filesystem::create_directories(outdir);
  TrainTpResult result;

  // The DDF stays frozen: detached from the optimizer and gradient-free.
  ddf::DdfModel ddf_model = ddf_ckpt.model;
  for (auto& p : ddf_model->parameters()) p.set_requires_grad(false);
  ddf_model->eval();
  result.ddf_hash_before = ddf::parameter_hash(*ddf_model);

  // Ground-truth latents per record, from the auto-decoder training.
  std::vector<int64_t> latent_row(data.records.size());
  for (size_t i = 0; i < data.records.size(); ++i) {
    const int want = data.records[i].shape.id;
    auto it = std::find(ddf_ckpt.instance_ids.begin(), ddf_ckpt.instance_ids.end(), want);
    if (it == ddf_ckpt.instance_ids.end())
      throw CategoryMismatch("train_transposer: no latent for instance " + std::to_string(want));
    latent_row[i] = it - ddf_ckpt.instance_ids.begin();
  }

  tposer::NetConfig net = cfg.net;
  net.latent_dim = ddf_ckpt.cfg.latent_dim;
  tposer::TransposerModel model(net);
  tposer::t_fixup_init(model, cfg.seed);
  torch::optim::Adam optim(model->parameters(), torch::optim::AdamOptions(cfg.lr));

  const auto dtype = torch::kFloat32;
  const auto symmetry = synth::category_symmetry(data.manifest.symmetry);
  const int n_views = int(data.records[0].frames.size());

  // Seed-deterministic validation split over trajectories.
  std::vector<int> order(data.records.size());
  std::iota(order.begin(), order.end(), 0);
  {
    std::mt19937_64 split_rng(splitmix(cfg.seed ^ 0x5a5a5a5aull));
    std::shuffle(order.begin(), order.end(), split_rng);
  }
  const int n_val = std::max(1, int(std::lround(cfg.val_fraction * double(order.size()))));
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty()) throw std::runtime_error("train_transposer: no training trajectories");

  auto gt_state = [&](int rec_idx) {
    StateX gt;
    gt.pose = data.records[size_t(rec_idx)].gt_pose;
    gt.z = ddf_ckpt.latents[latent_row[size_t(rec_idx)]].detach().clone();
    return gt;
  };

  // Runs the optimization horizon for a batch; applies per-step parameter
  // updates in training, accumulates the summed step losses otherwise.
  auto run_horizon = [&](const std::vector<int>& recs, int T, bool training,
                         std::mt19937_64& init_rng) -> double {
    const size_t B = recs.size();
    std::vector<const std::vector<ViewObservation>*> trajs;
    std::vector<std::vector<ViewObservation>> storage(B);
    std::vector<StateX> states(B);
    std::vector<StateX> gts(B);
    for (size_t b = 0; b < B; ++b) {
      storage[b] = observations_of(data.records[size_t(recs[b])]);
      gts[b] = gt_state(recs[b]);
      states[b] = sample_init_state(init_rng, gts[b].pose, ddf_ckpt.mean_latent);
    }
    for (size_t b = 0; b < B; ++b) trajs.push_back(&storage[b]);
    auto gt_batch = StateBatch::from_states(gts, dtype);

    double horizon_loss = 0.0;
    StepInputs prev;
    int prev_k = 0;
    for (int t = 0; t < T; ++t) {
      const int K = tposer::k_schedule(t, n_views);
      StepInputs cur;
      try {
        cur = tposer::build_step_inputs(trajs, states, K, ddf_model, net, dtype);
      } catch (const geom::ZeroBBox&) {
        ++result.skipped_steps;  // degenerate transient pose; drop the rest of the horizon
        break;
      }
      const UpdateTensors local =
          tposer::forward_step(model, cur, t == 0 ? nullptr : &prev, K > prev_k);
      auto xb = StateBatch::from_states(states, dtype);
      auto next = tposer::apply_update_batch(xb, tposer::to_world_update(local, xb));
      auto loss = tposer::transposer_loss_batch(next, gt_batch, cfg.weights, symmetry);
      if (training) {
        optim.zero_grad();
        loss.backward();
        optim.step();
      }
      horizon_loss += loss.item<double>();
      for (size_t b = 0; b < B; ++b) {
        states[b] = next.state(int(b));  // detached before the next step runs
      }
      prev = std::move(cur);
      prev_k = K;
    }
    return horizon_loss;
  };

  std::mt19937_64 epoch_rng(cfg.seed);
  double best_val = std::numeric_limits<double>::max();
  std::ofstream log(outdir / "train_log.csv");
  log << "epoch,T,train_loss,val_loss\n";

  auto run_validation = [&](int epoch) {
    torch::NoGradGuard no_grad;
    model->eval();
    double val = 0.0;
    for (size_t i = 0; i < val_idx.size(); ++i) {
      std::mt19937_64 vrng(splitmix(cfg.seed ^ (0xabcdefull + i)));  // fixed per val trajectory
      val += run_horizon({val_idx[i]}, cfg.T, false, vrng);
    }
    val /= double(val_idx.size());
    model->train();
    result.val_loss.emplace_back(epoch, val);
    if (val < best_val) {
      best_val = val;
      result.best.model = tposer::TransposerModel(net);
      torch::NoGradGuard ng;
      auto src = model->named_parameters();
      for (auto& p : result.best.model->named_parameters()) p.value().copy_(*src.find(p.key()));
    }
    return val;
  };

  model->train();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int T = epoch < cfg.warmup_epochs ? cfg.warmup_T : cfg.T;
    result.epoch_T.push_back(T);
    std::shuffle(train_idx.begin(), train_idx.end(), epoch_rng);
    std::mt19937_64 init_rng(splitmix(cfg.seed + 0x1000ull * uint64_t(epoch + 1)));

    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < train_idx.size(); start += size_t(cfg.batch_size)) {
      const size_t end = std::min(train_idx.size(), start + size_t(cfg.batch_size));
      std::vector<int> batch(train_idx.begin() + start, train_idx.begin() + end);
      epoch_loss += run_horizon(batch, T, true, init_rng);
      ++batches;
    }
    epoch_loss /= std::max(1, batches);
    result.train_loss.push_back(epoch_loss);

    const bool do_val = (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
    double val = std::numeric_limits<double>::quiet_NaN();
    if (do_val) val = run_validation(epoch);
    log << epoch << ',' << T << ',' << epoch_loss << ',';
    if (do_val) log << val;
    log << '\n';
    log.flush();
  }

  if (!result.best.model) {
    run_validation(cfg.epochs - 1);
  }
  result.best.cfg = net;
  result.best.category = data.manifest.category;
  result.best.symmetry = data.manifest.symmetry;
  result.ddf_hash_after = ddf::parameter_hash(*ddf_model);
  tposer::save_tp_checkpoint(outdir / "model.ckpt", result.best);
  return result;
}

AblateResult ablate(const std::string& variant, const synth::Dataset& train_data,
                    const synth::Dataset& test_data, const ddf::DdfCheckpoint& ddf_ckpt,
                    const TrainTpConfig& base_cfg, const EvalConfig& eval_cfg,
                    const std::filesystem::path& outdir) {
  AblateResult res;
  res.variant = variant;
  TrainTpConfig cfg = base_cfg;  // identical protocol; only the variant differs
  cfg.net.variant = tposer::variant_from_name(variant);
  res.train = train_transposer(train_data, ddf_ckpt, cfg, outdir / variant);
  ddf::DdfCheckpoint ddf_copy = ddf_ckpt;
  res.eval = evaluate(res.train.best, ddf_copy, test_data, eval_cfg);
  return res;
}

}  // namespace ddfpose::harness
