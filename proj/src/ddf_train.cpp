#include <random>
#include <unordered_map>

#include "ddfpose/ddf_train.hpp"

namespace ddfpose::ddf {

using geom::Camera;
using geom::Mat3;
using geom::Pose9;
using geom::Ray;
using geom::Vec3;

std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int h, int w, int radius) {
  std::vector<uint8_t> out(mask.size(), 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask[size_t(r) * w + c]) continue;
      const int r0 = std::max(0, r - radius), r1 = std::min(h - 1, r + radius);
      const int c0 = std::max(0, c - radius), c1 = std::min(w - 1, c + radius);
      for (int rr = r0; rr <= r1; ++rr)
        for (int cc = c0; cc <= c1; ++cc) out[size_t(rr) * w + cc] = 1;
    }
  return out;
}

namespace {

// Rays gathered for one instance-view: sampled center pixels plus the
// 4-neighborhoods needed for normal supervision.
struct ViewSample {
  RayBatchBuilder rays;
  std::vector<double> world_dirs;            // per row, 3 doubles
  std::vector<double> gt_invd;               // per center row (aligned with center_rows)
  std::vector<int64_t> center_rows;
  std::vector<std::array<int64_t, 5>> normal_sets;  // center, left, right, up, down rows
  std::vector<double> gt_normals;            // 3 per normal set
  Vec3 cam_origin;
};

ViewSample sample_view(const synth::DatasetRecord& rec, int frame_idx,
                       const std::vector<uint8_t>& dilated, double p_in, double p_out,
                       std::mt19937_64& rng) {
  const synth::DatasetFrame& frame = rec.frames[frame_idx];
  const Camera& cam = frame.cam;
  const Mat3 rot = geom::rotation_from_axes(rec.gt_pose.d_g, rec.gt_pose.d_r);
  const int h = cam.height, w = cam.width;

  ViewSample vs;
  vs.cam_origin = cam.trans;
  std::unordered_map<int64_t, int64_t> pixel2row;

  auto ensure_row = [&](int r, int c) -> int64_t {
    const int64_t pix = int64_t(r) * w + c;
    auto it = pixel2row.find(pix);
    if (it != pixel2row.end()) return it->second;
    const Ray world = cam.pixel_ray(r, c);
    double metric = 1.0;
    const Ray obj = geom::object_ray_from_world(rec.gt_pose, rot, world, &metric);
    if (!vs.rays.add(obj, metric, pix)) return -1;  // misses the canonical sphere
    vs.world_dirs.insert(vs.world_dirs.end(), {world.dir.x, world.dir.y, world.dir.z});
    const int64_t row = int64_t(vs.rays.offset.size()) - 1;
    pixel2row.emplace(pix, row);
    return row;
  };

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t pix = size_t(r) * w + c;
      const double p = dilated[pix] ? p_in : p_out;
      if (u(rng) >= p) continue;
      const int64_t row = ensure_row(r, c);
      if (row < 0) continue;
      vs.center_rows.push_back(row);
      if (frame.depth.mask[pix]) {
        const double metric = vs.rays.metric[size_t(row)];
        const double offset = vs.rays.offset[size_t(row)];
        vs.gt_invd.push_back(1.0 / (double(frame.depth.depth[pix]) * metric - offset));
      } else {
        vs.gt_invd.push_back(0.0);
      }

      // Normal supervision where the full 4-neighborhood is inside the mask.
      if (r < 1 || r + 1 >= h || c < 1 || c + 1 >= w) continue;
      if (!frame.depth.mask[pix]) continue;
      const bool nb_ok = frame.depth.in(r, c - 1) && frame.depth.in(r, c + 1) &&
                         frame.depth.in(r - 1, c) && frame.depth.in(r + 1, c);
      if (!nb_ok) continue;
      const int64_t l = ensure_row(r, c - 1), rr = ensure_row(r, c + 1);
      const int64_t up = ensure_row(r - 1, c), dn = ensure_row(r + 1, c);
      if (l < 0 || rr < 0 || up < 0 || dn < 0) continue;
      vs.normal_sets.push_back({row, l, rr, up, dn});
      vs.gt_normals.insert(vs.gt_normals.end(),
                           {frame.normals[3 * pix], frame.normals[3 * pix + 1],
                            frame.normals[3 * pix + 2]});
    }
  }
  return vs;
}

// Differentiable world-frame points and the normal loss inputs for one view.
std::pair<torch::Tensor, torch::Tensor> view_normals(const ViewSample& vs,
                                                     const torch::Tensor& invd,
                                                     torch::Dtype dtype,
                                                     const RayBatch& batch) {
  const int64_t q = int64_t(vs.normal_sets.size());
  if (q == 0) return {torch::Tensor(), torch::Tensor()};

  auto dirs = torch::from_blob(const_cast<double*>(vs.world_dirs.data()),
                               {int64_t(vs.world_dirs.size()) / 3, 3}, torch::kFloat64)
                  .clone().to(dtype);
  auto origin = torch::tensor({vs.cam_origin.x, vs.cam_origin.y, vs.cam_origin.z},
                              torch::TensorOptions().dtype(dtype));
  // World depth from canonical inverse distance; clamped to keep wildly wrong
  // early predictions from blowing up the backward pass.
  auto depth_world = (1.0 / invd.clamp(0.05, 1e3) + batch.offset) / batch.metric;
  auto points = origin.unsqueeze(0) + dirs * depth_world.unsqueeze(1);  // [P, 3]

  auto idx = [&](int which) {
    std::vector<int64_t> rows(q);
    for (int64_t i = 0; i < q; ++i) rows[i] = vs.normal_sets[i][which];
    return torch::from_blob(rows.data(), {q}, torch::kInt64).clone();
  };
  auto center = idx(0);
  auto dx = points.index_select(0, idx(2)) - points.index_select(0, idx(1));
  auto dy = points.index_select(0, idx(4)) - points.index_select(0, idx(3));
  auto n = torch::cross(dx, dy, 1);
  n = n / (n.norm(2, 1, true) + 1e-12);
  auto view_dir = dirs.index_select(0, center);
  auto flip = torch::where((n * view_dir).sum(1, true) > 0,
                           torch::full({q, 1}, -1.0, n.options()),
                           torch::full({q, 1}, 1.0, n.options()));
  n = n * flip;
  auto gt = torch::from_blob(const_cast<double*>(vs.gt_normals.data()), {q, 3}, torch::kFloat64)
                .clone().to(dtype);
  return {n, gt};
}

}  // namespace

TrainDdfResult train_autodecoder(const synth::Dataset& data, const DdfConfig& cfg,
                                 const TrainDdfConfig& tc) {
  if (data.records.empty() || data.records[0].frames.empty()) throw EmptyDataset{};
  if (tc.deterministic) at::set_num_threads(1);
  torch::manual_seed(tc.seed);

  const int n_inst = int(data.records.size());
  const int res = data.manifest.resolution;
  const int dilate_radius = std::max(1, int(std::lround(tc.dilate_px_at64 * res / 64.0)));

  DdfModel model(cfg);
  auto latents = (torch::randn({n_inst, cfg.latent_dim}) * 0.01).set_requires_grad(true);

  std::vector<torch::optim::OptimizerParamGroup> groups;
  {
    auto popts = std::make_unique<torch::optim::AdamOptions>(tc.lr_params);
    groups.emplace_back(model->parameters(), std::move(popts));
    auto lopts = std::make_unique<torch::optim::AdamOptions>(tc.lr_latent);
    groups.emplace_back(std::vector<torch::Tensor>{latents}, std::move(lopts));
  }
  torch::optim::Adam optim(groups, torch::optim::AdamOptions(tc.lr_params));

  // Dilated masks, one per (record, frame).
  std::vector<std::vector<std::vector<uint8_t>>> dilated(n_inst);
  for (int i = 0; i < n_inst; ++i)
    for (const auto& f : data.records[i].frames)
      dilated[i].push_back(dilate_mask(f.depth.mask, f.depth.height, f.depth.width, dilate_radius));

  const DdfLossWeights weights{cfg.lambda_nrm, cfg.lambda_ltn};
  std::mt19937_64 rng(tc.seed);
  TrainDdfResult result;
  torch::Tensor mean_latent = latents.detach().mean(0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    optim.zero_grad();
    auto grids = model->decode_voxels(latents);  // [n_inst, C, V, V, V]
    torch::Tensor total = torch::zeros({}, torch::kFloat32);

    for (int i = 0; i < n_inst; ++i) {
      const auto& rec = data.records[i];
      std::uniform_int_distribution<int> pick(0, int(rec.frames.size()) - 1);
      const int f = pick(rng);
      ViewSample vs = sample_view(rec, f, dilated[i][f], tc.p_inside, tc.p_outside, rng);
      const RayBatch batch = vs.rays.finish(res, res, torch::kFloat32);
      if (batch.size() == 0) {
        total = total + cfg.lambda_ltn * latents[i].norm();
        continue;
      }
      auto invd = invd_for_rays(model, grids.narrow(0, i, 1), batch);

      auto center_idx = torch::from_blob(vs.center_rows.data(), {int64_t(vs.center_rows.size())},
                                         torch::kInt64).clone();
      auto pred_center = invd.index_select(0, center_idx);
      auto gt_center = torch::from_blob(vs.gt_invd.data(), {int64_t(vs.gt_invd.size())},
                                        torch::kFloat64).clone().to(torch::kFloat32);
      auto [pred_n, gt_n] = view_normals(vs, invd, torch::kFloat32, batch);
      total = total + ddf_loss(pred_center, gt_center, pred_n, gt_n, latents[i], weights);
    }

    auto loss = total / double(n_inst);
    loss.backward();
    optim.step();
    mean_latent = latents.detach().mean(0);
    result.loss_trace.push_back(loss.item<double>());
  }

  result.checkpoint.model = model;
  result.checkpoint.latents = latents.detach().clone();
  result.checkpoint.mean_latent = mean_latent.clone();
  result.checkpoint.cfg = cfg;
  result.checkpoint.category = data.manifest.category;
  result.checkpoint.symmetry = data.manifest.symmetry;
  for (const auto& rec : data.records) {
    result.checkpoint.instance_ids.push_back(rec.shape.id);
    result.checkpoint.shape_texts.push_back(rec.shape.to_text());
  }
  return result;
}

torch::Tensor fit_latent(DdfModel& model, const geom::DepthImage& observed, const Camera& cam,
                         const Pose9& pose, const torch::Tensor& z_init, const FitWeights& w,
                         int steps, double lr) {
  const auto dtype = z_init.scalar_type();
  const RayBatch rays = build_ray_batch(cam, &pose, dtype);
  auto gt = observed_invd(observed, rays);
  auto z = z_init.detach().clone().set_requires_grad(true);
  torch::optim::Adam optim({z}, torch::optim::AdamOptions(lr));
  const double n_pixels = double(cam.height) * cam.width;
  for (int step = 0; step < steps; ++step) {
    optim.zero_grad();
    auto grid = model->decode_voxels(z);
    auto pred = invd_for_rays(model, grid, rays);
    auto loss = w.lambda_d * (pred - gt).abs().sum() / n_pixels + w.lambda_r * z.norm();
    loss.backward();
    optim.step();
  }
  return z.detach();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    out += v[i];
    if (i + 1 < v.size()) out += '\n';
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t nl = s.find('\n', start);
    if (nl == std::string::npos) {
      if (start < s.size()) out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

}  // namespace

void save_ddf_checkpoint(const std::filesystem::path& path, const DdfCheckpoint& ckpt) {
  torch::serialize::OutputArchive ar;
  ar.write("format_version", torch::tensor(int64_t(1)));
  ar.write("config", c10::IValue(ckpt.cfg.to_text()));
  ar.write("category", c10::IValue(ckpt.category));
  ar.write("symmetry", c10::IValue(ckpt.symmetry));
  ar.write("latents", ckpt.latents);
  ar.write("mean_latent", ckpt.mean_latent);
  std::vector<int64_t> ids(ckpt.instance_ids.begin(), ckpt.instance_ids.end());
  ar.write("instance_ids", torch::tensor(ids));
  ar.write("shape_texts", c10::IValue(join_lines(ckpt.shape_texts)));
  torch::serialize::OutputArchive params;
  for (const auto& p : ckpt.model->named_parameters()) params.write(p.key(), p.value());
  ar.write("params", params);
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  ar.save_to(path.string());
}

DdfCheckpoint load_ddf_checkpoint(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path.string());
  DdfCheckpoint ckpt;
  c10::IValue iv;
  ar.read("config", iv);
  ckpt.cfg = DdfConfig::from_text(iv.toStringRef());
  ar.read("category", iv);
  ckpt.category = iv.toStringRef();
  ar.read("symmetry", iv);
  ckpt.symmetry = iv.toStringRef();
  ar.read("latents", ckpt.latents);
  ar.read("mean_latent", ckpt.mean_latent);
  torch::Tensor ids;
  ar.read("instance_ids", ids);
  for (int64_t i = 0; i < ids.size(0); ++i) ckpt.instance_ids.push_back(int(ids[i].item<int64_t>()));
  ar.read("shape_texts", iv);
  ckpt.shape_texts = split_lines(iv.toStringRef());

  ckpt.model = DdfModel(ckpt.cfg);
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

uint64_t parameter_hash(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& p : module.named_parameters()) {
    for (char c : p.key()) {
      h ^= uint64_t(uint8_t(c));
      h *= 1099511628211ull;
    }
    auto t = p.value().detach().contiguous();
    const auto* bytes = reinterpret_cast<const uint8_t*>(t.const_data_ptr());
    const size_t n = t.numel() * t.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace ddfpose::ddf
