#include "ddfpose/tposer.hpp"

namespace ddfpose::tposer {

using geom::Mat3;
using geom::Pose9;
using geom::Vec3;

StateX apply_update(const StateX& x, const UpdateDX& dx) {
  StateX out;
  out.pose.p = x.pose.p + dx.dp;
  const Vec3 g = x.pose.d_g + dx.ddg;
  const Vec3 r = x.pose.d_r + dx.ddr;
  if (g.norm() < 1e-8 || r.norm() < 1e-8)
    throw geom::DegenerateAxes("apply_update: axis collapsed");
  out.pose.d_g = g.normalized();
  out.pose.d_r = r.normalized();
  out.pose.s = x.pose.s.cwiseMul(dx.ds);
  out.z = x.z + dx.dz;
  return out;
}

StateBatch StateBatch::from_states(const std::vector<StateX>& xs, torch::Dtype dtype) {
  const int64_t B = int64_t(xs.size());
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto p = torch::empty({B, 3}, opts), dg = torch::empty({B, 3}, opts),
       dr = torch::empty({B, 3}, opts), s = torch::empty({B, 3}, opts);
  std::vector<torch::Tensor> zs;
  for (int64_t b = 0; b < B; ++b) {
    const Pose9& pose = xs[b].pose;
    for (int i = 0; i < 3; ++i) {
      p[b][i] = pose.p[i];
      dg[b][i] = pose.d_g[i];
      dr[b][i] = pose.d_r[i];
      s[b][i] = pose.s[i];
    }
    zs.push_back(xs[b].z.detach().to(dtype).unsqueeze(0));
  }
  StateBatch sb;
  sb.p = p.to(dtype);
  sb.dg = dg.to(dtype);
  sb.dr = dr.to(dtype);
  sb.s = s.to(dtype);
  sb.z = torch::cat(zs, 0);
  return sb;
}

StateX StateBatch::state(int b) const {
  auto vec = [&](const torch::Tensor& t) {
    auto row = t[b].detach().to(torch::kFloat64);
    return Vec3{row[0].item<double>(), row[1].item<double>(), row[2].item<double>()};
  };
  StateX x;
  x.pose.p = vec(p);
  x.pose.d_g = vec(dg);
  x.pose.d_r = vec(dr);
  x.pose.s = vec(s);
  x.z = z[b].detach().clone();
  return x;
}

StateBatch StateBatch::detached() const {
  return {p.detach(), dg.detach(), dr.detach(), s.detach(), z.detach()};
}

torch::Tensor rotation_batch(const torch::Tensor& dg, const torch::Tensor& dr) {
  namespace F = torch::nn::functional;
  auto a1 = F::normalize(dg, F::NormalizeFuncOptions().dim(-1));
  auto ortho = dr - a1 * (dr * a1).sum(-1, true);
  auto a2 = F::normalize(ortho, F::NormalizeFuncOptions().dim(-1));
  auto a3 = torch::cross(a1, a2, -1);
  return torch::stack({a1, a2, a3}, -1);  // columns
}

UpdateTensors to_world_update(const UpdateTensors& local, const StateBatch& x) {
  auto rot = rotation_batch(x.dg.detach(), x.dr.detach());
  UpdateTensors w;
  w.dp = torch::matmul(rot, (x.s.detach() * local.dp).unsqueeze(-1)).squeeze(-1);
  w.ddg = torch::matmul(rot, local.ddg.unsqueeze(-1)).squeeze(-1);
  w.ddr = torch::matmul(rot, local.ddr.unsqueeze(-1)).squeeze(-1);
  w.ds = local.ds;
  w.dz = local.dz;
  return w;
}

StateBatch apply_update_batch(const StateBatch& x, const UpdateTensors& dx) {
  namespace F = torch::nn::functional;
  StateBatch out;
  out.p = x.p + dx.dp;
  out.dg = F::normalize(x.dg + dx.ddg, F::NormalizeFuncOptions().dim(-1));
  out.dr = F::normalize(x.dr + dx.ddr, F::NormalizeFuncOptions().dim(-1));
  out.s = x.s * dx.ds;
  out.z = x.z + dx.dz;
  return out;
}

torch::Tensor transposer_loss_batch(const StateBatch& x, const StateBatch& gt,
                                    const TPLossWeights& w,
                                    const std::vector<Mat3>& symmetry) {
  namespace F = torch::nn::functional;
  const auto B = x.p.size(0);
  const auto opts = x.p.options();

  auto cos_to = [&](const torch::Tensor& est, const torch::Tensor& target) {
    return F::cosine_similarity(est, target,
                                F::CosineSimilarityFuncOptions().dim(-1).eps(1e-12));
  };

  // Rotation terms: jointly minimized over the symmetry group per sample.
  auto gt_rot = rotation_batch(gt.dg, gt.dr);  // [B,3,3]
  torch::Tensor best_sum, best_g, best_r;
  for (const Mat3& sym : symmetry) {
    auto sym_t = torch::empty({3, 3}, torch::TensorOptions().dtype(torch::kFloat64));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) sym_t[i][j] = sym(i, j);
    auto rot_k = torch::matmul(gt_rot, sym_t.to(opts.dtype()));
    auto lg = 1.0 - cos_to(x.dg, rot_k.select(-1, 0));
    auto lr = 1.0 - cos_to(x.dr, rot_k.select(-1, 1));
    auto sum = lg + lr;
    if (!best_sum.defined()) {
      best_sum = sum;
      best_g = lg;
      best_r = lr;
    } else {
      auto take = sum < best_sum;
      best_g = torch::where(take, lg, best_g);
      best_r = torch::where(take, lr, best_r);
      best_sum = torch::where(take, sum, best_sum);
    }
  }
  (void)B;
  auto mse = [](const torch::Tensor& a, const torch::Tensor& b) {
    return (a - b).pow(2).mean(-1);
  };
  auto per_sample = w.lambda_p * mse(x.p, gt.p) + w.lambda_g * best_g + w.lambda_r * best_r +
                    w.lambda_s * mse(x.s, gt.s) + w.lambda_z * mse(x.z, gt.z);
  return per_sample.mean();
}

double transposer_loss(const StateX& x, const StateX& gt, const TPLossWeights& w,
                       const std::vector<Mat3>& symmetry) {
  auto xb = StateBatch::from_states({x}, torch::kFloat64);
  auto gb = StateBatch::from_states({gt}, torch::kFloat64);
  return transposer_loss_batch(xb, gb, w, symmetry).item<double>();
}

// ---------------------------------------------------------------------------
// Map tensors and spec-level token ops
// ---------------------------------------------------------------------------

torch::Tensor view_maps_tensor(const geom::SurfaceMap& observed, const geom::SurfaceMap& predicted,
                               const std::vector<uint8_t>& mask, torch::Dtype dtype) {
  if (observed.height != predicted.height || observed.width != predicted.width)
    throw std::invalid_argument("view_maps_tensor: resolution mismatch");
  const int h = observed.height, w = observed.width;
  auto maps = torch::zeros({3, 4, h, w}, torch::TensorOptions().dtype(torch::kFloat32));
  auto acc = maps.accessor<float, 4>();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t i = size_t(r) * w + c;
      const bool obs_in = mask[i] != 0;
      const bool pred_in = predicted.mask[i] != 0;
      if (obs_in) {
        for (int ch = 0; ch < 3; ++ch) acc[0][ch][r][c] = observed.coords[3 * i + ch];
        acc[0][3][r][c] = 1.f;
      }
      if (pred_in) {
        for (int ch = 0; ch < 3; ++ch) acc[1][ch][r][c] = predicted.coords[3 * i + ch];
        acc[1][3][r][c] = 1.f;
      }
      if (obs_in && pred_in) {  // difference is zeroed where either is masked out
        for (int ch = 0; ch < 3; ++ch)
          acc[2][ch][r][c] = observed.coords[3 * i + ch] - predicted.coords[3 * i + ch];
        acc[2][3][r][c] = 1.f;
      }
    }
  }
  return maps.to(dtype);
}

torch::Tensor view_maps_tensor_depth(const geom::DepthImage& observed,
                                     const geom::DepthImage& predicted, torch::Dtype dtype) {
  const int h = observed.height, w = observed.width;
  auto maps = torch::zeros({3, 2, h, w}, torch::TensorOptions().dtype(torch::kFloat32));
  auto acc = maps.accessor<float, 4>();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t i = size_t(r) * w + c;
      const bool obs_in = observed.mask[i] != 0;
      const bool pred_in = predicted.mask[i] != 0;
      if (obs_in) {
        acc[0][0][r][c] = observed.depth[i];
        acc[0][1][r][c] = 1.f;
      }
      if (pred_in) {
        acc[1][0][r][c] = predicted.depth[i];
        acc[1][1][r][c] = 1.f;
      }
      if (obs_in && pred_in) {
        acc[2][0][r][c] = observed.depth[i] - predicted.depth[i];
        acc[2][1][r][c] = 1.f;
      }
    }
  }
  return maps.to(dtype);
}

namespace {

torch::Dtype model_dtype(TransposerModel& model) {
  return model->parameters().front().scalar_type();
}

torch::Tensor stack_tokens(const std::vector<ViewToken>& tokens) {
  std::vector<torch::Tensor> embs;
  embs.reserve(tokens.size());
  for (const auto& t : tokens) embs.push_back(t.embedding.unsqueeze(0));
  return torch::cat(embs, 0).unsqueeze(0);  // [1, S, D]
}

}  // namespace

ViewToken make_token(const geom::SurfaceMap& observed, const geom::SurfaceMap& predicted,
                     const std::vector<uint8_t>& mask, const std::array<double, 7>& vc,
                     Role role, TransposerModel& model) {
  const auto dtype = model_dtype(model);
  auto maps = view_maps_tensor(observed, predicted, mask, dtype).unsqueeze(0).unsqueeze(0);
  auto vc_t = torch::tensor({vc[0], vc[1], vc[2], vc[3], vc[4], vc[5], vc[6]},
                            torch::TensorOptions().dtype(dtype))
                  .view({1, 1, 7});
  ViewToken token;
  token.embedding = model->tokenize(maps, vc_t, role).view({-1});
  return token;
}

std::vector<ViewToken> encoder_forward(const std::vector<ViewToken>& tokens,
                                       TransposerModel& model) {
  if (tokens.empty()) throw std::invalid_argument("encoder_forward: no tokens");
  auto out = model->encode(stack_tokens(tokens)).squeeze(0);
  std::vector<ViewToken> result(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    result[i] = tokens[i];
    result[i].embedding = out[int64_t(i)];
  }
  return result;
}

std::vector<ViewToken> decoder_forward(const std::vector<ViewToken>& queries,
                                       const std::vector<ViewToken>& memory,
                                       TransposerModel& model) {
  if (memory.empty()) throw EmptyMemory{};
  if (queries.empty()) throw std::invalid_argument("decoder_forward: no queries");
  auto out = model->decode(stack_tokens(queries), stack_tokens(memory)).squeeze(0);
  std::vector<ViewToken> result(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    result[i] = queries[i];
    result[i].embedding = out[int64_t(i)];
  }
  return result;
}

UpdateDX heads_forward(const std::vector<ViewToken>& decoder_out, TransposerModel& model) {
  if (decoder_out.empty()) throw std::invalid_argument("heads_forward: no tokens");
  auto pooled = stack_tokens(decoder_out).mean(1);  // [1, D]
  auto u = model->run_heads(pooled);
  auto vec = [](const torch::Tensor& t) {
    auto row = t.detach().to(torch::kFloat64).view({-1});
    return Vec3{row[0].item<double>(), row[1].item<double>(), row[2].item<double>()};
  };
  UpdateDX dx;
  dx.dp = vec(u.dp);
  dx.ddg = vec(u.ddg);
  dx.ddr = vec(u.ddr);
  dx.ds = vec(u.ds);
  dx.dz = u.dz.view({-1});
  return dx;
}

}  // namespace ddfpose::tposer
