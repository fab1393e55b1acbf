#include <sstream>

#include "ddfpose/ddf.hpp"

namespace ddfpose::ddf {

namespace F = torch::nn::functional;

int DdfConfig::n_deconvs() const {
  if (voxel_res <= 0 || seed_res <= 0 || voxel_res % seed_res != 0)
    throw std::invalid_argument("DdfConfig: voxel_res must be seed_res * 2^k");
  int ratio = voxel_res / seed_res;
  int k = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0) throw std::invalid_argument("DdfConfig: voxel_res must be seed_res * 2^k");
    ratio /= 2;
    ++k;
  }
  return k;
}

std::string DdfConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "latent_dim = " << latent_dim << "\n"
     << "voxel_res = " << voxel_res << "\n"
     << "voxel_channels = " << voxel_channels << "\n"
     << "seed_res = " << seed_res << "\n"
     << "n_samples = " << n_samples << "\n"
     << "hidden = " << hidden << "\n"
     << "first_width = " << first_width << "\n"
     << "lambda_nrm = " << lambda_nrm << "\n"
     << "lambda_ltn = " << lambda_ltn << "\n"
     << "tau_bg = " << tau_bg << "\n";
  return os.str();
}

DdfConfig DdfConfig::from_text(const std::string& text) {
  DdfConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    const double val = std::stod(line.substr(eq + 1));
    if (key == "latent_dim") c.latent_dim = int(val);
    else if (key == "voxel_res") c.voxel_res = int(val);
    else if (key == "voxel_channels") c.voxel_channels = int(val);
    else if (key == "seed_res") c.seed_res = int(val);
    else if (key == "n_samples") c.n_samples = int(val);
    else if (key == "hidden") c.hidden = int(val);
    else if (key == "first_width") c.first_width = int(val);
    else if (key == "lambda_nrm") c.lambda_nrm = val;
    else if (key == "lambda_ltn") c.lambda_ltn = val;
    else if (key == "tau_bg") c.tau_bg = val;
  }
  return c;
}

VoxelDecoderImpl::VoxelDecoderImpl(const DdfConfig& cfg_) : cfg(cfg_) {
  lift = register_module("lift", torch::nn::Linear(cfg.latent_dim, cfg.lift_dim()));
  int ch = cfg.seed_channels();
  for (int i = 0; i < cfg.n_deconvs(); ++i) {
    auto deconv = torch::nn::ConvTranspose3d(
        torch::nn::ConvTranspose3dOptions(ch, ch / 2, 4).stride(2).padding(1));
    deconvs->push_back(register_module("deconv" + std::to_string(i), deconv));
    ch /= 2;
  }
}

torch::Tensor VoxelDecoderImpl::forward(const torch::Tensor& z) {
  auto x = lift(z).view({z.size(0), cfg.seed_channels(), cfg.seed_res, cfg.seed_res, cfg.seed_res});
  for (const auto& m : *deconvs) {
    x = torch::leaky_relu(m->as<torch::nn::ConvTranspose3d>()->forward(x), 0.01);
  }
  return x;
}

RayMlpImpl::RayMlpImpl(const DdfConfig& cfg_) : cfg(cfg_) {
  const int w = cfg.hidden;
  const int w0 = cfg.skip_width();
  auto add = [&](int in, int out) {
    layers->push_back(
        register_module("fc" + std::to_string(layers->size()), torch::nn::Linear(in, out)));
  };
  add(cfg.feature_dim(), w0);        // 1
  add(w0, w);                        // 2
  for (int i = 0; i < 4; ++i) add(w, w);  // 3..6
  add(w + w0, w);                    // 7 (skip concat)
  for (int i = 0; i < 4; ++i) add(w, w);  // 8..11
  add(w, 1);                         // 12
}

torch::Tensor RayMlpImpl::forward(const torch::Tensor& features) {
  if (features.size(-1) != cfg.feature_dim())
    throw ShapeMismatch("ray mlp: feature dim " + std::to_string(features.size(-1)) +
                        " != " + std::to_string(cfg.feature_dim()));
  auto fc = [&](size_t i, const torch::Tensor& x) {
    return layers[i]->as<torch::nn::Linear>()->forward(x);
  };
  auto h0 = torch::leaky_relu(fc(0, features), 0.01);
  auto h = h0;
  for (size_t i = 1; i <= 5; ++i) h = torch::leaky_relu(fc(i, h), 0.01);
  h = torch::cat({h, h0}, -1);
  for (size_t i = 6; i <= 10; ++i) h = torch::leaky_relu(fc(i, h), 0.01);
  return torch::softplus(fc(11, h)).squeeze(-1);
}

DdfModelImpl::DdfModelImpl(const DdfConfig& cfg_) : cfg(cfg_) {
  decoder = register_module("decoder", VoxelDecoder(cfg));
  mlp = register_module("mlp", RayMlp(cfg));
}

torch::Tensor DdfModelImpl::decode_voxels(const torch::Tensor& z) {
  auto zin = z.dim() == 1 ? z.unsqueeze(0) : z;
  if (zin.size(-1) != cfg.latent_dim)
    throw ShapeMismatch("decode_voxels: latent dim " + std::to_string(zin.size(-1)) + " != " +
                        std::to_string(cfg.latent_dim));
  ++decode_calls;
  return decoder(zin);
}

torch::Tensor DdfModelImpl::sample_ray_features(const torch::Tensor& grid,
                                                const torch::Tensor& points) const {
  // grid [B, C, V, V, V] with dims ordered (z, y, x); grid_sample reads the
  // last grid coordinate as x. Cube coordinates in [-0.5, 0.5] map to [-1, 1].
  const auto B = grid.size(0);
  const auto P = points.size(1);
  const auto N = points.size(2);
  auto norm = (points * 2.0).view({B, P, N, 1, 3});
  auto sampled = F::grid_sample(grid, norm,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kZeros)
                                    .align_corners(false));  // [B, C, P, N, 1]
  // Hard zero outside the unit cube (grid_sample fades over the half-voxel skin).
  auto inside = (points.abs() <= 0.5).all(-1).to(grid.dtype());        // [B, P, N]
  sampled = sampled.squeeze(-1) * inside.unsqueeze(1);                 // [B, C, P, N]
  return sampled.permute({0, 2, 3, 1}).reshape({B, P, N * grid.size(1)});
}

torch::Tensor DdfModelImpl::run_mlp(const torch::Tensor& features) {
  ++mlp_batches;
  return mlp(features);
}

torch::Tensor sample_distances(int n_samples, torch::Dtype dtype) {
  const double half_diag = std::sqrt(3.0) / 2.0;
  return torch::linspace(1.0 - half_diag, 1.0 + half_diag, n_samples,
                         torch::TensorOptions().dtype(dtype));
}

torch::Tensor ddf_loss(const torch::Tensor& pred_invd, const torch::Tensor& gt_invd,
                       const torch::Tensor& pred_normals, const torch::Tensor& gt_normals,
                       const torch::Tensor& z, const DdfLossWeights& w) {
  auto loss = (pred_invd - gt_invd).abs().mean();
  if (pred_normals.defined() && pred_normals.numel() > 0)
    loss = loss + w.lambda_nrm * (pred_normals - gt_normals).abs().mean();
  loss = loss + w.lambda_ltn * z.norm();
  return loss;
}

}  // namespace ddfpose::ddf
