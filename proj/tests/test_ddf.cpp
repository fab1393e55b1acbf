#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ddfpose/dataset.hpp"
#include "ddfpose/ddf_train.hpp"
#include "oracles.hpp"

using namespace ddfpose;
using geom::Camera;
using geom::Vec3;

namespace {

ddf::DdfConfig tiny_config() {
  ddf::DdfConfig c;
  c.latent_dim = 8;
  c.voxel_res = 4;
  c.voxel_channels = 4;
  c.seed_res = 1;
  c.n_samples = 4;
  c.hidden = 16;
  return c;
}

// Trilinear interpolation oracle: voxel centers at ((i+0.5)/V - 0.5), ghost
// zeros beyond the outermost centers, hard zero outside the unit cube.
std::vector<double> trilerp_oracle(const torch::Tensor& grid, const Vec3& p) {
  const int C = int(grid.size(1)), V = int(grid.size(2));
  std::vector<double> out(size_t(C), 0.0);
  if (std::abs(p.x) > 0.5 || std::abs(p.y) > 0.5 || std::abs(p.z) > 0.5) return out;
  const double gx = (p.x + 0.5) * V - 0.5;
  const double gy = (p.y + 0.5) * V - 0.5;
  const double gz = (p.z + 0.5) * V - 0.5;
  const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy)), z0 = int(std::floor(gz));
  const double fx = gx - x0, fy = gy - y0, fz = gz - z0;
  auto fetch = [&](int x, int y, int z, int c) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= V || y >= V || z >= V) return 0.0;
    return grid.index({0, c, z, y, x}).item<double>();
  };
  for (int c = 0; c < C; ++c) {
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
          acc += w * fetch(x0 + dx, y0 + dy, z0 + dz, c);
        }
    out[size_t(c)] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("decode_voxels output shapes") {
  torch::manual_seed(1);
  SUBCASE("paper configuration decodes a 16x16x16x32 grid") {
    auto cfg = ddf::DdfConfig::paper_scale();
    CHECK(cfg.lift_dim() == 512);
    CHECK(cfg.n_deconvs() == 4);
    ddf::DdfModel model(cfg);
    auto grid = model->decode_voxels(torch::randn({1, 256}));
    CHECK(grid.sizes() == torch::IntArrayRef({1, 32, 16, 16, 16}));
  }
  SUBCASE("toy configuration decodes an 8x8x8x16 grid") {
    ddf::DdfConfig cfg;  // defaults are the toy scale
    CHECK(cfg.latent_dim == 64);
    CHECK(cfg.lift_dim() == 512);
    CHECK(cfg.n_deconvs() == 2);
    ddf::DdfModel model(cfg);
    auto grid = model->decode_voxels(torch::randn({3, 64}));
    CHECK(grid.sizes() == torch::IntArrayRef({3, 16, 8, 8, 8}));
  }
  SUBCASE("repeat decoding is deterministic") {
    ddf::DdfModel model(tiny_config());
    auto z = torch::randn({1, 8});
    CHECK(model->decode_voxels(z).equal(model->decode_voxels(z)));
  }
  SUBCASE("latent dimension mismatch is rejected") {
    ddf::DdfModel model(tiny_config());
    CHECK_THROWS_AS(model->decode_voxels(torch::randn({1, 9})), ddf::ShapeMismatch);
  }
}

TEST_CASE("sample_ray_features trilinear semantics") {
  torch::manual_seed(2);
  auto cfg = tiny_config();
  ddf::DdfModel model(cfg);
  const int V = cfg.voxel_res;
  auto grid = torch::randn({1, cfg.voxel_channels, V, V, V}, torch::kFloat64);

  SUBCASE("voxel centers return the voxel's own feature vector") {
    for (int ix : {0, 1, 3})
      for (int iy : {0, 2})
        for (int iz : {1, 3}) {
          const Vec3 p{(ix + 0.5) / V - 0.5, (iy + 0.5) / V - 0.5, (iz + 0.5) / V - 0.5};
          auto pts = torch::tensor({p.x, p.y, p.z}, torch::kFloat64).view({1, 1, 1, 3});
          auto feat = model->sample_ray_features(grid, pts).view({-1});
          for (int c = 0; c < cfg.voxel_channels; ++c)
            CHECK(feat[c].item<double>() ==
                  doctest::Approx(grid.index({0, c, iz, iy, ix}).item<double>()).epsilon(1e-9));
        }
  }
  SUBCASE("points outside the unit cube give zero features") {
    for (const Vec3 p : {Vec3{0.51, 0, 0}, Vec3{0, -0.55, 0.2}, Vec3{2, 2, 2}}) {
      auto pts = torch::tensor({p.x, p.y, p.z}, torch::kFloat64).view({1, 1, 1, 3});
      auto feat = model->sample_ray_features(grid, pts);
      CHECK(feat.abs().max().item<double>() == 0.0);
    }
  }
  SUBCASE("random points match the corner-weight oracle") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.7, 0.7);
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p{u(rng), u(rng), u(rng)};
      auto pts = torch::tensor({p.x, p.y, p.z}, torch::kFloat64).view({1, 1, 1, 3});
      auto feat = model->sample_ray_features(grid, pts).view({-1});
      const auto want = trilerp_oracle(grid, p);
      for (int c = 0; c < cfg.voxel_channels; ++c)
        CHECK(std::abs(feat[c].item<double>() - want[size_t(c)]) < 1e-6);
    }
  }
}

TEST_CASE("ray mlp output is non-negative and shape-checked") {
  torch::manual_seed(3);
  auto cfg = tiny_config();
  ddf::DdfModel model(cfg);
  auto feats = torch::randn({64, cfg.feature_dim()}) * 5.0;
  auto out = model->run_mlp(feats);
  CHECK(out.sizes() == torch::IntArrayRef({64}));
  CHECK(out.min().item<double>() >= 0.0);
  CHECK_THROWS_AS(model->run_mlp(torch::randn({4, cfg.feature_dim() + 1})), ddf::ShapeMismatch);
}

TEST_CASE("sample distances span the cube chord") {
  auto d = ddf::sample_distances(32, torch::kFloat64);
  CHECK(d[0].item<double>() == doctest::Approx(1.0 - std::sqrt(3.0) / 2.0));
  CHECK(d[31].item<double>() == doctest::Approx(1.0 + std::sqrt(3.0) / 2.0));
  auto gaps = d.diff();
  CHECK((gaps - gaps[0]).abs().max().item<double>() < 1e-12);
}

TEST_CASE("render_ddf structure and canonicalization identity") {
  torch::manual_seed(4);
  auto cfg = tiny_config();
  ddf::DdfModel model(cfg);
  model->to(torch::kFloat64);
  auto z = torch::randn({8}, torch::kFloat64);

  model->reset_counters();
  Camera cam1 = geom::look_at({0, 0, 0.8}, {0, 0, 0}, {0, 1, 0}, 50, 17, 17);
  const auto out1 = ddf::render_ddf(model, z, cam1);
  CHECK(model->decode_calls == 1);  // one decoder call per image
  CHECK(model->mlp_batches == 1);   // one MLP batch per image

  Camera cam2 = geom::look_at({0, 0, 2.0}, {0, 0, 0}, {0, 1, 0}, 50, 17, 17);
  const auto out2 = ddf::render_ddf(model, z, cam2);
  CHECK(model->decode_calls == 2);

  // The center rays share the same canonical parameterization; depths differ
  // by exactly the offset difference (0.8 is inside the sphere, 2.0 outside).
  const auto i1 = out1.invd.index({8, 8}).item<double>();
  const auto i2 = out2.invd.index({8, 8}).item<double>();
  CHECK(std::abs(i1 - i2) < 1e-12);
  if (i1 > cfg.tau_bg) {
    const double d1 = out1.depth.at(8, 8);
    const double d2 = out2.depth.at(8, 8);
    CHECK(std::abs((d2 - d1) - 1.2) < 1e-6);
  }
  // Rays that miss the canonical sphere are masked out with zero inverse depth.
  CHECK(out2.invd.index({0, 0}).item<double>() == 0.0);
  CHECK_FALSE(out2.depth.in(0, 0));
}

TEST_CASE("ddf_loss values") {
  auto pred = torch::tensor({0.5, 0.7, 0.0});
  auto n = torch::tensor({{0.0, 0.0, 1.0}});
  ddf::DdfLossWeights w;
  SUBCASE("perfect prediction with zero latent") {
    auto loss = ddf::ddf_loss(pred, pred, n, n, torch::zeros({8}), w);
    CHECK(loss.item<double>() == 0.0);
  }
  SUBCASE("latent norm 3 contributes 3e-4 at default weights") {
    auto z = torch::zeros({9});
    z[0] = 3.0;
    auto loss = ddf::ddf_loss(pred, pred, n, n, z, w);
    CHECK(loss.item<double>() == doctest::Approx(3e-4).epsilon(1e-6));
  }
  SUBCASE("normal error is weighted by lambda_nrm") {
    auto n2 = torch::tensor({{0.0, 1.0, 0.0}});
    auto loss = ddf::ddf_loss(pred, pred, n, n2, torch::zeros({8}), w);
    CHECK(loss.item<double>() == doctest::Approx(1e-2 * 2.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("end-to-end ddf_loss gradient matches central finite differences") {
  torch::manual_seed(6);
  auto cfg = tiny_config();
  ddf::DdfModel model(cfg);
  model->to(torch::kFloat64);

  Camera cam = geom::look_at({0, 0, 1}, {0, 0, 0}, {0, 1, 0}, 60, 9, 9);
  const auto rays = ddf::build_ray_batch(cam, nullptr, torch::kFloat64);
  REQUIRE(rays.size() > 30);
  auto gt_invd = torch::rand({rays.size()}, torch::kFloat64) * 0.8;
  auto gt_normals = torch::nn::functional::normalize(
      torch::randn({4, 3}, torch::kFloat64),
      torch::nn::functional::NormalizeFuncOptions().dim(1));
  ddf::DdfLossWeights w;

  // Differentiable normals from the predicted depths of 4-neighbor ray
  // quadruples, mirroring the training path.
  auto loss_of = [&](const torch::Tensor& z) {
    auto grid = model->decode_voxels(z);
    auto invd = ddf::invd_for_rays(model, grid, rays);
    auto origin = torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64);
    auto depth = 1.0 / invd.clamp(0.05, 1e3) + rays.offset;
    auto points = origin.unsqueeze(0) + rays.dir * depth.unsqueeze(1);
    std::vector<torch::Tensor> normals;
    for (int64_t q = 0; q < 4; ++q) {
      const int64_t base = 9 * (2 + q) + 3;  // interior pixels of the 9x9 grid
      auto dx = points[base + 1] - points[base - 1];
      auto dy = points[base + 9] - points[base - 9];
      auto nrm = torch::cross(dx, dy, 0);
      normals.push_back((nrm / (nrm.norm() + 1e-12)).unsqueeze(0));
    }
    auto pred_n = torch::cat(normals, 0);
    return ddf::ddf_loss(invd, gt_invd, pred_n, gt_normals, z, w);
  };

  auto z = torch::randn({cfg.latent_dim}, torch::kFloat64).set_requires_grad(true);
  auto loss = loss_of(z);
  loss.backward();
  auto grad = z.grad().clone();

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, cfg.latent_dim - 1);
  const double h = 1e-3;
  for (int trial = 0; trial < 10; ++trial) {
    const int i = pick(rng);
    torch::NoGradGuard no_grad;
    auto zp = z.detach().clone();
    zp[i] += h;
    auto zm = z.detach().clone();
    zm[i] -= h;
    const double fd = (loss_of(zp).item<double>() - loss_of(zm).item<double>()) / (2 * h);
    const double an = grad[i].item<double>();
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("observed inverse distances: background maps to zero") {
  Camera cam = geom::look_at({0, 0, 2}, {0, 0, 0}, {0, 1, 0}, 50, 9, 9);
  const auto rays = ddf::build_ray_batch(cam, nullptr, torch::kFloat64);
  geom::DepthImage img(9, 9);
  img.depth[img.idx(4, 4)] = 1.5f;
  img.mask[img.idx(4, 4)] = 1;
  auto invd = ddf::observed_invd(img, rays);
  double total = invd.abs().sum().item<double>();
  // Only the center pixel contributes; canonical depth there is 1.5 - 1.0.
  bool found = false;
  for (size_t i = 0; i < rays.pixel_index.size(); ++i) {
    if (rays.pixel_index[i] == int64_t(img.idx(4, 4))) {
      CHECK(invd[int64_t(i)].item<double>() == doctest::Approx(2.0).epsilon(1e-6));
      total -= std::abs(invd[int64_t(i)].item<double>());
      found = true;
    }
  }
  CHECK(found);
  CHECK(total == doctest::Approx(0.0));
}

TEST_CASE("fit_latent shrinks the latent on an all-background view") {
  torch::manual_seed(8);
  auto cfg = tiny_config();
  ddf::DdfModel model(cfg);
  model->to(torch::kFloat64);
  Camera cam = geom::look_at({0, 0, 1.2}, {0, 0, 0}, {0, 1, 0}, 50, 12, 12);
  geom::DepthImage empty(12, 12);
  auto z0 = torch::randn({cfg.latent_dim}, torch::kFloat64);
  z0 = z0 / z0.norm() * 2.0;
  auto z = ddf::fit_latent(model, empty, cam, geom::Pose9{}, z0, {}, 80, 1e-2);
  CHECK(z.norm().item<double>() < 2.0 * 0.9);
}

TEST_CASE("checkpoint round-trip preserves everything") {
  torch::manual_seed(9);
  auto cfg = tiny_config();
  ddf::DdfCheckpoint ckpt;
  ckpt.model = ddf::DdfModel(cfg);
  ckpt.cfg = cfg;
  ckpt.latents = torch::randn({3, cfg.latent_dim});
  ckpt.mean_latent = ckpt.latents.mean(0);
  ckpt.category = "boxpost";
  ckpt.symmetry = "none";
  ckpt.instance_ids = {0, 1, 2};
  for (int i = 0; i < 3; ++i)
    ckpt.shape_texts.push_back(synth::make_category_instance("boxpost", i, 5).to_text());

  const auto path = std::filesystem::temp_directory_path() / "ddfpose_test_ckpt.pt";
  ddf::save_ddf_checkpoint(path, ckpt);
  auto back = ddf::load_ddf_checkpoint(path);
  CHECK(back.category == "boxpost");
  CHECK(back.cfg.latent_dim == cfg.latent_dim);
  CHECK(back.cfg.n_samples == cfg.n_samples);
  CHECK(back.latents.equal(ckpt.latents));
  CHECK(back.mean_latent.equal(ckpt.mean_latent));
  CHECK(back.instance_ids == ckpt.instance_ids);
  CHECK(back.shape_texts == ckpt.shape_texts);
  for (const auto& p : ckpt.model->named_parameters()) {
    auto* other = back.model->named_parameters().find(p.key());
    REQUIRE(other != nullptr);
    CHECK(p.value().equal(*other));
  }
  CHECK(ddf::parameter_hash(*ckpt.model) == ddf::parameter_hash(*back.model));
  std::filesystem::remove(path);
}

TEST_CASE("autodecoder training is deterministic in single-threaded mode") {
  std::vector<synth::ShapeSpec> shapes{synth::make_category_instance("boxpost", 0, 5),
                                       synth::make_category_instance("boxpost", 1, 5)};
  std::mt19937_64 rng(10);
  auto data = synth::build_ddf_views_dataset(shapes, 2, rng, 16, 55.0);

  auto cfg = tiny_config();
  ddf::TrainDdfConfig tc;
  tc.epochs = 6;
  tc.seed = 77;
  tc.deterministic = true;
  auto r1 = ddf::train_autodecoder(data, cfg, tc);
  auto r2 = ddf::train_autodecoder(data, cfg, tc);
  REQUIRE(r1.loss_trace.size() == 6);
  for (size_t i = 0; i < r1.loss_trace.size(); ++i) CHECK(r1.loss_trace[i] == r2.loss_trace[i]);
  CHECK(r1.checkpoint.latents.equal(r2.checkpoint.latents));

  synth::Dataset empty;
  CHECK_THROWS_AS(ddf::train_autodecoder(empty, cfg, tc), ddf::EmptyDataset);
}

TEST_CASE("mask dilation and default sampling probabilities") {
  std::vector<synth::ShapeSpec> shapes{synth::make_category_instance("box", 0, 5)};
  std::mt19937_64 rng(11);
  auto data = synth::build_ddf_views_dataset(shapes, 1, rng, 32, 55.0);

  const auto& frame = data.records[0].frames[0];
  auto dilated = ddf::dilate_mask(frame.depth.mask, 32, 32, 3);
  size_t inside = 0, raw = 0;
  for (auto m : dilated) inside += m;
  for (auto m : frame.depth.mask) raw += m;
  CHECK(inside > raw);  // dilation grows the mask
  for (size_t i = 0; i < dilated.size(); ++i)
    if (frame.depth.mask[i]) CHECK(dilated[i] == 1);

  ddf::TrainDdfConfig tc;
  CHECK(tc.p_inside == 0.2);
  CHECK(tc.p_outside == 2e-3);
}
