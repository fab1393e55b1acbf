#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>

#include "ddfpose/harness.hpp"

namespace ddfpose::harness {

namespace {

cv::Mat depth_to_gray(const geom::DepthImage& img) {
  cv::Mat gray(img.height, img.width, CV_8UC1, cv::Scalar(255));
  float lo = 1e30f, hi = -1e30f;
  for (size_t i = 0; i < img.depth.size(); ++i) {
    if (!img.mask[i]) continue;
    lo = std::min(lo, img.depth[i]);
    hi = std::max(hi, img.depth[i]);
  }
  const float span = std::max(1e-6f, hi - lo);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const size_t i = img.idx(r, c);
      if (!img.mask[i]) continue;
      gray.at<uint8_t>(r, c) = uint8_t(30 + 200 * (1.f - (img.depth[i] - lo) / span));
    }
  return gray;
}

}  // namespace

torch::Tensor export_pca(const ddf::DdfCheckpoint& ckpt, const std::filesystem::path& outdir,
                         const std::vector<std::pair<int, int>>& interp_pairs) {
  const int64_t n = ckpt.latents.size(0);
  if (n < 3) throw TooFewInstances{};
  std::filesystem::create_directories(outdir);

  auto lat = ckpt.latents.to(torch::kFloat64);
  auto centered = lat - lat.mean(0, true);
  auto svd = torch::linalg_svd(centered, false);
  auto vh = std::get<2>(svd);                       // [L, L] rows are components
  auto coords = torch::matmul(centered, vh.narrow(0, 0, 2).transpose(0, 1));  // [n, 2]

  {
    std::ofstream os(outdir / "latent_pca.csv");
    os << "instance_id,pc1,pc2\n";
    auto acc = coords.accessor<double, 2>();
    for (int64_t i = 0; i < n; ++i)
      os << ckpt.instance_ids[size_t(i)] << ',' << acc[i][0] << ',' << acc[i][1] << '\n';
  }

  {
    const int sz = 640, margin = 60;
    cv::Mat plot(sz, sz, CV_8UC3, cv::Scalar(255, 255, 255));
    const double maxabs = std::max(1e-9, coords.abs().max().item<double>());
    cv::line(plot, {margin, sz / 2}, {sz - margin, sz / 2}, cv::Scalar(180, 180, 180));
    cv::line(plot, {sz / 2, margin}, {sz / 2, sz - margin}, cv::Scalar(180, 180, 180));
    auto acc = coords.accessor<double, 2>();
    for (int64_t i = 0; i < n; ++i) {
      const int x = int(sz / 2 + acc[i][0] / maxabs * (sz / 2 - margin));
      const int y = int(sz / 2 - acc[i][1] / maxabs * (sz / 2 - margin));
      cv::circle(plot, {x, y}, 5, cv::Scalar(200, 80, 30), cv::FILLED);
      cv::putText(plot, std::to_string(ckpt.instance_ids[size_t(i)]), {x + 7, y + 4},
                  cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(60, 60, 60));
    }
    cv::imwrite((outdir / "latent_pca.png").string(), plot);
  }

  // Midpoint interpolations rendered from a fixed viewpoint.
  if (!interp_pairs.empty()) {
    ddf::DdfModel model = ckpt.model;
    const geom::Camera cam = geom::look_at({0.8, -0.5, 0.33}, {0, 0, 0}, {0, 0, 1}, 70.0, 96, 96);
    torch::NoGradGuard no_grad;
    for (const auto& [a, b] : interp_pairs) {
      if (a < 0 || b < 0 || a >= n || b >= n)
        throw std::invalid_argument("export_pca: interpolation index out of range");
      auto zm = (ckpt.latents[a] + ckpt.latents[b]) * 0.5;
      const auto ro = ddf::render_ddf(model, zm, cam);
      char name[64];
      std::snprintf(name, sizeof(name), "interp_%02d_%02d.png", a, b);
      cv::imwrite((outdir / name).string(), depth_to_gray(ro.depth));
    }
  }
  return coords;
}

}  // namespace ddfpose::harness
