#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "ddfpose/harness.hpp"

namespace fs = std::filesystem;
using namespace ddfpose;

namespace {

harness::KvConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  harness::KvConfig cfg;
  if (!config_path.empty()) cfg = harness::KvConfig::from_file(config_path);
  for (const auto& kv : overrides) cfg.apply_override(kv);
  return cfg;
}

std::vector<synth::ShapeSpec> make_shapes(const harness::KvConfig& cfg) {
  const std::string category = cfg.get_str("category", "boxpost");
  const int start = cfg.get_int("instance_start", 0);
  const int count = cfg.get_int("n_instances", 8);
  const uint64_t shape_seed = cfg.get_u64("shape_seed", 123);
  std::vector<synth::ShapeSpec> shapes;
  for (int i = 0; i < count; ++i)
    shapes.push_back(synth::make_category_instance(category, start + i, shape_seed));
  return shapes;
}

int cmd_gen_data(const harness::KvConfig& cfg, const fs::path& out) {
  const auto shapes = make_shapes(cfg);
  const uint64_t seed = cfg.get_u64("seed", 1);
  std::mt19937_64 rng(seed);
  synth::Dataset ds;
  const std::string kind = cfg.get_str("kind", "trajectory");
  if (kind == "trajectory") {
    synth::TrajectoryConfig tc;
    tc.resolution = cfg.get_int("resolution", 64);
    tc.fov_deg = cfg.get_double("fov", 50.0);
    tc.n_views = cfg.get_int("views_per_trajectory", 5);
    ds = synth::build_trajectory_dataset(shapes, cfg.get_int("trajectories_per_instance", 4), rng,
                                         tc);
  } else if (kind == "ddf_views") {
    ds = synth::build_ddf_views_dataset(shapes, cfg.get_int("views_per_instance", 24), rng,
                                        cfg.get_int("resolution", 64), cfg.get_double("fov", 50.0));
  } else {
    throw std::runtime_error("gen-data: kind must be trajectory or ddf_views");
  }
  ds.manifest.seed = seed;
  synth::save_dataset(out, ds.manifest, ds.records);
  std::printf("wrote %zu records to %s\n", ds.records.size(), out.string().c_str());
  return 0;
}

ddf::DdfConfig ddf_config_from(const harness::KvConfig& cfg) {
  ddf::DdfConfig dc;
  dc.latent_dim = cfg.get_int("latent_dim", dc.latent_dim);
  dc.voxel_res = cfg.get_int("voxel_res", dc.voxel_res);
  dc.voxel_channels = cfg.get_int("voxel_channels", dc.voxel_channels);
  dc.seed_res = cfg.get_int("seed_res", dc.seed_res);
  dc.n_samples = cfg.get_int("n_samples", dc.n_samples);
  dc.hidden = cfg.get_int("hidden", dc.hidden);
  dc.first_width = cfg.get_int("first_width", dc.first_width);
  dc.lambda_nrm = cfg.get_double("lambda_nrm", dc.lambda_nrm);
  dc.lambda_ltn = cfg.get_double("lambda_ltn", dc.lambda_ltn);
  dc.tau_bg = cfg.get_double("tau_bg", dc.tau_bg);
  return dc;
}

int cmd_train_ddf(const harness::KvConfig& cfg, const fs::path& out) {
  const auto data = synth::load_dataset(cfg.get_str("data", ""));
  ddf::TrainDdfConfig tc;
  tc.epochs = cfg.get_int("epochs", tc.epochs);
  tc.lr_params = cfg.get_double("lr_params", tc.lr_params);
  tc.lr_latent = cfg.get_double("lr_latent", tc.lr_latent);
  tc.p_inside = cfg.get_double("p_inside", tc.p_inside);
  tc.p_outside = cfg.get_double("p_outside", tc.p_outside);
  tc.dilate_px_at64 = cfg.get_int("dilate_px", tc.dilate_px_at64);
  tc.seed = cfg.get_u64("seed", 1);
  tc.deterministic = cfg.get_bool("deterministic", false);
  auto result = ddf::train_autodecoder(data, ddf_config_from(cfg), tc);
  fs::create_directories(out);
  ddf::save_ddf_checkpoint(out / "ddf.ckpt", result.checkpoint);
  std::ofstream log(out / "loss_log.csv");
  log << "epoch,loss\n";
  for (size_t e = 0; e < result.loss_trace.size(); ++e)
    log << e << ',' << result.loss_trace[e] << '\n';
  std::printf("final loss %.6f; checkpoint at %s\n", result.loss_trace.back(),
              (out / "ddf.ckpt").string().c_str());
  return 0;
}

int cmd_fit_latent(const harness::KvConfig& cfg, const fs::path& out) {
  auto ckpt = ddf::load_ddf_checkpoint(cfg.get_str("ddf", ""));
  const auto data = synth::load_dataset(cfg.get_str("data", ""));
  const int rec_idx = cfg.get_int("record", 0);
  const int view_idx = cfg.get_int("view", 0);
  const auto& rec = data.records.at(size_t(rec_idx));
  const auto& frame = rec.frames.at(size_t(view_idx));
  ddf::FitWeights w;
  w.lambda_d = cfg.get_double("lambda_d", w.lambda_d);
  w.lambda_r = cfg.get_double("lambda_r", w.lambda_r);
  auto z = ddf::fit_latent(ckpt.model, frame.depth, frame.cam, rec.gt_pose, ckpt.mean_latent, w,
                           cfg.get_int("steps", 200), cfg.get_double("lr", 1e-3));
  fs::create_directories(out);
  torch::serialize::OutputArchive ar;
  ar.write("z", z);
  ar.save_to((out / "fitted_z.pt").string());

  const auto cloud = ddf::extract_pointcloud(ckpt.model, z, cfg.get_int("cloud_views", 6),
                                             cfg.get_int("cloud_resolution", 48));
  const auto oracle = harness::oracle_pointcloud(rec.shape, 8, 48);
  const double ch = cloud.empty() ? -1.0 : geom::chamfer_distance(cloud, oracle, 1.0);
  std::ofstream metrics(out / "fit_metrics.txt");
  metrics << "chamfer_vs_shape = " << ch << "\n";
  std::printf("fit-latent: chamfer %.6g, z written to %s\n", ch,
              (out / "fitted_z.pt").string().c_str());
  return 0;
}

harness::TrainTpConfig tp_config_from(const harness::KvConfig& cfg) {
  harness::TrainTpConfig tc;
  tc.epochs = cfg.get_int("epochs", 240);
  tc.warmup_epochs = cfg.get_int("warmup_epochs", 80);
  tc.warmup_T = cfg.get_int("warmup_T", 5);
  tc.T = cfg.get_int("T", 10);
  tc.lr = cfg.get_double("lr", 1e-4);
  tc.batch_size = cfg.get_int("batch_size", 8);
  tc.seed = cfg.get_u64("seed", 1);
  tc.val_fraction = cfg.get_double("val_fraction", 0.2);
  tc.val_every = cfg.get_int("val_every", 5);
  tc.deterministic = cfg.get_bool("deterministic", false);
  tc.weights.lambda_p = cfg.get_double("lambda_p", 10.0);
  tc.weights.lambda_g = cfg.get_double("lambda_g", 1.0);
  tc.weights.lambda_r = cfg.get_double("lambda_r", 1.0);
  tc.weights.lambda_s = cfg.get_double("lambda_s", 1.0);
  tc.weights.lambda_z = cfg.get_double("lambda_z", 1.0);
  tc.net.d_model = cfg.get_int("d_model", 256);
  tc.net.d_ff = cfg.get_int("d_ff", 1024);
  tc.net.heads = cfg.get_int("heads", 8);
  tc.net.dropout = cfg.get_double("dropout", 0.1);
  tc.net.enc_layers = cfg.get_int("enc_layers", 3);
  tc.net.dec_layers = cfg.get_int("dec_layers", 3);
  tc.net.head_hidden = cfg.get_int("head_hidden", 256);
  tc.net.variant = tposer::variant_from_name(cfg.get_str("variant", "full"));
  if (cfg.has("backbone_channels")) {
    tc.net.backbone_channels.clear();
    std::istringstream is(cfg.get_str("backbone_channels", ""));
    int ch;
    while (is >> ch) tc.net.backbone_channels.push_back(ch);
  }
  return tc;
}

harness::EvalConfig eval_config_from(const harness::KvConfig& cfg) {
  harness::EvalConfig ec;
  ec.T = cfg.get_int("T", 10);
  ec.seed = cfg.get_u64("seed", 7);
  ec.cloud_views = cfg.get_int("cloud_views", 5);
  ec.cloud_resolution = cfg.get_int("cloud_resolution", 48);
  ec.oracle_views = cfg.get_int("oracle_views", 8);
  ec.oracle_resolution = cfg.get_int("oracle_resolution", 48);
  ec.deterministic = cfg.get_bool("deterministic", false);
  return ec;
}

int cmd_train_transposer(const harness::KvConfig& cfg, const fs::path& out) {
  const auto data = synth::load_dataset(cfg.get_str("data", ""));
  auto ddf_ckpt = ddf::load_ddf_checkpoint(cfg.get_str("ddf", ""));
  auto tc = tp_config_from(cfg);
  auto result = harness::train_transposer(data, ddf_ckpt, tc, out);
  result.best.ddf_ref = cfg.get_str("ddf", "");
  tposer::save_tp_checkpoint(out / "model.ckpt", result.best);
  std::printf("train-transposer: best val loss %.6f (ddf hash %016llx unchanged: %s)\n",
              result.val_loss.empty() ? -1.0
                                      : std::min_element(result.val_loss.begin(),
                                                         result.val_loss.end(),
                                                         [](auto& a, auto& b) {
                                                           return a.second < b.second;
                                                         })
                                            ->second,
              static_cast<unsigned long long>(result.ddf_hash_after),
              result.ddf_hash_before == result.ddf_hash_after ? "yes" : "NO");
  return 0;
}

int cmd_optimize(const harness::KvConfig& cfg, const fs::path& out) {
  auto tp = tposer::load_tp_checkpoint(cfg.get_str("model", ""));
  auto ddf_ckpt = ddf::load_ddf_checkpoint(cfg.get_str("ddf", ""));
  const auto data = synth::load_dataset(cfg.get_str("data", ""));
  const int rec_idx = cfg.get_int("record", 0);
  const auto& rec = data.records.at(size_t(rec_idx));
  std::vector<tposer::ViewObservation> stream;
  for (const auto& f : rec.frames) stream.push_back({f.cam, f.depth});
  std::mt19937_64 rng(cfg.get_u64("seed", 7));
  const auto x0 = harness::sample_init_state(rng, rec.gt_pose, ddf_ckpt.mean_latent);
  const auto res = tposer::optimize(stream, x0, tp.model, ddf_ckpt.model, cfg.get_int("T", 10));

  fs::create_directories(out);
  std::ofstream os(out / "history.csv");
  os << "t,K,px,py,pz,dgx,dgy,dgz,drx,dry,drz,sx,sy,sz\n";
  for (size_t t = 0; t < res.history.size(); ++t) {
    const auto& pose = res.history[t].pose;
    os << t << ',' << (t == 0 ? 0 : res.k_trace[t - 1]) << ',' << pose.p.x << ',' << pose.p.y
       << ',' << pose.p.z << ',' << pose.d_g.x << ',' << pose.d_g.y << ',' << pose.d_g.z << ','
       << pose.d_r.x << ',' << pose.d_r.y << ',' << pose.d_r.z << ',' << pose.s.x << ','
       << pose.s.y << ',' << pose.s.z << '\n';
  }
  std::printf("optimize: wrote %zu states to %s\n", res.history.size(),
              (out / "history.csv").string().c_str());
  return 0;
}

int cmd_eval(const std::vector<std::string>& models, const std::vector<std::string>& ddfs,
             const std::vector<std::string>& datas, const harness::KvConfig& cfg,
             const fs::path& out) {
  if (models.size() != ddfs.size() || models.size() != datas.size() || models.empty())
    throw std::runtime_error("eval: provide matching --model/--ddf/--data triples");
  const auto ec = eval_config_from(cfg);
  std::vector<harness::MetricsRow> rows;
  fs::create_directories(out);
  for (size_t i = 0; i < models.size(); ++i) {
    auto tp = tposer::load_tp_checkpoint(models[i]);
    auto ddf_ckpt = ddf::load_ddf_checkpoint(ddfs[i]);
    const auto testset = synth::load_dataset(datas[i]);
    auto res = harness::evaluate(tp, ddf_ckpt, testset, ec);
    rows.push_back(res.row);
    harness::write_detail_csv(out / ("detail_" + res.row.category + ".csv"), res.row.category,
                              res.detail);
  }
  harness::write_metrics_csv(out / "metrics.csv", rows);
  std::printf("eval: wrote %s\n", (out / "metrics.csv").string().c_str());
  return 0;
}

int cmd_ablate(const harness::KvConfig& cfg, const fs::path& out) {
  const auto train_data = synth::load_dataset(cfg.get_str("data", ""));
  const auto test_data = synth::load_dataset(cfg.get_str("test_data", ""));
  auto ddf_ckpt = ddf::load_ddf_checkpoint(cfg.get_str("ddf", ""));
  auto tc = tp_config_from(cfg);
  const auto ec = eval_config_from(cfg);

  std::vector<std::string> variants;
  {
    std::istringstream is(cfg.get_str("variants", "full no-decoder baseline"));
    std::string v;
    while (is >> v) variants.push_back(v);
  }
  std::vector<harness::MetricsRow> rows;
  for (const auto& v : variants) {
    auto res = harness::ablate(v, train_data, test_data, ddf_ckpt, tc, ec, out);
    res.eval.row.category = v + ":" + res.eval.row.category;
    rows.push_back(res.eval.row);
    // Per-variant resolved config: identical except the variant key.
    harness::KvConfig variant_cfg = cfg;
    variant_cfg.set("variant", v);
    variant_cfg.write_resolved(out / v / "config_resolved.txt");
  }
  harness::write_metrics_csv(out / "ablation_table.csv", rows);
  std::printf("ablate: wrote %s\n", (out / "ablation_table.csv").string().c_str());
  return 0;
}

int cmd_export_pca(const harness::KvConfig& cfg, const fs::path& out) {
  auto ckpt = ddf::load_ddf_checkpoint(cfg.get_str("ddf", ""));
  std::vector<std::pair<int, int>> pairs;
  {
    std::istringstream is(cfg.get_str("pairs", ""));
    std::string tok;
    while (is >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw std::runtime_error("pairs: use a:b tokens");
      pairs.emplace_back(std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1)));
    }
  }
  auto coords = harness::export_pca(ckpt, out, pairs);
  std::printf("export-pca: %lld latents embedded, outputs in %s\n",
              static_cast<long long>(coords.size(0)), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddfpose: directional depth fields with a learned pose-and-shape optimizer"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::vector<std::string> models, ddfs, datas;

  auto add_common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--set", overrides, "override, key=value (repeatable)");
    auto* opt = sub->add_option("--out", out_dir, "run directory");
    if (needs_out) opt->required();
  };

  add_common(app.add_subcommand("gen-data", "render a synthetic dataset"));
  add_common(app.add_subcommand("train-ddf", "train the shape auto-decoder"));
  add_common(app.add_subcommand("fit-latent", "fit a latent code to one view"));
  add_common(app.add_subcommand("train-transposer", "train the learned optimizer"));
  add_common(app.add_subcommand("optimize", "run the optimization loop on one record"));
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on a test set");
  add_common(eval_cmd);
  eval_cmd->add_option("--model", models, "transposer checkpoint (repeatable)");
  eval_cmd->add_option("--ddf", ddfs, "ddf checkpoint (repeatable)");
  eval_cmd->add_option("--data", datas, "test dataset (repeatable)");
  add_common(app.add_subcommand("ablate", "train and evaluate architecture variants"));
  add_common(app.add_subcommand("export-pca", "export the 2D latent embedding"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cout << app.help() << std::endl;
    return 2;
  }

  try {
    auto cfg = load_config(config_path, overrides);
    const fs::path out = out_dir;
    // Every run records its resolved configuration next to its artifacts.
    auto finish = [&](int code) {
      if (!out_dir.empty()) cfg.write_resolved(out / "config_resolved.txt");
      return code;
    };
    if (app.got_subcommand("gen-data")) return finish(cmd_gen_data(cfg, out));
    if (app.got_subcommand("train-ddf")) return finish(cmd_train_ddf(cfg, out));
    if (app.got_subcommand("fit-latent")) return finish(cmd_fit_latent(cfg, out));
    if (app.got_subcommand("train-transposer")) return finish(cmd_train_transposer(cfg, out));
    if (app.got_subcommand("optimize")) return finish(cmd_optimize(cfg, out));
    if (app.got_subcommand("eval")) return finish(cmd_eval(models, ddfs, datas, cfg, out));
    if (app.got_subcommand("ablate")) return finish(cmd_ablate(cfg, out));
    if (app.got_subcommand("export-pca")) return finish(cmd_export_pca(cfg, out));
    std::cerr << app.help() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
