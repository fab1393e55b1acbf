#include <sstream>

#include "ddfpose/tposer.hpp"

namespace ddfpose::tposer {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::Baseline: return "baseline";
    case Variant::NoDecoder: return "no-decoder";
    case Variant::NoNocs: return "no-nocs";
    case Variant::NoCameraPe: return "no-camera-pe";
    case Variant::NoCurrentToken: return "no-current-token";
  }
  return "full";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::Full;
  if (name == "baseline") return Variant::Baseline;
  if (name == "no-decoder") return Variant::NoDecoder;
  if (name == "no-nocs") return Variant::NoNocs;
  if (name == "no-camera-pe") return Variant::NoCameraPe;
  if (name == "no-current-token") return Variant::NoCurrentToken;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os << "d_model = " << d_model << "\n"
     << "d_ff = " << d_ff << "\n"
     << "heads = " << heads << "\n"
     << "dropout = " << dropout << "\n"
     << "enc_layers = " << enc_layers << "\n"
     << "dec_layers = " << dec_layers << "\n"
     << "head_hidden = " << head_hidden << "\n"
     << "latent_dim = " << latent_dim << "\n"
     << "variant = " << variant_name(variant) << "\n"
     << "backbone_channels =";
  for (int c : backbone_channels) os << ' ' << c;
  os << "\n";
  return os.str();
}

NetConfig NetConfig::from_text(const std::string& text) {
  NetConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    const std::string val = line.substr(eq + 1);
    if (key == "d_model") c.d_model = std::stoi(val);
    else if (key == "d_ff") c.d_ff = std::stoi(val);
    else if (key == "heads") c.heads = std::stoi(val);
    else if (key == "dropout") c.dropout = std::stod(val);
    else if (key == "enc_layers") c.enc_layers = std::stoi(val);
    else if (key == "dec_layers") c.dec_layers = std::stoi(val);
    else if (key == "head_hidden") c.head_hidden = std::stoi(val);
    else if (key == "latent_dim") c.latent_dim = std::stoi(val);
    else if (key == "variant") {
      std::string name = val;
      name.erase(0, name.find_first_not_of(" \t"));
      name.erase(name.find_last_not_of(" \t\r") + 1);
      c.variant = variant_from_name(name);
    } else if (key == "backbone_channels") {
      c.backbone_channels.clear();
      std::istringstream vs(val);
      int ch;
      while (vs >> ch) c.backbone_channels.push_back(ch);
    }
  }
  return c;
}

MultiheadAttentionImpl::MultiheadAttentionImpl(int d_model, int heads_, double dropout)
    : heads(heads_) {
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  wq = register_module("wq", torch::nn::Linear(d_model, d_model));
  wk = register_module("wk", torch::nn::Linear(d_model, d_model));
  wv = register_module("wv", torch::nn::Linear(d_model, d_model));
  wo = register_module("wo", torch::nn::Linear(d_model, d_model));
  attn_drop = register_module("attn_drop", torch::nn::Dropout(dropout));
}

torch::Tensor MultiheadAttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& k,
                                              const torch::Tensor& v) {
  const auto B = q.size(0), Sq = q.size(1), D = q.size(2);
  const auto Sk = k.size(1);
  const auto dh = D / heads;
  auto split = [&](const torch::Tensor& x, int64_t S) {
    return x.view({B, S, heads, dh}).transpose(1, 2);  // [B,h,S,dh]
  };
  auto qh = split(wq(q), Sq);
  auto kh = split(wk(k), Sk);
  auto vh = split(wv(v), Sk);
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(double(dh));
  auto attn = torch::softmax(scores, -1);
  if (capture_weights) last_weights = attn.detach();
  attn = attn_drop(attn);
  auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({B, Sq, D});
  return wo(out);
}

EncoderBlockImpl::EncoderBlockImpl(const NetConfig& cfg) {
  attn = register_module("attn", MultiheadAttention(cfg.d_model, cfg.heads, cfg.dropout));
  ff1 = register_module("ff1", torch::nn::Linear(cfg.d_model, cfg.d_ff));
  ff2 = register_module("ff2", torch::nn::Linear(cfg.d_ff, cfg.d_model));
  drop = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x_in) {
  auto x = x_in + drop(attn(x_in, x_in, x_in));
  x = x + drop(ff2(torch::relu(ff1(x))));
  return x;
}

DecoderBlockImpl::DecoderBlockImpl(const NetConfig& cfg) {
  self_attn = register_module("self_attn", MultiheadAttention(cfg.d_model, cfg.heads, cfg.dropout));
  cross_attn =
      register_module("cross_attn", MultiheadAttention(cfg.d_model, cfg.heads, cfg.dropout));
  ff1 = register_module("ff1", torch::nn::Linear(cfg.d_model, cfg.d_ff));
  ff2 = register_module("ff2", torch::nn::Linear(cfg.d_ff, cfg.d_model));
  drop = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& q_in, const torch::Tensor& memory) {
  auto q = q_in + drop(self_attn(q_in, q_in, q_in));
  q = q + drop(cross_attn(q, memory, memory));
  q = q + drop(ff2(torch::relu(ff1(q))));
  return q;
}

ConvBackboneImpl::ConvBackboneImpl(int in_channels, const std::vector<int>& channels) {
  int ch = in_channels;
  for (size_t i = 0; i < channels.size(); ++i) {
    auto conv = torch::nn::Conv2d(
        torch::nn::Conv2dOptions(ch, channels[i], 3).stride(2).padding(1));
    convs->push_back(register_module("conv" + std::to_string(i), conv));
    ch = channels[i];
  }
}

torch::Tensor ConvBackboneImpl::forward(const torch::Tensor& x_in) {
  auto x = x_in;
  for (const auto& m : *convs) x = torch::relu(m->as<torch::nn::Conv2d>()->forward(x));
  return torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
}

TransposerModelImpl::TransposerModelImpl(const NetConfig& cfg_) : cfg(cfg_) {
  backbone = register_module("backbone", ConvBackbone(cfg.map_channels(), cfg.backbone_channels));
  const int feat = 3 * cfg.backbone_channels.back();
  proj_enc = register_module("proj_enc", torch::nn::Linear(feat, cfg.d_model));
  proj_dec_past = register_module("proj_dec_past", torch::nn::Linear(feat, cfg.d_model));
  proj_dec_cur = register_module("proj_dec_cur", torch::nn::Linear(feat, cfg.d_model));
  w_pe = register_parameter("w_pe", torch::randn({7, cfg.d_model}) *
                                        std::pow(double(cfg.d_model), -0.5));
  for (int i = 0; i < cfg.enc_layers; ++i)
    enc_blocks->push_back(register_module("enc" + std::to_string(i), EncoderBlock(cfg)));
  for (int i = 0; i < cfg.dec_layers; ++i)
    dec_blocks->push_back(register_module("dec" + std::to_string(i), DecoderBlock(cfg)));

  auto make_head = [&](int out_dim, bool softplus) {
    torch::nn::Sequential head;
    head->push_back(torch::nn::Linear(cfg.d_model, cfg.head_hidden));
    head->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.01)));
    head->push_back(torch::nn::Linear(cfg.head_hidden, out_dim));
    if (softplus) head->push_back(torch::nn::Softplus());
    return head;
  };
  head_p = register_module("head_p", make_head(3, false));
  head_dg = register_module("head_dg", make_head(3, false));
  head_dr = register_module("head_dr", make_head(3, false));
  head_s = register_module("head_s", make_head(3, true));
  head_z = register_module("head_z", make_head(cfg.latent_dim, false));
}

torch::Tensor TransposerModelImpl::tokenize(const torch::Tensor& maps, const torch::Tensor& vc,
                                            Role role) {
  const auto B = maps.size(0), S = maps.size(1);
  if (maps.size(2) != 3 || maps.size(3) != cfg.map_channels())
    throw std::invalid_argument("tokenize: expected [B,S,3," +
                                std::to_string(cfg.map_channels()) + ",H,W] maps");
  auto flat = maps.reshape({B * S * 3, maps.size(3), maps.size(4), maps.size(5)});
  auto feats = backbone(flat).reshape({B, S, 3 * cfg.backbone_channels.back()});
  torch::nn::Linear& proj = role == Role::Encoder
                                ? proj_enc
                                : (role == Role::DecoderPast ? proj_dec_past : proj_dec_cur);
  auto tok = proj(feats);
  if (cfg.variant != Variant::NoCameraPe) tok = tok + torch::matmul(vc, w_pe);
  return tok;
}

torch::Tensor TransposerModelImpl::encode(const torch::Tensor& tokens) {
  if (tokens.size(1) < 1) throw std::invalid_argument("encode: need at least one token");
  auto x = tokens;
  for (const auto& m : *enc_blocks) x = m->as<EncoderBlockImpl>()->forward(x);
  return x;
}

torch::Tensor TransposerModelImpl::decode(const torch::Tensor& queries,
                                          const torch::Tensor& memory) {
  if (!memory.defined() || memory.size(1) < 1) throw EmptyMemory{};
  auto q = queries;
  for (const auto& m : *dec_blocks) q = m->as<DecoderBlockImpl>()->forward(q, memory);
  return q;
}

UpdateTensors TransposerModelImpl::run_heads(const torch::Tensor& pooled) {
  UpdateTensors u;
  u.dp = head_p->forward(pooled);
  u.ddg = head_dg->forward(pooled);
  u.ddr = head_dr->forward(pooled);
  u.ds = head_s->forward(pooled);
  u.dz = head_z->forward(pooled);
  return u;
}

void TransposerModelImpl::set_capture_attention(bool on) {
  for (const auto& m : modules(false))
    if (auto* attn = m->as<MultiheadAttentionImpl>()) attn->capture_weights = on;
}

bool contains_normalization(const torch::nn::Module& module) {
  for (const auto& m : module.modules(false)) {
    if (m->as<torch::nn::LayerNormImpl>() || m->as<torch::nn::BatchNorm1dImpl>() ||
        m->as<torch::nn::BatchNorm2dImpl>() || m->as<torch::nn::BatchNorm3dImpl>() ||
        m->as<torch::nn::GroupNormImpl>() || m->as<torch::nn::InstanceNorm1dImpl>() ||
        m->as<torch::nn::InstanceNorm2dImpl>() || m->as<torch::nn::InstanceNorm3dImpl>() ||
        m->as<torch::nn::LocalResponseNormImpl>())
      return true;
  }
  return false;
}

void t_fixup_init(TransposerModel& model, uint64_t seed) {
  if (contains_normalization(*model))
    throw ConfigError("t_fixup_init: normalization layer present");
  torch::manual_seed(seed);
  torch::NoGradGuard no_grad;

  for (const auto& m : model->modules(false)) {
    if (auto* lin = m->as<torch::nn::LinearImpl>()) {
      torch::nn::init::xavier_uniform_(lin->weight);
      torch::nn::init::zeros_(lin->bias);
    } else if (auto* conv = m->as<torch::nn::Conv2dImpl>()) {
      torch::nn::init::xavier_uniform_(conv->weight);
      torch::nn::init::zeros_(conv->bias);
    }
  }
  model->w_pe.normal_(0.0, std::pow(double(model->cfg.d_model), -0.5));

  const double enc_scale = 0.67 * std::pow(double(model->cfg.enc_layers), -0.25);
  const double dec_scale = std::pow(9.0 * double(model->cfg.dec_layers), -0.25);

  auto scale_attn = [&](MultiheadAttention& attn, double k) {
    attn->wv->weight.mul_(k);
    attn->wo->weight.mul_(k);
  };
  for (const auto& m : *model->enc_blocks) {
    auto* blk = m->as<EncoderBlockImpl>();
    scale_attn(blk->attn, enc_scale);
    blk->ff1->weight.mul_(enc_scale);
    blk->ff2->weight.mul_(enc_scale);
  }
  for (const auto& m : *model->dec_blocks) {
    auto* blk = m->as<DecoderBlockImpl>();
    scale_attn(blk->self_attn, dec_scale);
    scale_attn(blk->cross_attn, dec_scale);
    blk->ff1->weight.mul_(dec_scale);
    blk->ff2->weight.mul_(dec_scale);
  }
  // Token projections play the role of the input embeddings.
  model->proj_enc->weight.mul_(enc_scale);
  model->proj_dec_past->weight.mul_(dec_scale);
  model->proj_dec_cur->weight.mul_(dec_scale);
  model->w_pe.mul_(dec_scale);
}

}  // namespace ddfpose::tposer
