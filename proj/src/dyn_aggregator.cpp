#include "dyn4d/dyn_aggregator.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "dyn4d/error.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// --- tokens ----------------------------------------------------------------

TokenRole TokenSet::role(int p) const {
  if (p == 0) return TokenRole::Camera;
  if (p <= n_reg) return TokenRole::Register;
  return TokenRole::Patch;
}

void TokenSet::validate() const {
  if (batch < 1 || frames < 1 || n_reg < 0 || grid_h < 1 || grid_w < 1 || width < 1) {
    throw Error(ErrorCode::ShapeMismatch, "token set dimensions must be positive");
  }
  if (data.size() != static_cast<std::size_t>(batch)) {
    throw Error(ErrorCode::ShapeMismatch, "token data does not match the batch size");
  }
  for (const auto& m : data) {
    if (m.rows() != static_cast<Eigen::Index>(frames) * tokens_per_frame() || m.cols() != width) {
      throw Error(ErrorCode::ShapeMismatch, "token block has the wrong shape");
    }
    if (!m.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "token data must be finite");
    }
  }
}

TokenSet TokenSet::zeros(int batch, int frames, int n_reg, int grid_h, int grid_w, int width) {
  TokenSet t{batch, frames, n_reg, grid_h, grid_w, width, {}};
  const auto rows = static_cast<Eigen::Index>(frames) * t.tokens_per_frame();
  t.data.assign(static_cast<std::size_t>(batch), MatrixXd::Zero(rows, width));
  return t;
}

TokenSet TokenSet::zeros_like() const { return zeros(batch, frames, n_reg, grid_h, grid_w, width); }

// --- parameters ------------------------------------------------------------

double MaskHeadParams::tau() const { return softplus_param(tau_logit, epsilon); }
double MaskHeadParams::alpha() const { return softplus_param(alpha_logit, epsilon); }

AggregatorConfig AggregatorConfig::reference_schedule() {
  AggregatorConfig c;
  c.n_stage1 = 8;
  c.n_stage2 = 10;
  c.n_stage3 = 6;
  return c;
}

void AggregatorConfig::validate() const {
  if (n_stage1 < 0 || n_stage2 < 0 || n_stage3 < 0 || n_reg < 0) {
    throw Error(ErrorCode::InvalidArgument, "layer and register counts must be non-negative");
  }
  if (use_mask && n_stage2 < 1) {
    throw Error(ErrorCode::InvalidArgument, "the masked stage needs at least one layer");
  }
}

bool is_trainable_layer(const AggregatorConfig& config, int layer) {
  return layer >= config.n_stage1 && layer < config.n_stage1 + config.n_stage2;
}

namespace {

void add_view(std::vector<ParamView>& v, const std::string& name, MatrixXd& m) {
  v.push_back({name, m.data(), static_cast<std::size_t>(m.size())});
}
void add_view(std::vector<ParamView>& v, const std::string& name, VectorXd& m) {
  v.push_back({name, m.data(), static_cast<std::size_t>(m.size())});
}

AttentionParams attention_shape(int width) {
  return {MatrixXd::Zero(width, width), MatrixXd::Zero(width, width), MatrixXd::Zero(width, width),
          MatrixXd::Zero(width, width)};
}

AggregatorParams shaped_params(int n_layers, int width, int d_low, int kernel_size) {
  AggregatorParams p;
  p.mask_head.proj = MatrixXd::Zero(width, d_low);
  p.mask_head.kernel_size = kernel_size;
  p.mask_head.kernel = MatrixXd::Zero(kernel_size * kernel_size, d_low);
  p.mask_head.bias = VectorXd::Zero(d_low);
  p.mask_head.mix = VectorXd::Zero(d_low);
  p.layers.assign(static_cast<std::size_t>(n_layers), LayerParams{attention_shape(width), attention_shape(width)});
  p.heads.camera = MatrixXd::Zero(width, 9);
  p.heads.camera_bias = VectorXd::Zero(9);
  p.heads.depth = MatrixXd::Zero(width, 2);
  p.heads.depth_bias = VectorXd::Zero(2);
  p.heads.point = MatrixXd::Zero(width, 4);
  p.heads.point_bias = VectorXd::Zero(4);
  return p;
}

}  // namespace

std::vector<ParamView> param_views(AggregatorParams& p) {
  std::vector<ParamView> v;
  add_view(v, "mask_head.proj", p.mask_head.proj);
  add_view(v, "mask_head.kernel", p.mask_head.kernel);
  add_view(v, "mask_head.bias", p.mask_head.bias);
  add_view(v, "mask_head.mix", p.mask_head.mix);
  v.push_back({"mask_head.tau_logit", &p.mask_head.tau_logit, 1});
  v.push_back({"mask_head.alpha_logit", &p.mask_head.alpha_logit, 1});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = "layer" + std::to_string(l);
    for (auto [kind, a] : {std::pair<const char*, AttentionParams*>{".global", &p.layers[l].global},
                           std::pair<const char*, AttentionParams*>{".frame", &p.layers[l].frame}}) {
      add_view(v, base + kind + ".wq", a->wq);
      add_view(v, base + kind + ".wk", a->wk);
      add_view(v, base + kind + ".wv", a->wv);
      add_view(v, base + kind + ".wo", a->wo);
    }
  }
  add_view(v, "heads.camera", p.heads.camera);
  add_view(v, "heads.camera_bias", p.heads.camera_bias);
  add_view(v, "heads.depth", p.heads.depth);
  add_view(v, "heads.depth_bias", p.heads.depth_bias);
  add_view(v, "heads.point", p.heads.point);
  add_view(v, "heads.point_bias", p.heads.point_bias);
  return v;
}

AggregatorParams init_params(const AggregatorConfig& config, int width, std::uint64_t seed) {
  config.validate();
  if (width < 4 || width % 4 != 0) {
    throw Error(ErrorCode::InvalidArgument, "width must be a positive multiple of 4");
  }
  AggregatorParams p = shaped_params(config.n_layers(), width, width / 4, 3);
  Rng rng = Rng::stream(seed, 0x61676772ULL);
  // Without normalization layers larger weights let the residual stream grow
  // and the softmax saturate within a few layers.
  const double scale = 0.5 / std::sqrt(static_cast<double>(width));
  for (auto& view : param_views(p)) {
    for (std::size_t i = 0; i < view.size; ++i) view.data[i] = scale * rng.normal();
  }
  p.mask_head.tau_logit = 0.0;
  p.mask_head.alpha_logit = 0.0;
  return p;
}

AggregatorParams zeros_like(const AggregatorParams& params) {
  AggregatorParams z = params;
  for (auto& view : param_views(z)) {
    std::fill(view.data, view.data + view.size, 0.0);
  }
  return z;
}

TokenSet random_tokens(int batch, int frames, int n_reg, int grid_h, int grid_w, int width, std::uint64_t seed) {
  TokenSet t = TokenSet::zeros(batch, frames, n_reg, grid_h, grid_w, width);
  Rng rng = Rng::stream(seed, 0x746f6b656eULL);
  for (auto& m : t.data) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  }
  return t;
}

// --- scalar helpers --------------------------------------------------------

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_param(double logit, double epsilon) { return softplus(logit) + epsilon; }

// --- mask head -------------------------------------------------------------

namespace {

void check_head(const TokenSet& tokens, const MaskHeadParams& head) {
  const Eigen::Index d_low = head.proj.cols();
  const int k = head.kernel_size;
  if (head.proj.rows() != tokens.width || d_low < 1 || k < 1 || k % 2 == 0 ||
      head.kernel.rows() != k * k || head.kernel.cols() != d_low || head.bias.size() != d_low ||
      head.mix.size() != d_low) {
    throw Error(ErrorCode::ShapeMismatch, "mask head does not match the token width");
  }
  if (!(head.epsilon > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "mask head epsilon must be positive");
  }
}

}  // namespace

DynamicsMask predict_mask(const TokenSet& tokens, const MaskHeadParams& head) {
  return predict_mask(tokens, head, nullptr);
}

DynamicsMask predict_mask(const TokenSet& tokens, const MaskHeadParams& head, MaskHeadTape* tape) {
  tokens.validate();
  check_head(tokens, head);
  const int h = tokens.grid_h;
  const int w = tokens.grid_w;
  const int hw = tokens.n_patches();
  const int k = head.kernel_size;
  const int r = k / 2;
  const Eigen::Index d_low = head.proj.cols();
  const double tau = head.tau();
  const double alpha = head.alpha();

  DynamicsMask mask{tokens.batch, tokens.frames, tokens.tokens_per_frame(), {}};
  if (tape) *tape = MaskHeadTape{};
  for (int b = 0; b < tokens.batch; ++b) {
    VectorXd values = VectorXd::Zero(static_cast<Eigen::Index>(tokens.frames) * tokens.tokens_per_frame());
    for (int s = 0; s < tokens.frames; ++s) {
      const MatrixXd patches = tokens.data[static_cast<std::size_t>(b)].middleRows(tokens.row(s, 1 + tokens.n_reg), hw);
      const MatrixXd projected = patches * head.proj;
      MatrixXd conv(hw, d_low);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (Eigen::Index c = 0; c < d_low; ++c) {
            double acc = head.bias(c);
            for (int ky = 0; ky < k; ++ky) {
              const int sy = y + ky - r;
              if (sy < 0 || sy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int sx = x + kx - r;
                if (sx < 0 || sx >= w) continue;
                acc += head.kernel(ky * k + kx, c) * projected(sy * w + sx, c);
              }
            }
            conv(y * w + x, c) = acc;
          }
        }
      }
      const VectorXd logits = conv * head.mix;
      for (int i = 0; i < hw; ++i) {
        values(tokens.row(s, 1 + tokens.n_reg + i)) = -alpha * sigmoid(-logits(i) / tau);
      }
      if (tape) {
        tape->patches.push_back(patches);
        tape->projected.push_back(projected);
        tape->conv.push_back(conv);
        tape->logits.push_back(logits);
      }
    }
    mask.values.push_back(std::move(values));
  }
  return mask;
}

void predict_mask_backward(const MaskHeadTape& tape, const TokenSet& tokens, const MaskHeadParams& head,
                           const DynamicsMask& d_mask, MaskHeadParams& grads, TokenSet& d_tokens) {
  const int h = tokens.grid_h;
  const int w = tokens.grid_w;
  const int hw = tokens.n_patches();
  const int k = head.kernel_size;
  const int r = k / 2;
  const Eigen::Index d_low = head.proj.cols();
  const double tau = head.tau();
  const double alpha = head.alpha();

  double d_alpha = 0.0;
  double d_tau = 0.0;
  for (int b = 0; b < tokens.batch; ++b) {
    for (int s = 0; s < tokens.frames; ++s) {
      const auto slot = static_cast<std::size_t>(b * tokens.frames + s);
      const VectorXd& logits = tape.logits[slot];
      VectorXd d_logits(hw);
      for (int i = 0; i < hw; ++i) {
        const double g = d_mask.values[static_cast<std::size_t>(b)](tokens.row(s, 1 + tokens.n_reg + i));
        const double m = logits(i);
        const double sg = sigmoid(-m / tau);
        d_alpha += -g * sg;
        const double du = -alpha * g * sg * (1.0 - sg);  // u = -m / tau
        d_logits(i) = -du / tau;
        d_tau += du * m / (tau * tau);
      }
      const MatrixXd& conv = tape.conv[slot];
      const MatrixXd& projected = tape.projected[slot];
      grads.mix += conv.transpose() * d_logits;
      const MatrixXd d_conv = d_logits * head.mix.transpose();
      grads.bias += d_conv.colwise().sum().transpose();
      MatrixXd d_proj_out = MatrixXd::Zero(hw, d_low);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (Eigen::Index c = 0; c < d_low; ++c) {
            const double g = d_conv(y * w + x, c);
            for (int ky = 0; ky < k; ++ky) {
              const int sy = y + ky - r;
              if (sy < 0 || sy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int sx = x + kx - r;
                if (sx < 0 || sx >= w) continue;
                grads.kernel(ky * k + kx, c) += g * projected(sy * w + sx, c);
                d_proj_out(sy * w + sx, c) += g * head.kernel(ky * k + kx, c);
              }
            }
          }
        }
      }
      grads.proj += tape.patches[slot].transpose() * d_proj_out;
      d_tokens.data[static_cast<std::size_t>(b)].middleRows(tokens.row(s, 1 + tokens.n_reg), hw) +=
          d_proj_out * head.proj.transpose();
    }
  }
  // d softplus(x) / dx = sigmoid(x)
  grads.alpha_logit += d_alpha * sigmoid(head.alpha_logit);
  grads.tau_logit += d_tau * sigmoid(head.tau_logit);
}

// --- attention -------------------------------------------------------------

MatrixXd masked_attention(const MatrixXd& x, const AttentionParams& params, const VectorXd& mask,
                          const std::vector<bool>& masked_rows) {
  return masked_attention(x, params, mask, masked_rows, nullptr);
}

MatrixXd masked_attention(const MatrixXd& x, const AttentionParams& params, const VectorXd& mask,
                          const std::vector<bool>& masked_rows, AttentionTape* tape) {
  const Eigen::Index n = x.rows();
  const bool has_mask = mask.size() > 0;
  if (has_mask && (mask.size() != n || masked_rows.size() != static_cast<std::size_t>(n))) {
    throw Error(ErrorCode::ShapeMismatch, "mask length must match the token count");
  }
  const MatrixXd q = x * params.wq;
  const MatrixXd k = x * params.wk;
  const MatrixXd v = x * params.wv;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.wq.cols()));
  MatrixXd a = (q * k.transpose()) * inv_sqrt_d;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (has_mask && masked_rows[static_cast<std::size_t>(i)]) {
      a.row(i) += mask.transpose();
    }
    const double top = a.row(i).maxCoeff();
    a.row(i) = (a.row(i).array() - top).exp();
    a.row(i) /= a.row(i).sum();
  }
  MatrixXd o = a * v;
  MatrixXd y = o * params.wo;
  if (tape) {
    *tape = AttentionTape{x, q, k, v, std::move(a), std::move(o), mask, masked_rows};
  }
  return y;
}

MatrixXd masked_attention_backward(const AttentionTape& tape, const AttentionParams& params, const MatrixXd& d_out,
                                   AttentionParams& grads, VectorXd* d_mask) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.wq.cols()));
  grads.wo += tape.o.transpose() * d_out;
  const MatrixXd d_o = d_out * params.wo.transpose();
  const MatrixXd d_a = d_o * tape.v.transpose();
  const MatrixXd d_v = tape.a.transpose() * d_o;
  const VectorXd row_dot = (d_a.array() * tape.a.array()).rowwise().sum();
  const MatrixXd d_logits = (tape.a.array() * (d_a.colwise() - row_dot).array()).matrix();
  if (d_mask && tape.mask.size() > 0) {
    for (Eigen::Index i = 0; i < d_logits.rows(); ++i) {
      if (tape.masked_rows[static_cast<std::size_t>(i)]) *d_mask += d_logits.row(i).transpose();
    }
  }
  const MatrixXd d_q = d_logits * tape.k * inv_sqrt_d;
  const MatrixXd d_k = d_logits.transpose() * tape.q * inv_sqrt_d;
  grads.wq += tape.x.transpose() * d_q;
  grads.wk += tape.x.transpose() * d_k;
  grads.wv += tape.x.transpose() * d_v;
  return d_q * params.wq.transpose() + d_k * params.wk.transpose() + d_v * params.wv.transpose();
}

namespace {

TokenSet frame_forward(const TokenSet& tokens, const AttentionParams& params, std::vector<AttentionTape>* tapes) {
  TokenSet out = tokens;
  const int p = tokens.tokens_per_frame();
  if (tapes) tapes->assign(static_cast<std::size_t>(tokens.batch * tokens.frames), AttentionTape{});
  for (int b = 0; b < tokens.batch; ++b) {
    for (int s = 0; s < tokens.frames; ++s) {
      const MatrixXd x = tokens.data[static_cast<std::size_t>(b)].middleRows(tokens.row(s, 0), p);
      AttentionTape* tape = tapes ? &(*tapes)[static_cast<std::size_t>(b * tokens.frames + s)] : nullptr;
      out.data[static_cast<std::size_t>(b)].middleRows(tokens.row(s, 0), p) +=
          masked_attention(x, params, VectorXd(), {}, tape);
    }
  }
  return out;
}

void check_mask(const TokenSet& tokens, const DynamicsMask& mask) {
  if (mask.batch != tokens.batch || mask.frames != tokens.frames ||
      mask.tokens_per_frame != tokens.tokens_per_frame() ||
      mask.values.size() != static_cast<std::size_t>(tokens.batch)) {
    throw Error(ErrorCode::ShapeMismatch, "mask shape does not match the tokens");
  }
  for (const auto& v : mask.values) {
    if (v.size() != static_cast<Eigen::Index>(tokens.frames) * tokens.tokens_per_frame()) {
      throw Error(ErrorCode::ShapeMismatch, "mask length does not match the tokens");
    }
  }
}

std::vector<bool> rows_for(const TokenSet& tokens, const std::set<TokenRole>& roles) {
  std::vector<bool> rows;
  rows.reserve(static_cast<std::size_t>(tokens.frames * tokens.tokens_per_frame()));
  for (int s = 0; s < tokens.frames; ++s) {
    for (int p = 0; p < tokens.tokens_per_frame(); ++p) rows.push_back(roles.count(tokens.role(p)) > 0);
  }
  return rows;
}

TokenSet global_forward(const TokenSet& tokens, const AttentionParams& params, const DynamicsMask* mask,
                        const std::set<TokenRole>& roles, std::vector<AttentionTape>* tapes) {
  if (mask) check_mask(tokens, *mask);
  const std::vector<bool> rows = mask ? rows_for(tokens, roles) : std::vector<bool>{};
  TokenSet out = tokens;
  if (tapes) tapes->assign(static_cast<std::size_t>(tokens.batch), AttentionTape{});
  for (int b = 0; b < tokens.batch; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const VectorXd bias = mask ? mask->values[bi] : VectorXd();
    out.data[bi] += masked_attention(tokens.data[bi], params, bias, rows, tapes ? &(*tapes)[bi] : nullptr);
  }
  return out;
}

}  // namespace

TokenSet frame_attention(const TokenSet& tokens, const AttentionParams& params) {
  tokens.validate();
  return frame_forward(tokens, params, nullptr);
}

TokenSet global_attention(const TokenSet& tokens, const AttentionParams& params, const DynamicsMask* mask,
                          const std::set<TokenRole>& roles) {
  tokens.validate();
  return global_forward(tokens, params, mask, roles, nullptr);
}

// --- aggregator ------------------------------------------------------------

AggregatorOutput aggregator_forward(const TokenSet& tokens, const AggregatorConfig& config,
                                    const AggregatorParams& params, AggregatorTape* tape) {
  config.validate();
  tokens.validate();
  if (params.layers.size() != static_cast<std::size_t>(config.n_layers())) {
    throw Error(ErrorCode::ShapeMismatch, "parameter set does not match the layer schedule");
  }
  if (tokens.n_reg != config.n_reg) {
    throw Error(ErrorCode::ShapeMismatch, "token register count does not match the config");
  }
  for (const auto& layer : params.layers) {
    for (const AttentionParams* a : {&layer.global, &layer.frame}) {
      for (const MatrixXd* m : {&a->wq, &a->wk, &a->wv, &a->wo}) {
        if (m->rows() != tokens.width || m->cols() != tokens.width) {
          throw Error(ErrorCode::ShapeMismatch, "attention weights do not match the token width");
        }
      }
    }
  }
  if (tape) {
    *tape = AggregatorTape{};
    tape->global.resize(params.layers.size());
    tape->frame.resize(params.layers.size());
  }

  AggregatorOutput out;
  TokenSet x = tokens;
  for (int l = 0; l < config.n_layers(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    if (l == config.n_stage1 && config.use_mask) {
      out.mask = predict_mask(x, params.mask_head, tape ? &tape->mask_head : nullptr);
      if (tape) tape->mask_input = x;
    }
    const bool masked = config.use_mask && is_trainable_layer(config, l);
    if (tape) tape->layer_inputs.push_back(x);
    TokenSet mid = global_forward(x, params.layers[li].global, masked ? &out.mask : nullptr, config.apply_mask_to,
                                  tape ? &tape->global[li] : nullptr);
    if (tape) tape->mid.push_back(mid);
    x = frame_forward(mid, params.layers[li].frame, tape ? &tape->frame[li] : nullptr);
  }
  if (tape) tape->mask = out.mask;
  out.tokens = std::move(x);
  return out;
}

AggregatorGradients aggregator_backward(const AggregatorTape& tape, const AggregatorConfig& config,
                                        const AggregatorParams& params, const TokenSet& d_out) {
  AggregatorGradients g{zeros_like(params), d_out};
  const int p = d_out.tokens_per_frame();
  std::vector<VectorXd> d_mask;
  if (config.use_mask) {
    for (int b = 0; b < d_out.batch; ++b) d_mask.push_back(VectorXd::Zero(static_cast<Eigen::Index>(d_out.frames) * p));
  }

  TokenSet& d = g.tokens;
  for (int l = config.n_layers() - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    // Frame block: out = mid + F(mid), so the residual passes d through.
    for (int b = 0; b < d.batch; ++b) {
      for (int s = 0; s < d.frames; ++s) {
        const MatrixXd d_slice = d.data[static_cast<std::size_t>(b)].middleRows(d.row(s, 0), p);
        d.data[static_cast<std::size_t>(b)].middleRows(d.row(s, 0), p) +=
            masked_attention_backward(tape.frame[li][static_cast<std::size_t>(b * d.frames + s)],
                                      params.layers[li].frame, d_slice, g.params.layers[li].frame, nullptr);
      }
    }
    const bool masked = config.use_mask && is_trainable_layer(config, l);
    for (int b = 0; b < d.batch; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      const MatrixXd d_block = d.data[bi];
      d.data[bi] += masked_attention_backward(tape.global[li][bi], params.layers[li].global, d_block,
                                              g.params.layers[li].global, masked ? &d_mask[bi] : nullptr);
    }
    if (l == config.n_stage1 && config.use_mask) {
      DynamicsMask dm{d.batch, d.frames, p, d_mask};
      predict_mask_backward(tape.mask_head, tape.mask_input, params.mask_head, dm, g.params.mask_head, d);
    }
  }
  return g;
}

// --- decoders --------------------------------------------------------------

std::vector<DecodedFrame> decode(const TokenSet& tokens, const DecoderParams& heads) {
  tokens.validate();
  if (heads.camera.rows() != tokens.width || heads.depth.rows() != tokens.width ||
      heads.point.rows() != tokens.width) {
    throw Error(ErrorCode::ShapeMismatch, "decoder heads do not match the token width");
  }
  const int hw = tokens.n_patches();
  std::vector<DecodedFrame> out;
  for (int b = 0; b < tokens.batch; ++b) {
    const MatrixXd& z = tokens.data[static_cast<std::size_t>(b)];
    for (int s = 0; s < tokens.frames; ++s) {
      DecodedFrame f;
      f.camera = heads.camera.transpose() * z.row(tokens.row(s, 0)).transpose() + heads.camera_bias;
      const MatrixXd patches = z.middleRows(tokens.row(s, 1 + tokens.n_reg), hw);
      const MatrixXd raw_d = (patches * heads.depth).rowwise() + heads.depth_bias.transpose();
      const MatrixXd raw_p = (patches * heads.point).rowwise() + heads.point_bias.transpose();
      f.depth = raw_d.col(0);
      f.depth_conf = raw_d.col(1).array().exp();
      f.points = raw_p.leftCols(3);
      f.point_conf = raw_p.col(3).array().exp();
      out.push_back(std::move(f));
    }
  }
  return out;
}

void decode_backward(const TokenSet& tokens, const DecoderParams& heads, const std::vector<DecodedFrame>& frames,
                     const std::vector<DecodedFrame>& d_frames, DecoderParams& grads, TokenSet& d_tokens) {
  const int hw = tokens.n_patches();
  for (int b = 0; b < tokens.batch; ++b) {
    const MatrixXd& z = tokens.data[static_cast<std::size_t>(b)];
    MatrixXd& dz = d_tokens.data[static_cast<std::size_t>(b)];
    for (int s = 0; s < tokens.frames; ++s) {
      const auto slot = static_cast<std::size_t>(b * tokens.frames + s);
      const DecodedFrame& f = frames[slot];
      const DecodedFrame& df = d_frames[slot];
      const VectorXd zc = z.row(tokens.row(s, 0)).transpose();
      grads.camera += zc * df.camera.transpose();
      grads.camera_bias += df.camera;
      dz.row(tokens.row(s, 0)) += (heads.camera * df.camera).transpose();

      MatrixXd d_raw_d(hw, 2);
      d_raw_d.col(0) = df.depth;
      d_raw_d.col(1) = df.depth_conf.cwiseProduct(f.depth_conf);
      MatrixXd d_raw_p(hw, 4);
      d_raw_p.leftCols(3) = df.points;
      d_raw_p.col(3) = df.point_conf.cwiseProduct(f.point_conf);
      const MatrixXd patches = z.middleRows(tokens.row(s, 1 + tokens.n_reg), hw);
      grads.depth += patches.transpose() * d_raw_d;
      grads.depth_bias += d_raw_d.colwise().sum().transpose();
      grads.point += patches.transpose() * d_raw_p;
      grads.point_bias += d_raw_p.colwise().sum().transpose();
      dz.middleRows(tokens.row(s, 1 + tokens.n_reg), hw) +=
          d_raw_d * heads.depth.transpose() + d_raw_p * heads.point.transpose();
    }
  }
}

// --- serialization ---------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic{'D', 'A', 'G', 'G'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(b.data(), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(b.data(), 8);
}

void put_array(std::ostream& out, const double* data, std::size_t n) {
  put_u64(out, n);
  for (std::size_t i = 0; i < n; ++i) put_u64(out, std::bit_cast<std::uint64_t>(data[i]));
}

std::uint64_t get_uint(std::istream& in, int bytes, const char* what) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), bytes);
  if (in.gcount() != bytes) {
    throw Error(ErrorCode::ParseError, std::string("truncated parameter file while reading ") + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::vector<double> get_array(std::istream& in, std::size_t expected, const std::string& name) {
  const std::uint64_t n = get_uint(in, 8, "an array length");
  if (n != expected) {
    throw Error(ErrorCode::ParseError, "array '" + name + "' has " + std::to_string(n) + " values, expected " +
                                           std::to_string(expected));
  }
  std::vector<double> v(expected);
  for (auto& x : v) x = std::bit_cast<double>(get_uint(in, 8, name.c_str()));
  return v;
}

}  // namespace

void write_params(std::ostream& out, const AggregatorConfig& config, const AggregatorParams& params) {
  AggregatorParams copy = params;
  const auto views = param_views(copy);
  out.write(kMagic.data(), 4);
  put_u32(out, kParamFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(views.size() + 1));
  const std::array<double, 8> dims{static_cast<double>(params.width()),
                                   static_cast<double>(params.mask_head.proj.cols()),
                                   static_cast<double>(params.mask_head.kernel_size),
                                   static_cast<double>(config.n_reg),
                                   static_cast<double>(config.n_stage1),
                                   static_cast<double>(config.n_stage2),
                                   static_cast<double>(config.n_stage3),
                                   params.mask_head.epsilon};
  put_array(out, dims.data(), dims.size());
  for (const auto& v : views) put_array(out, v.data, v.size);
  if (!out) throw Error(ErrorCode::IoError, "failed to write parameters");
}

AggregatorParams read_params(std::istream& in, AggregatorConfig& config) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kMagic) {
    throw Error(ErrorCode::ParseError, "not a parameter file (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_uint(in, 4, "the version"));
  if (version != kParamFormatVersion) {
    throw Error(ErrorCode::ParseError, "unsupported parameter file version " + std::to_string(version));
  }
  const auto count = static_cast<std::uint32_t>(get_uint(in, 4, "the array count"));
  const auto dims = get_array(in, 8, "dims");
  auto as_int = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1e6) || v != std::floor(v)) {
      throw Error(ErrorCode::ParseError, std::string("bad dimension ") + name);
    }
    return static_cast<int>(v);
  };
  const int width = as_int(dims[0], "width");
  const int d_low = as_int(dims[1], "d_low");
  const int k = as_int(dims[2], "kernel_size");
  config.n_reg = as_int(dims[3], "n_reg");
  config.n_stage1 = as_int(dims[4], "n_stage1");
  config.n_stage2 = as_int(dims[5], "n_stage2");
  config.n_stage3 = as_int(dims[6], "n_stage3");
  if (width < 1 || d_low < 1 || k < 1) {
    throw Error(ErrorCode::ParseError, "dimensions must be positive");
  }
  AggregatorParams params = shaped_params(config.n_layers(), width, d_low, k);
  params.mask_head.epsilon = dims[7];
  auto views = param_views(params);
  if (count != views.size() + 1) {
    throw Error(ErrorCode::ParseError, "parameter file holds " + std::to_string(count) + " arrays, expected " +
                                           std::to_string(views.size() + 1));
  }
  for (auto& v : views) {
    const auto values = get_array(in, v.size, v.name);
    std::copy(values.begin(), values.end(), v.data);
  }
  return params;
}

std::uint64_t hash_tokens(const TokenSet& tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& m : tokens.data) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const auto bits = std::bit_cast<std::uint64_t>(m(i, j));
        for (int byte = 0; byte < 8; ++byte) {
          h ^= (bits >> (8 * byte)) & 0xffU;
          h *= 0x100000001b3ULL;
        }
      }
    }
  }
  return h;
}

}  // namespace dyn4d
