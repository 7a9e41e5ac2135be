#pragma once

// Toy-scale dynamics-aware aggregator: alternating global / frame attention,
// a mask head over patch tokens, and asymmetric masked global attention in
// the middle stage. Forward and analytic backward in double precision.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dyn4d {

enum class TokenRole { Camera, Register, Patch };

// Per batch element a (frames * P) x width matrix; row s * P + p is token p of
// frame s. Token order inside a frame: camera, n_reg registers, H * W patches
// in row-major grid order.
struct TokenSet {
  int batch{0};
  int frames{0};
  int n_reg{0};
  int grid_h{0};
  int grid_w{0};
  int width{0};
  std::vector<Eigen::MatrixXd> data;

  [[nodiscard]] int n_patches() const { return grid_h * grid_w; }
  [[nodiscard]] int tokens_per_frame() const { return 1 + n_reg + n_patches(); }
  [[nodiscard]] TokenRole role(int p) const;
  [[nodiscard]] Eigen::Index row(int frame, int p) const { return static_cast<Eigen::Index>(frame) * tokens_per_frame() + p; }

  // Throws ShapeMismatch on inconsistent sizes, InvalidArgument on non-finite data.
  void validate() const;
  [[nodiscard]] static TokenSet zeros(int batch, int frames, int n_reg, int grid_h, int grid_w, int width);
  [[nodiscard]] TokenSet zeros_like() const;
};

// Per batch element a vector of length frames * P, entries in [-alpha, 0];
// camera and register positions are exactly 0.
struct DynamicsMask {
  int batch{0};
  int frames{0};
  int tokens_per_frame{0};
  std::vector<Eigen::VectorXd> values;
};

struct AttentionParams {
  Eigen::MatrixXd wq;
  Eigen::MatrixXd wk;
  Eigen::MatrixXd wv;
  Eigen::MatrixXd wo;
};

struct MaskHeadParams {
  Eigen::MatrixXd proj;    // width x d_low
  int kernel_size{3};
  Eigen::MatrixXd kernel;  // (k * k) x d_low, row ky * k + kx
  Eigen::VectorXd bias;    // d_low
  Eigen::VectorXd mix;     // d_low, reduces channels to one logit
  double tau_logit{0.0};
  double alpha_logit{0.0};
  double epsilon{1e-6};

  [[nodiscard]] double tau() const;
  [[nodiscard]] double alpha() const;
};

struct LayerParams {
  AttentionParams global;
  AttentionParams frame;
};

// Linear readouts standing in for the dense prediction heads.
struct DecoderParams {
  Eigen::MatrixXd camera;       // width x 9
  Eigen::VectorXd camera_bias;  // 9
  Eigen::MatrixXd depth;        // width x 2: depth, log confidence
  Eigen::VectorXd depth_bias;
  Eigen::MatrixXd point;        // width x 4: xyz, log confidence
  Eigen::VectorXd point_bias;
};

struct AggregatorConfig {
  int n_stage1{2};
  int n_stage2{2};
  int n_stage3{1};
  int n_reg{4};
  std::set<TokenRole> apply_mask_to{TokenRole::Camera, TokenRole::Register};
  bool use_mask{true};

  [[nodiscard]] int n_layers() const { return n_stage1 + n_stage2 + n_stage3; }
  [[nodiscard]] static AggregatorConfig reference_schedule();
  // Throws InvalidArgument.
  void validate() const;
};

// Only the middle-stage layers are adapted during fine-tuning.
[[nodiscard]] bool is_trainable_layer(const AggregatorConfig& config, int layer);

struct AggregatorParams {
  MaskHeadParams mask_head;
  std::vector<LayerParams> layers;
  DecoderParams heads;

  [[nodiscard]] int width() const { return static_cast<int>(mask_head.proj.rows()); }
};

// Named flat views into every parameter array in serialization order.
// Matrices are exposed column-major.
struct ParamView {
  std::string name;
  double* data;
  std::size_t size;
};
[[nodiscard]] std::vector<ParamView> param_views(AggregatorParams& params);

// Small random parameters (entries ~ N(0, 0.25 / width)); d_low = width / 4.
[[nodiscard]] AggregatorParams init_params(const AggregatorConfig& config, int width, std::uint64_t seed);
[[nodiscard]] AggregatorParams zeros_like(const AggregatorParams& params);
[[nodiscard]] TokenSet random_tokens(int batch, int frames, int n_reg, int grid_h, int grid_w, int width,
                                     std::uint64_t seed);

[[nodiscard]] double softplus(double x);
[[nodiscard]] double sigmoid(double x);
// softplus(logit) + epsilon, stable for large |logit|.
[[nodiscard]] double softplus_param(double logit, double epsilon);

// Throws ShapeMismatch when the head does not match the token width.
[[nodiscard]] DynamicsMask predict_mask(const TokenSet& tokens, const MaskHeadParams& head);

// softmax(Q K^T / sqrt(d) + B) V Wo, where row i of B is `mask` when
// masked_rows[i] is set and zero otherwise. An empty mask means no bias.
[[nodiscard]] Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& x, const AttentionParams& params,
                                               const Eigen::VectorXd& mask, const std::vector<bool>& masked_rows);

// Per-frame self-attention plus residual.
[[nodiscard]] TokenSet frame_attention(const TokenSet& tokens, const AttentionParams& params);

// Self-attention over all frames plus residual; the mask applies to query
// rows whose role is in `roles`. Throws ShapeMismatch.
[[nodiscard]] TokenSet global_attention(const TokenSet& tokens, const AttentionParams& params,
                                        const DynamicsMask* mask, const std::set<TokenRole>& roles);

// --- forward with tape, backward -------------------------------------------

struct AttentionTape {
  Eigen::MatrixXd x;
  Eigen::MatrixXd q;
  Eigen::MatrixXd k;
  Eigen::MatrixXd v;
  Eigen::MatrixXd a;  // row-softmax weights
  Eigen::MatrixXd o;  // a * v
  Eigen::VectorXd mask;
  std::vector<bool> masked_rows;
};

Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& x, const AttentionParams& params,
                                 const Eigen::VectorXd& mask, const std::vector<bool>& masked_rows,
                                 AttentionTape* tape);

// Accumulates parameter gradients into `grads` and returns dL/dx. When the
// tape carries a mask, dL/dmask is accumulated into `d_mask` if non-null.
Eigen::MatrixXd masked_attention_backward(const AttentionTape& tape, const AttentionParams& params,
                                          const Eigen::MatrixXd& d_out, AttentionParams& grads,
                                          Eigen::VectorXd* d_mask);

struct MaskHeadTape {
  std::vector<Eigen::MatrixXd> patches;    // per (b, s): (H * W) x width
  std::vector<Eigen::MatrixXd> projected;  // per (b, s): (H * W) x d_low
  std::vector<Eigen::MatrixXd> conv;       // per (b, s): (H * W) x d_low
  std::vector<Eigen::VectorXd> logits;     // per (b, s): H * W
};

DynamicsMask predict_mask(const TokenSet& tokens, const MaskHeadParams& head, MaskHeadTape* tape);

// Accumulates head gradients and dL/dtokens (patch rows only).
void predict_mask_backward(const MaskHeadTape& tape, const TokenSet& tokens, const MaskHeadParams& head,
                           const DynamicsMask& d_mask, MaskHeadParams& grads, TokenSet& d_tokens);

struct AggregatorOutput {
  TokenSet tokens;
  DynamicsMask mask;  // empty when the config disables the mask
};

struct AggregatorTape {
  std::vector<TokenSet> layer_inputs;  // input to layer l (before its global block)
  std::vector<TokenSet> mid;           // output of layer l's global block
  std::vector<std::vector<AttentionTape>> global;  // [layer][batch]
  std::vector<std::vector<AttentionTape>> frame;   // [layer][batch * frames]
  TokenSet mask_input;
  MaskHeadTape mask_head;
  DynamicsMask mask;
};

[[nodiscard]] AggregatorOutput aggregator_forward(const TokenSet& tokens, const AggregatorConfig& config,
                                                  const AggregatorParams& params, AggregatorTape* tape = nullptr);

struct AggregatorGradients {
  AggregatorParams params;  // same layout as the parameters; decoder heads untouched
  TokenSet tokens;
};

// Gradients of a scalar loss whose derivative w.r.t. the output tokens is d_out.
[[nodiscard]] AggregatorGradients aggregator_backward(const AggregatorTape& tape, const AggregatorConfig& config,
                                                      const AggregatorParams& params, const TokenSet& d_out);

// --- toy decoders -------------------------------------------------------------

struct DecodedFrame {
  Eigen::Matrix<double, 9, 1> camera;
  Eigen::VectorXd depth;       // H * W
  Eigen::VectorXd depth_conf;  // exp of the raw output, > 0
  Eigen::MatrixXd points;      // (H * W) x 3
  Eigen::VectorXd point_conf;
};

// One entry per (batch, frame), index b * frames + s.
[[nodiscard]] std::vector<DecodedFrame> decode(const TokenSet& tokens, const DecoderParams& heads);

// d_frames holds dL/d of each DecodedFrame field. Accumulates into grads and d_tokens.
void decode_backward(const TokenSet& tokens, const DecoderParams& heads, const std::vector<DecodedFrame>& frames,
                     const std::vector<DecodedFrame>& d_frames, DecoderParams& grads, TokenSet& d_tokens);

// --- serialization ------------------------------------------------------------

// "DAGG", u32 version, u32 array count, then per array a u64 element count
// and little-endian float64 values. Array 0 holds
// (width, d_low, kernel_size, n_reg, n_stage1, n_stage2, n_stage3, epsilon);
// the rest follow param_views order.
inline constexpr std::uint32_t kParamFormatVersion = 1;

void write_params(std::ostream& out, const AggregatorConfig& config, const AggregatorParams& params);
// Throws ParseError on malformed input. Returns the parameters and fills the
// layer counts and n_reg of `config`.
[[nodiscard]] AggregatorParams read_params(std::istream& in, AggregatorConfig& config);

// FNV-1a over the bit patterns of every token value.
[[nodiscard]] std::uint64_t hash_tokens(const TokenSet& tokens);

}  // namespace dyn4d
