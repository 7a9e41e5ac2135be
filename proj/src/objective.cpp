#include "dyn4d/objective.hpp"

#include "dyn4d/error.hpp"

namespace dyn4d {

namespace {

void check_targets(const TokenSet& tokens, const std::vector<FrameTarget>& targets) {
  const auto hw = static_cast<Eigen::Index>(tokens.n_patches());
  if (targets.size() != static_cast<std::size_t>(tokens.batch * tokens.frames)) {
    throw Error(ErrorCode::ShapeMismatch, "one target per frame is required");
  }
  for (const auto& t : targets) {
    if (t.depth.size() != hw || t.points.rows() != hw || t.points.cols() != 3) {
      throw Error(ErrorCode::ShapeMismatch, "target maps do not match the patch grid");
    }
  }
}

struct DenseTerm {
  double value{0.0};
  DenseGrad grad;
};

DenseTerm dense_term(const Eigen::MatrixXd& values, const Eigen::VectorXd& conf, const Eigen::MatrixXd& gt,
                     const PixelMask& valid, int h, int w, const LossWeights& weights, bool with_grad) {
  const DensePrediction pred{h, w, values, conf};
  DenseTerm t;
  t.value = conf_weighted_loss(pred, gt, valid, weights.conf_reg) +
            gradient_regularizer(values, gt, h, w, valid, weights.grad_scales);
  if (with_grad) {
    t.grad = conf_weighted_loss_grad(pred, gt, valid, weights.conf_reg);
    t.grad.values += gradient_regularizer_grad(values, gt, h, w, valid, weights.grad_scales);
  }
  return t;
}

ObjectiveTerms run(const TokenSet& tokens, const AggregatorConfig& config, const AggregatorParams& params,
                   const std::vector<FrameTarget>& targets, const LossWeights& weights, AggregatorGradients* grads) {
  weights.validate();
  check_targets(tokens, targets);
  AggregatorTape tape;
  const AggregatorOutput out = aggregator_forward(tokens, config, params, grads ? &tape : nullptr);
  const std::vector<DecodedFrame> frames = decode(out.tokens, params.heads);
  const double inv_frames = 1.0 / static_cast<double>(frames.size());
  const int h = tokens.grid_h;
  const int w = tokens.grid_w;

  ObjectiveTerms terms;
  std::vector<DecodedFrame> d_frames(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const DecodedFrame& f = frames[i];
    const FrameTarget& t = targets[i];
    terms.camera += inv_frames * camera_loss(f.camera, t.camera, weights.huber_delta);
    const DenseTerm depth = dense_term(f.depth, f.depth_conf, t.depth, t.valid, h, w, weights, grads != nullptr);
    const DenseTerm pmap = dense_term(f.points, f.point_conf, t.points, t.valid, h, w, weights, grads != nullptr);
    terms.depth += inv_frames * depth.value;
    terms.pmap += inv_frames * pmap.value;
    if (grads) {
      DecodedFrame& d = d_frames[i];
      d.camera = weights.lambda_c * inv_frames * camera_loss_grad(f.camera, t.camera, weights.huber_delta);
      d.depth = inv_frames * depth.grad.values.col(0);
      d.depth_conf = inv_frames * depth.grad.confidence;
      d.points = inv_frames * pmap.grad.values;
      d.point_conf = inv_frames * pmap.grad.confidence;
    }
  }
  terms.total = total_loss(terms.camera, terms.depth, terms.pmap, weights);

  if (grads) {
    TokenSet d_out = out.tokens.zeros_like();
    DecoderParams d_heads = zeros_like(params).heads;
    decode_backward(out.tokens, params.heads, frames, d_frames, d_heads, d_out);
    *grads = aggregator_backward(tape, config, params, d_out);
    grads->params.heads = std::move(d_heads);
  }
  return terms;
}

}  // namespace

ObjectiveTerms evaluate_objective(const TokenSet& tokens, const AggregatorConfig& config,
                                  const AggregatorParams& params, const std::vector<FrameTarget>& targets,
                                  const LossWeights& weights) {
  return run(tokens, config, params, targets, weights, nullptr);
}

ObjectiveGradients objective_gradients(const TokenSet& tokens, const AggregatorConfig& config,
                                       const AggregatorParams& params, const std::vector<FrameTarget>& targets,
                                       const LossWeights& weights) {
  ObjectiveGradients g;
  g.terms = run(tokens, config, params, targets, weights, &g.grads);
  return g;
}

}  // namespace dyn4d
