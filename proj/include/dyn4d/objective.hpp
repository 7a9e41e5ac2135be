#pragma once

// End-to-end training objective on the toy aggregator: tokens -> aggregator
// -> linear decoders -> camera, depth and point-map losses.

#include <vector>

#include "dyn4d/dyn_aggregator.hpp"
#include "dyn4d/losses.hpp"

namespace dyn4d {

// One target per (batch, frame), index b * frames + s.
struct FrameTarget {
  CameraVector camera{CameraVector::Zero()};
  Eigen::VectorXd depth;   // H * W
  Eigen::MatrixXd points;  // (H * W) x 3
  PixelMask valid;         // empty means all valid
};

struct ObjectiveTerms {
  double camera{0.0};  // mean over frames
  double depth{0.0};   // mean over frames of conf-weighted + gradient terms
  double pmap{0.0};
  double total{0.0};
};

struct ObjectiveGradients {
  ObjectiveTerms terms;
  AggregatorGradients grads;  // decoder heads included
};

// Throws ShapeMismatch when the targets do not match the token layout.
[[nodiscard]] ObjectiveTerms evaluate_objective(const TokenSet& tokens, const AggregatorConfig& config,
                                                const AggregatorParams& params,
                                                const std::vector<FrameTarget>& targets, const LossWeights& weights);

[[nodiscard]] ObjectiveGradients objective_gradients(const TokenSet& tokens, const AggregatorConfig& config,
                                                     const AggregatorParams& params,
                                                     const std::vector<FrameTarget>& targets,
                                                     const LossWeights& weights);

}  // namespace dyn4d
