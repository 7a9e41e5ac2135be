#pragma once

// Training objective pieces: Huber camera loss on the 9-vector encoding,
// confidence-weighted L1 with a log-confidence penalty, multi-scale gradient
// matching, and the weighted total. Every loss comes with its gradient.

#include <vector>

#include <Eigen/Core>

namespace dyn4d {

using CameraVector = Eigen::Matrix<double, 9, 1>;

// [unit quaternion (4) | translation (3) | field of view (2)]
struct CameraEncoding {
  CameraVector g{CameraVector::Zero()};

  // Throws InvalidArgument unless the quaternion has unit norm (1e-10) and
  // both field-of-view entries are positive.
  void validate() const;
};

// Values are (H * W) x C in row-major pixel order; C = 1 for depth, 3 for points.
struct DensePrediction {
  int height{0};
  int width{0};
  Eigen::MatrixXd values;
  Eigen::VectorXd confidence;  // H * W, strictly positive

  void validate() const;
};

struct LossWeights {
  double lambda_c{5.0};
  double huber_delta{0.1};
  double conf_reg{0.1};
  std::vector<int> grad_scales{1, 2, 4};

  void validate() const;
};

[[nodiscard]] double huber(double r, double delta);
[[nodiscard]] double huber_grad(double r, double delta);

// Sum of element-wise Huber terms; the predicted quaternion is flipped to the
// hemisphere of the ground truth first.
[[nodiscard]] double camera_loss(const CameraVector& pred, const CameraVector& gt, double delta);
[[nodiscard]] CameraVector camera_loss_grad(const CameraVector& pred, const CameraVector& gt, double delta);

using PixelMask = std::vector<bool>;  // empty means every pixel is valid

struct DenseGrad {
  Eigen::MatrixXd values;
  Eigen::VectorXd confidence;
};

// mean over valid pixels of conf * |pred - gt|_1 - conf_reg * log(conf).
// Throws ShapeMismatch, InvalidArgument for non-positive confidence, and
// EmptyValidSet.
[[nodiscard]] double conf_weighted_loss(const DensePrediction& pred, const Eigen::MatrixXd& gt,
                                        const PixelMask& valid, double conf_reg);
[[nodiscard]] DenseGrad conf_weighted_loss_grad(const DensePrediction& pred, const Eigen::MatrixXd& gt,
                                                const PixelMask& valid, double conf_reg);

// Sum over scales s of the mean |r(y, x + s) - r(y, x)| over horizontal pairs
// plus the mean over vertical pairs, where r = pred - gt sampled on the grid
// of every s-th pixel. Pairs with an invalid member are skipped; a scale with
// no valid pair contributes 0. Channels are summed inside the absolute value
// sum (L1 over channels).
[[nodiscard]] double gradient_regularizer(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, int height,
                                          int width, const PixelMask& valid, const std::vector<int>& scales);
[[nodiscard]] Eigen::MatrixXd gradient_regularizer_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt,
                                                        int height, int width, const PixelMask& valid,
                                                        const std::vector<int>& scales);

// lambda_c * camera + depth + pmap
[[nodiscard]] double total_loss(double camera, double depth, double pmap, const LossWeights& weights);

}  // namespace dyn4d
