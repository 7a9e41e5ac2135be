#include "dyn4d/losses.hpp"

#include <cmath>

#include "dyn4d/error.hpp"

namespace dyn4d {

void CameraEncoding::validate() const {
  if (std::abs(g.head<4>().norm() - 1.0) > 1e-10) {
    throw Error(ErrorCode::InvalidArgument, "camera quaternion must have unit norm");
  }
  if (!(g(7) > 0.0) || !(g(8) > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "field of view must be positive");
  }
}

void DensePrediction::validate() const {
  const auto n = static_cast<Eigen::Index>(height) * width;
  if (height < 1 || width < 1 || values.rows() != n || values.cols() < 1 || confidence.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "dense prediction shape is inconsistent");
  }
  if (!values.allFinite() || !(confidence.array() > 0.0).all() || !confidence.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "dense prediction needs finite values and positive confidence");
  }
}

void LossWeights::validate() const {
  if (!(lambda_c > 0.0) || !(huber_delta > 0.0) || conf_reg < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "loss weights out of range");
  }
  for (int s : grad_scales) {
    if (s < 1) throw Error(ErrorCode::InvalidArgument, "gradient scales must be >= 1");
  }
}

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_grad(double r, double delta) {
  if (std::abs(r) <= delta) return r;
  return r > 0.0 ? delta : -delta;
}

namespace {

// q and -q encode the same rotation.
double hemisphere(const CameraVector& pred, const CameraVector& gt) {
  return pred.head<4>().dot(gt.head<4>()) < 0.0 ? -1.0 : 1.0;
}

CameraVector aligned_residual(const CameraVector& pred, const CameraVector& gt) {
  CameraVector r = pred - gt;
  r.head<4>() = hemisphere(pred, gt) * pred.head<4>() - gt.head<4>();
  return r;
}

}  // namespace

double camera_loss(const CameraVector& pred, const CameraVector& gt, double delta) {
  const CameraVector r = aligned_residual(pred, gt);
  double sum = 0.0;
  for (int i = 0; i < 9; ++i) sum += huber(r(i), delta);
  return sum;
}

CameraVector camera_loss_grad(const CameraVector& pred, const CameraVector& gt, double delta) {
  const CameraVector r = aligned_residual(pred, gt);
  CameraVector g;
  for (int i = 0; i < 9; ++i) g(i) = huber_grad(r(i), delta);
  g.head<4>() *= hemisphere(pred, gt);
  return g;
}

namespace {

void check_dense(const DensePrediction& pred, const Eigen::MatrixXd& gt, const PixelMask& valid) {
  pred.validate();
  if (gt.rows() != pred.values.rows() || gt.cols() != pred.values.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in shape");
  }
  if (!valid.empty() && valid.size() != static_cast<std::size_t>(gt.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "mask does not match the map size");
  }
}

bool is_valid(const PixelMask& valid, Eigen::Index i) {
  return valid.empty() || valid[static_cast<std::size_t>(i)];
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

std::size_t count_valid(const PixelMask& valid, Eigen::Index n) {
  if (valid.empty()) return static_cast<std::size_t>(n);
  std::size_t c = 0;
  for (bool v : valid) c += v ? 1U : 0U;
  return c;
}

}  // namespace

double conf_weighted_loss(const DensePrediction& pred, const Eigen::MatrixXd& gt, const PixelMask& valid,
                          double conf_reg) {
  check_dense(pred, gt, valid);
  const std::size_t n = count_valid(valid, gt.rows());
  if (n == 0) throw Error(ErrorCode::EmptyValidSet, "no valid pixel for the dense loss");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    if (!is_valid(valid, i)) continue;
    const double c = pred.confidence(i);
    sum += c * (pred.values.row(i) - gt.row(i)).cwiseAbs().sum() - conf_reg * std::log(c);
  }
  return sum / static_cast<double>(n);
}

DenseGrad conf_weighted_loss_grad(const DensePrediction& pred, const Eigen::MatrixXd& gt, const PixelMask& valid,
                                  double conf_reg) {
  check_dense(pred, gt, valid);
  const std::size_t n = count_valid(valid, gt.rows());
  if (n == 0) throw Error(ErrorCode::EmptyValidSet, "no valid pixel for the dense loss");
  const double inv_n = 1.0 / static_cast<double>(n);
  DenseGrad g{Eigen::MatrixXd::Zero(gt.rows(), gt.cols()), Eigen::VectorXd::Zero(gt.rows())};
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    if (!is_valid(valid, i)) continue;
    const double c = pred.confidence(i);
    for (Eigen::Index ch = 0; ch < gt.cols(); ++ch) {
      g.values(i, ch) = inv_n * c * sign(pred.values(i, ch) - gt(i, ch));
    }
    g.confidence(i) = inv_n * ((pred.values.row(i) - gt.row(i)).cwiseAbs().sum() - conf_reg / c);
  }
  return g;
}

namespace {

struct PairSet {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> horizontal;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> vertical;
};

PairSet pairs_at_scale(int height, int width, int s, const PixelMask& valid) {
  PairSet p;
  for (int y = 0; y < height; y += s) {
    for (int x = 0; x < width; x += s) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * width + x;
      if (!is_valid(valid, i)) continue;
      if (x + s < width && is_valid(valid, i + s)) p.horizontal.emplace_back(i, i + s);
      if (y + s < height && is_valid(valid, i + static_cast<Eigen::Index>(s) * width)) {
        p.vertical.emplace_back(i, i + static_cast<Eigen::Index>(s) * width);
      }
    }
  }
  return p;
}

void check_maps(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, int height, int width,
                const PixelMask& valid, const std::vector<int>& scales) {
  const auto n = static_cast<Eigen::Index>(height) * width;
  if (height < 1 || width < 1 || pred.rows() != n || gt.rows() != n || pred.cols() != gt.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient regularizer maps disagree in shape");
  }
  if (!valid.empty() && valid.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::ShapeMismatch, "mask does not match the map size");
  }
  for (int s : scales) {
    if (s < 1) throw Error(ErrorCode::InvalidArgument, "gradient scales must be >= 1");
  }
}

}  // namespace

double gradient_regularizer(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, int height, int width,
                            const PixelMask& valid, const std::vector<int>& scales) {
  check_maps(pred, gt, height, width, valid, scales);
  const Eigen::MatrixXd r = pred - gt;
  double total = 0.0;
  for (int s : scales) {
    const PairSet p = pairs_at_scale(height, width, s, valid);
    for (const auto* pairs : {&p.horizontal, &p.vertical}) {
      if (pairs->empty()) continue;
      double sum = 0.0;
      for (const auto& [a, b] : *pairs) sum += (r.row(b) - r.row(a)).cwiseAbs().sum();
      total += sum / static_cast<double>(pairs->size());
    }
  }
  return total;
}

Eigen::MatrixXd gradient_regularizer_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, int height,
                                          int width, const PixelMask& valid, const std::vector<int>& scales) {
  check_maps(pred, gt, height, width, valid, scales);
  const Eigen::MatrixXd r = pred - gt;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  for (int s : scales) {
    const PairSet p = pairs_at_scale(height, width, s, valid);
    for (const auto* pairs : {&p.horizontal, &p.vertical}) {
      if (pairs->empty()) continue;
      const double inv = 1.0 / static_cast<double>(pairs->size());
      for (const auto& [a, b] : *pairs) {
        for (Eigen::Index ch = 0; ch < r.cols(); ++ch) {
          const double sg = sign(r(b, ch) - r(a, ch)) * inv;
          g(b, ch) += sg;
          g(a, ch) -= sg;
        }
      }
    }
  }
  return g;
}

double total_loss(double camera, double depth, double pmap, const LossWeights& weights) {
  return weights.lambda_c * camera + depth + pmap;
}

}  // namespace dyn4d
