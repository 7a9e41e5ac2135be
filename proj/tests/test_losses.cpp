#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dyn4d/error.hpp"
#include "dyn4d/gradcheck.hpp"
#include "dyn4d/losses.hpp"
#include "dyn4d/objective.hpp"

namespace dyn4d {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double central(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

TEST(Huber, BranchesAndContinuity) {
  EXPECT_EQ(huber(0.0, 0.1), 0.0);
  for (double delta : {0.1, 1.0, 3.7}) {
    EXPECT_NEAR(huber(delta, delta), 0.5 * delta * delta, 1e-12);
    EXPECT_NEAR(huber(-delta, delta), 0.5 * delta * delta, 1e-12);
    // Both branch formulas evaluated just either side of the boundary.
    const double below = std::nextafter(delta, 0.0);
    const double above = std::nextafter(delta, 10.0);
    EXPECT_NEAR(huber(below, delta), huber(above, delta), 1e-12);
    EXPECT_NEAR(huber_grad(below, delta), huber_grad(above, delta), 1e-12);
    EXPECT_NEAR(delta * (delta - 0.5 * delta), 0.5 * delta * delta, 1e-12);
  }
  EXPECT_DOUBLE_EQ(huber(2.0, 0.5), 0.5 * (2.0 - 0.25));
  EXPECT_DOUBLE_EQ(huber(-0.3, 0.5), 0.045);
}

TEST(Huber, DerivativeMatchesFiniteDifferences) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double r = u(gen);
    const double delta = 0.1;
    if (std::abs(std::abs(r) - delta) < 1e-5) continue;
    const double fd = central([&](double x) { return huber(x, delta); }, r);
    EXPECT_LT(std::abs(fd - huber_grad(r, delta)), 1e-8 * std::max(1.0, std::abs(fd)));
  }
}

CameraVector random_camera(std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  CameraVector g;
  for (int i = 0; i < 9; ++i) g(i) = n(gen);
  g.head<4>().normalize();
  g(7) = std::abs(g(7)) + 0.2;
  g(8) = std::abs(g(8)) + 0.2;
  return g;
}

TEST(CameraLoss, ZeroAndSignInvariance) {
  std::mt19937_64 gen(2);
  for (int i = 0; i < 20; ++i) {
    const CameraVector gt = random_camera(gen);
    EXPECT_EQ(camera_loss(gt, gt, 0.1), 0.0);
    CameraVector flipped = gt;
    flipped.head<4>() *= -1.0;
    EXPECT_EQ(camera_loss(flipped, gt, 0.1), 0.0);

    const CameraVector pred = random_camera(gen);
    CameraVector pred_flipped = pred;
    pred_flipped.head<4>() *= -1.0;
    EXPECT_NEAR(camera_loss(pred, gt, 0.1), camera_loss(pred_flipped, gt, 0.1), 1e-15);
  }
}

TEST(CameraLoss, MatchesElementwiseSum) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 50; ++i) {
    const CameraVector gt = random_camera(gen);
    const CameraVector pred = random_camera(gen);
    const double dot = pred.head<4>().dot(gt.head<4>());
    double expected = 0.0;
    for (int j = 0; j < 9; ++j) {
      const double p = j < 4 && dot < 0.0 ? -pred(j) : pred(j);
      const double r = std::abs(p - gt(j));
      expected += r <= 0.1 ? 0.5 * r * r : 0.1 * (r - 0.05);
    }
    EXPECT_NEAR(camera_loss(pred, gt, 0.1), expected, 1e-14);
  }
}

TEST(CameraEncoding, Validation) {
  std::mt19937_64 gen(4);
  CameraEncoding e{random_camera(gen)};
  EXPECT_NO_THROW(e.validate());
  e.g(0) += 1e-6;
  EXPECT_THROW(e.validate(), Error);
  e.g = random_camera(gen);
  e.g(8) = 0.0;
  EXPECT_THROW(e.validate(), Error);
}

DensePrediction random_dense(std::mt19937_64& gen, int h, int w, int channels) {
  std::normal_distribution<double> n;
  DensePrediction p{h, w, MatrixXd(h * w, channels), VectorXd(h * w)};
  for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values.data()[i] = n(gen);
  for (Eigen::Index i = 0; i < p.confidence.size(); ++i) p.confidence(i) = std::exp(0.5 * n(gen));
  return p;
}

TEST(ConfWeightedLoss, PerfectPredictionUnitConfidence) {
  std::mt19937_64 gen(5);
  DensePrediction p = random_dense(gen, 3, 4, 3);
  p.confidence.setOnes();
  EXPECT_EQ(conf_weighted_loss(p, p.values, {}, 0.1), 0.0);
}

TEST(ConfWeightedLoss, MatchesPixelLoop) {
  std::mt19937_64 gen(6);
  std::bernoulli_distribution keep(0.7);
  for (int trial = 0; trial < 20; ++trial) {
    const int channels = trial % 2 == 0 ? 1 : 3;
    const DensePrediction p = random_dense(gen, 4, 5, channels);
    const MatrixXd gt = random_dense(gen, 4, 5, channels).values;
    PixelMask valid(20);
    for (auto&& v : valid) v = keep(gen);
    valid[3] = true;
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < 20; ++i) {
      if (!valid[static_cast<std::size_t>(i)]) continue;
      double l1 = 0.0;
      for (int c = 0; c < channels; ++c) l1 += std::abs(p.values(i, c) - gt(i, c));
      sum += p.confidence(i) * l1 - 0.25 * std::log(p.confidence(i));
      ++n;
    }
    EXPECT_NEAR(conf_weighted_loss(p, gt, valid, 0.25), sum / n, 1e-13);
  }
}

TEST(ConfWeightedLoss, OptimalConfidenceIsRegOverError) {
  // c * e - lambda * log(c) is stationary at c = lambda / e.
  for (double e : {0.05, 0.3, 2.0}) {
    for (double lambda : {0.1, 1.0}) {
      auto loss = [&](double c) {
        DensePrediction p{1, 1, MatrixXd::Constant(1, 1, e), VectorXd::Constant(1, c)};
        return conf_weighted_loss(p, MatrixXd::Zero(1, 1), {}, lambda);
      };
      // Golden-section search as an independent numerical minimizer.
      double lo = 1e-3;
      double hi = 100.0;
      const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
      for (int it = 0; it < 200; ++it) {
        const double a = hi - phi * (hi - lo);
        const double b = lo + phi * (hi - lo);
        if (loss(a) < loss(b)) {
          hi = b;
        } else {
          lo = a;
        }
      }
      EXPECT_NEAR(0.5 * (lo + hi), lambda / e, 1e-6 * lambda / e);
      DensePrediction p{1, 1, MatrixXd::Constant(1, 1, e), VectorXd::Constant(1, lambda / e)};
      EXPECT_NEAR(conf_weighted_loss_grad(p, MatrixXd::Zero(1, 1), {}, lambda).confidence(0), 0.0, 1e-14);
    }
  }
}

TEST(ConfWeightedLoss, BoundedBelowByStationaryValue) {
  // Per pixel c * e - lambda * log(c) >= lambda * (1 - log(lambda / e)).
  std::mt19937_64 gen(7);
  for (int i = 0; i < 20; ++i) {
    const DensePrediction p = random_dense(gen, 3, 3, 1);
    const MatrixXd gt = random_dense(gen, 3, 3, 1).values;
    double bound = 0.0;
    for (int k = 0; k < 9; ++k) {
      const double e = std::abs(p.values(k, 0) - gt(k, 0));
      bound += 0.1 * (1.0 - std::log(0.1 / e)) / 9.0;
    }
    EXPECT_GE(conf_weighted_loss(p, gt, {}, 0.1), bound - 1e-14);
  }
  // Confidence of at least one does not make the loss non-negative.
  DensePrediction p{1, 1, MatrixXd::Constant(1, 1, 0.01), VectorXd::Constant(1, std::exp(1.0))};
  EXPECT_LT(conf_weighted_loss(p, MatrixXd::Zero(1, 1), {}, 0.1), 0.0);
}

TEST(ConfWeightedLoss, Errors) {
  std::mt19937_64 gen(8);
  DensePrediction p = random_dense(gen, 2, 2, 1);
  EXPECT_THROW((void)conf_weighted_loss(p, p.values, PixelMask(4, false), 0.1), Error);
  try {
    (void)conf_weighted_loss(p, p.values, PixelMask(4, false), 0.1);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyValidSet);
  }
  EXPECT_THROW((void)conf_weighted_loss(p, MatrixXd::Zero(3, 1), {}, 0.1), Error);
  EXPECT_THROW((void)conf_weighted_loss(p, p.values, PixelMask(3, true), 0.1), Error);
  p.confidence(1) = 0.0;
  EXPECT_THROW((void)conf_weighted_loss(p, p.values, {}, 0.1), Error);
}

// Strided forward differences written out with explicit coordinates.
double reference_gradient_term(const MatrixXd& pred, const MatrixXd& gt, int h, int w, const PixelMask& valid, int s) {
  auto ok = [&](int y, int x) { return valid.empty() || valid[static_cast<std::size_t>(y * w + x)]; };
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    double sum = 0.0;
    int n = 0;
    for (int y = 0; y < h; y += s) {
      for (int x = 0; x < w; x += s) {
        const int y2 = dir == 0 ? y : y + s;
        const int x2 = dir == 0 ? x + s : x;
        if (y2 >= h || x2 >= w || !ok(y, x) || !ok(y2, x2)) continue;
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
          const double r1 = pred(y * w + x, c) - gt(y * w + x, c);
          const double r2 = pred(y2 * w + x2, c) - gt(y2 * w + x2, c);
          sum += std::abs(r2 - r1);
        }
        ++n;
      }
    }
    if (n > 0) total += sum / n;
  }
  return total;
}

TEST(GradientRegularizer, MatchesDoubleLoop) {
  std::mt19937_64 gen(9);
  std::bernoulli_distribution keep(0.75);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 3 + trial % 4;
    const int w = 4 + trial % 3;
    const int channels = trial % 2 == 0 ? 1 : 3;
    const MatrixXd pred = random_dense(gen, h, w, channels).values;
    const MatrixXd gt = random_dense(gen, h, w, channels).values;
    PixelMask valid(static_cast<std::size_t>(h * w));
    for (auto&& v : valid) v = keep(gen);
    for (int s : {1, 2, 3}) {
      EXPECT_NEAR(gradient_regularizer(pred, gt, h, w, valid, {s}),
                  reference_gradient_term(pred, gt, h, w, valid, s), 1e-13);
    }
    EXPECT_NEAR(gradient_regularizer(pred, gt, h, w, {}, {1, 2, 4}),
                reference_gradient_term(pred, gt, h, w, {}, 1) + reference_gradient_term(pred, gt, h, w, {}, 2) +
                    reference_gradient_term(pred, gt, h, w, {}, 4),
                1e-13);
  }
}

TEST(GradientRegularizer, ShiftInvariance) {
  std::mt19937_64 gen(10);
  const MatrixXd gt = random_dense(gen, 4, 4, 3).values;
  EXPECT_EQ(gradient_regularizer(gt, gt, 4, 4, {}, {1, 2}), 0.0);
  EXPECT_NEAR(gradient_regularizer((gt.array() + 2.5).matrix(), gt, 4, 4, {}, {1, 2}), 0.0, 1e-14);
  const MatrixXd pred = random_dense(gen, 4, 4, 3).values;
  EXPECT_NEAR(gradient_regularizer((pred.array() - 7.0).matrix(), gt, 4, 4, {}, {1, 2, 4}),
              gradient_regularizer(pred, gt, 4, 4, {}, {1, 2, 4}), 1e-13);
  EXPECT_THROW((void)gradient_regularizer(pred, gt, 4, 4, {}, {0}), Error);
  EXPECT_THROW((void)gradient_regularizer(pred, gt, 4, 5, {}, {1}), Error);
  // A scale larger than the map has no pairs and contributes nothing.
  EXPECT_EQ(gradient_regularizer(pred, gt, 4, 4, {}, {8}), 0.0);
}

TEST(TotalLoss, WeightedSum) {
  const LossWeights w;
  EXPECT_EQ(w.lambda_c, 5.0);
  EXPECT_EQ(total_loss(1.0, 0.0, 0.0, w), 5.0);
  EXPECT_EQ(total_loss(0.0, 0.0, 0.0, w), 0.0);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 20; ++i) {
    const double a = u(gen);
    const double b = u(gen);
    const double c = u(gen);
    EXPECT_DOUBLE_EQ(total_loss(a, b, c, w), 5.0 * a + b + c);
  }
  LossWeights bad;
  bad.lambda_c = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(LossGradients, MatchFiniteDifferences) {
  GradCheckOptions o;
  o.n_configs = 10;
  // Only the loss groups; the aggregator groups are covered elsewhere.
  o.width = 4;
  o.batch = 1;
  o.frames = 1;
  o.n_reg = 0;
  for (const auto& g : run_gradcheck(o).groups) {
    if (g.name.rfind("loss.", 0) == 0) EXPECT_LT(g.max_rel_error, 1e-6) << g.name;
  }
}

TEST(Objective, TermsAndGradientsAgree) {
  AggregatorConfig c;
  c.n_reg = 2;
  const AggregatorParams p = init_params(c, 8, 3);
  const TokenSet t = random_tokens(2, 2, 2, 2, 3, 8, 3);
  const auto targets = kink_free_targets(t, c, p, 3, 0.01, 0.1);
  const LossWeights w;
  const ObjectiveTerms terms = evaluate_objective(t, c, p, targets, w);
  const ObjectiveGradients g = objective_gradients(t, c, p, targets, w);
  EXPECT_EQ(terms.total, g.terms.total);
  EXPECT_DOUBLE_EQ(terms.total, w.lambda_c * terms.camera + terms.depth + terms.pmap);
  EXPECT_GT(g.grads.params.heads.camera.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW((void)evaluate_objective(t, c, p, {targets[0]}, w), Error);
}

}  // namespace
}  // namespace dyn4d
