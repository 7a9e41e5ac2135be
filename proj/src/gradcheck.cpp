#include "dyn4d/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "dyn4d/error.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void GradCheckOptions::validate() const {
  if (n_configs < 1 || !(step > 0.0) || !(tolerance > 0.0) || !(floor > 0.0) || width < 4 || width % 4 != 0 ||
      batch < 1 || frames < 1 || n_reg < 0) {
    throw Error(ErrorCode::InvalidArgument, "gradient check options out of range");
  }
}

bool GradCheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [](const GroupResult& g) { return g.passed; });
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor) {
  if (analytic.size() != numeric.size()) return std::numeric_limits<double>::infinity();
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace {

// Residual map whose entries and whose forward differences at every stride
// are at least `margin` in magnitude: a ramp over the pixel index plus a
// jitter of at most half a ramp step.
VectorXd ramp_residual(Eigen::Index n, double margin, Rng& rng) {
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i) = sign * margin * (2.0 * static_cast<double>(i + 1) + rng.uniform(-0.5, 0.5));
  }
  return r;
}

PixelMask random_valid(Eigen::Index n, Rng& rng) {
  PixelMask valid(static_cast<std::size_t>(n));
  for (auto&& v : valid) v = rng.uniform() < 0.8;
  valid[rng.below(static_cast<std::uint64_t>(n))] = true;
  return valid;
}

// Central difference of f with respect to every entry of data[0 .. n).
std::vector<double> numeric_gradient(const std::function<double()>& f, double* data, std::size_t n, double h) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double up = f();
    data[i] = saved - h;
    const double down = f();
    data[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

class Collector {
 public:
  Collector(const GradCheckOptions& options, const GradientTamper& tamper) : options_(options), tamper_(tamper) {}

  void compare(const std::string& name, std::vector<double> analytic, const std::vector<double>& numeric) {
    if (tamper_) tamper_(name, analytic);
    auto it = index_.find(name);
    if (it == index_.end()) {
      it = index_.emplace(name, report_.groups.size()).first;
      report_.groups.push_back({name, 0.0, 0, true});
    }
    GroupResult& g = report_.groups[it->second];
    g.max_rel_error = std::max(g.max_rel_error, relative_error(analytic, numeric, options_.floor));
    g.n_entries += numeric.size();
    g.passed = g.max_rel_error < options_.tolerance;
  }

  GradCheckReport take() { return std::move(report_); }

 private:
  const GradCheckOptions& options_;
  const GradientTamper& tamper_;
  GradCheckReport report_;
  std::map<std::string, std::size_t> index_;
};

std::vector<double> flat(const double* data, std::size_t n) { return {data, data + n}; }

void check_aggregator(const GradCheckOptions& o, int config_index, Collector& out) {
  constexpr std::array<std::array<int, 2>, 4> kGrids{{{2, 3}, {3, 3}, {1, 4}, {3, 2}}};
  const auto& grid = kGrids[static_cast<std::size_t>(config_index) % kGrids.size()];
  const std::uint64_t seed = o.seed * 1000003ULL + static_cast<std::uint64_t>(config_index);
  Rng rng = Rng::stream(seed, 0x6763ULL);

  AggregatorConfig config;
  config.n_reg = o.n_reg;
  AggregatorParams params = init_params(config, o.width, seed);
  // At init scale the mask head barely moves the loss and its gradients sink
  // into finite-difference roundoff.
  for (MatrixXd* m : {&params.mask_head.proj, &params.mask_head.kernel}) {
    *m = MatrixXd::NullaryExpr(m->rows(), m->cols(), [&] { return rng.normal(); });
  }
  for (VectorXd* v : {&params.mask_head.bias, &params.mask_head.mix}) {
    *v = VectorXd::NullaryExpr(v->size(), [&] { return rng.normal(); });
  }
  params.mask_head.tau_logit = rng.uniform(-1.0, 0.5);
  params.mask_head.alpha_logit = rng.uniform(1.0, 3.0);
  TokenSet tokens = random_tokens(o.batch, o.frames, o.n_reg, grid[0], grid[1], o.width, seed);
  const std::vector<FrameTarget> targets = kink_free_targets(tokens, config, params, seed, 0.005, 0.05);
  const LossWeights weights;

  const ObjectiveGradients analytic = objective_gradients(tokens, config, params, targets, weights);
  const std::function<double()> f = [&] { return evaluate_objective(tokens, config, params, targets, weights).total; };

  AggregatorParams grads = analytic.grads.params;
  const auto views = param_views(params);
  const auto grad_views = param_views(grads);
  for (std::size_t v = 0; v < views.size(); ++v) {
    out.compare(views[v].name, flat(grad_views[v].data, grad_views[v].size),
                numeric_gradient(f, views[v].data, views[v].size, o.step));
  }
  std::vector<double> token_analytic;
  std::vector<double> token_numeric;
  for (std::size_t b = 0; b < tokens.data.size(); ++b) {
    const MatrixXd& g = analytic.grads.tokens.data[b];
    const auto n = static_cast<std::size_t>(g.size());
    const auto a = flat(g.data(), n);
    const auto num = numeric_gradient(f, tokens.data[b].data(), n, o.step);
    token_analytic.insert(token_analytic.end(), a.begin(), a.end());
    token_numeric.insert(token_numeric.end(), num.begin(), num.end());
  }
  out.compare("tokens", std::move(token_analytic), token_numeric);
}

void check_losses(const GradCheckOptions& o, int config_index, Collector& out) {
  Rng rng = Rng::stream(o.seed, 0x6c6f7373ULL, static_cast<std::uint64_t>(config_index));
  const double h = o.step;
  const LossWeights w;

  {
    std::vector<double> a;
    std::vector<double> n;
    for (int i = 0; i < 20; ++i) {
      double r = rng.uniform(-3.0 * w.huber_delta, 3.0 * w.huber_delta);
      a.push_back(huber_grad(r, w.huber_delta));
      const auto g = numeric_gradient([&] { return huber(r, w.huber_delta); }, &r, 1, h);
      n.push_back(g[0]);
    }
    out.compare("loss.huber", a, n);
  }
  {
    CameraVector gt;
    for (int i = 0; i < 9; ++i) gt(i) = rng.normal();
    gt.head<4>().normalize();
    gt(7) = std::abs(gt(7)) + 0.5;
    gt(8) = std::abs(gt(8)) + 0.5;
    CameraVector pred = gt;
    for (int i = 0; i < 9; ++i) pred(i) += 0.2 * rng.normal();
    if (config_index % 2 == 1) pred.head<4>() *= -1.0;
    const CameraVector g = camera_loss_grad(pred, gt, w.huber_delta);
    out.compare("loss.camera", flat(g.data(), 9),
                numeric_gradient([&] { return camera_loss(pred, gt, w.huber_delta); }, pred.data(), 9, h));
  }
  {
    const int height = 3;
    const int width = 4;
    const int channels = config_index % 2 == 0 ? 1 : 3;
    const Eigen::Index hw = height * width;
    DensePrediction pred{height, width, MatrixXd(hw, channels), VectorXd(hw)};
    MatrixXd gt(hw, channels);
    for (Eigen::Index i = 0; i < hw; ++i) {
      pred.confidence(i) = std::exp(rng.uniform(-1.0, 1.0));
      for (Eigen::Index c = 0; c < channels; ++c) {
        pred.values(i, c) = rng.normal();
        const double r = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
        gt(i, c) = pred.values(i, c) - r;
      }
    }
    const PixelMask valid = random_valid(hw, rng);
    const DenseGrad g = conf_weighted_loss_grad(pred, gt, valid, w.conf_reg);
    const std::function<double()> f = [&] { return conf_weighted_loss(pred, gt, valid, w.conf_reg); };
    out.compare("loss.conf_weighted.values", flat(g.values.data(), static_cast<std::size_t>(g.values.size())),
                numeric_gradient(f, pred.values.data(), static_cast<std::size_t>(pred.values.size()), h));
    out.compare("loss.conf_weighted.confidence", flat(g.confidence.data(), static_cast<std::size_t>(hw)),
                numeric_gradient(f, pred.confidence.data(), static_cast<std::size_t>(hw), h));

    MatrixXd map = MatrixXd::NullaryExpr(hw, channels, [&] { return rng.normal(); });
    MatrixXd target(hw, channels);
    for (Eigen::Index c = 0; c < channels; ++c) target.col(c) = map.col(c) - ramp_residual(hw, 0.05, rng);
    const MatrixXd gg = gradient_regularizer_grad(map, target, height, width, valid, w.grad_scales);
    out.compare("loss.gradient_regularizer", flat(gg.data(), static_cast<std::size_t>(gg.size())),
                numeric_gradient([&] { return gradient_regularizer(map, target, height, width, valid, w.grad_scales); },
                                 map.data(), static_cast<std::size_t>(map.size()), h));
  }
  {
    std::array<double, 3> terms{rng.uniform(), rng.uniform(), rng.uniform()};
    const std::vector<double> a{w.lambda_c, 1.0, 1.0};
    out.compare("loss.total", a,
                numeric_gradient([&] { return total_loss(terms[0], terms[1], terms[2], w); }, terms.data(), 3, h));
  }
}

}  // namespace

std::vector<FrameTarget> kink_free_targets(const TokenSet& tokens, const AggregatorConfig& config,
                                           const AggregatorParams& params, std::uint64_t seed, double margin,
                                           double camera_noise) {
  const std::vector<DecodedFrame> frames = decode(aggregator_forward(tokens, config, params).tokens, params.heads);
  Rng rng = Rng::stream(seed, 0x746172ULL);
  std::vector<FrameTarget> targets;
  for (const DecodedFrame& f : frames) {
    FrameTarget t;
    t.camera = f.camera;
    for (int i = 0; i < 9; ++i) t.camera(i) += camera_noise * rng.normal();
    // Keep the quaternion well inside the hemisphere of the prediction.
    const Eigen::Vector4d q = f.camera.head<4>();
    if (t.camera.head<4>().dot(q) < 0.25 * q.squaredNorm()) t.camera.head<4>() = q;
    const Eigen::Index hw = f.depth.size();
    t.depth = f.depth - ramp_residual(hw, margin, rng);
    t.points.resize(hw, 3);
    for (int c = 0; c < 3; ++c) t.points.col(c) = f.points.col(c) - ramp_residual(hw, margin, rng);
    t.valid = random_valid(hw, rng);
    targets.push_back(std::move(t));
  }
  return targets;
}

GradCheckReport run_gradcheck(const GradCheckOptions& options, const GradientTamper& tamper) {
  options.validate();
  Collector out(options, tamper);
  for (int c = 0; c < options.n_configs; ++c) {
    check_aggregator(options, c, out);
    check_losses(options, c, out);
  }
  return out.take();
}

}  // namespace dyn4d
