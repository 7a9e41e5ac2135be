#include "dyn4d/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include <Eigen/SVD>

#include "dyn4d/error.hpp"

namespace dyn4d {

PoseSE3 Sim3Transform::apply(const PoseSE3& camera_to_world) const {
  return {rotation * camera_to_world.rotation, scale * (rotation * camera_to_world.translation) + translation};
}

Sim3Transform umeyama_sim3(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::LengthMismatch, "point lists differ in length");
  }
  const std::size_t n = src.size();
  if (n < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "need at least 3 point pairs");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_src += src[i];
    mu_dst += dst[i];
  }
  mu_src *= inv_n;
  mu_dst *= inv_n;

  double var_src = 0.0;
  Mat3 src_scatter = Mat3::Zero();
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = src[i] - mu_src;
    const Vec3 b = dst[i] - mu_dst;
    var_src += a.squaredNorm();
    src_scatter += a * a.transpose();
    cov += b * a.transpose();
  }
  var_src *= inv_n;
  cov *= inv_n;

  Eigen::JacobiSVD<Mat3> src_svd(src_scatter);
  const Vec3 spread = src_svd.singularValues();
  if (!(spread(0) > 0.0) || spread(1) < 1e-20 * spread(0)) {
    throw Error(ErrorCode::DegenerateGeometry, "source points are collinear or coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (!(d(0) > 0.0) || d(1) < 1e-12 * d(0)) {
    throw Error(ErrorCode::DegenerateGeometry, "cross-covariance has rank below 2");
  }
  Vec3 sign(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    sign(2) = -1.0;
  }
  Sim3Transform s;
  s.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  s.scale = d.dot(sign) / var_src;
  s.translation = mu_dst - s.scale * (s.rotation * mu_src);
  return s;
}

double alignment_rmse(const Sim3Transform& s, std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.empty()) {
    throw Error(ErrorCode::LengthMismatch, "point lists differ in length or are empty");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    sum += (dst[i] - s.apply(src[i])).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(src.size()));
}

std::vector<Vec3> Trajectory::positions() const {
  std::vector<Vec3> p;
  p.reserve(poses.size());
  for (const auto& pose : poses) {
    p.push_back(pose.translation);
  }
  return p;
}

void Trajectory::validate() const {
  if (timestamps.size() != poses.size()) {
    throw Error(ErrorCode::LengthMismatch, "timestamps and poses differ in length");
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i] > timestamps[i - 1])) {
      throw Error(ErrorCode::InvalidArgument, "timestamps must be strictly increasing");
    }
  }
}

Trajectory subset(const Trajectory& trajectory, std::span<const std::size_t> indices) {
  Trajectory out;
  for (std::size_t i : indices) {
    if (i >= trajectory.size()) {
      throw Error(ErrorCode::LengthMismatch, "subset index out of range");
    }
    out.timestamps.push_back(trajectory.timestamps[i]);
    out.poses.push_back(trajectory.poses[i]);
  }
  return out;
}

namespace {

void check_pair(const Trajectory& pred, const Trajectory& gt) {
  pred.validate();
  gt.validate();
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "trajectories differ in length");
  }
}

}  // namespace

double ate(const Trajectory& pred, const Trajectory& gt) {
  check_pair(pred, gt);
  const auto src = pred.positions();
  const auto dst = gt.positions();
  return alignment_rmse(umeyama_sim3(src, dst), src, dst);
}

RelativePoseError rpe(const Trajectory& pred, const Trajectory& gt, std::size_t delta) {
  check_pair(pred, gt);
  if (delta < 1 || delta >= gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "frame gap must be in [1, length)");
  }
  const auto src = pred.positions();
  const auto dst = gt.positions();
  const Sim3Transform align = umeyama_sim3(src, dst);

  double trans_sq = 0.0;
  double rot_sq = 0.0;
  const std::size_t count = gt.size() - delta;
  for (std::size_t i = 0; i < count; ++i) {
    const PoseSE3 gt_rel = gt.poses[i].inverse() * gt.poses[i + delta];
    const PoseSE3 pred_rel = align.apply(pred.poses[i]).inverse() * align.apply(pred.poses[i + delta]);
    const PoseSE3 err = gt_rel.inverse() * pred_rel;
    trans_sq += err.translation.squaredNorm();
    const double angle = rotation_angle(err.rotation);
    rot_sq += angle * angle;
  }
  const double n = static_cast<double>(count);
  return {std::sqrt(trans_sq / n), std::sqrt(rot_sq / n) * 180.0 / std::numbers::pi};
}

std::vector<std::size_t> sample_frames(std::size_t n_total, std::size_t n_sample) {
  std::vector<std::size_t> out;
  if (n_total <= n_sample) {
    for (std::size_t i = 0; i < n_total; ++i) out.push_back(i);
    return out;
  }
  if (n_sample == 0) return out;
  if (n_sample == 1) return {0};
  const double step = static_cast<double>(n_total - 1) / static_cast<double>(n_sample - 1);
  for (std::size_t k = 0; k < n_sample; ++k) {
    const auto idx = static_cast<std::size_t>(std::llround(step * static_cast<double>(k)));
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

// --- depth -----------------------------------------------------------------

void DepthEvalConfig::validate() const {
  if (!(min_depth > 0.0) || !(max_depth > min_depth)) {
    throw Error(ErrorCode::InvalidArgument, "need 0 < min_depth < max_depth");
  }
  if (!(threshold > 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must exceed 1");
  }
}

bool depth_pixel_valid(double pred, double gt, const ValidMask& mask, std::size_t i,
                       const DepthEvalConfig& config) {
  if (!mask.empty() && !mask[i]) return false;
  if (!std::isfinite(pred) || !std::isfinite(gt)) return false;
  return gt >= config.min_depth && gt <= config.max_depth;
}

namespace {

void check_shapes(std::span<const DepthMap> pred, std::span<const DepthMap> gt,
                  std::span<const ValidMask> valid) {
  if (pred.size() != gt.size() || (!valid.empty() && valid.size() != gt.size())) {
    throw Error(ErrorCode::ShapeMismatch, "frame counts differ");
  }
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (pred[f].width != gt[f].width || pred[f].height != gt[f].height ||
        pred[f].size() != gt[f].size() ||
        gt[f].size() != static_cast<std::size_t>(gt[f].width) * static_cast<std::size_t>(gt[f].height)) {
      throw Error(ErrorCode::ShapeMismatch, "frame " + std::to_string(f) + " dimensions differ");
    }
    if (!valid.empty() && !valid[f].empty() && valid[f].size() != gt[f].size()) {
      throw Error(ErrorCode::ShapeMismatch, "mask " + std::to_string(f) + " dimensions differ");
    }
  }
}

const ValidMask& mask_for(std::span<const ValidMask> valid, std::size_t f) {
  static const ValidMask kEmpty;
  return valid.empty() ? kEmpty : valid[f];
}

struct FitSums {
  double pp{0.0};
  double pg{0.0};
  double p{0.0};
  double g{0.0};
  std::size_t n{0};
  std::vector<double> ratios;
};

void accumulate(FitSums& sums, const DepthMap& pred, const DepthMap& gt, const ValidMask& mask,
                const DepthEvalConfig& config, bool collect_ratios) {
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double p = pred.values[i];
    const double g = gt.values[i];
    if (!depth_pixel_valid(p, g, mask, i, config)) continue;
    sums.pp += p * p;
    sums.pg += p * g;
    sums.p += p;
    sums.g += g;
    ++sums.n;
    if (collect_ratios && p > 0.0) sums.ratios.push_back(g / p);
  }
}

ScaleShift fit_scale(const FitSums& sums, const DepthEvalConfig& config) {
  if (config.estimator == ScaleEstimator::MedianRatio) {
    if (sums.ratios.empty()) {
      throw Error(ErrorCode::EmptyValidSet, "no pixel with positive prediction for median ratio");
    }
    return {median(sums.ratios), 0.0};
  }
  if (!(sums.pp > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "prediction is identically zero on the valid set");
  }
  return {sums.pg / sums.pp, 0.0};
}

ScaleShift fit_scale_shift(const FitSums& sums) {
  const double n = static_cast<double>(sums.n);
  const double det = sums.pp * n - sums.p * sums.p;
  if (!(std::abs(det) > 1e-12 * sums.pp * n)) {
    throw Error(ErrorCode::InvalidArgument, "prediction is constant on the valid set");
  }
  const double s = (n * sums.pg - sums.p * sums.g) / det;
  const double b = (sums.pp * sums.g - sums.p * sums.pg) / det;
  return {s, b};
}

}  // namespace

std::vector<ScaleShift> align_depth(std::span<const DepthMap> pred, std::span<const DepthMap> gt,
                                    std::span<const ValidMask> valid, const DepthEvalConfig& config) {
  config.validate();
  check_shapes(pred, gt, valid);
  const bool ratios = config.estimator == ScaleEstimator::MedianRatio;

  if (config.alignment == DepthAlignment::PerFrame) {
    std::vector<ScaleShift> fits;
    std::size_t total = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
      FitSums sums;
      accumulate(sums, pred[f], gt[f], mask_for(valid, f), config, ratios);
      total += sums.n;
      fits.push_back(sums.n == 0 ? ScaleShift{} : fit_scale(sums, config));
    }
    if (total == 0) {
      throw Error(ErrorCode::EmptyValidSet, "no valid pixel in any frame");
    }
    return fits;
  }

  FitSums sums;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    accumulate(sums, pred[f], gt[f], mask_for(valid, f), config,
               ratios && config.alignment == DepthAlignment::Scale);
  }
  if (sums.n == 0) {
    throw Error(ErrorCode::EmptyValidSet, "no valid pixel in the sequence");
  }
  const ScaleShift fit =
      config.alignment == DepthAlignment::Scale ? fit_scale(sums, config) : fit_scale_shift(sums);
  return std::vector<ScaleShift>(gt.size(), fit);
}

DepthMap apply_alignment(const DepthMap& pred, const ScaleShift& fit, const DepthEvalConfig& config) {
  DepthMap out = pred;
  for (double& v : out.values) {
    if (std::isfinite(v)) {
      v = std::clamp(fit.scale * v + fit.shift, config.min_depth, config.max_depth);
    }
  }
  return out;
}

DepthScores depth_metrics(std::span<const DepthMap> aligned_pred, std::span<const DepthMap> gt,
                          std::span<const ValidMask> valid, const DepthEvalConfig& config) {
  config.validate();
  check_shapes(aligned_pred, gt, valid);
  double abs_rel = 0.0;
  std::size_t hits = 0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const ValidMask& mask = mask_for(valid, f);
    for (std::size_t i = 0; i < gt[f].size(); ++i) {
      const double p = aligned_pred[f].values[i];
      const double g = gt[f].values[i];
      if (!depth_pixel_valid(p, g, mask, i, config)) continue;
      abs_rel += std::abs(p - g) / g;
      if (std::max(p / g, g / p) < config.threshold) ++hits;
      ++n;
    }
  }
  if (n == 0) {
    throw Error(ErrorCode::EmptyValidSet, "no valid pixel");
  }
  return {abs_rel / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n), n};
}

DepthEvaluation evaluate_depth(std::span<const DepthMap> pred, std::span<const DepthMap> gt,
                               std::span<const ValidMask> valid, const DepthEvalConfig& config) {
  DepthEvaluation ev;
  ev.alignment = align_depth(pred, gt, valid, config);
  std::vector<DepthMap> aligned;
  aligned.reserve(pred.size());
  for (std::size_t f = 0; f < pred.size(); ++f) {
    aligned.push_back(apply_alignment(pred[f], ev.alignment[f], config));
  }
  for (std::size_t f = 0; f < pred.size(); ++f) {
    std::span<const ValidMask> mask_span;
    if (!valid.empty()) mask_span = valid.subspan(f, 1);
    try {
      ev.per_frame.push_back(depth_metrics(std::span(aligned).subspan(f, 1), gt.subspan(f, 1), mask_span, config));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyValidSet) throw;
      ev.per_frame.push_back(DepthScores{});
    }
  }
  ev.aggregate = depth_metrics(aligned, gt, valid, config);
  return ev;
}

// --- point clouds ----------------------------------------------------------

namespace {

double brute_force_nearest(const Vec3& q, std::span<const Vec3> reference) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : reference) {
    best = std::min(best, (q - r).squaredNorm());
  }
  return best;
}

class UniformGrid {
 public:
  explicit UniformGrid(std::span<const Vec3> points) : points_(points) {
    lo_ = points[0];
    Vec3 hi = points[0];
    for (const auto& p : points) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vec3 extent = (hi - lo_).cwiseMax(1e-12);
    // About two points per cell on average.
    const double volume = extent.prod();
    cell_ = std::cbrt(2.0 * volume / static_cast<double>(points.size()));
    cell_ = std::max(cell_, 1e-9 * extent.maxCoeff());
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::clamp(static_cast<long>(std::floor(extent(a) / cell_)) + 1, 1L, 1L << 20);
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      cells_[key(cell_of(points[i]))].push_back(i);
    }
  }

  double nearest_squared(const Vec3& q) const {
    const std::array<long, 3> c = cell_of(q);
    double best = std::numeric_limits<double>::infinity();
    const long max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (long ring = 0; ring <= max_ring; ++ring) {
      visit_ring(c, ring, [&](std::size_t idx) { best = std::min(best, (q - points_[idx]).squaredNorm()); });
      // Every cell beyond this ring is at least ring * cell_ away from q.
      const double bound = static_cast<double>(ring) * cell_;
      if (best <= bound * bound) break;
    }
    return best;
  }

 private:
  std::array<long, 3> cell_of(const Vec3& p) const {
    std::array<long, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const long i = static_cast<long>(std::floor((p(a) - lo_(a)) / cell_));
      c[a] = std::clamp(i, 0L, dims_[a] - 1);
    }
    return c;
  }

  long key(const std::array<long, 3>& c) const { return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0]; }

  template <typename Fn>
  void visit_ring(const std::array<long, 3>& c, long ring, Fn&& fn) const {
    for (long z = c[2] - ring; z <= c[2] + ring; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (long y = c[1] - ring; y <= c[1] + ring; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        for (long x = c[0] - ring; x <= c[0] + ring; ++x) {
          if (x < 0 || x >= dims_[0]) continue;
          const long cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
          if (cheb != ring) continue;
          const auto it = cells_.find(key({x, y, z}));
          if (it == cells_.end()) continue;
          for (std::size_t idx : it->second) fn(idx);
        }
      }
    }
  }

  std::span<const Vec3> points_;
  Vec3 lo_;
  double cell_{1.0};
  std::array<long, 3> dims_{1, 1, 1};
  std::unordered_map<long, std::vector<std::size_t>> cells_;
};

}  // namespace

std::vector<double> nearest_distances(std::span<const Vec3> query, std::span<const Vec3> reference,
                                      bool use_grid) {
  if (query.empty() || reference.empty()) {
    throw Error(ErrorCode::EmptyCloud, "nearest-neighbour search on an empty cloud");
  }
  std::vector<double> out;
  out.reserve(query.size());
  if (use_grid) {
    const UniformGrid grid(reference);
    for (const auto& q : query) out.push_back(std::sqrt(grid.nearest_squared(q)));
  } else {
    for (const auto& q : query) out.push_back(std::sqrt(brute_force_nearest(q, reference)));
  }
  return out;
}

PointCloudScores pointcloud_metrics(std::span<const Vec3> pred, std::span<const Vec3> gt, bool use_grid) {
  if (pred.empty() || gt.empty()) {
    throw Error(ErrorCode::EmptyCloud, "point cloud is empty");
  }
  const auto acc = nearest_distances(pred, gt, use_grid);
  const auto comp = nearest_distances(gt, pred, use_grid);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  PointCloudScores s;
  s.acc_mean = mean(acc);
  s.acc_median = median(acc);
  s.comp_mean = mean(comp);
  s.comp_median = median(comp);
  s.overall_mean = 0.5 * (s.acc_mean + s.comp_mean);
  s.overall_median = 0.5 * (s.acc_median + s.comp_median);
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::string to_string(DepthAlignment mode) {
  switch (mode) {
    case DepthAlignment::Scale: return "scale";
    case DepthAlignment::ScaleShift: return "scale_shift";
    case DepthAlignment::PerFrame: return "per_frame";
  }
  return "scale";
}

DepthAlignment parse_depth_alignment(const std::string& text) {
  if (text == "scale") return DepthAlignment::Scale;
  if (text == "scale_shift") return DepthAlignment::ScaleShift;
  if (text == "per_frame") return DepthAlignment::PerFrame;
  throw Error(ErrorCode::ConfigError, "unknown depth alignment '" + text + "'");
}

}  // namespace dyn4d
