#include "dyn4d/pose_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SVD>

#include "dyn4d/error.hpp"
#include "dyn4d/rng.hpp"

namespace dyn4d {
namespace {

constexpr int kSampleSize = 8;
constexpr double kRankTolerance = 1e-9;

struct Conditioning {
  Mat3 transform{Mat3::Identity()};
};

Conditioning hartley(const std::vector<Vec2>& points) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : points) {
    centroid += p;
  }
  centroid /= static_cast<double>(points.size());
  double mean_dist = 0.0;
  for (const auto& p : points) {
    mean_dist += (p - centroid).norm();
  }
  mean_dist /= static_cast<double>(points.size());
  if (!(mean_dist > 1e-15)) {
    throw Error(ErrorCode::DegenerateConfiguration, "all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;
  Conditioning c;
  c.transform << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return c;
}

Mat3 unit_essential(const Mat3& e) {
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Vec3(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
}

bool in_front_of_both(const PoseSE3& pose, const Correspondence& c, const CameraIntrinsics& k) {
  try {
    const Vec3 x = triangulate(c.x_r, c.x_t, k, pose);
    return x.z() > 0.0 && pose.apply(x).z() > 0.0;
  } catch (const Error&) {
    return false;
  }
}

// Draws kSampleSize distinct positions of `pool`, with probability
// proportional to `weight[pool[i]]` when weights are given.
std::vector<std::size_t> draw_sample(Rng& rng, const std::vector<std::size_t>& pool,
                                     const std::vector<double>* weights) {
  std::vector<std::size_t> remaining = pool;
  std::vector<std::size_t> chosen;
  chosen.reserve(kSampleSize);
  for (int draw = 0; draw < kSampleSize; ++draw) {
    std::size_t pick = 0;
    if (weights == nullptr) {
      pick = static_cast<std::size_t>(rng.below(remaining.size()));
    } else {
      double total = 0.0;
      for (std::size_t idx : remaining) {
        total += (*weights)[idx];
      }
      if (!(total > 0.0)) {
        pick = static_cast<std::size_t>(rng.below(remaining.size()));
      } else {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = remaining.size() - 1;
        for (std::size_t j = 0; j < remaining.size(); ++j) {
          acc += (*weights)[remaining[j]];
          if (target < acc) {
            pick = j;
            break;
          }
        }
      }
    }
    chosen.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return chosen;
}

}  // namespace

void RansacConfig::validate() const {
  if (n_iterations < 1) {
    throw Error(ErrorCode::InvalidArgument, "n_iterations must be >= 1");
  }
  if (!(inlier_threshold > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "inlier_threshold must be positive");
  }
  if (min_inliers < kSampleSize) {
    throw Error(ErrorCode::InvalidArgument, "min_inliers must be >= 8");
  }
}

EssentialMatrix eight_point(std::span<const Correspondence> correspondences,
                            const CameraIntrinsics& k) {
  const std::size_t n = correspondences.size();
  if (n < static_cast<std::size_t>(kSampleSize)) {
    throw Error(ErrorCode::DegenerateConfiguration, "eight_point needs at least 8 correspondences");
  }
  const Mat3 kinv = k.inverse();
  std::vector<Vec2> ref(n);
  std::vector<Vec2> tgt(n);
  for (std::size_t i = 0; i < n; ++i) {
    ref[i] = (kinv * correspondences[i].x_r.normalized().vector()).head<2>();
    tgt[i] = (kinv * correspondences[i].x_t.normalized().vector()).head<2>();
  }
  const Conditioning cr = hartley(ref);
  const Conditioning ct = hartley(tgt);

  Eigen::MatrixXd design(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  design.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = cr.transform * ref[i].homogeneous();
    const Vec3 b = ct.transform * tgt[i].homogeneous();
    design.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(),
        b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) < kRankTolerance * sv(0)) {
    throw Error(ErrorCode::DegenerateConfiguration, "design matrix has rank below 8");
  }
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 conditioned;
  conditioned << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  // Equal singular values only make sense back in the normalized-plane frame.
  const Mat3 denormalized = ct.transform.transpose() * conditioned * cr.transform;
  return {unit_essential(enforce_essential(denormalized).matrix)};
}

Vec3 triangulate(const PixelHomogeneous& x_r, const PixelHomogeneous& x_t, const CameraIntrinsics& k,
                 const PoseSE3& pose) {
  const Mat3 kinv = k.inverse();
  const Mat3 rt = pose.rotation.transpose();
  const Vec3 d1 = kinv * x_r.normalized().vector();
  const Vec3 d2 = rt * (kinv * x_t.normalized().vector());
  const Vec3 centre = -(rt * pose.translation);
  if (angle_between(d1, d2) < 1e-10) {
    throw Error(ErrorCode::ParallelRays, "rays are parallel");
  }
  const double a = d1.dot(d1);
  const double b = d1.dot(d2);
  const double c = d2.dot(d2);
  const double e = d1.dot(centre);
  const double f = d2.dot(centre);
  const double denom = a * c - b * b;
  const double lambda = (c * e - b * f) / denom;
  const double mu = (b * e - a * f) / denom;
  return 0.5 * (lambda * d1 + centre + mu * d2);
}

std::vector<PoseSE3> essential_candidates(const EssentialMatrix& e) {
  Eigen::JacobiSVD<Mat3> svd(e.matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();
  return {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}};
}

int cheirality_count(const PoseSE3& pose, std::span<const Correspondence> correspondences,
                     const CameraIntrinsics& k) {
  int count = 0;
  for (const auto& c : correspondences) {
    count += in_front_of_both(pose, c, k) ? 1 : 0;
  }
  return count;
}

PoseSE3 decompose_essential(const EssentialMatrix& e, std::span<const Correspondence> correspondences,
                            const CameraIntrinsics& k) {
  if (correspondences.empty()) {
    throw Error(ErrorCode::InvalidArgument, "cheirality voting needs correspondences");
  }
  int best = -1;
  PoseSE3 winner;
  for (const auto& candidate : essential_candidates(e)) {
    const int count = cheirality_count(candidate, correspondences, k);
    if (count > best) {
      best = count;
      winner = candidate;
    }
  }
  if (2 * static_cast<std::size_t>(best) <= correspondences.size()) {
    throw Error(ErrorCode::CheiralityAmbiguous,
                "best candidate has " + std::to_string(best) + " of " +
                    std::to_string(correspondences.size()) + " points in front");
  }
  return winner;
}

PoseEstimate ransac_pose(std::span<const Correspondence> correspondences, const CameraIntrinsics& k,
                         const RansacConfig& config, const MaskPolicy& policy) {
  config.validate();
  const std::size_t n = correspondences.size();
  const std::vector<double>* weights = nullptr;
  if (policy.mode != MaskMode::None) {
    if (!policy.weights || policy.weights->size() != n) {
      throw Error(ErrorCode::InvalidArgument, "mask weights must match the correspondence count");
    }
    weights = &*policy.weights;
  }

  std::vector<std::size_t> usable;
  usable.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (policy.mode == MaskMode::HardExclude && (*weights)[i] < kHardExcludeThreshold) {
      continue;
    }
    usable.push_back(i);
  }
  if (usable.size() < static_cast<std::size_t>(kSampleSize)) {
    throw Error(ErrorCode::NotEnoughInliers, "fewer than 8 usable correspondences");
  }

  const bool soft = policy.mode == MaskMode::SoftWeight;
  const double threshold = config.inlier_threshold;
  auto is_inlier = [&](const EssentialMatrix& e, std::size_t i) {
    const double r = std::abs(epipolar_residual(correspondences[i].x_r, correspondences[i].x_t, k, e));
    // Soft weighting divides the residual by the staticness weight.
    return soft ? r < threshold * (*weights)[i] : r < threshold;
  };

  double best_score = -1.0;
  std::vector<std::size_t> best_consensus;
  std::vector<Correspondence> sample(kSampleSize);
  for (int iter = 0; iter < config.n_iterations; ++iter) {
    Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(iter));
    const auto picked = draw_sample(rng, usable, soft ? weights : nullptr);
    for (int j = 0; j < kSampleSize; ++j) {
      sample[static_cast<std::size_t>(j)] = correspondences[picked[static_cast<std::size_t>(j)]];
    }
    EssentialMatrix hypothesis;
    try {
      hypothesis = eight_point(sample, k);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::DegenerateConfiguration) continue;
      throw;
    }
    double score = 0.0;
    std::vector<std::size_t> consensus;
    for (std::size_t i : usable) {
      if (is_inlier(hypothesis, i)) {
        consensus.push_back(i);
        score += soft ? (*weights)[i] : 1.0;
      }
    }
    if (score > best_score) {
      best_score = score;
      best_consensus = std::move(consensus);
    }
  }

  if (best_consensus.size() < static_cast<std::size_t>(std::max(config.min_inliers, kSampleSize))) {
    throw Error(ErrorCode::NotEnoughInliers,
                "best consensus has " + std::to_string(best_consensus.size()) + " correspondences");
  }

  std::vector<Correspondence> consensus_set;
  consensus_set.reserve(best_consensus.size());
  for (std::size_t i : best_consensus) {
    consensus_set.push_back(correspondences[i]);
  }
  PoseEstimate estimate;
  estimate.essential = eight_point(consensus_set, k);
  estimate.pose = decompose_essential(estimate.essential, consensus_set, k);
  estimate.inlier_mask.assign(n, false);
  for (std::size_t i : best_consensus) {
    estimate.inlier_mask[i] = true;
  }
  estimate.n_inliers = static_cast<int>(best_consensus.size());
  return estimate;
}

std::vector<double> ground_truth_weights(std::span<const Correspondence> correspondences) {
  std::vector<double> w;
  w.reserve(correspondences.size());
  for (const auto& c : correspondences) {
    w.push_back(c.is_dynamic ? 0.0 : 1.0);
  }
  return w;
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::None: return "none";
    case MaskMode::HardExclude: return "hard";
    case MaskMode::SoftWeight: return "soft";
  }
  return "none";
}

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "none") return MaskMode::None;
  if (text == "hard" || text == "hard_exclude") return MaskMode::HardExclude;
  if (text == "soft" || text == "soft_weight") return MaskMode::SoftWeight;
  throw Error(ErrorCode::ConfigError, "unknown mask policy '" + text + "'");
}

}  // namespace dyn4d
