#pragma once

// Central finite differences against the analytic gradients of the toy
// aggregator objective and of each loss on its own.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dyn4d/dyn_aggregator.hpp"
#include "dyn4d/objective.hpp"

namespace dyn4d {

struct GradCheckOptions {
  int n_configs{10};
  double step{1e-6};
  double tolerance{1e-5};
  // Guards the denominator for groups whose gradient is identically zero.
  double floor{1e-12};
  std::uint64_t seed{0};
  int width{8};
  int batch{2};
  int frames{3};
  int n_reg{2};

  void validate() const;
};

struct GroupResult {
  std::string name;
  double max_rel_error{0.0};
  std::size_t n_entries{0};
  bool passed{true};
};

struct GradCheckReport {
  std::vector<GroupResult> groups;  // fixed order, one entry per group
  [[nodiscard]] bool passed() const;
};

// Called with each group's analytic gradient before comparison; lets tests
// inject faults.
using GradientTamper = std::function<void(const std::string& group, std::vector<double>& analytic)>;

// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, floor). Central
// differences carry roundoff near eps * |f| / h on every entry, so error is
// measured against the scale of the whole group rather than entry by entry.
[[nodiscard]] double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                    double floor);

// Targets whose dense residuals stay at least `margin` away from every L1
// kink at the current prediction, so a small step cannot cross one. Camera
// targets are the prediction plus N(0, camera_noise^2) per entry. Keeping
// targets close keeps the loss small, and with it the roundoff of central
// differences.
[[nodiscard]] std::vector<FrameTarget> kink_free_targets(const TokenSet& tokens, const AggregatorConfig& config,
                                                         const AggregatorParams& params, std::uint64_t seed,
                                                         double margin, double camera_noise);

[[nodiscard]] GradCheckReport run_gradcheck(const GradCheckOptions& options, const GradientTamper& tamper = {});

}  // namespace dyn4d
