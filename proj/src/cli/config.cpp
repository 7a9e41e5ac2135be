#include "dyn4d/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dyn4d/error.hpp"
#include "dyn4d/experiments.hpp"

namespace dyn4d::cli {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& text, const std::string& expected) {
  throw Error(ErrorCode::ConfigError, fmt::format("{}: '{}' is not {}", key, text, expected));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw, const char* expected) {
  const std::string text = trim(raw);
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) bad_value(key, text, expected);
  return value;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  bad_value(key, text, "a boolean");
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

std::string format_list(const std::vector<double>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

std::string to_string(ScaleEstimator e) { return e == ScaleEstimator::MedianRatio ? "median_ratio" : "least_squares"; }

ScaleEstimator parse_estimator(const std::string& key, const std::string& text) {
  if (text == "least_squares") return ScaleEstimator::LeastSquares;
  if (text == "median_ratio") return ScaleEstimator::MedianRatio;
  bad_value(key, text, "least_squares or median_ratio");
}

// Enum parsers in the library throw ConfigError or InvalidArgument with their
// own wording; prefix the key.
template <typename Fn>
auto keyed(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, key + ": " + e.what());
  }
}

struct Setting {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
};

// Helpers binding a field reached through an accessor.
template <typename Access>
Setting real(std::string key, Access access) {
  return {std::move(key), [access](const ExperimentConfig& c) { return fmt::format("{}", access(c)); },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_number<double>(k, v, "a number");
          }};
}

template <typename Access>
Setting integer(std::string key, Access access) {
  return {std::move(key), [access](const ExperimentConfig& c) { return fmt::format("{}", access(c)); },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            using T = std::remove_reference_t<decltype(access(c))>;
            access(c) = parse_number<T>(k, v, "an integer");
          }};
}

template <typename Access>
Setting boolean(std::string key, Access access) {
  return {std::move(key), [access](const ExperimentConfig& c) { return format_bool(access(c)); },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) { access(c) = parse_bool(k, v); }};
}

template <typename Access>
Setting text(std::string key, Access access) {
  return {std::move(key), [access](const ExperimentConfig& c) { return access(c); },
          [access](ExperimentConfig& c, const std::string&, const std::string& v) { access(c) = trim(v); }};
}

template <typename Access>
Setting vec3(std::string key, Access access) {
  return {std::move(key),
          [access](const ExperimentConfig& c) {
            const Vec3& v = access(c);
            return fmt::format("{},{},{}", v.x(), v.y(), v.z());
          },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            const auto items = split_list(v);
            if (items.size() != 3) bad_value(k, v, "three comma-separated numbers");
            for (int i = 0; i < 3; ++i) access(c)(i) = parse_number<double>(k, items[static_cast<std::size_t>(i)], "a number");
          }};
}

template <typename Access>
Setting real_list(std::string key, Access access) {
  return {std::move(key), [access](const ExperimentConfig& c) { return format_list(access(c)); },
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_number<double>(k, item, "a number"));
            access(c) = std::move(out);
          }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = [] {
    std::vector<Setting> t{
        integer("run.seed", FIELD(seed)),
        text("run.out", FIELD(out)),
        text("input.pred", FIELD(pred)),
        text("input.gt", FIELD(gt)),

        integer("scene.n_static", FIELD(scene.n_static)),
        integer("scene.n_dynamic", FIELD(scene.n_dynamic)),
        vec3("scene.volume_min", FIELD(scene.volume.min)),
        vec3("scene.volume_max", FIELD(scene.volume.max)),
        {"scene.motion_model", [](const ExperimentConfig& c) { return to_string(c.scene.motion_model); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
           c.scene.motion_model = keyed(k, [&] { return parse_motion_model(trim(v)); });
         }},
        real("scene.motion_scale", FIELD(scene.motion_scale)),
        boolean("scene.coherent_motion", FIELD(scene.coherent_motion)),
        real("scene.sinusoid_period", FIELD(scene.sinusoid_period)),
        {"scene.trajectory", [](const ExperimentConfig& c) { return to_string(c.scene.trajectory.kind); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
           c.scene.trajectory.kind = keyed(k, [&] { return parse_trajectory(trim(v)); });
         }},
        real("scene.radius", FIELD(scene.trajectory.radius)),
        real("scene.step", FIELD(scene.trajectory.step)),
        real("scene.height", FIELD(scene.trajectory.height)),
        integer("scene.n_frames", FIELD(scene.n_frames)),
        real("scene.fx", FIELD(scene.intrinsics.fx)),
        real("scene.fy", FIELD(scene.intrinsics.fy)),
        real("scene.cx", FIELD(scene.intrinsics.cx)),
        real("scene.cy", FIELD(scene.intrinsics.cy)),
        integer("scene.image_width", FIELD(scene.image_width)),
        integer("scene.image_height", FIELD(scene.image_height)),
        real("scene.noise_px", FIELD(scene.noise_px)),
        real("scene.min_depth", FIELD(scene.min_depth)),

        integer("ransac.n_iterations", FIELD(ransac.n_iterations)),
        real("ransac.inlier_threshold", FIELD(ransac.inlier_threshold)),
        integer("ransac.seed", FIELD(ransac.seed)),
        integer("ransac.min_inliers", FIELD(ransac.min_inliers)),

        real_list("sweep.dynamic_ratios", FIELD(sweep.dynamic_ratios)),
        real_list("sweep.noises", FIELD(sweep.noises)),
        {"sweep.policies",
         [](const ExperimentConfig& c) {
           std::vector<std::string> names;
           for (MaskMode m : c.sweep.policies) names.push_back(to_string(m));
           return fmt::format("{}", fmt::join(names, ","));
         },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
           c.sweep.policies.clear();
           for (const auto& item : split_list(v)) c.sweep.policies.push_back(keyed(k, [&] { return parse_mask_mode(item); }));
         }},
        integer("sweep.n_seeds", FIELD(sweep.n_seeds)),
        boolean("sweep.with_ate", FIELD(sweep.with_ate)),
        integer("sweep.threads", FIELD(sweep.threads)),

        real("traj.tolerance", FIELD(traj.tolerance)),
        boolean("traj.sample10", FIELD(traj.sample10)),
        integer("traj.rpe_delta", FIELD(traj.rpe_delta)),

        {"depth.alignment", [](const ExperimentConfig& c) { return to_string(c.depth.alignment); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
           c.depth.alignment = keyed(k, [&] { return parse_depth_alignment(trim(v)); });
         }},
        {"depth.estimator", [](const ExperimentConfig& c) { return to_string(c.depth.estimator); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
           c.depth.estimator = parse_estimator(k, trim(v));
         }},
        real("depth.min_depth", FIELD(depth.min_depth)),
        real("depth.max_depth", FIELD(depth.max_depth)),
        real("depth.threshold", FIELD(depth.threshold)),

        boolean("points.use_grid", FIELD(points.use_grid)),

        integer("gradcheck.n_configs", FIELD(gradcheck.n_configs)),
        real("gradcheck.step", FIELD(gradcheck.step)),
        real("gradcheck.tolerance", FIELD(gradcheck.tolerance)),
        real("gradcheck.floor", FIELD(gradcheck.floor)),
        integer("gradcheck.width", FIELD(gradcheck.width)),
        integer("gradcheck.batch", FIELD(gradcheck.batch)),
        integer("gradcheck.frames", FIELD(gradcheck.frames)),
        integer("gradcheck.n_reg", FIELD(gradcheck.n_reg)),
        text("gradcheck.inject_fault", FIELD(inject_fault)),
    };
    return t;
  }();
  return table;
}

#undef FIELD

template <typename Fn>
void rethrow_as_config(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // The pose sweep's operating point: one coherently moving object in front
  // of a closer orbit, half-pixel noise.
  const PoseTrialSpec base = contamination_scenario(0.0, MaskMode::None);
  scene = base.scene;
  scene.n_static = 90;
  scene.n_dynamic = 30;
  scene.noise_px = base.noise_px;
  ransac = base.ransac;
}

void ExperimentConfig::validate() const {
  rethrow_as_config([&] {
    scene.validate();
    ransac.validate();
    depth.validate();
    gradcheck.validate();
  });
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (out.empty()) fail("run.out must not be empty");
  if (sweep.dynamic_ratios.empty() || sweep.noises.empty() || sweep.policies.empty()) {
    fail("sweep lists must not be empty");
  }
  for (double r : sweep.dynamic_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) fail("sweep.dynamic_ratios entries must lie in [0, 1]");
  }
  for (double n : sweep.noises) {
    if (!(n >= 0.0)) fail("sweep.noises entries must be non-negative");
  }
  if (sweep.n_seeds < 1) fail("sweep.n_seeds must be >= 1");
  if (sweep.threads < 0) fail("sweep.threads must be >= 0");
  if (!(traj.tolerance >= 0.0)) fail("traj.tolerance must be non-negative");
  if (traj.rpe_delta < 1) fail("traj.rpe_delta must be >= 1");
}

ConfigMap to_map(const ExperimentConfig& config) {
  ConfigMap m;
  for (const Setting& s : settings()) m[s.key] = s.get(config);
  return m;
}

ExperimentConfig from_map(const ConfigMap& entries) {
  ExperimentConfig c;
  for (const auto& [key, value] : entries) {
    const auto& table = settings();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Setting& s) { return s.key == key; });
    if (it == table.end()) throw Error(ErrorCode::ConfigError, "unknown configuration key '" + key + "'");
    it->set(c, key, value);
  }
  c.validate();
  return c;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigError, fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
  }
  ConfigMap m;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::ConfigError, path.string() + ": key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : body) m[section + "." + key] = value.data();
  }
  return m;
}

std::string to_ini(const ConfigMap& entries) {
  std::string out;
  std::string current;
  for (const auto& [full, value] : entries) {
    const auto dot = full.find('.');
    const std::string section = full.substr(0, dot);
    if (section != current) {
      out += (out.empty() ? "" : "\n") + fmt::format("[{}]\n", section);
      current = section;
    }
    out += fmt::format("{} = {}\n", full.substr(dot + 1), value);
  }
  return out;
}

}  // namespace dyn4d::cli
