#include "dyn4d/cli/app.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "dyn4d/cli/commands.hpp"
#include "dyn4d/cli/config.hpp"
#include "dyn4d/cli/manifest.hpp"
#include "dyn4d/error.hpp"

#ifndef DYN4D_VERSION
#define DYN4D_VERSION "0.0.0"
#endif

namespace dyn4d::cli {

namespace fs = std::filesystem;

const char* tool_version() { return DYN4D_VERSION; }

namespace {

using Command = CommandOutcome (*)(const ExperimentConfig&, const fs::path&, std::ostream&);

struct Subcommand {
  const char* name;
  const char* help;
  Command fn;
};

constexpr Subcommand kSubcommands[] = {
    {"simulate", "Generate a synthetic scene and its correspondence dumps", cmd_simulate},
    {"pose-sweep", "Pose error sweep over dynamic ratio, noise and mask policy", cmd_pose_sweep},
    {"eval-traj", "ATE and RPE of a predicted trajectory file against ground truth", cmd_eval_traj},
    {"eval-depth", "Abs Rel and delta accuracy of PFM depth maps", cmd_eval_depth},
    {"eval-points", "Accuracy, completion and overall error of PLY point clouds", cmd_eval_points},
    {"gradcheck", "Finite-difference check of every analytic gradient", cmd_gradcheck},
};

Command find_command(const std::string& name) {
  for (const auto& s : kSubcommands) {
    if (name == s.name) return s.fn;
  }
  throw Error(ErrorCode::ParseError, "manifest names unknown subcommand '" + name + "'");
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::InfeasibleConfig:
      return kExitUsage;
    default:
      return kExitData;
  }
}

void configure_logging(std::ostream& err) {
  const char* env = std::getenv("DYN4D_LOG");
  const std::string level = env ? env : "error";
  spdlog::level::level_enum l = spdlog::level::err;
  if (level == "info") {
    l = spdlog::level::info;
  } else if (level == "debug") {
    l = spdlog::level::debug;
  } else if (level != "error") {
    throw Error(ErrorCode::ConfigError, "DYN4D_LOG must be error, info or debug, not '" + level + "'");
  }
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("dyn4d", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(l);
  spdlog::set_default_logger(logger);
}

// Runs one command and records its manifest next to the outputs.
int execute(const std::string& name, const ConfigMap& entries, std::ostream& out, RunManifest* manifest_out = nullptr) {
  const ExperimentConfig config = from_map(entries);
  const fs::path out_dir = config.out;
  RunManifest m;
  m.tool_version = tool_version();
  m.subcommand = name;
  m.config = to_map(config);
  m.seed = config.seed;
  m.started_at = utc_now();
  spdlog::info("{}: seed {}, output {}", name, config.seed, out_dir.string());
  const CommandOutcome outcome = find_command(name)(config, out_dir, out);
  m.finished_at = utc_now();
  m.exit_code = outcome.exit_code;
  for (const auto& p : outcome.inputs) {
    m.inputs.push_back({fs::absolute(p).lexically_normal().string(), sha256_file(p)});
  }
  for (const auto& rel : outcome.outputs) m.outputs.push_back({rel, sha256_file(out_dir / rel)});
  write_manifest(out_dir / kManifestName, m);
  if (manifest_out) *manifest_out = m;
  return outcome.exit_code;
}

int replay(const fs::path& manifest_path, const std::optional<std::string>& out_override, std::ostream& out) {
  const RunManifest original = read_manifest(manifest_path);
  find_command(original.subcommand);
  for (const auto& in : original.inputs) {
    const std::string now = sha256_file(in.path);
    if (now != in.sha256) {
      throw Error(ErrorCode::IoError, "input " + in.path + " changed since the recorded run");
    }
  }
  ConfigMap entries = original.config;
  const fs::path out_dir = out_override ? fs::path(*out_override) : manifest_path.parent_path() / "replay";
  entries["run.out"] = out_dir.string();
  if (original.tool_version != tool_version()) {
    spdlog::warn("manifest written by version {}, replaying with {}", original.tool_version, tool_version());
  }
  RunManifest again;
  const int code = execute(original.subcommand, entries, out, &again);
  if (code != original.exit_code) {
    fmt::print(out, "replay: exit code {} differs from recorded {}\n", code, original.exit_code);
    return kExitAssertion;
  }
  bool identical = again.outputs.size() == original.outputs.size();
  for (std::size_t i = 0; identical && i < again.outputs.size(); ++i) {
    identical = again.outputs[i].path == original.outputs[i].path && again.outputs[i].sha256 == original.outputs[i].sha256;
  }
  for (const auto& o : original.outputs) {
    const auto it = std::find_if(again.outputs.begin(), again.outputs.end(), [&](const auto& a) { return a.path == o.path; });
    const bool same = it != again.outputs.end() && it->sha256 == o.sha256;
    fmt::print(out, "replay: {:<28} {}\n", o.path, same ? "identical" : "DIFFERS");
  }
  fmt::print(out, "replay: {}\n", identical ? "all outputs identical" : "outputs differ");
  return identical ? kExitOk : kExitAssertion;
}

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> align;
  std::optional<std::string> policy;
  std::optional<double> tolerance;
  bool sample10{false};
  std::optional<std::string> inject_fault;
  std::string pred;
  std::string gt;
  std::string manifest;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "INI configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Global seed (run.seed)");
  sub->add_option("--out", f.out, "Output directory (run.out)");
}

ConfigMap collect(const Flags& f) {
  ConfigMap entries;
  if (!f.config_path.empty()) entries = read_config_file(f.config_path);
  if (f.seed) entries["run.seed"] = std::to_string(*f.seed);
  if (f.out) entries["run.out"] = *f.out;
  if (f.align) entries["depth.alignment"] = *f.align;
  if (f.policy) entries["sweep.policies"] = *f.policy;
  if (f.tolerance) entries["traj.tolerance"] = fmt::format("{}", *f.tolerance);
  if (f.sample10) entries["traj.sample10"] = "true";
  if (f.inject_fault) entries["gradcheck.inject_fault"] = *f.inject_fault;
  if (!f.pred.empty()) entries["input.pred"] = f.pred;
  if (!f.gt.empty()) entries["input.gt"] = f.gt;
  return entries;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamics-aware multi-view geometry toolkit: simulation, evaluation and gradient checks", "dyn4d"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());
  Flags f;

  for (const auto& s : kSubcommands) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, f);
    const std::string name = s.name;
    if (name == "pose-sweep") {
      sub->add_option("--policy", f.policy, "Restrict the sweep to one mask policy")
          ->check(CLI::IsMember({"none", "hard", "soft"}));
    } else if (name == "eval-traj") {
      sub->add_option("pred", f.pred, "Predicted trajectory file");
      sub->add_option("gt", f.gt, "Ground-truth trajectory file");
      sub->add_flag("--sample10", f.sample10, "Evaluate 10 evenly spaced matched frames");
      sub->add_option("--tolerance", f.tolerance, "Timestamp association tolerance in seconds");
    } else if (name == "eval-depth") {
      sub->add_option("pred", f.pred, "Directory of predicted .pfm maps");
      sub->add_option("gt", f.gt, "Directory of ground-truth .pfm maps with the same file names");
      sub->add_option("--align", f.align, "Depth alignment mode")
          ->check(CLI::IsMember({"scale", "scale_shift", "per_frame"}));
    } else if (name == "eval-points") {
      sub->add_option("pred", f.pred, "Predicted point cloud (.ply)");
      sub->add_option("gt", f.gt, "Ground-truth point cloud (.ply)");
    } else if (name == "gradcheck") {
      sub->add_option("--inject-fault", f.inject_fault, "Corrupt one group's analytic gradient");
    }
  }
  CLI::App* replay_cmd = app.add_subcommand("replay", "Re-run a recorded command and compare its outputs");
  replay_cmd->add_option("--manifest", f.manifest, "manifest.json of the recorded run")->required();
  replay_cmd->add_option("--out", f.out, "Output directory for the re-run (default: <manifest dir>/replay)");
  CLI::App* config_cmd = app.add_subcommand("config", "Print every configuration key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    configure_logging(err);
    if (config_cmd->parsed()) {
      out << to_ini(to_map(ExperimentConfig{}));
      return kExitOk;
    }
    if (replay_cmd->parsed()) return replay(f.manifest, f.out, out);
    const std::string name = app.get_subcommands().front()->get_name();
    return execute(name, collect(f), out);
  } catch (const Error& e) {
    fmt::print(err, "dyn4d: {}\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    fmt::print(err, "dyn4d: internal error: {}\n", e.what());
    return kExitAssertion;
  }
}

}  // namespace dyn4d::cli
