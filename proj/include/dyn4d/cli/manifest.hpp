#pragma once

// Run manifests: enough to re-run a command and check that it reproduced its
// outputs byte for byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dyn4d/cli/config.hpp"

namespace dyn4d::cli {

struct FileDigest {
  std::string path;    // inputs: absolute; outputs: relative to the output directory
  std::string sha256;  // lowercase hex
};

struct RunManifest {
  std::string tool_version;
  std::string subcommand;
  ConfigMap config;  // fully resolved, defaults included
  std::uint64_t seed{0};
  std::string started_at;  // UTC, ISO 8601
  std::string finished_at;
  int exit_code{0};
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
};

inline constexpr const char* kManifestName = "manifest.json";

// Throws IoError.
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);
[[nodiscard]] std::string sha256_hex(const std::string& bytes);

[[nodiscard]] std::string utc_now();

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
// Throws IoError or ParseError.
[[nodiscard]] RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace dyn4d::cli
