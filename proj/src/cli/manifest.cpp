#include "dyn4d/cli/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "dyn4d/error.hpp"

namespace dyn4d::cli {

namespace {

using Json = nlohmann::ordered_json;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorCode::IoError, "SHA-256 initialisation failed");
    }
  }
  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &n);
    std::string out;
    for (unsigned int i = 0; i < n; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

Json digests_to_json(const std::vector<FileDigest>& files) {
  Json a = Json::array();
  for (const auto& f : files) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
  return a;
}

std::vector<FileDigest> digests_from_json(const Json& a) {
  std::vector<FileDigest> files;
  for (const auto& f : a) files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
  return files;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  Json j;
  j["tool_version"] = m.tool_version;
  j["subcommand"] = m.subcommand;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["exit_code"] = m.exit_code;
  j["config"] = m.config;
  j["inputs"] = digests_to_json(m.inputs);
  j["outputs"] = digests_to_json(m.outputs);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  try {
    const Json j = Json::parse(in);
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.subcommand = j.at("subcommand").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.exit_code = j.at("exit_code").get<int>();
    m.config = j.at("config").get<ConfigMap>();
    m.inputs = digests_from_json(j.at("inputs"));
    m.outputs = digests_from_json(j.at("outputs"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace dyn4d::cli
