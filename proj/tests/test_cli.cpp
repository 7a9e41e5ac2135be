#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "dyn4d/cli/app.hpp"
#include "dyn4d/cli/commands.hpp"
#include "dyn4d/cli/config.hpp"
#include "dyn4d/cli/manifest.hpp"
#include "dyn4d/error.hpp"
#include "dyn4d/io.hpp"
#include "test_support.hpp"

namespace dyn4d::cli {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun dyn4d(std::vector<std::string> args) {
  args.insert(args.begin(), "dyn4d");
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("dyn4d_cli_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::ofstream(path(name), std::ios::binary) << content;
    return path(name);
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, double> metric_csv(const fs::path& p) {
  std::map<std::string, double> m;
  const auto rows = read_csv(p);
  EXPECT_EQ(rows.at(0), (std::vector<std::string>{"metric", "value"}));
  for (std::size_t i = 1; i < rows.size(); ++i) m[rows[i].at(0)] = std::stod(rows[i].at(1));
  return m;
}

// --- configuration -----------------------------------------------------------

TEST(Config, MapRoundTripIsExact) {
  ExperimentConfig c;
  c.scene.motion_scale = 0.1 + 1e-17;
  c.sweep.dynamic_ratios = {0.0, 1.0 / 3.0};
  c.sweep.policies = {MaskMode::SoftWeight};
  c.depth.alignment = DepthAlignment::PerFrame;
  c.seed = 18446744073709551615ULL;
  const ConfigMap m = to_map(c);
  EXPECT_EQ(to_map(from_map(m)), m);
  EXPECT_EQ(from_map(m).sweep.dynamic_ratios[1], 1.0 / 3.0);
  EXPECT_EQ(from_map(m).seed, c.seed);
}

TEST(Config, EveryKeyHasADefault) {
  const ConfigMap defaults = to_map(ExperimentConfig{});
  EXPECT_EQ(to_map(from_map({})), defaults);
  for (const auto& [key, value] : defaults) EXPECT_NE(key.find('.'), std::string::npos) << key;
}

TEST(Config, UnknownKeyAndBadValues) {
  auto code = [](const ConfigMap& m) {
    try {
      (void)from_map(m);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code({{"scene.n_statc", "10"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"scene.n_static", "ten"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"scene.n_static", "10.5"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"scene.coherent_motion", "maybe"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"sweep.policies", "none,strict"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"sweep.dynamic_ratios", "0.1,1.5"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"scene.volume_min", "1,2"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"depth.alignment", "affine"}}), ErrorCode::ConfigError);
  EXPECT_EQ(code({{"scene.n_static", "4"}, {"scene.n_dynamic", "3"}}), ErrorCode::ConfigError);
}

TEST_F(CliTest, ConfigFileParsing) {
  const auto file = write("c.ini", "# comment\n[scene]\nn_static = 50\n; other comment\n[sweep]\npolicies = hard, soft\n");
  const ExperimentConfig c = from_map(read_config_file(file));
  EXPECT_EQ(c.scene.n_static, 50);
  EXPECT_EQ(c.sweep.policies, (std::vector<MaskMode>{MaskMode::HardExclude, MaskMode::SoftWeight}));
  EXPECT_THROW((void)read_config_file(write("d.ini", "[scene]\nn_static = 1\nn_static = 2\n")), Error);
  EXPECT_THROW((void)read_config_file(write("e.ini", "n_static = 1\n")), Error);
}

TEST_F(CliTest, UsageAndConfigErrorsExitOne) {
  EXPECT_EQ(dyn4d({}).code, 1);
  EXPECT_EQ(dyn4d({"frobnicate"}).code, 1);
  EXPECT_EQ(dyn4d({"eval-depth", "--align", "affine"}).code, 1);
  const auto bad = write("bad.ini", "[scene]\nn_statics = 3\n");
  const CliRun r = dyn4d({"simulate", "--config", bad, "--out", path("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("scene.n_statics"), std::string::npos) << r.err;
  EXPECT_EQ(dyn4d({"eval-traj", "--out", path("o")}).code, 1);  // inputs missing
}

TEST_F(CliTest, InvalidLogLevelIsRejected) {
  ::setenv("DYN4D_LOG", "verbose", 1);
  const CliRun r = dyn4d({"simulate", "--out", path("o")});
  ::unsetenv("DYN4D_LOG");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("DYN4D_LOG"), std::string::npos);
}

// --- simulate ----------------------------------------------------------------

TEST_F(CliTest, SimulateTooFewPointsIsAConfigRejection) {
  const auto cfg = write("c.ini", "[scene]\nn_static = 4\nn_dynamic = 3\n");
  const CliRun r = dyn4d({"simulate", "--config", cfg, "--out", path("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(">= 8"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("o/manifest.json")));
}

TEST_F(CliTest, SimulateIsDeterministicAndMatchesGolden) {
  ASSERT_EQ(dyn4d({"simulate", "--seed", "42", "--out", path("a")}).code, 0);
  ASSERT_EQ(dyn4d({"simulate", "--seed", "42", "--out", path("b")}).code, 0);
  ASSERT_EQ(dyn4d({"simulate", "--seed", "43", "--out", path("c")}).code, 0);
  for (const char* f : {"scene.txt", "correspondences.txt"}) {
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
    EXPECT_NE(slurp(path(std::string("a/") + f)), slurp(path(std::string("c/") + f))) << f;
  }
  // Snapshot of the first verified run with the default configuration.
  EXPECT_EQ(sha256_file(path("a/correspondences.txt")), "d97426a452faf26413fa93b2d27f9d597387898fe649d2e6cfbec634a81c1283");
  EXPECT_EQ(sha256_file(path("a/scene.txt")), "85fc8b2ec4c436d8770f24bb1980445cb6b442c1419b383b212fa1d91c7b94b0");

  // The dump parses back with the library reader.
  std::ifstream in(path("a/correspondences.txt"));
  const auto obs = read_correspondences(in);
  ASSERT_EQ(obs.size(), 4U);
  for (std::size_t i = 0; i < obs.size(); ++i) EXPECT_EQ(obs[i].frame_t, static_cast<int>(i) + 1);

  const RunManifest m = read_manifest(path("a/manifest.json"));
  EXPECT_EQ(m.subcommand, "simulate");
  EXPECT_EQ(m.seed, 42U);
  EXPECT_EQ(m.tool_version, tool_version());
  EXPECT_EQ(m.config.at("run.seed"), "42");
  ASSERT_EQ(m.outputs.size(), 2U);
  EXPECT_EQ(m.outputs[1].sha256, sha256_file(path("a/correspondences.txt")));
}

TEST(Manifest, Sha256KnownAnswer) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

// --- pose-sweep --------------------------------------------------------------

TEST_F(CliTest, PoseSweepCsvContract) {
  const auto cfg = write("c.ini", "[sweep]\ndynamic_ratios = 0, 0.3\nnoises = 0.5\nn_seeds = 4\n");
  const CliRun r = dyn4d({"pose-sweep", "--config", cfg, "--seed", "7", "--out", path("o")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string raw = slurp(path("o/pose_sweep.csv"));
  EXPECT_EQ(raw.find('\r'), std::string::npos);
  EXPECT_EQ(raw.substr(0, raw.find('\n')), "dynamic_ratio,noise,policy,seed,rot_err_deg,trans_dir_err_deg,ate,failed");
  const auto rows = read_csv(path("o/pose_sweep.csv"));
  ASSERT_EQ(rows.size(), 1U + 2 * 3 * 4);
  std::map<std::string, std::vector<std::string>> seeds_by_policy;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 8U);
    seeds_by_policy[rows[i][0] + "/" + rows[i][2]].push_back(rows[i][3]);
    EXPECT_TRUE(rows[i][7] == "0" || rows[i][7] == "1");
  }
  // Paired seeds: every policy sees the same seed list.
  EXPECT_EQ(seeds_by_policy["0.3/none"], (std::vector<std::string>{"7", "8", "9", "10"}));
  EXPECT_EQ(seeds_by_policy["0.3/none"], seeds_by_policy["0.3/hard"]);
  EXPECT_EQ(seeds_by_policy["0.3/none"], seeds_by_policy["0.3/soft"]);

  const auto summary = read_csv(path("o/pose_sweep_summary.csv"));
  ASSERT_EQ(summary.size(), 1U + 2 * 3);
  EXPECT_EQ(summary[0].size(), 9U);
}

TEST_F(CliTest, PoseSweepStaticNoiselessIsAccurate) {
  const auto cfg = write("c.ini", "[sweep]\ndynamic_ratios = 0\nnoises = 0\nn_seeds = 9\n");
  ASSERT_EQ(dyn4d({"pose-sweep", "--config", cfg, "--policy", "none", "--out", path("o")}).code, 0);
  const auto summary = read_csv(path("o/pose_sweep_summary.csv"));
  ASSERT_EQ(summary.size(), 2U);
  EXPECT_EQ(summary[1][2], "none");
  EXPECT_LT(std::stod(summary[1][5]), 0.01);
}

TEST_F(CliTest, PoseSweepRecordsFailuresInsteadOfDropping) {
  // A hard mask over an all-dynamic scene leaves nothing to estimate from.
  const auto cfg = write("c.ini", "[sweep]\ndynamic_ratios = 1\nnoises = 0\npolicies = hard\nn_seeds = 3\n");
  ASSERT_EQ(dyn4d({"pose-sweep", "--config", cfg, "--out", path("o")}).code, 0);
  const auto rows = read_csv(path("o/pose_sweep.csv"));
  ASSERT_EQ(rows.size(), 4U);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][7], "1");
    EXPECT_EQ(rows[i][4], "nan");
  }
  const auto summary = read_csv(path("o/pose_sweep_summary.csv"));
  EXPECT_EQ(summary[1][4], "3");
}

// --- eval-traj ---------------------------------------------------------------

Trajectory fixture_trajectory(std::uint64_t seed, int n) {
  std::mt19937_64 gen(seed);
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    t.timestamps.push_back(100.0 + 0.1 * i);
    t.poses.push_back(testing::random_pose(gen, 3.0, 4.0));
  }
  return t;
}

std::string trajectory_text(const Trajectory& t) {
  std::ostringstream s;
  write_trajectory(s, t);
  return s.str();
}

TEST_F(CliTest, EvalTrajIdenticalFilesGiveZero) {
  const auto gt = write("gt.txt", "# ground truth\n" + trajectory_text(fixture_trajectory(1, 25)));
  ASSERT_EQ(dyn4d({"eval-traj", gt, gt, "--out", path("o")}).code, 0);
  const auto m = metric_csv(path("o/traj_metrics.csv"));
  EXPECT_LT(m.at("ate"), 1e-12);
  EXPECT_LT(m.at("rpe_trans"), 1e-12);
  EXPECT_LT(m.at("rpe_rot_deg"), 1e-6);
  EXPECT_EQ(m.at("n_matched"), 25.0);
  EXPECT_EQ(m.at("n_evaluated"), 25.0);
}

TEST_F(CliTest, EvalTrajRecoversKnownSimilarity) {
  const Trajectory gt = fixture_trajectory(2, 30);
  Trajectory pred = gt;
  const double s = 0.37;
  const Mat3 r = testing::rodrigues(Vec3(0.3, -1.1, 0.7));
  const Vec3 t(4.0, -2.0, 0.5);
  for (auto& p : pred.poses) {
    p.rotation = r * p.rotation;
    p.translation = s * (r * p.translation) + t;
  }
  const auto pf = write("pred.txt", trajectory_text(pred));
  const auto gf = write("gt.txt", trajectory_text(gt));
  ASSERT_EQ(dyn4d({"eval-traj", pf, gf, "--out", path("o")}).code, 0);
  EXPECT_LT(metric_csv(path("o/traj_metrics.csv")).at("ate"), 1e-9);
  ASSERT_EQ(dyn4d({"eval-traj", pf, gf, "--sample10", "--out", path("p")}).code, 0);
  const auto m = metric_csv(path("p/traj_metrics.csv"));
  EXPECT_EQ(m.at("n_evaluated"), 10.0);
  EXPECT_EQ(m.at("n_matched"), 30.0);
  EXPECT_LT(m.at("ate"), 1e-9);
}

TEST_F(CliTest, EvalTrajErrors) {
  const auto gt = write("gt.txt", trajectory_text(fixture_trajectory(3, 10)));
  const auto bad = write("bad.txt", "100.0 0 0 0 0 0 0 1\n100.1 0 0 0 0 0 0 1\n100.2 0 0 x 0 0 0 1\n");
  CliRun r = dyn4d({"eval-traj", bad, gt, "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.txt:3"), std::string::npos) << r.err;

  Trajectory far = fixture_trajectory(3, 10);
  for (double& ts : far.timestamps) ts += 0.05;
  const auto shifted = write("far.txt", trajectory_text(far));
  r = dyn4d({"eval-traj", shifted, gt, "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("AssociationFailure"), std::string::npos) << r.err;
  // The same files associate once the tolerance covers the offset.
  EXPECT_EQ(dyn4d({"eval-traj", shifted, gt, "--tolerance", "0.06", "--out", path("o")}).code, 0);
  EXPECT_EQ(dyn4d({"eval-traj", path("missing.txt"), gt, "--out", path("o")}).code, 2);
}

// --- eval-depth --------------------------------------------------------------

DepthMap fixture_depth(std::uint64_t seed, int w, int h) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.5, 8.0);
  DepthMap m(w, h);
  for (double& v : m.values) v = static_cast<float>(u(gen));
  m.values[0] = 0.0;  // invalid pixel
  return m;
}

TEST_F(CliTest, EvalDepthCopiesAndDoubledPrediction) {
  fs::create_directories(path("gt"));
  fs::create_directories(path("same"));
  fs::create_directories(path("twice"));
  for (int f = 0; f < 3; ++f) {
    const std::string name = "frame_" + std::to_string(f) + ".pfm";
    const DepthMap g = fixture_depth(10 + static_cast<std::uint64_t>(f), 8, 6);
    DepthMap twice = g;
    for (double& v : twice.values) v *= 2.0;
    write_pfm_file(path("gt/" + name), g);
    write_pfm_file(path("same/" + name), g);
    write_pfm_file(path("twice/" + name), twice);
  }
  ASSERT_EQ(dyn4d({"eval-depth", path("same"), path("gt"), "--out", path("o1")}).code, 0);
  auto rows = read_csv(path("o1/depth_metrics.csv"));
  ASSERT_EQ(rows.size(), 5U);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"frame", "scale", "shift", "abs_rel", "delta_acc", "n_valid"}));
  EXPECT_EQ(rows[1][0], "frame_0");
  EXPECT_EQ(rows[4][0], "all");
  EXPECT_EQ(std::stod(rows[4][3]), 0.0);
  EXPECT_EQ(std::stod(rows[4][4]), 1.0);
  EXPECT_EQ(rows[4][5], "141");  // 3 * (48 - 1)

  for (const char* mode : {"scale", "scale_shift", "per_frame"}) {
    const std::string out = path(std::string("o_") + mode);
    ASSERT_EQ(dyn4d({"eval-depth", path("twice"), path("gt"), "--align", mode, "--out", out}).code, 0) << mode;
    rows = read_csv(out + "/depth_metrics.csv");
    EXPECT_LT(std::stod(rows[4][3]), 1e-12) << mode;
    EXPECT_NEAR(std::stod(rows[1][1]), 0.5, 1e-12) << mode;
  }
}

// Two 2x2 frames whose metrics are worked out by hand: scale alignment fits
// s = sum(p g) / sum(p^2) over both frames.
TEST_F(CliTest, EvalDepthHandComputedFixture) {
  fs::create_directories(path("p"));
  fs::create_directories(path("g"));
  DepthMap g0(2, 2);
  g0.values = {1, 2, 4, -1};
  DepthMap p0(2, 2);
  p0.values = {1, 2, 2, 7};
  DepthMap g1(2, 2);
  g1.values = {2, 2, 2, 2};
  DepthMap p1(2, 2);
  p1.values = {2, 2, 2, 4};
  write_pfm_file(path("g/a.pfm"), g0);
  write_pfm_file(path("p/a.pfm"), p0);
  write_pfm_file(path("g/b.pfm"), g1);
  write_pfm_file(path("p/b.pfm"), p1);
  ASSERT_EQ(dyn4d({"eval-depth", path("p"), path("g"), "--out", path("o")}).code, 0);
  const auto rows = read_csv(path("o/depth_metrics.csv"));
  // valid pairs (p, g): (1,1) (2,2) (2,4) | (2,2) (2,2) (2,2) (4,2)
  const double s = (1.0 + 4 + 8 + 4 + 4 + 4 + 8) / (1.0 + 4 + 4 + 4 + 4 + 4 + 16);
  const std::vector<std::pair<double, double>> px{{1, 1}, {2, 2}, {2, 4}, {2, 2}, {2, 2}, {2, 2}, {4, 2}};
  double rel = 0.0;
  int good = 0;
  for (const auto& [p, g] : px) {
    rel += std::abs(s * p - g) / g;
    good += std::max(s * p / g, g / (s * p)) < 1.25 ? 1 : 0;
  }
  EXPECT_NEAR(std::stod(rows[1][1]), s, 1e-15);
  EXPECT_NEAR(std::stod(rows[3][3]), rel / 7.0, 1e-15);
  EXPECT_NEAR(std::stod(rows[3][4]), good / 7.0, 1e-15);
  EXPECT_EQ(rows[3][5], "7");
}

TEST_F(CliTest, EvalDepthShapeMismatch) {
  fs::create_directories(path("p"));
  fs::create_directories(path("g"));
  write_pfm_file(path("p/a.pfm"), DepthMap(4, 3, 1.0));
  write_pfm_file(path("g/a.pfm"), DepthMap(3, 4, 1.0));
  CliRun r = dyn4d({"eval-depth", path("p"), path("g"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ShapeMismatch"), std::string::npos) << r.err;
  fs::remove(path("p/a.pfm"));
  write_pfm_file(path("p/b.pfm"), DepthMap(3, 4, 1.0));
  r = dyn4d({"eval-depth", path("p"), path("g"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("file lists differ"), std::string::npos) << r.err;
}

// --- eval-points -------------------------------------------------------------

std::string ply_text(const std::vector<Vec3>& pts) {
  std::ostringstream s;
  write_ply(s, pts);
  return s.str();
}

double brute_nn(const Vec3& q, const std::vector<Vec3>& ref) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& r : ref) best = std::min(best, (q - r).norm());
  return best;
}

double brute_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TEST_F(CliTest, EvalPointsIdenticalAndSingletons) {
  std::mt19937_64 gen(4);
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.push_back(testing::random_vec(gen, -2, 2));
  const auto a = write("a.ply", ply_text(pts));
  ASSERT_EQ(dyn4d({"eval-points", a, a, "--out", path("o")}).code, 0);
  const auto zero = metric_csv(path("o/points_metrics.csv"));
  ASSERT_EQ(zero.size(), 6U);
  for (const auto& [k, v] : zero) EXPECT_EQ(v, 0.0) << k;

  const auto p = write("p.ply", ply_text({Vec3(1, 2, 3)}));
  const auto g = write("g.ply", ply_text({Vec3(1, 2, 3 + 0.75)}));
  ASSERT_EQ(dyn4d({"eval-points", p, g, "--out", path("s")}).code, 0);
  for (const auto& [k, v] : metric_csv(path("s/points_metrics.csv"))) EXPECT_EQ(v, 0.75) << k;
}

TEST_F(CliTest, EvalPointsMatchesQuadraticOracle) {
  std::mt19937_64 gen(5);
  std::vector<Vec3> pred;
  std::vector<Vec3> gt;
  for (int i = 0; i < 200; ++i) pred.push_back(testing::random_vec(gen, -1, 1));
  for (int i = 0; i < 170; ++i) gt.push_back(testing::random_vec(gen, -1.2, 1.2));
  const auto pf = write("p.ply", ply_text(pred));
  const auto gf = write("g.ply", ply_text(gt));
  ASSERT_EQ(dyn4d({"eval-points", pf, gf, "--out", path("o")}).code, 0);
  const auto m = metric_csv(path("o/points_metrics.csv"));
  std::vector<double> acc;
  std::vector<double> comp;
  for (const Vec3& q : pred) acc.push_back(brute_nn(q, gt));
  for (const Vec3& q : gt) comp.push_back(brute_nn(q, pred));
  double acc_mean = 0.0;
  double comp_mean = 0.0;
  for (double d : acc) acc_mean += d / static_cast<double>(acc.size());
  for (double d : comp) comp_mean += d / static_cast<double>(comp.size());
  const double acc_med = brute_median(acc);
  const double comp_med = brute_median(comp);
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  EXPECT_TRUE(near(m.at("acc_mean"), acc_mean));
  EXPECT_TRUE(near(m.at("comp_mean"), comp_mean));
  EXPECT_TRUE(near(m.at("acc_median"), acc_med));
  EXPECT_TRUE(near(m.at("comp_median"), comp_med));
  EXPECT_TRUE(near(m.at("overall_mean"), 0.5 * (acc_mean + comp_mean)));
  EXPECT_TRUE(near(m.at("overall_median"), 0.5 * (acc_med + comp_med)));
}

TEST_F(CliTest, EvalPointsErrors) {
  const auto empty = write("e.ply", ply_text({}));
  const auto one = write("o.ply", ply_text({Vec3(0, 0, 0)}));
  CliRun r = dyn4d({"eval-points", empty, one, "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("EmptyCloud"), std::string::npos) << r.err;
  const auto binary = write("b.ply", "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n");
  r = dyn4d({"eval-points", binary, one, "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ParseError"), std::string::npos) << r.err;
}

// --- gradcheck ---------------------------------------------------------------

TEST_F(CliTest, GradcheckListsEveryGroupAndPasses) {
  const auto cfg = write("c.ini", "[gradcheck]\nn_configs = 1\n");
  const CliRun r = dyn4d({"gradcheck", "--config", cfg, "--out", path("o")});
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rows = read_csv(path("o/gradcheck.csv"));
  AggregatorConfig ac;
  ac.n_reg = 2;
  AggregatorParams p = init_params(ac, 8, 0);
  std::vector<std::string> expected;
  for (const auto& v : param_views(p)) expected.push_back(v.name);
  for (const char* extra : {"tokens", "loss.huber", "loss.camera", "loss.conf_weighted.values",
                            "loss.conf_weighted.confidence", "loss.gradient_regularizer", "loss.total"}) {
    expected.emplace_back(extra);
  }
  std::vector<std::string> names;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    names.push_back(rows[i][0]);
    EXPECT_EQ(rows[i][3], "1") << rows[i][0];
    EXPECT_NE(r.out.find(rows[i][0]), std::string::npos);
  }
  std::sort(expected.begin(), expected.end());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, expected);
}

TEST_F(CliTest, GradcheckFaultInjectionNamesTheGroup) {
  const auto cfg = write("c.ini", "[gradcheck]\nn_configs = 1\n");
  const CliRun r = dyn4d({"gradcheck", "--config", cfg, "--inject-fault", "layer1.frame.wv", "--out", path("o")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("FAIL layer1.frame.wv"), std::string::npos) << r.out;
  for (const auto& row : read_csv(path("o/gradcheck.csv"))) {
    if (row[0] == "group") continue;
    EXPECT_EQ(row[3], row[0] == "layer1.frame.wv" ? "0" : "1") << row[0];
  }
  EXPECT_EQ(dyn4d({"gradcheck", "--config", cfg, "--inject-fault", "no.such.group", "--out", path("p")}).code, 1);
}

// --- replay ------------------------------------------------------------------

TEST_F(CliTest, ReplayReproducesAndDetectsChanges) {
  const auto gt = write("gt.txt", trajectory_text(fixture_trajectory(6, 12)));
  Trajectory shifted = fixture_trajectory(6, 12);
  for (auto& p : shifted.poses) p.translation.x() += 0.1;
  const auto pred = write("pred.txt", trajectory_text(shifted));
  ASSERT_EQ(dyn4d({"eval-traj", pred, gt, "--out", path("o")}).code, 0);
  CliRun r = dyn4d({"replay", "--manifest", path("o/manifest.json")});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(slurp(path("o/traj_metrics.csv")), slurp(path("o/replay/traj_metrics.csv")));
  const RunManifest m = read_manifest(path("o/manifest.json"));
  ASSERT_EQ(m.inputs.size(), 2U);
  EXPECT_EQ(m.inputs[1].sha256, sha256_file(gt));

  // Tampered recorded digest: outputs no longer match.
  std::string text = slurp(path("o/manifest.json"));
  const std::string digest = m.outputs[0].sha256;
  text.replace(text.find(digest), digest.size(), std::string(digest.size(), '0'));
  write("o/manifest.json", text);
  r = dyn4d({"replay", "--manifest", path("o/manifest.json"), "--out", path("r2")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("DIFFERS"), std::string::npos);

  // Changed input file: refuse to replay.
  write("gt.txt", trajectory_text(fixture_trajectory(7, 12)));
  r = dyn4d({"replay", "--manifest", path("o/manifest.json"), "--out", path("r3")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("changed"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace dyn4d::cli
