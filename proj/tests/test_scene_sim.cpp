#include <gtest/gtest.h>

#include <sstream>

#include "dyn4d/error.hpp"
#include "dyn4d/rng.hpp"
#include "dyn4d/scene_sim.hpp"
#include "test_support.hpp"

namespace dyn4d {
namespace {

SceneConfig dynamic_config(std::uint64_t seed) {
  SceneConfig c;
  c.n_static = 60;
  c.n_dynamic = 40;
  c.motion_scale = 0.02;
  c.seed = seed;
  return c;
}

TEST(Rng, KnownXoshiroSequence) {
  // Reference values for SplitMix64 from seed 0 (public test vector).
  std::uint64_t state = 0;
  EXPECT_EQ(splitmix64(state), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(splitmix64(state), 0x6E789E6AA1B965F4ULL);
  Rng a(99);
  Rng b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsDifferAndMomentsAreSane) {
  Rng a = Rng::stream(1, 2, 3);
  Rng b = Rng::stream(1, 3, 2);
  EXPECT_NE(a.next_u64(), b.next_u64());
  Rng g(5);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = g.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
  for (int i = 0; i < 1000; ++i) {
    const double u = g.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(g.below(7), 7U);
  }
}

TEST(SceneSim, ConfigValidation) {
  SceneConfig c;
  c.n_static = 5;
  c.n_dynamic = 2;
  EXPECT_THROW((void)generate_scene(c), Error);
  c = SceneConfig{};
  c.n_frames = 1;
  EXPECT_THROW((void)generate_scene(c), Error);
  c = SceneConfig{};
  c.noise_px = -1.0;
  EXPECT_THROW((void)generate_scene(c), Error);
}

TEST(SceneSim, NoDynamicsMeansNoTracks) {
  const SyntheticScene s = generate_scene(testing::static_scene(3));
  EXPECT_TRUE(s.dynamic_tracks.empty());
  EXPECT_EQ(s.static_points.size(), 120U);
  EXPECT_EQ(s.n_frames(), 5);
}

TEST(SceneSim, DeterministicForSeed) {
  const SyntheticScene a = generate_scene(dynamic_config(11));
  const SyntheticScene b = generate_scene(dynamic_config(11));
  std::ostringstream sa, sb;
  write_scene(sa, a);
  write_scene(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  const SyntheticScene c = generate_scene(dynamic_config(12));
  std::ostringstream sc;
  write_scene(sc, c);
  EXPECT_NE(sa.str(), sc.str());
}

TEST(SceneSim, ConstantVelocityTracks) {
  SceneConfig cfg = dynamic_config(4);
  cfg.motion_scale = 0.07;
  const SyntheticScene s = generate_scene(cfg);
  ASSERT_EQ(s.dynamic_tracks.size(), 40U);
  for (const auto& track : s.dynamic_tracks) {
    ASSERT_EQ(track.size(), 5U);
    const Vec3 step = track[1] - track[0];
    EXPECT_NEAR(step.norm(), 0.07, 1e-12);
    for (std::size_t f = 1; f + 1 < track.size(); ++f) {
      EXPECT_LT(((track[f + 1] - track[f]) - step).norm(), 1e-12);
    }
  }
}

TEST(SceneSim, SinusoidalTracksAreBoundedAndMoving) {
  SceneConfig cfg = dynamic_config(5);
  cfg.motion_model = MotionModel::Sinusoidal;
  cfg.n_frames = 9;
  const SyntheticScene s = generate_scene(cfg);
  const double amplitude = cfg.motion_scale * cfg.sinusoid_period / (2.0 * M_PI);
  for (const auto& track : s.dynamic_tracks) {
    for (const auto& x : track) {
      EXPECT_LE((x - track[0]).norm(), 2.0 * amplitude + 1e-12);
    }
    EXPECT_GT((track[1] - track[0]).norm(), 0.0);
  }
}

TEST(SceneSim, CoherentMotionSharesDirection) {
  SceneConfig cfg = dynamic_config(6);
  cfg.coherent_motion = true;
  const SyntheticScene s = generate_scene(cfg);
  const Vec3 ref = s.dynamic_tracks[0][1] - s.dynamic_tracks[0][0];
  for (const auto& track : s.dynamic_tracks) {
    EXPECT_LT(((track[1] - track[0]) - ref).norm(), 1e-12);
  }
}

TEST(SceneSim, InfeasibleConfig) {
  SceneConfig cfg = testing::static_scene(7);
  // Cheirality margin larger than the whole scene: every sample is rejected.
  cfg.min_depth = 1e6;
  try {
    (void)generate_scene(cfg);
    FAIL() << "expected InfeasibleConfig";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleConfig);
  }
}

TEST(SceneSim, RenderRejectsSameFrame) {
  const SyntheticScene s = generate_scene(testing::static_scene(8));
  EXPECT_THROW((void)render_correspondences(s, 1, 1, 0.0, 0), Error);
  EXPECT_THROW((void)render_correspondences(s, 0, 9, 0.0, 0), Error);
}

TEST(SceneSim, StaticCorrespondencesSatisfyEpipolarConstraint) {
  const SyntheticScene s = generate_scene(dynamic_config(9));
  const FrameObservation obs = render_correspondences(s, 0, 4, 0.0, 1);
  const EssentialMatrix e = essential_from_pose(obs.relative_pose);
  int n_static = 0;
  for (const auto& c : obs.correspondences) {
    EXPECT_GT(c.depth_r, 0.0);
    EXPECT_GE(c.x_r.u, 0.0);
    EXPECT_LT(c.x_t.u, 640.0);
    if (!c.is_dynamic) {
      ++n_static;
      EXPECT_EQ(c.displacement.vector, Vec3::Zero());
      EXPECT_LT(std::abs(epipolar_residual(c.x_r, c.x_t, s.intrinsics, e)), 1e-10);
      const PixelHomogeneous re =
          rigid_reproject(c.x_r, c.depth_r, s.intrinsics, obs.relative_pose).normalized();
      EXPECT_LT(std::hypot(re.u - c.x_t.u, re.v - c.x_t.v), 1e-10);
    }
  }
  EXPECT_GT(n_static, 0);
}

TEST(SceneSim, DynamicCorrespondencesMatchDisplacementModel) {
  const SyntheticScene s = generate_scene(dynamic_config(10));
  const FrameObservation obs = render_correspondences(s, 0, 2, 0.0, 1);
  const EssentialMatrix e = essential_from_pose(obs.relative_pose);
  int checked = 0;
  for (const auto& c : obs.correspondences) {
    if (!c.is_dynamic) continue;
    const PixelHomogeneous re =
        dynamic_reproject(c.x_r, c.depth_r, s.intrinsics, obs.relative_pose, c.displacement)
            .normalized();
    EXPECT_LT(std::hypot(re.u - c.x_t.u, re.v - c.x_t.v), 1e-9);
    const double exact = epipolar_residual(c.x_r, c.x_t, s.intrinsics, e);
    const double approx =
        epipolar_residual_approx(c.x_r, c.depth_r, c.displacement, s.intrinsics, obs.relative_pose);
    EXPECT_GT(std::abs(exact), 0.0);
    if (std::abs(exact) > 1e-6) {
      EXPECT_LT(std::abs(exact - approx), 0.1 * std::abs(exact));
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(SceneSim, NoiseIsDeterministicPerSeed) {
  const SyntheticScene s = generate_scene(dynamic_config(13));
  const FrameObservation a = render_correspondences(s, 0, 3, 0.5, 77);
  const FrameObservation b = render_correspondences(s, 0, 3, 0.5, 77);
  const FrameObservation c = render_correspondences(s, 0, 3, 0.5, 78);
  std::ostringstream sa, sb, sc;
  write_correspondences(sa, a);
  write_correspondences(sb, b);
  write_correspondences(sc, c);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(sa.str(), sc.str());
}

TEST(SceneSim, EmptyObservation) {
  SceneConfig cfg = testing::static_scene(14, 8);
  cfg.image_width = 20;
  cfg.image_height = 20;
  const SyntheticScene s = generate_scene(cfg);
  try {
    (void)render_correspondences(s, 0, 1, 0.0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyObservation);
  }
}

TEST(SceneSim, DynamicRatio) {
  FrameObservation obs;
  for (int i = 0; i < 10; ++i) {
    Correspondence c;
    c.is_dynamic = i < 3;
    obs.correspondences.push_back(c);
  }
  EXPECT_DOUBLE_EQ(dynamic_ratio(obs), 0.3);
  for (auto& c : obs.correspondences) c.is_dynamic = false;
  EXPECT_EQ(dynamic_ratio(obs), 0.0);
  for (auto& c : obs.correspondences) c.is_dynamic = true;
  EXPECT_EQ(dynamic_ratio(obs), 1.0);
  EXPECT_THROW((void)dynamic_ratio(FrameObservation{}), Error);
}

TEST(SceneSim, CorrespondenceDumpRoundTrip) {
  const SyntheticScene s = generate_scene(dynamic_config(15));
  const FrameObservation obs = render_correspondences(s, 1, 3, 0.3, 2);
  std::stringstream io;
  io << "# frame_r frame_t u_r v_r u_t v_t depth_r is_dynamic mx my mz\n";
  write_correspondences(io, obs);
  const auto back = read_correspondences(io);
  ASSERT_EQ(back.size(), 1U);
  ASSERT_EQ(back[0].correspondences.size(), obs.correspondences.size());
  for (std::size_t i = 0; i < obs.correspondences.size(); ++i) {
    const auto& a = obs.correspondences[i];
    const auto& b = back[0].correspondences[i];
    EXPECT_EQ(a.x_r.u, b.x_r.u);
    EXPECT_EQ(a.x_t.v, b.x_t.v);
    EXPECT_EQ(a.depth_r, b.depth_r);
    EXPECT_EQ(a.is_dynamic, b.is_dynamic);
    EXPECT_EQ(a.displacement.vector, b.displacement.vector);
  }
  std::istringstream bad("0 1 1 2 3 4 5 1 0 0\n");
  try {
    (void)read_correspondences(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

}  // namespace
}  // namespace dyn4d
