#include "rvt/data.hpp"
#include "rvt/evaluate.hpp"
#include "rvt/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace rvt;
namespace fs = std::filesystem;

namespace {

std::vector<Step> still_steps(std::size_t n) {
  std::vector<Step> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i].timestamp = static_cast<std::int64_t>(i);
  return s;
}

SyntheticTaskSpec light_spec(SyntheticTask task = SyntheticTask::Reach, std::uint64_t seed = 0) {
  SyntheticTaskSpec spec;
  spec.task = task;
  spec.seed = seed;
  spec.table_spacing = 0.05;
  spec.block_spacing = 0.02;
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Keyframes, ConstantTrajectoryHasOnlyFinalStep) {
  EXPECT_EQ(extract_keyframes(still_steps(5)), std::vector<std::size_t>{4});
  EXPECT_EQ(extract_keyframes(still_steps(1)), std::vector<std::size_t>{0});
  EXPECT_THROW(extract_keyframes({}), std::invalid_argument);
}

TEST(Keyframes, GripperToggleAndStillRuns) {
  std::vector<Step> s(12);
  for (std::size_t i = 0; i < s.size(); ++i) s[i].ee_translation = Vec3(0.01 * static_cast<double>(i), 0, 0);
  for (std::size_t i = 7; i < s.size(); ++i) s[i].gripper_open = false;
  EXPECT_EQ(extract_keyframes(s), (std::vector<std::size_t>{7, 11}));
  // steps 3..5 are still: the run of length 2 ends at step 5
  for (std::size_t i = 4; i < 6; ++i) s[i].ee_translation = s[3].ee_translation;
  EXPECT_EQ(extract_keyframes(s), (std::vector<std::size_t>{5, 7, 11}));
  // a single still step is not a pause
  std::vector<Step> t(6);
  for (std::size_t i = 0; i < t.size(); ++i) t[i].ee_translation = Vec3(0.01 * static_cast<double>(i), 0, 0);
  t[3].ee_translation = t[2].ee_translation;
  EXPECT_EQ(extract_keyframes(t), std::vector<std::size_t>{5});
}

TEST(Synthetic, ReachAndPickKeyframes) {
  const auto reach = gen_synthetic(light_spec(SyntheticTask::Reach), 3);
  const auto pick = gen_synthetic(light_spec(SyntheticTask::Pick), 3);
  for (const auto& ep : reach) {
    EXPECT_EQ(ep.keyframes, std::vector<std::size_t>{6});
    EXPECT_EQ(extract_keyframes(ep.steps), ep.keyframes);
    EXPECT_TRUE(ep.actions[0].gripper_open);
    EXPECT_EQ(ep.language.rfind("reach the ", 0), 0u);
  }
  for (const auto& ep : pick) {
    EXPECT_EQ(ep.keyframes, (std::vector<std::size_t>{6, 9}));
    EXPECT_EQ(extract_keyframes(ep.steps), ep.keyframes);
    EXPECT_FALSE(ep.actions[1].gripper_open);
    EXPECT_FALSE(ep.steps[ep.observation_index(1)].cloud.empty());
  }
}

TEST(Synthetic, TargetIsAboveNamedBlockCentroid) {
  const SyntheticTaskSpec spec = light_spec();
  std::mt19937_64 rng(spec.seed);
  const SyntheticScene scene = make_scene(spec, rng);
  const auto eps = gen_synthetic(spec, 1);
  EXPECT_NEAR((eps[0].actions[0].translation - (scene.block_centroids[0] + Vec3(0, 0, 0.05))).norm(), 0.0, 1e-9);
  EXPECT_NE(eps[0].language.find(scene.block_colors[0]), std::string::npos);
  // the target block's points average to the recorded centroid
  const Vec3 rgb = [&] {
    for (const auto& c : spec.colors)
      if (c.name == scene.block_colors[0]) return c.rgb;
    return Vec3(Vec3::Zero());
  }();
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < scene.cloud.size(); ++i)
    if (scene.cloud.colors[i] == rgb) sum += scene.cloud.positions[i], ++n;
  ASSERT_GT(n, 0u);
  EXPECT_NEAR((sum / static_cast<double>(n) - scene.block_centroids[0]).norm(), 0.0, 1e-9);
}

TEST(Synthetic, DeterministicInSeed) {
  const auto a = gen_synthetic(light_spec(SyntheticTask::Reach, 3), 4);
  const auto b = gen_synthetic(light_spec(SyntheticTask::Reach, 3), 4);
  const auto c = gen_synthetic(light_spec(SyntheticTask::Reach, 4), 4);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(a[e].steps[0].cloud.positions, b[e].steps[0].cloud.positions);
    EXPECT_EQ(a[e].language, b[e].language);
  }
  EXPECT_NE(a[0].actions[0].translation, c[0].actions[0].translation);
}

TEST(Synthetic, SceneFitsWorkspaceSoCropIsIdentity) {
  const auto eps = gen_synthetic(light_spec(), 2);
  for (const auto& ep : eps) {
    const PointCloud& c = ep.steps[0].cloud;
    EXPECT_EQ(crop_to_workspace(c, WorkspaceBox{}).size(), c.size());
  }
  SyntheticTaskSpec bad = light_spec();
  bad.table_z = -0.6;
  EXPECT_THROW(gen_synthetic(bad, 1), std::invalid_argument);
  bad = light_spec();
  bad.n_distractors = 8;
  EXPECT_THROW(gen_synthetic(bad, 1), std::invalid_argument);
  EXPECT_EQ(synthetic_task_from_string("pick"), SyntheticTask::Pick);
  EXPECT_THROW(synthetic_task_from_string("push"), std::invalid_argument);
}

TEST(Dataset, RoundTripIsBitwise) {
  const auto eps = gen_synthetic(light_spec(SyntheticTask::Pick, 1), 10);
  const fs::path dir = fresh_dir("rvt_ds_roundtrip");
  save_dataset(eps, dir.string());
  const auto back = load_dataset(dir.string());
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t e = 0; e < eps.size(); ++e) {
    EXPECT_EQ(back[e].language, eps[e].language);
    EXPECT_EQ(back[e].keyframes, eps[e].keyframes);
    ASSERT_EQ(back[e].steps.size(), eps[e].steps.size());
    for (std::size_t i = 0; i < eps[e].steps.size(); ++i) {
      const Step &x = eps[e].steps[i], &y = back[e].steps[i];
      EXPECT_EQ(x.cloud.positions, y.cloud.positions);
      EXPECT_EQ(x.cloud.colors, y.cloud.colors);
      EXPECT_EQ(x.gripper_open, y.gripper_open);
      EXPECT_EQ(x.ee_translation, y.ee_translation);
      EXPECT_EQ(x.ee_euler, y.ee_euler);
      EXPECT_EQ(x.timestamp, y.timestamp);
    }
    for (std::size_t k = 0; k < eps[e].actions.size(); ++k) {
      EXPECT_EQ(back[e].actions[k].translation, eps[e].actions[k].translation);
      EXPECT_EQ(back[e].actions[k].euler, eps[e].actions[k].euler);
      EXPECT_EQ(back[e].actions[k].gripper_open, eps[e].actions[k].gripper_open);
      EXPECT_EQ(back[e].actions[k].collision_allowed, eps[e].actions[k].collision_allowed);
    }
  }
  // saving again produces identical bytes
  const fs::path dir2 = fresh_dir("rvt_ds_roundtrip2");
  save_dataset(back, dir2.string());
  std::ifstream a(dir / "data.bin", std::ios::binary), b(dir2 / "data.bin", std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b), {}));
}

TEST(Dataset, EmptyDatasetRoundTrips) {
  const fs::path dir = fresh_dir("rvt_ds_empty");
  save_dataset({}, dir.string());
  EXPECT_TRUE(load_dataset(dir.string()).empty());
}

namespace {

DatasetErrorCode load_error(const fs::path& dir) {
  try {
    load_dataset(dir.string());
  } catch (const DatasetError& e) {
    return e.code();
  }
  return DatasetErrorCode{};
}

}  // namespace

TEST(Dataset, CorruptionIsDetected) {
  const auto eps = gen_synthetic(light_spec(), 3);
  const fs::path dir = fresh_dir("rvt_ds_corrupt");
  save_dataset(eps, dir.string());
  {
    std::fstream f(dir / "data.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(100);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(100);
    f.write(&c, 1);
  }
  EXPECT_EQ(load_error(dir), DatasetErrorCode::ChecksumMismatch);

  save_dataset(eps, dir.string());
  fs::resize_file(dir / "data.bin", fs::file_size(dir / "data.bin") - 10);
  EXPECT_EQ(load_error(dir), DatasetErrorCode::Truncated);

  save_dataset(eps, dir.string());
  {
    std::ifstream is(dir / "manifest.json");
    auto m = nlohmann::json::parse(is);
    m["version"] = 99;
    std::ofstream(dir / "manifest.json") << m.dump();
  }
  EXPECT_EQ(load_error(dir), DatasetErrorCode::VersionMismatch);

  std::ofstream(dir / "manifest.json") << "{not json";
  EXPECT_EQ(load_error(dir), DatasetErrorCode::Malformed);
  EXPECT_EQ(load_error(fresh_dir("rvt_ds_missing")), DatasetErrorCode::Io);
}

TEST(Evaluate, OracleScoresPerfectly) {
  const auto eps = gen_synthetic(light_spec(SyntheticTask::Pick), 4);
  const EvalMetrics m = score_predictions(oracle_predictions(eps), eps);
  EXPECT_EQ(m.keyframes, 8u);
  EXPECT_DOUBLE_EQ(m.translation, 1.0);
  EXPECT_DOUBLE_EQ(m.rotation, 1.0);
  EXPECT_DOUBLE_EQ(m.episode, 1.0);
  EXPECT_DOUBLE_EQ(m.mean_trans_error, 0.0);
  std::ostringstream os;
  write_metrics_tsv(m, os);
  EXPECT_NE(os.str().find("overall\t100.0"), std::string::npos);
}

TEST(Evaluate, ToleranceAndBinDistance) {
  const auto eps = gen_synthetic(light_spec(), 2);
  auto preds = oracle_predictions(eps);
  preds[0][0].translation += Vec3(0.02, 0.0, 0.0);
  preds[1][0].translation += Vec3(0.05, 0.0, 0.0);
  preds[1][0].euler.z() += 5.0;  // one bin off still counts
  EvalMetrics m = score_predictions(preds, eps);
  EXPECT_DOUBLE_EQ(m.translation, 0.5);
  EXPECT_DOUBLE_EQ(m.rotation, 1.0);
  EXPECT_DOUBLE_EQ(m.episode, 0.5);
  EvalOptions loose;
  loose.tol_trans = std::numeric_limits<double>::infinity();
  EXPECT_DOUBLE_EQ(score_predictions(preds, eps, loose).translation, 1.0);
  preds[1][0].euler.z() += 10.0;
  EXPECT_DOUBLE_EQ(score_predictions(preds, eps).rotation, 0.5);
  EXPECT_EQ(circular_bin_distance(0, 71, 72), 1u);
  EXPECT_EQ(circular_bin_distance(10, 46, 72), 36u);
  preds[0][0].gripper_open = false;
  EXPECT_DOUBLE_EQ(score_predictions(preds, eps).gripper, 0.5);
  EXPECT_THROW(score_predictions({}, eps), std::invalid_argument);
}

TEST(Evaluate, UntrainedModelRarelySucceeds) {
  RVTConfig c;
  c.views = 3;
  c.image_res = 20;
  c.patch_px = 10;
  c.d_model = 16;
  c.heads = 2;
  c.d_lang = 8;
  c.d_gripper = 4;
  c.max_lang_tokens = 8;
  const RvtModel<float> model(c);
  const auto eps = gen_synthetic(light_spec(SyntheticTask::Reach, 2), 10);
  const ViewSet views = cube_views(WorkspaceBox{}, ViewPreset::Cube3);
  const auto preds = predict_episodes(model, model.init(0), eps, views, WorkspaceBox{},
                                      TranslationGrid(WorkspaceBox{}, 20), LanguageProvider(8));
  const EvalMetrics m = score_predictions(preds, eps);
  EXPECT_LE(m.translation, 0.2);
  EXPECT_EQ(m.keyframes, 10u);
}
