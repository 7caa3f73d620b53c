#include <gtest/gtest.h>

#include <cmath>

#include "align/diagnostics.hpp"
#include "align/toytrain.hpp"

namespace {

using align::CriterionConfig;
using align::LossVariant;
using align::Scene;
using align::SceneSpec;
using align::TrainConfig;
using align::TrainTrace;

bool traces_identical(const TrainTrace& a, const TrainTrace& b) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto& x = a.steps[i];
    const auto& y = b.steps[i];
    const bool pearson_same =
        (std::isnan(x.pearson) && std::isnan(y.pearson)) || x.pearson == y.pearson;
    if (x.total != y.total || x.cls_pos != y.cls_pos || x.cls_neg != y.cls_neg ||
        x.reg_l1 != y.reg_l1 || x.reg_giou != y.reg_giou || x.eval_loss != y.eval_loss ||
        x.loc_deficit != y.loc_deficit || !pearson_same || x.br_recall1 != y.br_recall1) {
      return false;
    }
  }
  if (a.final_loss != b.final_loss || a.final_eval_loss != b.final_eval_loss) return false;
  for (std::size_t l = 0; l < a.final_layers.size(); ++l) {
    for (std::size_t q = 0; q < a.final_layers[l].size(); ++q) {
      const auto& p = a.final_layers[l][q];
      const auto& r = b.final_layers[l][q];
      if (p.scores != r.scores || p.box.cx != r.box.cx || p.box.cy != r.box.cy ||
          p.box.w != r.box.w || p.box.h != r.box.h) {
        return false;
      }
    }
  }
  return true;
}

TEST(GenerateScene, DeterministicForFixedSeed) {
  SceneSpec spec;
  spec.n_gt = 4;
  spec.seed = 12345;
  const Scene a = align::generate_scene(spec);
  const Scene b = align::generate_scene(spec);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].class_id, b.objects[i].class_id);
    EXPECT_EQ(a.objects[i].box.cx, b.objects[i].box.cx);
    EXPECT_EQ(a.objects[i].box.cy, b.objects[i].box.cy);
    EXPECT_EQ(a.objects[i].box.w, b.objects[i].box.w);
    EXPECT_EQ(a.objects[i].box.h, b.objects[i].box.h);
  }
}

TEST(GenerateScene, SingleGtInsideBounds) {
  SceneSpec spec;
  spec.n_gt = 1;
  spec.seed = 7;
  const Scene scene = align::generate_scene(spec);
  ASSERT_EQ(scene.objects.size(), 1u);
  const auto& box = scene.objects[0].box;
  EXPECT_GE(box.cx, spec.center_min);
  EXPECT_LE(box.cx, spec.center_max);
  EXPECT_GE(box.w, spec.size_min);
  EXPECT_LE(box.w, spec.size_max);
}

TEST(GenerateScene, TenThousandScenesWithinRangesAndOverlapCap) {
  SceneSpec spec;
  spec.n_gt = 3;
  for (int seed = 0; seed < 10000; ++seed) {
    spec.seed = static_cast<std::uint64_t>(seed);
    const Scene scene = align::generate_scene(spec);
    for (const auto& gt : scene.objects) {
      ASSERT_GE(gt.box.cx, spec.center_min);
      ASSERT_LE(gt.box.cx, spec.center_max);
      ASSERT_GE(gt.box.cy, spec.center_min);
      ASSERT_LE(gt.box.cy, spec.center_max);
      ASSERT_GE(gt.box.w, spec.size_min);
      ASSERT_LE(gt.box.w, spec.size_max);
      ASSERT_GE(gt.box.h, spec.size_min);
      ASSERT_LE(gt.box.h, spec.size_max);
      ASSERT_GE(gt.class_id, 0);
      ASSERT_LT(gt.class_id, spec.n_classes);
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j)
        ASSERT_LE(align::iou(scene.objects[i].box, scene.objects[j].box), 0.7);
  }
}

TEST(GenerateScene, BudgetExhaustionThrows) {
  // Degenerate range: every draw is the same box, so pairwise IoU is 1.
  SceneSpec spec;
  spec.n_gt = 2;
  spec.center_min = spec.center_max = 0.5;
  spec.size_min = spec.size_max = 0.4;
  EXPECT_THROW(align::generate_scene(spec), std::runtime_error);
}

TEST(GenerateScene, ValidatesSpec) {
  SceneSpec spec;
  spec.n_gt = 9;
  EXPECT_THROW(align::generate_scene(spec), std::invalid_argument);
  spec.n_gt = 0;
  EXPECT_THROW(align::generate_scene(spec), std::invalid_argument);
}

TrainConfig quick_config(int steps, int n_queries = 12) {
  TrainConfig cfg;
  cfg.n_queries = n_queries;
  cfg.steps = steps;
  cfg.seed = 99;
  return cfg;
}

TEST(Train, ZeroStepsYieldsInitialStateOnly) {
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 3;
  const Scene scene = align::generate_scene(spec);
  const TrainTrace trace = align::train({scene}, quick_config(0));
  EXPECT_TRUE(trace.steps.empty());
  EXPECT_EQ(trace.final_layers.size(), 3u);
  EXPECT_GT(trace.final_loss, 0.0);
}

TEST(Train, TraceLengthEqualsSteps) {
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 4;
  const Scene scene = align::generate_scene(spec);
  const TrainTrace trace = align::train({scene}, quick_config(25));
  EXPECT_EQ(trace.steps.size(), 25u);
}

TEST(Train, DeterministicTraces) {
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 5;
  const Scene scene = align::generate_scene(spec);
  const TrainTrace a = align::train({scene}, quick_config(120));
  const TrainTrace b = align::train({scene}, quick_config(120));
  EXPECT_TRUE(traces_identical(a, b));
}

TEST(Train, FeasibilityValidation) {
  SceneSpec spec;
  spec.n_gt = 5;
  spec.seed = 6;
  const Scene scene = align::generate_scene(spec);
  TrainConfig cfg = quick_config(5, 8);  // 8 < k*n_gt = 15
  EXPECT_THROW(align::train({scene}, cfg), align::InfeasibleReplication);
}

TEST(Train, SingleSceneConvergesToHighIou) {
  // 1 scene, 1 GT, 5 queries, IA-BCE, 2000 steps: the max-confidence final
  // prediction overlaps the GT at IoU >= 0.9.
  SceneSpec spec;
  spec.n_gt = 1;
  spec.seed = 21;
  const Scene scene = align::generate_scene(spec);
  TrainConfig cfg;
  cfg.n_queries = 5;
  cfg.steps = 2000;
  cfg.seed = 22;
  cfg.criterion.k = 3;
  const TrainTrace trace = align::train({scene}, cfg);
  const auto& last = trace.final_layers.back();
  std::size_t best = 0;
  for (std::size_t i = 1; i < last.size(); ++i) {
    if (align::confidence_of(last[i]) > align::confidence_of(last[best])) best = i;
  }
  EXPECT_GE(align::iou(last[best].box, scene.objects[0].box), 0.9);
}

TEST(Train, LossNonIncreasingOver200StepWindows) {
  // Smoke property: the total at the end of any 200-step window stays within
  // 5% of the window start.
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 31;
  const Scene scene = align::generate_scene(spec);
  TrainConfig cfg;
  cfg.steps = 1200;
  cfg.seed = 32;
  const TrainTrace trace = align::train({scene}, cfg);
  for (std::size_t t = 0; t + 200 < trace.steps.size(); ++t) {
    EXPECT_LE(trace.steps[t + 200].total, 1.05 * trace.steps[t].total)
        << "window starting at step " << t;
  }
}

TEST(Train, FocalTraceIgnoresAlpha) {
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 41;
  const Scene scene = align::generate_scene(spec);
  TrainConfig a = quick_config(150);
  a.criterion.variant = LossVariant::focal();
  a.criterion.alpha = 0.1;
  TrainConfig b = a;
  b.criterion.alpha = 0.9;
  EXPECT_TRUE(traces_identical(align::train({scene}, a), align::train({scene}, b)));
}

TEST(Train, TauInertAtKOne) {
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 43;
  const Scene scene = align::generate_scene(spec);
  TrainConfig a = quick_config(150);
  a.criterion.k = 1;
  a.criterion.tau = 1.5;
  TrainConfig b = a;
  b.criterion.tau = 1e9;
  EXPECT_TRUE(traces_identical(align::train({scene}, a), align::train({scene}, b)));
}

TEST(Train, MultiSceneTrainingRuns) {
  SceneSpec spec;
  spec.n_gt = 2;
  std::vector<Scene> scenes;
  for (int i = 0; i < 3; ++i) {
    spec.seed = 100 + static_cast<std::uint64_t>(i);
    scenes.push_back(align::generate_scene(spec));
  }
  const TrainTrace trace = align::train(scenes, quick_config(60));
  EXPECT_EQ(trace.steps.size(), 60u);
  EXPECT_TRUE(std::isfinite(trace.final_loss));
}

TEST(CompareVariants, ThreadCountDoesNotChangeResults) {
  SceneSpec spec;
  spec.n_gt = 2;
  std::vector<Scene> scenes;
  for (int i = 0; i < 2; ++i) {
    spec.seed = 200 + static_cast<std::uint64_t>(i);
    scenes.push_back(align::generate_scene(spec));
  }
  TrainConfig base = quick_config(80);
  std::vector<align::VariantArm> arms;
  arms.push_back({"ia", base.criterion});
  CriterionConfig focal = base.criterion;
  focal.variant = LossVariant::focal();
  arms.push_back({"focal", focal});

  const auto seq = align::compare_variants(scenes, base, arms, 1);
  const auto par = align::compare_variants(scenes, base, arms, 4);
  ASSERT_EQ(seq.arms.size(), par.arms.size());
  for (std::size_t a = 0; a < seq.arms.size(); ++a) {
    EXPECT_EQ(seq.arms[a].mean_final_loss, par.arms[a].mean_final_loss);
    EXPECT_EQ(seq.arms[a].mean_br_recall1, par.arms[a].mean_br_recall1);
    EXPECT_EQ(seq.arms[a].steps_to_threshold, par.arms[a].steps_to_threshold);
  }
}

TEST(CompareVariants, SharedSeedsAcrossArms) {
  // Two arms with identical criteria produce identical per-run results.
  SceneSpec spec;
  spec.n_gt = 2;
  spec.seed = 300;
  const Scene scene = align::generate_scene(spec);
  TrainConfig base = quick_config(50);
  std::vector<align::VariantArm> arms = {{"a", base.criterion}, {"b", base.criterion}};
  const auto result = align::compare_variants({scene}, base, arms, 1);
  EXPECT_EQ(result.arms[0].final_loss, result.arms[1].final_loss);
  EXPECT_EQ(result.arms[0].steps_to_threshold, result.arms[1].steps_to_threshold);
}

}  // namespace
