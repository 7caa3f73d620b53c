#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "align/criterion.hpp"
#include "align/random.hpp"

namespace align {

struct GradCheckOptions {
  double tol = 1e-4;
  double logit_step = 1e-5;
  double box_step = 1e-6;
  // Relative error uses max(denom_floor, |analytic|, |fd|) as denominator, so
  // near-zero components degrade to an absolute check.
  double denom_floor = 1e-2;
  // Documented non-smooth exclusions: L1/GIoU branch points in box space and
  // the |s-t| kink of QFL with gamma 1.
  double box_kink_margin = 1e-5;
  double score_kink_margin = 1e-4;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t n_checked = 0;
  std::size_t n_skipped = 0;
  std::string worst;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of an analytic gradient. Parameters flagged in
// `skip` sit within a kink margin of a non-smooth point and are excluded.
inline GradCheckReport gradcheck(
    const std::function<double(const std::vector<double>&)>& loss_fn,
    const std::vector<double>& params, const std::vector<double>& analytic,
    const std::vector<double>& steps, const std::vector<char>& skip,
    const GradCheckOptions& opts = {}) {
  if (params.size() != analytic.size() || params.size() != steps.size() ||
      params.size() != skip.size()) {
    throw std::invalid_argument("gradcheck: size mismatch");
  }
  GradCheckReport report;
  std::vector<double> probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (skip[i]) {
      ++report.n_skipped;
      continue;
    }
    const double h = steps[i];
    probe[i] = params[i] + h;
    const double up = loss_fn(probe);
    probe[i] = params[i] - h;
    const double down = loss_fn(probe);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("gradcheck: non-finite loss at probe point");
    }
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max(opts.denom_floor, std::max(std::abs(analytic[i]), std::abs(fd)));
    const double rel = std::abs(analytic[i] - fd) / denom;
    ++report.n_checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = "param " + std::to_string(i) + ": analytic=" + std::to_string(analytic[i]) +
                     " fd=" + std::to_string(fd);
    }
  }
  return report;
}

namespace detail {

// Kink screens. A box coordinate is skipped when the finite-difference probe
// could cross an L1 sign change, a corner max/min switch, or an intersection
// that degenerates.
inline void flag_box_kinks(const Box& pb, const Box& gb, double margin, char* coord_skip) {
  const CornerBox a = to_corners(pb);
  const CornerBox b = to_corners(gb);
  const bool x_overlap_edge = std::abs(std::min(a.x2, b.x2) - std::max(a.x1, b.x1)) < margin;
  const bool y_overlap_edge = std::abs(std::min(a.y2, b.y2) - std::max(a.y1, b.y1)) < margin;
  const bool x_corner = std::abs(a.x1 - b.x1) < margin || std::abs(a.x2 - b.x2) < margin;
  const bool y_corner = std::abs(a.y1 - b.y1) < margin || std::abs(a.y2 - b.y2) < margin;
  const bool any_degenerate = x_overlap_edge || y_overlap_edge;
  const double d[4] = {pb.cx - gb.cx, pb.cy - gb.cy, pb.w - gb.w, pb.h - gb.h};
  for (int c = 0; c < 4; ++c) {
    if (std::abs(d[c]) < margin) coord_skip[c] = 1;
  }
  if (x_corner || any_degenerate) coord_skip[0] = coord_skip[2] = 1;
  if (y_corner || any_degenerate) coord_skip[1] = coord_skip[3] = 1;
}

}  // namespace detail

// Checks the full layer loss (classification + regression) for one prediction
// set against central differences. Matching and quality targets are frozen at
// the base point, mirroring how training treats them: the assignment is
// piecewise constant and t is detached.
inline GradCheckReport gradcheck_layer(const PredictionSet& preds, const Scene& gts,
                                       const CriterionConfig& cfg, int match_k,
                                       const GradCheckOptions& opts = {}) {
  const Assignment assignment = match_k <= 1
                                    ? match_one_to_one(preds, gts, cfg.cost)
                                    : match_many_to_one(preds, gts, cfg.cost, match_k);
  const LayerReport base = layer_loss_with_assignment(preds, gts, assignment, cfg);

  const int n_classes = gts.n_classes;
  const std::size_t n_pred = preds.size();
  const std::size_t n_logits = n_pred * static_cast<std::size_t>(n_classes);
  const std::size_t n_params = n_logits + n_pred * 4;

  std::vector<double> params(n_params), analytic(n_params), steps(n_params);
  std::vector<char> skip(n_params, 0);
  for (std::size_t i = 0; i < n_pred; ++i) {
    for (int c = 0; c < n_classes; ++c) {
      const std::size_t idx = i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(c);
      params[idx] = logit_of(clamp_prob(preds[i].scores[static_cast<std::size_t>(c)]));
      analytic[idx] = base.grads.d_logits[i][static_cast<std::size_t>(c)];
      steps[idx] = opts.logit_step;
    }
    const std::size_t b = n_logits + i * 4;
    const Box& box = preds[i].box;
    params[b] = box.cx;
    params[b + 1] = box.cy;
    params[b + 2] = box.w;
    params[b + 3] = box.h;
    for (int c = 0; c < 4; ++c) {
      analytic[b + static_cast<std::size_t>(c)] = base.grads.d_boxes[i][static_cast<std::size_t>(c)];
      steps[b + static_cast<std::size_t>(c)] = opts.box_step;
    }
  }

  // Non-smooth exclusions.
  const bool qfl_kink = cfg.variant.kind == VariantKind::kQfl && cfg.variant.qfl_gamma < 2.0;
  for (std::size_t p = 0; p < base.targets.size(); ++p) {
    const auto& tgt = base.targets[p];
    const auto& gt = gts.objects[static_cast<std::size_t>(tgt.gt)];
    if (qfl_kink) {
      const double s =
          clamp_prob(preds[static_cast<std::size_t>(tgt.pred)].scores[static_cast<std::size_t>(gt.class_id)]);
      if (std::abs(s - tgt.t) < opts.score_kink_margin) {
        skip[static_cast<std::size_t>(tgt.pred) * static_cast<std::size_t>(n_classes) +
             static_cast<std::size_t>(gt.class_id)] = 1;
      }
    }
    char coord_skip[4] = {0, 0, 0, 0};
    detail::flag_box_kinks(preds[static_cast<std::size_t>(tgt.pred)].box, gt.box,
                           opts.box_kink_margin, coord_skip);
    for (int c = 0; c < 4; ++c) {
      if (coord_skip[c]) skip[n_logits + static_cast<std::size_t>(tgt.pred) * 4 + static_cast<std::size_t>(c)] = 1;
    }
  }

  const std::vector<QualityTarget> frozen_targets = base.targets;
  std::vector<double> frozen_weights(frozen_targets.size());
  for (std::size_t i = 0; i < frozen_targets.size(); ++i) frozen_weights[i] = frozen_targets[i].w;

  auto loss_fn = [&](const std::vector<double>& x) -> double {
    PredictionSet probe = preds;
    for (std::size_t i = 0; i < n_pred; ++i) {
      for (int c = 0; c < n_classes; ++c) {
        probe[i].scores[static_cast<std::size_t>(c)] =
            sigmoid(x[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(c)]);
      }
      const std::size_t b = n_logits + i * 4;
      probe[i].box = Box(x[b], x[b + 1], x[b + 2], x[b + 3]);
    }
    const ClassificationResult cls =
        classification_loss_with_targets(probe, gts, assignment, frozen_targets, cfg);
    const RegressionResult reg =
        regression_loss_with_weights(probe, gts, assignment, frozen_weights, cfg);
    return cfg.loss_class * (cls.cls_pos + cls.cls_neg) + cfg.loss_bbox * reg.reg_l1 +
           cfg.loss_giou * reg.reg_giou;
  };

  return gradcheck(loss_fn, params, analytic, steps, skip, opts);
}

// Random scene/prediction sampler for gradient sweeps. Boxes stay away from
// the unit-square walls so probes keep Box invariants intact.
struct GradCheckScene {
  Scene scene;
  PredictionSet preds;
  int match_k = 1;
};

inline GradCheckScene make_gradcheck_scene(std::uint64_t seed, int n_pred = 10, int max_gt = 3,
                                           int n_classes = 5) {
  Rng rng(seed);
  GradCheckScene out;
  out.scene.n_classes = n_classes;
  const int n_gt = 1 + rng.uniform_int(max_gt);
  for (int g = 0; g < n_gt; ++g) {
    GroundTruth gt;
    gt.class_id = rng.uniform_int(n_classes);
    gt.box = Box(rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.1, 0.4),
                 rng.uniform(0.1, 0.4));
    out.scene.objects.push_back(gt);
  }
  for (int i = 0; i < n_pred; ++i) {
    Prediction p;
    p.scores.resize(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) p.scores[static_cast<std::size_t>(c)] = rng.uniform(0.05, 0.95);
    p.box = Box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.45),
                rng.uniform(0.08, 0.45));
    out.preds.push_back(p);
  }
  // Cycle k through feasible replication counts so prime weighting is hit.
  const int k_max = std::max(1, n_pred / n_gt);
  out.match_k = 1 + static_cast<int>(seed % 3) % k_max;
  return out;
}

// Sweep one variant over seeded random scenes; reports the worst case.
inline GradCheckReport gradcheck_variant(const LossVariant& variant, int n_scenes,
                                         std::uint64_t base_seed,
                                         const GradCheckOptions& opts = {},
                                         CriterionConfig cfg = {}) {
  cfg.variant = variant;
  GradCheckReport worst;
  for (int i = 0; i < n_scenes; ++i) {
    const GradCheckScene gc = make_gradcheck_scene(base_seed + static_cast<std::uint64_t>(i));
    cfg.k = gc.match_k;
    const GradCheckReport rep = gradcheck_layer(gc.preds, gc.scene, cfg, gc.match_k, opts);
    worst.n_checked += rep.n_checked;
    worst.n_skipped += rep.n_skipped;
    if (rep.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = rep.max_rel_err;
      worst.worst = "scene " + std::to_string(i) + ", " + rep.worst;
    }
  }
  return worst;
}

}  // namespace align
