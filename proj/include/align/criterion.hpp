#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "align/box.hpp"
#include "align/detection.hpp"
#include "align/matching.hpp"

namespace align {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit_of(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Loss variants
// ---------------------------------------------------------------------------

enum class VariantKind { kIaBce, kFocal, kQfl, kVfl, kTableA };

// Weight forms for the generic positive-cell loss -w_pos*log(s) - w_neg*log(1-s).
enum class WeightForm {
  kZero,
  kOne,
  kT,                 // t
  kOneMinusT,         // 1 - t
  kSquaredGap,        // (t - s)^2
  kOneMinusTTimesS2,  // (1 - t) * s^2
};

struct LossVariant {
  VariantKind kind = VariantKind::kIaBce;
  double qfl_gamma = 2.0;
  WeightForm pos_form = WeightForm::kT;
  WeightForm neg_form = WeightForm::kOneMinusT;

  static LossVariant ia_bce() { return {VariantKind::kIaBce, 2.0, WeightForm::kT, WeightForm::kOneMinusT}; }
  static LossVariant focal() { return {VariantKind::kFocal, 2.0, WeightForm::kOne, WeightForm::kZero}; }
  static LossVariant qfl(double gamma) { return {VariantKind::kQfl, gamma, WeightForm::kZero, WeightForm::kZero}; }
  static LossVariant vfl() { return {VariantKind::kVfl, 2.0, WeightForm::kZero, WeightForm::kZero}; }
  static LossVariant table_a(WeightForm pos, WeightForm neg) { return {VariantKind::kTableA, 2.0, pos, neg}; }

  // IA-BCE and the Table-A ablation rows score quality as s^alpha * u^(1-alpha);
  // the GFL/VFL family and the focal baseline rank purely by IoU.
  bool uses_geometric_quality() const {
    return kind == VariantKind::kIaBce || kind == VariantKind::kTableA;
  }
};

struct CriterionConfig {
  double alpha = 0.25;      // quality exponent: t = s^alpha * u^(1-alpha)
  double tau = 1.5;         // prime-sample temperature
  int k = 3;                // GT replication count for many-to-one layers
  double gamma = 2.0;       // background focal exponent
  double loss_class = 1.0;
  double loss_bbox = 5.0;
  double loss_giou = 2.0;
  bool prime_weighting = true;
  LossVariant variant = LossVariant::ia_bce();
  CostParams cost{};

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("CriterionConfig: alpha outside [0,1]");
    if (!(tau > 0.0)) throw std::invalid_argument("CriterionConfig: tau must be > 0");
    if (k < 1) throw std::invalid_argument("CriterionConfig: k must be >= 1");
    if (gamma < 0.0) throw std::invalid_argument("CriterionConfig: gamma must be >= 0");
    if (loss_class < 0.0 || loss_bbox < 0.0 || loss_giou < 0.0) {
      throw std::invalid_argument("CriterionConfig: negative loss weight");
    }
    if (variant.kind == VariantKind::kQfl && variant.qfl_gamma < 1.0) {
      throw std::invalid_argument("CriterionConfig: qfl gamma must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Quality targets and prime sample weights
// ---------------------------------------------------------------------------

// t = s^alpha * u^(1-alpha). Consumers treat t as a constant in all gradients.
// The alpha endpoints return the other factor bit-exactly.
inline double quality(double s, double u, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("quality: alpha outside [0,1]");
  s = clamp_prob(s);
  u = std::min(1.0, std::max(0.0, u));
  if (alpha == 0.0) return u;
  if (alpha == 1.0) return s;
  return std::pow(s, alpha) * std::pow(u, 1.0 - alpha);
}

// Ranks within one GT group: 0 for the largest t, ties broken by lower index.
inline std::vector<int> prime_ranks(const std::vector<double>& ts) {
  std::vector<int> order(ts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (ts[static_cast<std::size_t>(a)] != ts[static_cast<std::size_t>(b)])
      return ts[static_cast<std::size_t>(a)] > ts[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<int> rank(ts.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
  return rank;
}

// w_i = exp(-rank_i / tau), in input order. Rank 0 gets exactly 1.
inline std::vector<double> prime_weights(const std::vector<double>& ts, double tau) {
  if (ts.empty()) throw std::invalid_argument("prime_weights: empty group");
  if (!(tau > 0.0)) throw std::invalid_argument("prime_weights: tau must be > 0");
  const std::vector<int> ranks = prime_ranks(ts);
  std::vector<double> w(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    w[i] = ranks[i] == 0 ? 1.0 : std::exp(-static_cast<double>(ranks[i]) / tau);
  }
  return w;
}

struct QualityTarget {
  int pred = 0;
  int gt = 0;
  double t = 0.0;  // detached quality target
  int rank = 0;    // rank within the GT group, 0 = best
  double w = 1.0;  // prime sample weight
};

// Targets for each matched pair, in assignment order. The quality is evaluated
// once here and detached: nothing downstream differentiates through it.
inline std::vector<QualityTarget> compute_targets(const PredictionSet& preds,
                                                  const Scene& gts,
                                                  const Assignment& assignment,
                                                  const CriterionConfig& cfg) {
  cfg.validate();
  std::vector<QualityTarget> targets(assignment.pairs.size());
  for (std::size_t p = 0; p < assignment.pairs.size(); ++p) {
    const auto& pair = assignment.pairs[p];
    const auto& gt = gts.objects[static_cast<std::size_t>(pair.gt)];
    const double s = clamp_prob(
        preds[static_cast<std::size_t>(pair.pred)].scores[static_cast<std::size_t>(gt.class_id)]);
    const double u =
        std::min(1.0, std::max(0.0, iou(preds[static_cast<std::size_t>(pair.pred)].box, gt.box)));
    targets[p].pred = pair.pred;
    targets[p].gt = pair.gt;
    targets[p].t = cfg.variant.uses_geometric_quality() ? quality(s, u, cfg.alpha) : u;
  }

  // Rank inside each GT group (all replicas of one GT).
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t p = 0; p < targets.size(); ++p) groups[targets[p].gt].push_back(p);
  for (const auto& [gt_id, members] : groups) {
    (void)gt_id;
    std::vector<double> ts(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) ts[m] = targets[members[m]].t;
    const std::vector<int> ranks = prime_ranks(ts);
    for (std::size_t m = 0; m < members.size(); ++m) {
      auto& tgt = targets[members[m]];
      tgt.rank = ranks[m];
      tgt.w = (!cfg.prime_weighting || ranks[m] == 0)
                  ? 1.0
                  : std::exp(-static_cast<double>(ranks[m]) / cfg.tau);
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Per-cell losses with analytic logit gradients
// ---------------------------------------------------------------------------

struct CellValue {
  double loss = 0.0;
  double d_logit = 0.0;
};

// Positive cell of the matched prediction's own class. The generic form is
// -w_pos*log(s) - w_neg*log(1-s); gradients flow through any s-dependence of
// the weights but never through the detached t.
inline CellValue positive_cell(double s_raw, const QualityTarget& tgt,
                               const CriterionConfig& cfg) {
  const double s = clamp_prob(s_raw);
  const double t = tgt.t;
  const double log_s = std::log(s);
  const double log_1ms = std::log(1.0 - s);
  CellValue out;

  switch (cfg.variant.kind) {
    case VariantKind::kIaBce: {
      // Soft-target BCE with target w*t; d/dlogit is exactly s - w*t.
      const double target = tgt.w * t;
      out.loss = -target * log_s - (1.0 - target) * log_1ms;
      out.d_logit = s - target;
      return out;
    }
    case VariantKind::kFocal: {
      // Hard target 1, alpha-balanced: 0.25*(1-s)^gamma * (-log s).
      constexpr double kFocalAlpha = 0.25;
      const double g = cfg.gamma;
      const double mod = std::pow(1.0 - s, g);
      out.loss = kFocalAlpha * mod * (-log_s);
      const double d_ds =
          kFocalAlpha * (g * std::pow(1.0 - s, g - 1.0) * log_s - mod / s);
      out.d_logit = s * (1.0 - s) * d_ds;
      return out;
    }
    case VariantKind::kQfl: {
      const double g = cfg.variant.qfl_gamma;
      const double gap = std::abs(s - t);
      const double f = std::pow(gap, g);
      const double df_ds =
          gap > 0.0 ? g * std::pow(gap, g - 1.0) * (s > t ? 1.0 : -1.0) : 0.0;
      out.loss = -f * t * log_s - f * (1.0 - t) * log_1ms;
      const double d_ds = -df_ds * t * log_s - f * t / s - df_ds * (1.0 - t) * log_1ms +
                          f * (1.0 - t) / (1.0 - s);
      out.d_logit = s * (1.0 - s) * d_ds;
      return out;
    }
    case VariantKind::kVfl: {
      out.loss = -t * t * log_s - t * (1.0 - t) * log_1ms;
      out.d_logit = t * (s - t);
      return out;
    }
    case VariantKind::kTableA: {
      auto form = [&](WeightForm wf, double& value, double& d_ds) {
        switch (wf) {
          case WeightForm::kZero: value = 0.0; d_ds = 0.0; break;
          case WeightForm::kOne: value = 1.0; d_ds = 0.0; break;
          case WeightForm::kT: value = t; d_ds = 0.0; break;
          case WeightForm::kOneMinusT: value = 1.0 - t; d_ds = 0.0; break;
          case WeightForm::kSquaredGap: value = (t - s) * (t - s); d_ds = -2.0 * (t - s); break;
          case WeightForm::kOneMinusTTimesS2: value = (1.0 - t) * s * s; d_ds = 2.0 * (1.0 - t) * s; break;
        }
      };
      double wp = 0.0, dwp = 0.0, wn = 0.0, dwn = 0.0;
      form(cfg.variant.pos_form, wp, dwp);
      form(cfg.variant.neg_form, wn, dwn);
      out.loss = -wp * log_s - wn * log_1ms;
      const double d_ds = -dwp * log_s - wp / s - dwn * log_1ms + wn / (1.0 - s);
      out.d_logit = s * (1.0 - s) * d_ds;
      return out;
    }
  }
  throw std::logic_error("positive_cell: unknown variant");
}

// Background cell: s^gamma * (-log(1-s)), the hard-negative mining term.
inline CellValue background_cell(double s_raw, double gamma) {
  const double s = clamp_prob(s_raw);
  CellValue out;
  const double neg_log = -std::log(1.0 - s);
  const double mod = std::pow(s, gamma);
  out.loss = mod * neg_log;
  const double d_ds = gamma * std::pow(s, gamma - 1.0) * neg_log + mod / (1.0 - s);
  out.d_logit = s * (1.0 - s) * d_ds;
  return out;
}

inline double background_gamma(const CriterionConfig& cfg) {
  return cfg.variant.kind == VariantKind::kQfl ? cfg.variant.qfl_gamma : cfg.gamma;
}

// ---------------------------------------------------------------------------
// Layer losses
// ---------------------------------------------------------------------------

struct LayerTerms {
  double cls_pos = 0.0;
  double cls_neg = 0.0;
  double reg_l1 = 0.0;
  double reg_giou = 0.0;
  int n_pos = 0;
};

struct LayerGrads {
  std::vector<std::vector<double>> d_logits;      // [pred][class]
  std::vector<std::array<double, 4>> d_boxes;     // [pred][cx,cy,w,h]
};

struct ClassificationResult {
  double cls_pos = 0.0;
  double cls_neg = 0.0;
  std::vector<std::vector<double>> d_logits;
};

struct RegressionResult {
  double reg_l1 = 0.0;
  double reg_giou = 0.0;
  std::vector<std::array<double, 4>> d_boxes;
};

namespace detail {

inline void check_targets(const std::vector<QualityTarget>& targets,
                          const Assignment& assignment) {
  if (targets.size() != assignment.pairs.size()) {
    throw std::invalid_argument("targets do not match assignment");
  }
  for (const auto& tgt : targets) {
    if (!(tgt.t >= 0.0 && tgt.t <= 1.0)) {
      throw std::invalid_argument("quality target outside [0,1]: " + std::to_string(tgt.t));
    }
    if (!(tgt.w > 0.0 && tgt.w <= 1.0)) {
      throw std::invalid_argument("prime weight outside (0,1]: " + std::to_string(tgt.w));
    }
  }
}

}  // namespace detail

// Classification loss for one layer with the targets held fixed. All cells of
// every prediction contribute: the matched prediction's own class uses the
// variant's positive form, every other (prediction, class) cell is mined as
// background. Sums are divided by N_gt; gradients include loss_class.
inline ClassificationResult classification_loss_with_targets(
    const PredictionSet& preds, const Scene& gts, const Assignment& assignment,
    const std::vector<QualityTarget>& targets, const CriterionConfig& cfg) {
  detail::check_targets(targets, assignment);
  const int n_classes = gts.n_classes;
  const double norm = static_cast<double>(std::max<std::size_t>(1, gts.objects.size()));
  const double bg_gamma = background_gamma(cfg);

  // pred -> target index (one matched class per prediction at most)
  std::vector<int> target_of_pred(preds.size(), -1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    target_of_pred[static_cast<std::size_t>(targets[i].pred)] = static_cast<int>(i);
  }

  ClassificationResult out;
  out.d_logits.assign(preds.size(), std::vector<double>(static_cast<std::size_t>(n_classes), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int ti = target_of_pred[i];
    const int pos_class =
        ti >= 0 ? gts.objects[static_cast<std::size_t>(targets[static_cast<std::size_t>(ti)].gt)].class_id : -1;
    for (int c = 0; c < n_classes; ++c) {
      const double s = preds[i].scores[static_cast<std::size_t>(c)];
      CellValue cell;
      if (c == pos_class) {
        cell = positive_cell(s, targets[static_cast<std::size_t>(ti)], cfg);
        out.cls_pos += cell.loss / norm;
      } else {
        cell = background_cell(s, bg_gamma);
        out.cls_neg += cell.loss / norm;
      }
      out.d_logits[i][static_cast<std::size_t>(c)] = cfg.loss_class * cell.d_logit / norm;
    }
  }
  return out;
}

// Weighted regression loss over matched pairs:
//   sum_i w_i * (loss_bbox * L1 + loss_giou * (1 - giou)) / N_gt.
inline RegressionResult regression_loss_with_weights(const PredictionSet& preds,
                                                     const Scene& gts,
                                                     const Assignment& assignment,
                                                     const std::vector<double>& weights,
                                                     const CriterionConfig& cfg) {
  if (weights.size() != assignment.pairs.size()) {
    throw std::invalid_argument("regression weights do not match assignment");
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, gts.objects.size()));

  RegressionResult out;
  out.d_boxes.assign(preds.size(), {0.0, 0.0, 0.0, 0.0});
  for (std::size_t p = 0; p < assignment.pairs.size(); ++p) {
    const auto& pair = assignment.pairs[p];
    const double w = weights[p];
    const Box& pb = preds[static_cast<std::size_t>(pair.pred)].box;
    const Box& gb = gts.objects[static_cast<std::size_t>(pair.gt)].box;

    out.reg_l1 += w * l1_distance(pb, gb) / norm;
    const GiouGrad gg = giou_with_grad(pb, gb);
    out.reg_giou += w * (1.0 - gg.value) / norm;

    const double d_pred[4] = {pb.cx - gb.cx, pb.cy - gb.cy, pb.w - gb.w, pb.h - gb.h};
    auto& db = out.d_boxes[static_cast<std::size_t>(pair.pred)];
    for (int c = 0; c < 4; ++c) {
      const double sign = d_pred[c] > 0.0 ? 1.0 : (d_pred[c] < 0.0 ? -1.0 : 0.0);
      db[static_cast<std::size_t>(c)] +=
          (cfg.loss_bbox * w * sign - cfg.loss_giou * w * gg.d_pred[static_cast<std::size_t>(c)]) / norm;
    }
  }
  return out;
}

struct LayerReport {
  Assignment assignment;
  std::vector<QualityTarget> targets;
  LayerTerms terms;
  LayerGrads grads;
};

struct LossReport {
  double total = 0.0;
  std::vector<LayerReport> layers;
};

inline double layer_total(const LayerTerms& t, const CriterionConfig& cfg) {
  return cfg.loss_class * (t.cls_pos + t.cls_neg) + cfg.loss_bbox * t.reg_l1 +
         cfg.loss_giou * t.reg_giou;
}

// Full per-layer evaluation given a fixed assignment (targets recomputed).
inline LayerReport layer_loss_with_assignment(const PredictionSet& preds, const Scene& gts,
                                              const Assignment& assignment,
                                              const CriterionConfig& cfg) {
  LayerReport rep;
  rep.assignment = assignment;
  rep.targets = compute_targets(preds, gts, assignment, cfg);

  const ClassificationResult cls =
      classification_loss_with_targets(preds, gts, assignment, rep.targets, cfg);
  std::vector<double> weights(rep.targets.size());
  for (std::size_t i = 0; i < rep.targets.size(); ++i) weights[i] = rep.targets[i].w;
  const RegressionResult reg =
      regression_loss_with_weights(preds, gts, assignment, weights, cfg);

  rep.terms.cls_pos = cls.cls_pos;
  rep.terms.cls_neg = cls.cls_neg;
  rep.terms.reg_l1 = reg.reg_l1;
  rep.terms.reg_giou = reg.reg_giou;
  rep.terms.n_pos = static_cast<int>(assignment.pairs.size());
  rep.grads.d_logits = cls.d_logits;
  rep.grads.d_boxes = reg.d_boxes;
  return rep;
}

// Spec-facing wrappers -------------------------------------------------------

inline ClassificationResult ia_bce_loss(const PredictionSet& preds, const Assignment& assignment,
                                        const Scene& gts, CriterionConfig cfg) {
  cfg.variant = LossVariant::ia_bce();
  const auto targets = compute_targets(preds, gts, assignment, cfg);
  return classification_loss_with_targets(preds, gts, assignment, targets, cfg);
}

inline ClassificationResult comparison_loss(const PredictionSet& preds, const Assignment& assignment,
                                            const Scene& gts, const LossVariant& variant,
                                            CriterionConfig cfg = {}) {
  cfg.variant = variant;
  const auto targets = compute_targets(preds, gts, assignment, cfg);
  return classification_loss_with_targets(preds, gts, assignment, targets, cfg);
}

inline RegressionResult regression_loss(const PredictionSet& preds, const Assignment& assignment,
                                        const Scene& gts, const std::vector<double>& weights,
                                        const CriterionConfig& cfg = {}) {
  return regression_loss_with_weights(preds, gts, assignment, weights, cfg);
}

// The mixed-matching total: many-to-one (k replicas) on every layer except the
// last, one-to-one on the last, each layer normalized by the original N_gt.
inline LossReport total_loss(const std::vector<PredictionSet>& layer_preds, const Scene& gts,
                             const CriterionConfig& cfg) {
  cfg.validate();
  if (layer_preds.empty()) throw std::invalid_argument("total_loss: need at least one layer");
  LossReport report;
  const std::size_t n_layers = layer_preds.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const bool last = l + 1 == n_layers;
    const Assignment assignment =
        last ? match_one_to_one(layer_preds[l], gts, cfg.cost)
             : match_many_to_one(layer_preds[l], gts, cfg.cost, cfg.k);
    LayerReport rep = layer_loss_with_assignment(layer_preds[l], gts, assignment, cfg);
    report.total += layer_total(rep.terms, cfg);
    report.layers.push_back(std::move(rep));
  }
  return report;
}

// Arm-independent evaluation loss used for convergence-speed comparisons:
// every layer matched one-to-one, matched pairs only (no background term),
// soft-target BCE at a fixed quality exponent plus the weighted box terms.
// Raw training totals are not comparable across replication counts k, since
// auxiliary positives carry an irreducible self-entropy floor; this metric is.
inline double one_to_one_matched_loss(const std::vector<PredictionSet>& layer_preds,
                                      const Scene& gts, const CriterionConfig& cfg) {
  constexpr double kEvalAlpha = 0.25;
  double total = 0.0;
  const double norm = static_cast<double>(std::max<std::size_t>(1, gts.objects.size()));
  for (const auto& preds : layer_preds) {
    const Assignment assignment = match_one_to_one(preds, gts, cfg.cost);
    for (const auto& pair : assignment.pairs) {
      const auto& gt = gts.objects[static_cast<std::size_t>(pair.gt)];
      const double s = clamp_prob(
          preds[static_cast<std::size_t>(pair.pred)].scores[static_cast<std::size_t>(gt.class_id)]);
      const double u = iou(preds[static_cast<std::size_t>(pair.pred)].box, gt.box);
      const double t = quality(s, u, kEvalAlpha);
      const double bce = -t * std::log(s) - (1.0 - t) * std::log(1.0 - s);
      total += (cfg.loss_class * bce +
                cfg.loss_bbox * l1_distance(preds[static_cast<std::size_t>(pair.pred)].box, gt.box) +
                cfg.loss_giou * (1.0 - giou(preds[static_cast<std::size_t>(pair.pred)].box, gt.box))) /
               norm;
    }
  }
  return total;
}

}  // namespace align
