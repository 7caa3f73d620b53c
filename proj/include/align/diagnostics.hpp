#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "align/box.hpp"
#include "align/detection.hpp"

namespace align {

// Misalignment diagnostics: recall of best-regressed samples among the
// highest-confidence ones, confidence/IoU correlation and density maps.

inline double confidence_of(const Prediction& p) {
  double best = 0.0;
  for (double s : p.scores) best = std::max(best, s);
  return best;
}

inline double max_iou_over_gts(const Prediction& p, const Scene& gts) {
  double best = 0.0;
  for (const auto& gt : gts.objects) best = std::max(best, iou(p.box, gt.box));
  return best;
}

// One BR sample per GT: the prediction with maximum IoU against it (ties go to
// the lower index). Returned as a deduplicated set.
inline std::set<int> br_sample_set(const PredictionSet& preds, const Scene& gts) {
  std::set<int> br;
  for (const auto& gt : gts.objects) {
    int best_idx = 0;
    double best_iou = -1.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double u = iou(preds[i].box, gt.box);
      if (u > best_iou) {
        best_iou = u;
        best_idx = static_cast<int>(i);
      }
    }
    br.insert(best_idx);
  }
  return br;
}

// Top-count predictions by max-class confidence, ties to the lower index.
inline std::vector<int> hc_sample_indices(const PredictionSet& preds, std::size_t count) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ca = confidence_of(preds[static_cast<std::size_t>(a)]);
    const double cb = confidence_of(preds[static_cast<std::size_t>(b)]);
    if (ca != cb) return ca > cb;
    return a < b;
  });
  order.resize(std::min(count, order.size()));
  return order;
}

struct BrRecallCounts {
  std::size_t hits = 0;
  std::size_t br_size = 0;
};

inline BrRecallCounts br_recall_counts(const PredictionSet& preds, const Scene& gts, int m) {
  if (gts.objects.empty()) throw std::invalid_argument("br_recall: empty scene");
  if (m < 1) throw std::invalid_argument("br_recall: m must be >= 1");
  if (preds.empty()) throw std::invalid_argument("br_recall: no predictions");
  const std::set<int> br = br_sample_set(preds, gts);
  const std::vector<int> hc =
      hc_sample_indices(preds, static_cast<std::size_t>(m) * gts.objects.size());
  BrRecallCounts out;
  out.br_size = br.size();
  for (int idx : hc) {
    if (br.count(idx)) ++out.hits;
  }
  return out;
}

// Fraction of BR samples covered by the top-(m*N) confident predictions.
inline double br_recall(const PredictionSet& preds, const Scene& gts, int m) {
  const BrRecallCounts c = br_recall_counts(preds, gts, m);
  return static_cast<double>(c.hits) / static_cast<double>(c.br_size);
}

// Sample Pearson correlation coefficient.
inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (xs[i] - mx) * (ys[i] - my);
    vx += (xs[i] - mx) * (xs[i] - mx);
    vy += (ys[i] - my) * (ys[i] - my);
  }
  if (vx == 0.0 || vy == 0.0) throw std::invalid_argument("pearson: degenerate variance");
  return cov / std::sqrt(vx * vy);
}

inline int bin_index(double v, int bins) {
  const double clamped = std::min(1.0, std::max(0.0, v));
  return std::min(bins - 1, static_cast<int>(clamped * bins));
}

struct Histogram {
  int bins = 0;
  std::vector<std::int64_t> counts;
};

inline Histogram histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
  Histogram h;
  h.bins = bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) ++h.counts[static_cast<std::size_t>(bin_index(v, bins))];
  return h;
}

// 2D counts over the uniform [0,1]^2 grid; confidences are scaled so their
// maximum lands at 1 before binning.
struct DensityMap {
  int bins = 0;
  std::vector<std::int64_t> counts;  // confidence-major: counts[cb * bins + ib]

  std::int64_t at(int conf_bin, int iou_bin) const {
    return counts[static_cast<std::size_t>(conf_bin * bins + iou_bin)];
  }
};

inline DensityMap density_map(const std::vector<double>& confidences,
                              const std::vector<double>& ious, int bins) {
  if (bins < 2) throw std::invalid_argument("density_map: bins must be >= 2");
  if (confidences.empty() || confidences.size() != ious.size()) {
    throw std::invalid_argument("density_map: empty or mismatched inputs");
  }
  const double cmax = *std::max_element(confidences.begin(), confidences.end());
  if (!(cmax > 0.0)) throw std::invalid_argument("density_map: all confidences zero");
  DensityMap d;
  d.bins = bins;
  d.counts.assign(static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const int cb = bin_index(confidences[i] / cmax, bins);
    const int ib = bin_index(ious[i], bins);
    ++d.counts[static_cast<std::size_t>(cb * bins + ib)];
  }
  return d;
}

struct AlignmentReport {
  std::map<int, double> br_recall_at;
  double pearson_r = 0.0;
  DensityMap density;
  Histogram hc_iou_hist;
  Histogram br_iou_hist;
};

// Scene-level report from raw prediction sets: confidence/IoU pairs are taken
// per prediction against its best-overlapping GT (class-agnostic). HC samples
// for the histogram use m = 1.
inline AlignmentReport alignment_report(const PredictionSet& preds, const Scene& gts, int bins,
                                        int m_max = 0) {
  if (gts.objects.empty()) throw std::invalid_argument("alignment_report: empty scene");
  const std::size_t n_gt = gts.objects.size();
  if (m_max <= 0) {
    m_max = static_cast<int>((preds.size() + n_gt - 1) / n_gt);
  }
  AlignmentReport rep;
  for (int m = 1; m <= m_max; ++m) rep.br_recall_at[m] = br_recall(preds, gts, m);

  std::vector<double> confs, ious;
  for (const auto& p : preds) {
    confs.push_back(confidence_of(p));
    ious.push_back(max_iou_over_gts(p, gts));
  }
  rep.pearson_r = pearson(confs, ious);
  rep.density = density_map(confs, ious, bins);

  std::vector<double> hc_ious;
  for (int idx : hc_sample_indices(preds, n_gt)) {
    hc_ious.push_back(ious[static_cast<std::size_t>(idx)]);
  }
  std::vector<double> br_ious;
  for (const auto& gt : gts.objects) {
    double best = 0.0;
    for (const auto& p : preds) best = std::max(best, iou(p.box, gt.box));
    br_ious.push_back(best);
  }
  rep.hc_iou_hist = histogram(hc_ious, bins);
  rep.br_iou_hist = histogram(br_ious, bins);
  return rep;
}

// Dataset aggregation. Mean mode averages per-scene recalls; pooled mode sums
// hits and BR sizes over scenes before dividing.
inline double dataset_br_recall(const std::vector<const PredictionSet*>& preds,
                                const std::vector<const Scene*>& scenes, int m, bool pooled) {
  if (preds.size() != scenes.size() || preds.empty()) {
    throw std::invalid_argument("dataset_br_recall: empty or mismatched dataset");
  }
  if (pooled) {
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const BrRecallCounts c = br_recall_counts(*preds[i], *scenes[i], m);
      hits += c.hits;
      total += c.br_size;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += br_recall(*preds[i], *scenes[i], m);
  return sum / static_cast<double>(preds.size());
}

}  // namespace align
