#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "align/box.hpp"
#include "align/detection.hpp"

namespace align {

// Clamp bound for probabilities ahead of any logarithm.
inline constexpr double kProbEps = 1e-8;

inline double clamp_prob(double s) {
  return std::min(1.0 - kProbEps, std::max(kProbEps, s));
}

// Pair-wise matching cost weights. Defaults follow the usual DETR-family
// configuration (class 2.0, bbox 5.0, giou 2.0, focal alpha 0.25 / gamma 2.0).
struct CostParams {
  double lambda_class = 2.0;
  double lambda_bbox = 5.0;
  double lambda_giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const {
    if (lambda_class < 0 || lambda_bbox < 0 || lambda_giou < 0) {
      throw std::invalid_argument("CostParams: negative weight");
    }
    if (lambda_class + lambda_bbox + lambda_giou <= 0) {
      throw std::invalid_argument("CostParams: all weights zero");
    }
    if (!(focal_alpha > 0 && focal_alpha < 1) || focal_gamma < 0) {
      throw std::invalid_argument("CostParams: bad focal parameters");
    }
  }
};

class InfeasibleReplication : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The matching sigma. Each prediction index appears exactly once across
// pairs + unmatched; after GT replication the gt field is the original id and
// replica identifies the copy.
struct Assignment {
  struct Pair {
    int pred;
    int gt;
    int replica;
  };
  std::vector<Pair> pairs;
  std::vector<int> unmatched;
  double total_cost = 0.0;
};

using CostMatrix = std::vector<std::vector<double>>;

namespace detail {

inline void check_matrix(const CostMatrix& cost) {
  if (cost.empty() || cost[0].empty()) {
    throw std::invalid_argument("cost matrix must be non-empty");
  }
  const std::size_t cols = cost[0].size();
  for (const auto& row : cost) {
    if (row.size() != cols) throw std::invalid_argument("cost matrix must be rectangular");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("cost matrix has non-finite entry");
    }
  }
}

// Shortest-augmenting-path Hungarian with potentials, O(n^2 m), for n <= m.
// Returns col_of_row (size n), every row assigned. Costs may be negative.
inline std::vector<int> solve_rows_le_cols(const CostMatrix& a, std::size_t n,
                                           std::size_t m) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = static_cast<int>(i);
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = static_cast<std::size_t>(p[j0]);
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = static_cast<int>(j0);
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[static_cast<std::size_t>(p[j])] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = static_cast<std::size_t>(way[j0]);
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col_of_row[static_cast<std::size_t>(p[j]) - 1] = static_cast<int>(j) - 1;
  }
  return col_of_row;
}

inline Assignment assemble(const CostMatrix& cost, const std::vector<int>& gt_of_pred) {
  Assignment out;
  const int n_pred = static_cast<int>(cost.size());
  for (int i = 0; i < n_pred; ++i) {
    if (gt_of_pred[i] >= 0) {
      out.pairs.push_back({i, gt_of_pred[i], 0});
      out.total_cost += cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(gt_of_pred[i])];
    } else {
      out.unmatched.push_back(i);
    }
  }
  return out;
}

}  // namespace detail

// Exact minimum-cost bipartite assignment. Rows are predictions, columns are
// ground truths; whichever side is smaller is fully matched.
inline Assignment hungarian(const CostMatrix& cost) {
  detail::check_matrix(cost);
  const std::size_t n_pred = cost.size();
  const std::size_t n_gt = cost[0].size();

  std::vector<int> gt_of_pred(n_pred, -1);
  if (n_gt <= n_pred) {
    // Solve with GTs as rows so every GT gets a prediction.
    CostMatrix t(n_gt, std::vector<double>(n_pred));
    for (std::size_t i = 0; i < n_pred; ++i)
      for (std::size_t j = 0; j < n_gt; ++j) t[j][i] = cost[i][j];
    const std::vector<int> pred_of_gt = detail::solve_rows_le_cols(t, n_gt, n_pred);
    for (std::size_t j = 0; j < n_gt; ++j)
      gt_of_pred[static_cast<std::size_t>(pred_of_gt[j])] = static_cast<int>(j);
  } else {
    const std::vector<int> col = detail::solve_rows_le_cols(cost, n_pred, n_gt);
    for (std::size_t i = 0; i < n_pred; ++i) gt_of_pred[i] = col[i];
  }
  return detail::assemble(cost, gt_of_pred);
}

// Exhaustive oracle: minimum over all injective assignments of the smaller
// side into the larger. Sizes are capped; this exists to check hungarian().
inline Assignment brute_force_match(const CostMatrix& cost) {
  detail::check_matrix(cost);
  const int n_pred = static_cast<int>(cost.size());
  const int n_gt = static_cast<int>(cost[0].size());
  if (std::min(n_pred, n_gt) > 8) {
    throw std::invalid_argument("brute_force_match: min dimension exceeds 8");
  }

  const bool rows_small = n_pred <= n_gt;
  const int small = rows_small ? n_pred : n_gt;
  const int large = rows_small ? n_gt : n_pred;

  std::vector<int> pick(static_cast<std::size_t>(small), -1);
  std::vector<char> used(static_cast<std::size_t>(large), 0);
  std::vector<int> best(static_cast<std::size_t>(small), -1);
  double best_cost = std::numeric_limits<double>::infinity();

  auto entry = [&](int s, int l) {
    return rows_small ? cost[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]
                      : cost[static_cast<std::size_t>(l)][static_cast<std::size_t>(s)];
  };
  // Depth-first over injective maps; first-found wins ties, so the result is
  // deterministic for a fixed input.
  auto dfs = [&](auto&& self, int s, double acc) -> void {
    if (s == small) {
      if (acc < best_cost) {
        best_cost = acc;
        best = pick;
      }
      return;
    }
    for (int l = 0; l < large; ++l) {
      if (used[static_cast<std::size_t>(l)]) continue;
      used[static_cast<std::size_t>(l)] = 1;
      pick[static_cast<std::size_t>(s)] = l;
      self(self, s + 1, acc + entry(s, l));
      used[static_cast<std::size_t>(l)] = 0;
    }
  };
  dfs(dfs, 0, 0.0);

  std::vector<int> gt_of_pred(static_cast<std::size_t>(n_pred), -1);
  for (int s = 0; s < small; ++s) {
    if (rows_small) {
      gt_of_pred[static_cast<std::size_t>(s)] = best[static_cast<std::size_t>(s)];
    } else {
      gt_of_pred[static_cast<std::size_t>(best[static_cast<std::size_t>(s)])] = s;
    }
  }
  return detail::assemble(cost, gt_of_pred);
}

// Focal-style classification cost on an activated probability:
//   alpha*(1-s)^gamma*(-log(s+eps)) - (1-alpha)*s^gamma*(-log(1-s+eps)).
inline double focal_class_cost(double s, const CostParams& params) {
  const double pos = params.focal_alpha * std::pow(1.0 - s, params.focal_gamma) *
                     (-std::log(s + kProbEps));
  const double neg = (1.0 - params.focal_alpha) * std::pow(s, params.focal_gamma) *
                     (-std::log(1.0 - s + kProbEps));
  return pos - neg;
}

// Entry (i,j): lambda_class*C_cls(s_i[class_j]) + lambda_bbox*L1 + lambda_giou*(1-giou).
inline CostMatrix cost_matrix(const PredictionSet& preds, const Scene& gts,
                              const CostParams& params) {
  params.validate();
  validate_scene(gts);
  validate_predictions(preds, gts.n_classes);
  if (preds.empty() || gts.objects.empty()) {
    throw std::invalid_argument("cost_matrix: need at least one prediction and one GT");
  }

  CostMatrix cost(preds.size(), std::vector<double>(gts.objects.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.objects.size(); ++j) {
      const auto& gt = gts.objects[j];
      const double s = clamp_prob(preds[i].scores[static_cast<std::size_t>(gt.class_id)]);
      cost[i][j] = params.lambda_class * focal_class_cost(s, params) +
                   params.lambda_bbox * l1_distance(preds[i].box, gt.box) +
                   params.lambda_giou * (1.0 - giou(preds[i].box, gt.box));
    }
  }
  return cost;
}

// One-to-one assignment of Hungarian matching. The quality target never enters
// the cost; matching is the plain DETR rule.
inline Assignment match_one_to_one(const PredictionSet& preds, const Scene& gts,
                                   const CostParams& params) {
  if (gts.objects.empty()) {
    Assignment out;
    for (int i = 0; i < static_cast<int>(preds.size()); ++i) out.unmatched.push_back(i);
    return out;
  }
  return hungarian(cost_matrix(preds, gts, params));
}

// Many-to-one by GT replication: the GT list is copied k times, Hungarian runs
// on the replicated matrix, and column c maps back to (c % n_gt, c / n_gt).
inline Assignment match_many_to_one(const PredictionSet& preds, const Scene& gts,
                                    const CostParams& params, int k) {
  if (k < 1) throw std::invalid_argument("match_many_to_one: k must be >= 1");
  const int n_gt = static_cast<int>(gts.objects.size());
  if (n_gt == 0) return match_one_to_one(preds, gts, params);
  const int n_pred = static_cast<int>(preds.size());
  if (k * n_gt > n_pred) {
    throw InfeasibleReplication("match_many_to_one: k*n_gt = " + std::to_string(k * n_gt) +
                                " exceeds n_pred = " + std::to_string(n_pred));
  }

  const CostMatrix base = cost_matrix(preds, gts, params);
  CostMatrix repl(static_cast<std::size_t>(n_pred),
                  std::vector<double>(static_cast<std::size_t>(k * n_gt)));
  for (int i = 0; i < n_pred; ++i)
    for (int c = 0; c < k * n_gt; ++c)
      repl[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
          base[static_cast<std::size_t>(i)][static_cast<std::size_t>(c % n_gt)];

  Assignment out = hungarian(repl);
  for (auto& pair : out.pairs) {
    pair.replica = pair.gt / n_gt;
    pair.gt = pair.gt % n_gt;
  }
  return out;
}

}  // namespace align
