#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "align/criterion.hpp"
#include "align/diagnostics.hpp"
#include "align/random.hpp"

namespace align {

// Desk-scale direct set prediction: L independent banks of per-query class
// logits and squashed box parameters stand in for L decoder layers. Training
// against total_loss exercises matching, IA-BCE, prime weighting and mixed
// matching end to end, with no autodiff framework anywhere.

struct SceneSpec {
  int n_gt = 1;
  int n_classes = 5;
  double center_min = 0.15;
  double center_max = 0.85;
  double size_min = 0.1;
  double size_max = 0.4;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_gt < 1 || n_gt > 8) throw std::invalid_argument("SceneSpec: n_gt outside [1,8]");
    if (n_classes < 1) throw std::invalid_argument("SceneSpec: n_classes must be >= 1");
    if (!(center_min >= 0.0 && center_max <= 1.0 && center_min <= center_max)) {
      throw std::invalid_argument("SceneSpec: bad center range");
    }
    if (!(size_min >= kMinBoxSize && size_max <= 1.0 && size_min <= size_max)) {
      throw std::invalid_argument("SceneSpec: bad size range");
    }
  }
};

// Deterministic for a fixed seed. GT boxes are resampled until pairwise IoU
// stays at or below 0.7; the shared budget is 1000 draws.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  scene.n_classes = spec.n_classes;
  int budget = 1000;
  while (static_cast<int>(scene.objects.size()) < spec.n_gt) {
    if (budget-- <= 0) {
      throw std::runtime_error("generate_scene: resampling budget of 1000 draws exhausted");
    }
    GroundTruth gt;
    gt.class_id = rng.uniform_int(spec.n_classes);
    gt.box = Box(rng.uniform(spec.center_min, spec.center_max),
                 rng.uniform(spec.center_min, spec.center_max),
                 rng.uniform(spec.size_min, spec.size_max),
                 rng.uniform(spec.size_min, spec.size_max));
    bool ok = true;
    for (const auto& other : scene.objects) {
      if (iou(gt.box, other.box) > 0.7) {
        ok = false;
        break;
      }
    }
    if (ok) scene.objects.push_back(gt);
  }
  return scene;
}

struct TrainConfig {
  int n_queries = 20;
  int layers = 3;
  int steps = 2000;
  double lr_logits = 0.05;
  double lr_box = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  CriterionConfig criterion{};
  std::uint64_t seed = 1;

  void validate() const {
    if (n_queries < 1) throw std::invalid_argument("TrainConfig: n_queries must be >= 1");
    if (layers < 1) throw std::invalid_argument("TrainConfig: layers must be >= 1");
    if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
    if (!(lr_logits > 0 && lr_box > 0)) throw std::invalid_argument("TrainConfig: bad step sizes");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
      throw std::invalid_argument("TrainConfig: bad moment parameters");
    }
    criterion.validate();
  }
};

// One trace row per optimization step, recorded before the update is applied.
struct StepStats {
  int step = 0;
  double total = 0.0;
  double cls_pos = 0.0;
  double cls_neg = 0.0;
  double reg_l1 = 0.0;
  double reg_giou = 0.0;
  double eval_loss = 0.0;    // one_to_one_matched_loss, comparable across arms
  double loc_deficit = 0.0;  // mean over layers/GTs of (1 - best IoU)
  double pearson = 0.0;      // primary matched pairs pooled over layers
  double br_recall1 = 0.0;   // mean over layers of br_recall(m=1)
};

struct TrainTrace {
  std::vector<StepStats> steps;
  std::vector<PredictionSet> final_layers;
  double final_loss = 0.0;
  double final_eval_loss = 0.0;
  double final_loc_deficit = 0.0;
  double final_pearson = 0.0;
  double final_br_recall1 = 0.0;
};

// How well each GT is covered by the best available prediction, averaged over
// layers: (1/L) sum_l (1/N) sum_g (1 - max_i iou(b_i, g)). Unlike the raw
// training total this is comparable across replication counts and variants,
// so convergence-speed thresholds are defined on it.
inline double localization_deficit(const std::vector<PredictionSet>& layer_preds,
                                   const Scene& scene) {
  if (scene.objects.empty()) return 0.0;
  double total = 0.0;
  for (const auto& preds : layer_preds) {
    for (const auto& gt : scene.objects) {
      double best = 0.0;
      for (const auto& p : preds) best = std::max(best, iou(p.box, gt.box));
      total += 1.0 - best;
    }
  }
  return total / (static_cast<double>(layer_preds.size()) *
                  static_cast<double>(scene.objects.size()));
}

namespace detail {

struct Bank {
  std::vector<std::vector<double>> logits, m_log, v_log;
  std::vector<std::array<double, 4>> boxp, m_box, v_box;
};

inline PredictionSet bank_predictions(const Bank& bank, int n_classes) {
  PredictionSet preds(bank.logits.size());
  for (std::size_t q = 0; q < bank.logits.size(); ++q) {
    preds[q].scores.resize(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
      preds[q].scores[static_cast<std::size_t>(c)] =
          clamp_prob(sigmoid(bank.logits[q][static_cast<std::size_t>(c)]));
    }
    const auto& bp = bank.boxp[q];
    preds[q].box = Box(sigmoid(bp[0]), sigmoid(bp[1]), std::max(kMinBoxSize, sigmoid(bp[2])),
                       std::max(kMinBoxSize, sigmoid(bp[3])));
  }
  return preds;
}

// Confidence/IoU pairs of the primary matched samples (rank 0 within each GT
// group), pooled over all layers. Auxiliary replicas carry deliberately
// suppressed targets, so they are training devices rather than output
// rankings; including them would measure the suppression, not the alignment.
inline void collect_matched_pairs(const std::vector<PredictionSet>& layer_preds,
                                  const Scene& scene, const LossReport& report,
                                  std::vector<double>& confs, std::vector<double>& ious) {
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    for (const auto& tgt : report.layers[l].targets) {
      if (tgt.rank != 0) continue;
      const auto& pred = layer_preds[l][static_cast<std::size_t>(tgt.pred)];
      const auto& gt = scene.objects[static_cast<std::size_t>(tgt.gt)];
      confs.push_back(confidence_of(pred));
      ious.push_back(iou(pred.box, gt.box));
    }
  }
}

inline double safe_pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  try {
    return pearson(xs, ys);
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace detail

// Full-batch training over the scene list. Matching is recomputed every step
// and treated as piecewise constant; gradients flow only through the loss
// terms. The trace is bit-reproducible for a fixed seed and config.
inline TrainTrace train(const std::vector<Scene>& scenes, const TrainConfig& cfg) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("train: need at least one scene");
  for (const auto& scene : scenes) {
    validate_scene(scene);
    if (cfg.criterion.k * static_cast<int>(scene.objects.size()) > cfg.n_queries) {
      throw InfeasibleReplication("train: n_queries < k * n_gt for a scene");
    }
  }
  const int n_classes = scenes.front().n_classes;
  for (const auto& scene : scenes) {
    if (scene.n_classes != n_classes) throw std::invalid_argument("train: inconsistent n_classes");
  }

  // Initialization: low-confidence logits, centered boxes pre-squash.
  Rng rng(cfg.seed);
  std::vector<detail::Bank> banks(static_cast<std::size_t>(cfg.layers));
  for (auto& bank : banks) {
    bank.logits.assign(static_cast<std::size_t>(cfg.n_queries),
                       std::vector<double>(static_cast<std::size_t>(n_classes), 0.0));
    bank.m_log = bank.v_log = bank.logits;
    bank.boxp.assign(static_cast<std::size_t>(cfg.n_queries), {0.0, 0.0, 0.0, 0.0});
    bank.m_box = bank.v_box = bank.boxp;
    for (auto& row : bank.logits)
      for (auto& v : row) v = rng.normal(-2.0, 0.1);
    for (auto& bp : bank.boxp)
      for (auto& v : bp) v = rng.normal(0.0, 0.5);
  }

  const double inv_scenes = 1.0 / static_cast<double>(scenes.size());
  TrainTrace trace;
  trace.steps.reserve(static_cast<std::size_t>(cfg.steps));

  auto evaluate = [&](bool want_grads, std::vector<detail::Bank>* grads, StepStats* stats) {
    std::vector<PredictionSet> layer_preds(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
      layer_preds[static_cast<std::size_t>(l)] =
          detail::bank_predictions(banks[static_cast<std::size_t>(l)], n_classes);
    }
    std::vector<double> confs, ious;
    double pearson_sum = 0.0;
    int pearson_scenes = 0;
    for (const auto& scene : scenes) {
      const LossReport rep = total_loss(layer_preds, scene, cfg.criterion);
      if (!std::isfinite(rep.total)) {
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(trace.steps.size()));
      }
      if (stats != nullptr) {
        stats->total += rep.total * inv_scenes;
        for (const auto& layer : rep.layers) {
          stats->cls_pos += layer.terms.cls_pos * inv_scenes;
          stats->cls_neg += layer.terms.cls_neg * inv_scenes;
          stats->reg_l1 += layer.terms.reg_l1 * inv_scenes;
          stats->reg_giou += layer.terms.reg_giou * inv_scenes;
        }
        stats->eval_loss += one_to_one_matched_loss(layer_preds, scene, cfg.criterion) * inv_scenes;
        stats->loc_deficit += localization_deficit(layer_preds, scene) * inv_scenes;
        confs.clear();
        ious.clear();
        detail::collect_matched_pairs(layer_preds, scene, rep, confs, ious);
        const double r = detail::safe_pearson(confs, ious);
        if (std::isfinite(r)) {
          pearson_sum += r;
          ++pearson_scenes;
        }
        double br = 0.0;
        for (int l = 0; l < cfg.layers; ++l) {
          br += br_recall(layer_preds[static_cast<std::size_t>(l)], scene, 1);
        }
        stats->br_recall1 += br / static_cast<double>(cfg.layers) * inv_scenes;
      }
      if (want_grads) {
        for (int l = 0; l < cfg.layers; ++l) {
          auto& g = (*grads)[static_cast<std::size_t>(l)];
          const auto& lr = rep.layers[static_cast<std::size_t>(l)];
          for (std::size_t q = 0; q < g.logits.size(); ++q) {
            for (std::size_t c = 0; c < g.logits[q].size(); ++c) {
              g.logits[q][c] += lr.grads.d_logits[q][c] * inv_scenes;
            }
            // Chain through the logistic squash of the box parameters.
            const auto& bp = banks[static_cast<std::size_t>(l)].boxp[q];
            for (int c = 0; c < 4; ++c) {
              const double sq = sigmoid(bp[static_cast<std::size_t>(c)]);
              g.boxp[q][static_cast<std::size_t>(c)] +=
                  lr.grads.d_boxes[q][static_cast<std::size_t>(c)] * sq * (1.0 - sq) * inv_scenes;
            }
          }
        }
      }
    }
    if (stats != nullptr) {
      stats->pearson = pearson_scenes > 0 ? pearson_sum / pearson_scenes
                                          : std::numeric_limits<double>::quiet_NaN();
    }
    return layer_preds;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<detail::Bank> grads(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
      auto& g = grads[static_cast<std::size_t>(l)];
      g.logits.assign(static_cast<std::size_t>(cfg.n_queries),
                      std::vector<double>(static_cast<std::size_t>(n_classes), 0.0));
      g.boxp.assign(static_cast<std::size_t>(cfg.n_queries), {0.0, 0.0, 0.0, 0.0});
    }
    StepStats stats;
    stats.step = step;
    evaluate(true, &grads, &stats);
    trace.steps.push_back(stats);

    // Adam with bias correction, separate step sizes for logits and boxes.
    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (int l = 0; l < cfg.layers; ++l) {
      auto& bank = banks[static_cast<std::size_t>(l)];
      const auto& g = grads[static_cast<std::size_t>(l)];
      for (std::size_t q = 0; q < bank.logits.size(); ++q) {
        for (std::size_t c = 0; c < bank.logits[q].size(); ++c) {
          double& m = bank.m_log[q][c];
          double& v = bank.v_log[q][c];
          m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.logits[q][c];
          v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.logits[q][c] * g.logits[q][c];
          bank.logits[q][c] -= cfg.lr_logits * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
        for (std::size_t c = 0; c < 4; ++c) {
          double& m = bank.m_box[q][c];
          double& v = bank.v_box[q][c];
          m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.boxp[q][c];
          v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.boxp[q][c] * g.boxp[q][c];
          bank.boxp[q][c] -= cfg.lr_box * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
      }
    }
  }

  StepStats final_stats;
  trace.final_layers = evaluate(false, nullptr, &final_stats);
  trace.final_loss = final_stats.total;
  trace.final_eval_loss = final_stats.eval_loss;
  trace.final_loc_deficit = final_stats.loc_deficit;
  trace.final_pearson = final_stats.pearson;
  trace.final_br_recall1 = final_stats.br_recall1;
  return trace;
}

// Mean br_recall(m=1) over the convergence phase of one run: trace rows up to
// the first step whose localization deficit is within `factor` of the run's
// final deficit. Past that point every matched box is numerically tied and
// "best-regressed" identification degenerates into coin flips, so alignment
// is measured while the detection problem is still being solved.
inline double convergence_phase_br_recall(const TrainTrace& trace, double factor = 1.25) {
  if (trace.steps.empty()) return trace.final_br_recall1;
  const double cutoff = factor * trace.final_loc_deficit;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : trace.steps) {
    sum += row.br_recall1;
    ++n;
    if (row.loc_deficit <= cutoff) break;
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Variant comparison
// ---------------------------------------------------------------------------

struct VariantArm {
  std::string name;
  CriterionConfig criterion;
};

struct ArmSummary {
  std::string name;
  std::vector<double> final_loss;
  std::vector<double> final_eval_loss;
  std::vector<double> final_loc_deficit;
  std::vector<double> final_pearson;      // final state, primary matched pairs
  std::vector<double> br_recall1;         // convergence-phase trajectory mean
  std::vector<double> final_br_recall1;
  std::vector<int> steps_to_threshold;
  double mean_final_loss = 0.0;
  double mean_pearson = 0.0;
  double se_pearson = 0.0;
  double mean_br_recall1 = 0.0;
  double se_br_recall1 = 0.0;
  double median_steps_to_threshold = 0.0;
};

struct ComparisonResult {
  std::vector<ArmSummary> arms;
  std::vector<std::vector<TrainTrace>> traces;  // [arm][run]
  std::vector<double> run_thresholds;
  double threshold_factor = 1.25;
};

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1)) /
         std::sqrt(static_cast<double>(v.size()));
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline int resolve_thread_cap(int requested, std::size_t n_runs) {
  int cap = requested;
  if (cap <= 0) {
    cap = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("ALIGN_CRITERION_THREADS")) {
      const int parsed = std::atoi(env);
      if (parsed >= 1) cap = parsed;
    }
  }
  cap = std::max(1, cap);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cap), n_runs));
}

// Trains every arm on every scene (one run per scene, shared seeds across
// arms) and reports per-arm alignment metrics plus steps-to-threshold. The
// per-run threshold is 1.25x the best eval loss any arm reached on that run.
// Runs are independent, so parallel execution is bit-identical to sequential.
inline ComparisonResult compare_variants(const std::vector<Scene>& scenes,
                                         const TrainConfig& base,
                                         const std::vector<VariantArm>& arms,
                                         int max_threads = 0) {
  if (arms.empty()) throw std::invalid_argument("compare_variants: no arms");
  if (scenes.empty()) throw std::invalid_argument("compare_variants: no scenes");
  const std::size_t n_arms = arms.size();
  const std::size_t n_runs = scenes.size();

  ComparisonResult result;
  result.traces.assign(n_arms, std::vector<TrainTrace>(n_runs));

  struct Job {
    std::size_t arm;
    std::size_t run;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < n_arms; ++a)
    for (std::size_t r = 0; r < n_runs; ++r) jobs.push_back({a, r});

  std::vector<std::exception_ptr> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      try {
        TrainConfig cfg = base;
        cfg.criterion = arms[jobs[j].arm].criterion;
        cfg.seed = base.seed + jobs[j].run;
        result.traces[jobs[j].arm][jobs[j].run] = train({scenes[jobs[j].run]}, cfg);
      } catch (...) {
        failures[j] = std::current_exception();
      }
    }
  };

  const int threads = resolve_thread_cap(max_threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  // Cross-arm threshold per run on the localization deficit, then the first
  // step at or below it per arm.
  result.run_thresholds.resize(n_runs);
  for (std::size_t r = 0; r < n_runs; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n_arms; ++a) {
      for (const auto& row : result.traces[a][r].steps) best = std::min(best, row.loc_deficit);
      best = std::min(best, result.traces[a][r].final_loc_deficit);
    }
    result.run_thresholds[r] = result.threshold_factor * best;
  }

  for (std::size_t a = 0; a < n_arms; ++a) {
    ArmSummary summary;
    summary.name = arms[a].name;
    for (std::size_t r = 0; r < n_runs; ++r) {
      const TrainTrace& trace = result.traces[a][r];
      summary.final_loss.push_back(trace.final_loss);
      summary.final_eval_loss.push_back(trace.final_eval_loss);
      summary.final_loc_deficit.push_back(trace.final_loc_deficit);
      summary.final_pearson.push_back(trace.final_pearson);
      summary.br_recall1.push_back(convergence_phase_br_recall(trace, result.threshold_factor));
      summary.final_br_recall1.push_back(trace.final_br_recall1);
      int steps_needed = base.steps + 1;
      for (const auto& row : trace.steps) {
        if (row.loc_deficit <= result.run_thresholds[r]) {
          steps_needed = row.step;
          break;
        }
      }
      if (steps_needed == base.steps + 1 &&
          trace.final_loc_deficit <= result.run_thresholds[r]) {
        steps_needed = base.steps;
      }
      summary.steps_to_threshold.push_back(steps_needed);
    }
    summary.mean_final_loss = mean_of(summary.final_loss);
    summary.mean_pearson = mean_of(summary.final_pearson);
    summary.se_pearson = standard_error(summary.final_pearson);
    summary.mean_br_recall1 = mean_of(summary.br_recall1);
    summary.se_br_recall1 = standard_error(summary.br_recall1);
    std::vector<double> steps_d(summary.steps_to_threshold.begin(),
                                summary.steps_to_threshold.end());
    summary.median_steps_to_threshold = median_of(steps_d);
    result.arms.push_back(std::move(summary));
  }
  return result;
}

}  // namespace align
