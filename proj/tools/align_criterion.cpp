// Command-line front end: matchers, loss evaluation, gradient checks, toy
// training comparisons and misalignment diagnostics. Every command is
// deterministic given its inputs and seed flags; floats are emitted with 9
// significant digits. Exit codes: 0 ok, 2 input parse error, 3 infeasible
// GT replication, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "align/criterion.hpp"
#include "align/diagnostics.hpp"
#include "align/gradcheck.hpp"
#include "align/io.hpp"
#include "align/matching.hpp"
#include "align/toytrain.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitParse = 2;
constexpr int kExitInfeasible = 3;

struct MatchArgs {
  std::string scene_path, preds_path;
  int k = 1;
  int layer = 0;
  bool oracle = false;
  align::CostParams cost;
};

int run_match(const MatchArgs& args) {
  const align::Scene scene = align::load_scene(args.scene_path);
  const auto layers = align::load_predictions(args.preds_path, scene.n_classes);
  if (args.layer < 0 || args.layer >= static_cast<int>(layers.size())) {
    throw align::ParseError("layer index out of range");
  }
  const align::PredictionSet& preds = layers[static_cast<std::size_t>(args.layer)];

  align::Assignment assignment;
  if (args.oracle) {
    // Brute-force oracle on the (possibly replicated) cost matrix.
    align::CostMatrix cost = align::cost_matrix(preds, scene, args.cost);
    const int n_gt = static_cast<int>(scene.objects.size());
    if (args.k > 1) {
      if (args.k * n_gt > static_cast<int>(preds.size())) {
        throw align::InfeasibleReplication("k*n_gt exceeds n_pred");
      }
      align::CostMatrix repl(preds.size(), std::vector<double>(static_cast<std::size_t>(args.k * n_gt)));
      for (std::size_t i = 0; i < preds.size(); ++i)
        for (int c = 0; c < args.k * n_gt; ++c)
          repl[i][static_cast<std::size_t>(c)] = cost[i][static_cast<std::size_t>(c % n_gt)];
      assignment = align::brute_force_match(repl);
      for (auto& pair : assignment.pairs) {
        pair.replica = pair.gt / n_gt;
        pair.gt = pair.gt % n_gt;
      }
    } else {
      assignment = align::brute_force_match(cost);
    }
  } else {
    assignment = args.k > 1 ? align::match_many_to_one(preds, scene, args.cost, args.k)
                            : align::match_one_to_one(preds, scene, args.cost);
  }
  std::cout << align::serialize_assignment(assignment);
  return kExitOk;
}

struct LossArgs {
  std::string scene_path, preds_path;
  align::CriterionConfig criterion;
  std::string variant = "ia_bce";
  bool no_prime = false;
};

int run_loss(const LossArgs& args) {
  align::CriterionConfig cfg = args.criterion;
  cfg.variant = align::variant_from_name(args.variant);
  cfg.prime_weighting = !args.no_prime;
  cfg.validate();
  const align::Scene scene = align::load_scene(args.scene_path);
  const auto layers = align::load_predictions(args.preds_path, scene.n_classes);
  const align::LossReport report = align::total_loss(layers, scene, cfg);
  std::cout << align::serialize_loss_report(report, cfg);
  return kExitOk;
}

struct GradcheckArgs {
  std::string variant = "all";
  int seeds = 100;
  double tol = 1e-4;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& args) {
  std::vector<std::string> names;
  if (args.variant == "all") {
    names = align::all_variant_names();
  } else {
    names.push_back(args.variant);
  }
  align::GradCheckOptions opts;
  opts.tol = args.tol;
  bool all_pass = true;
  std::cout << "variant,scenes,checked,skipped,max_rel_err,status\n";
  for (const auto& name : names) {
    const align::LossVariant variant = align::variant_from_name(name);
    const align::GradCheckReport rep =
        align::gradcheck_variant(variant, args.seeds, args.seed, opts);
    const bool pass = rep.passed(args.tol);
    all_pass = all_pass && pass;
    std::cout << name << "," << args.seeds << "," << rep.n_checked << "," << rep.n_skipped << ","
              << align::fmt9(rep.max_rel_err) << "," << (pass ? "PASS" : "FAIL") << "\n";
  }
  return all_pass ? kExitOk : kExitError;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string arm_trace_csv(const std::vector<align::TrainTrace>& runs) {
  std::ostringstream csv;
  csv << "run,step,total,cls_pos,cls_neg,reg_l1,reg_giou,eval_loss,loc_deficit,pearson,br_recall1\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& row : runs[r].steps) {
      csv << r << "," << row.step << "," << align::fmt9(row.total) << ","
          << align::fmt9(row.cls_pos) << "," << align::fmt9(row.cls_neg) << ","
          << align::fmt9(row.reg_l1) << "," << align::fmt9(row.reg_giou) << ","
          << align::fmt9(row.eval_loss) << "," << align::fmt9(row.loc_deficit) << ","
          << align::fmt9(row.pearson) << "," << align::fmt9(row.br_recall1) << "\n";
    }
  }
  return csv.str();
}

std::string summary_json(const align::ComparisonResult& result) {
  std::ostringstream out;
  out << "{\"threshold_factor\": " << align::fmt9(result.threshold_factor) << ", \"arms\": [";
  for (std::size_t a = 0; a < result.arms.size(); ++a) {
    const auto& arm = result.arms[a];
    if (a > 0) out << ", ";
    out << "{\"name\": \"" << arm.name << "\", \"runs\": " << arm.final_loss.size()
        << ", \"mean_final_loss\": " << align::fmt9(arm.mean_final_loss)
        << ", \"mean_final_eval_loss\": " << align::fmt9(align::mean_of(arm.final_eval_loss))
        << ", \"mean_final_loc_deficit\": " << align::fmt9(align::mean_of(arm.final_loc_deficit))
        << ", \"mean_pearson\": " << align::fmt9(arm.mean_pearson)
        << ", \"se_pearson\": " << align::fmt9(arm.se_pearson)
        << ", \"mean_br_recall1\": " << align::fmt9(arm.mean_br_recall1)
        << ", \"se_br_recall1\": " << align::fmt9(arm.se_br_recall1)
        << ", \"mean_final_br_recall1\": " << align::fmt9(align::mean_of(arm.final_br_recall1))
        << ", \"median_steps_to_threshold\": " << align::fmt9(arm.median_steps_to_threshold)
        << "}";
  }
  out << "]}\n";
  return out.str();
}

int run_train_or_compare(const std::string& config_path, bool compare) {
  const align::ExperimentConfig cfg = align::load_experiment_config(config_path);
  std::vector<align::VariantArm> arms;
  if (compare) {
    if (cfg.variants.empty()) throw align::ParseError("compare: config has no variants");
    arms = cfg.variants;
  } else {
    arms.push_back({"base", cfg.train.criterion});
  }

  std::vector<align::Scene> scenes;
  for (int i = 0; i < cfg.scene_count; ++i) {
    align::SceneSpec spec = cfg.scene;
    spec.seed = cfg.scene.seed + static_cast<std::uint64_t>(i);
    scenes.push_back(align::generate_scene(spec));
  }

  const align::ComparisonResult result = align::compare_variants(scenes, cfg.train, arms);

  const std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);
  for (std::size_t a = 0; a < arms.size(); ++a) {
    write_file(out_dir / ("trace_" + arms[a].name + ".csv"), arm_trace_csv(result.traces[a]));
  }
  const std::string summary = summary_json(result);
  write_file(out_dir / "summary.json", summary);
  std::cout << summary;
  return kExitOk;
}

struct DiagnoseArgs {
  std::vector<std::string> preds_paths, scene_paths;
  int bins = 20;
  int layer = -1;
  int m_max = 0;
  bool pooled = false;
  std::string out_dir = ".";
};

int run_diagnose(const DiagnoseArgs& args) {
  if (args.preds_paths.size() != args.scene_paths.size() || args.preds_paths.empty()) {
    throw align::ParseError("diagnose: need matching --scene/--preds lists");
  }
  std::vector<align::Scene> scenes;
  std::vector<align::PredictionSet> sets;
  for (std::size_t i = 0; i < args.preds_paths.size(); ++i) {
    scenes.push_back(align::load_scene(args.scene_paths[i]));
    const auto layers = align::load_predictions(args.preds_paths[i], scenes.back().n_classes);
    const int layer = args.layer < 0 ? static_cast<int>(layers.size()) - 1 : args.layer;
    if (layer >= static_cast<int>(layers.size())) throw align::ParseError("layer index out of range");
    sets.push_back(layers[static_cast<std::size_t>(layer)]);
  }

  int m_max = args.m_max;
  if (m_max <= 0) {
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const std::size_t n_gt = scenes[i].objects.size();
      if (n_gt == 0) throw align::ParseError("diagnose: empty scene");
      m_max = std::max(m_max, static_cast<int>((sets[i].size() + n_gt - 1) / n_gt));
    }
  }

  std::vector<const align::PredictionSet*> set_ptrs;
  std::vector<const align::Scene*> scene_ptrs;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    set_ptrs.push_back(&sets[i]);
    scene_ptrs.push_back(&scenes[i]);
  }

  std::ostringstream recall;
  recall << "m,recall\n";
  for (int m = 1; m <= m_max; ++m) {
    recall << m << "," << align::fmt9(align::dataset_br_recall(set_ptrs, scene_ptrs, m, args.pooled))
           << "\n";
  }

  // Per-scene reports, counts pooled over scenes.
  align::DensityMap density;
  density.bins = args.bins;
  density.counts.assign(static_cast<std::size_t>(args.bins) * static_cast<std::size_t>(args.bins), 0);
  align::Histogram hc_hist, br_hist;
  hc_hist.bins = br_hist.bins = args.bins;
  hc_hist.counts.assign(static_cast<std::size_t>(args.bins), 0);
  br_hist.counts.assign(static_cast<std::size_t>(args.bins), 0);
  std::vector<double> all_confs, all_ious, per_scene_r;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const align::AlignmentReport rep = align::alignment_report(sets[i], scenes[i], args.bins, m_max);
    for (std::size_t c = 0; c < rep.density.counts.size(); ++c) density.counts[c] += rep.density.counts[c];
    for (std::size_t b = 0; b < rep.hc_iou_hist.counts.size(); ++b) {
      hc_hist.counts[b] += rep.hc_iou_hist.counts[b];
      br_hist.counts[b] += rep.br_iou_hist.counts[b];
    }
    per_scene_r.push_back(rep.pearson_r);
    for (const auto& p : sets[i]) {
      all_confs.push_back(align::confidence_of(p));
      all_ious.push_back(align::max_iou_over_gts(p, scenes[i]));
    }
  }
  const double pearson_r = args.pooled
                               ? align::pearson(all_confs, all_ious)
                               : align::mean_of(per_scene_r);

  std::ostringstream density_csv;
  density_csv << "conf_bin,iou_bin,count\n";
  for (int cb = 0; cb < args.bins; ++cb)
    for (int ib = 0; ib < args.bins; ++ib)
      density_csv << cb << "," << ib << "," << density.at(cb, ib) << "\n";

  std::ostringstream hist_csv;
  hist_csv << "bin,lo,hi,hc_count,br_count\n";
  for (int b = 0; b < args.bins; ++b) {
    hist_csv << b << "," << align::fmt9(static_cast<double>(b) / args.bins) << ","
             << align::fmt9(static_cast<double>(b + 1) / args.bins) << ","
             << hc_hist.counts[static_cast<std::size_t>(b)] << ","
             << br_hist.counts[static_cast<std::size_t>(b)] << "\n";
  }

  const std::filesystem::path out_dir(args.out_dir);
  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "recall.csv", recall.str());
  write_file(out_dir / "density.csv", density_csv.str());
  write_file(out_dir / "histograms.csv", hist_csv.str());
  std::cout << "{\"scenes\": " << sets.size() << ", \"mode\": \""
            << (args.pooled ? "pooled" : "mean") << "\", \"pearson\": " << align::fmt9(pearson_r)
            << "}\n";
  return kExitOk;
}

void add_cost_flags(CLI::App* cmd, align::CostParams& cost) {
  cmd->add_option("--cost-class", cost.lambda_class, "Classification cost weight");
  cmd->add_option("--cost-bbox", cost.lambda_bbox, "L1 box cost weight");
  cmd->add_option("--cost-giou", cost.lambda_giou, "GIoU cost weight");
  cmd->add_option("--cost-alpha", cost.focal_alpha, "Focal cost alpha");
  cmd->add_option("--cost-gamma", cost.focal_gamma, "Focal cost gamma");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "align-criterion: IoU-aware detection criterion laboratory.\n"
      "File formats and CSV columns are documented in FORMATS.md."};
  app.require_subcommand(1);

  MatchArgs match_args;
  CLI::App* match = app.add_subcommand("match", "Hungarian / many-to-one matching of a scene");
  match->add_option("--scene", match_args.scene_path, "Scene JSON")->required();
  match->add_option("--preds", match_args.preds_path, "Predictions JSON")->required();
  match->add_option("--k", match_args.k, "GT replication count (1 = one-to-one)");
  match->add_option("--layer", match_args.layer, "Prediction layer index");
  match->add_flag("--oracle", match_args.oracle, "Use the brute-force oracle solver");
  add_cost_flags(match, match_args.cost);

  LossArgs loss_args;
  CLI::App* loss = app.add_subcommand("loss", "Evaluate the training loss with gradients");
  loss->add_option("--scene", loss_args.scene_path, "Scene JSON")->required();
  loss->add_option("--preds", loss_args.preds_path, "Predictions JSON")->required();
  loss->add_option("--variant", loss_args.variant,
                   "Loss variant: ia_bce focal qfl1 qfl2 vfl pos_ce t_ce sq_sym sq_asym soft_bce");
  loss->add_option("--alpha", loss_args.criterion.alpha, "Quality exponent");
  loss->add_option("--tau", loss_args.criterion.tau, "Prime weighting temperature");
  loss->add_option("--k", loss_args.criterion.k, "GT replication for non-final layers");
  loss->add_option("--gamma", loss_args.criterion.gamma, "Background focal exponent");
  loss->add_option("--loss-class", loss_args.criterion.loss_class, "Classification loss weight");
  loss->add_option("--loss-bbox", loss_args.criterion.loss_bbox, "L1 loss weight");
  loss->add_option("--loss-giou", loss_args.criterion.loss_giou, "GIoU loss weight");
  loss->add_flag("--no-prime", loss_args.no_prime, "Disable prime sample weighting");

  GradcheckArgs gc_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--variant", gc_args.variant, "Variant name or \"all\"");
  gradcheck->add_option("--seeds", gc_args.seeds, "Number of random scenes per variant");
  gradcheck->add_option("--tol", gc_args.tol, "Max relative error tolerance");
  gradcheck->add_option("--seed", gc_args.seed, "Base seed");

  std::string train_config;
  CLI::App* train = app.add_subcommand("train", "Train the base criterion per config file");
  train->add_option("config", train_config, "Experiment config JSON")->required();

  std::string compare_config;
  CLI::App* compare = app.add_subcommand("compare", "Train and compare the config's variant arms");
  compare->add_option("config", compare_config, "Experiment config JSON")->required();

  DiagnoseArgs diag_args;
  CLI::App* diagnose = app.add_subcommand("diagnose", "Misalignment diagnostics from files");
  diagnose->add_option("--preds", diag_args.preds_paths, "Predictions JSON (repeatable)")->required();
  diagnose->add_option("--scene", diag_args.scene_paths, "Scene JSON (repeatable)")->required();
  diagnose->add_option("--bins", diag_args.bins, "Histogram/density bins");
  diagnose->add_option("--layer", diag_args.layer, "Layer index (-1 = last)");
  diagnose->add_option("--m-max", diag_args.m_max, "Largest HC multiplier m (0 = auto)");
  diagnose->add_flag("--pooled", diag_args.pooled, "Pool scenes instead of averaging");
  diagnose->add_option("--out", diag_args.out_dir, "Output directory for CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (match->parsed()) return run_match(match_args);
    if (loss->parsed()) return run_loss(loss_args);
    if (gradcheck->parsed()) return run_gradcheck(gc_args);
    if (train->parsed()) return run_train_or_compare(train_config, false);
    if (compare->parsed()) return run_train_or_compare(compare_config, true);
    if (diagnose->parsed()) return run_diagnose(diag_args);
  } catch (const align::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const align::InfeasibleReplication& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
