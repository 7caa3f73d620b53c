#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "align/criterion.hpp"
#include "align/detection.hpp"
#include "align/matching.hpp"
#include "align/toytrain.hpp"

namespace align {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All emitted floats carry 9 significant digits. Parsing such a value back and
// re-serializing reproduces the same bytes, which is what the round-trip and
// determinism contracts lean on.
inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Parsing (strict: unknown keys are rejected at every level)
// ---------------------------------------------------------------------------

namespace detail {

inline void expect_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                        const std::string& context) {
  if (!j.is_object()) throw ParseError(context + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const auto& key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ParseError(context + ": unknown key \"" + item.key() + "\"");
  }
}

inline double get_number(const nlohmann::json& j, const std::string& context) {
  if (!j.is_number()) throw ParseError(context + ": expected a number");
  return j.get<double>();
}

inline int get_int(const nlohmann::json& j, const std::string& context) {
  if (!j.is_number_integer()) throw ParseError(context + ": expected an integer");
  return j.get<int>();
}

inline Box parse_box(const nlohmann::json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4) {
    throw ParseError(context + ": box must be an array [cx,cy,w,h]");
  }
  try {
    return Box(get_number(j[0], context), get_number(j[1], context), get_number(j[2], context),
               get_number(j[3], context));
  } catch (const std::invalid_argument& e) {
    throw ParseError(context + ": " + e.what());
  }
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return j;
}

}  // namespace detail

// Scene file: {"classes": int, "objects": [{"class": int, "box": [cx,cy,w,h]}]}
inline Scene parse_scene(const nlohmann::json& j) {
  detail::expect_keys(j, {"classes", "objects"}, "scene");
  if (!j.contains("classes") || !j.contains("objects")) {
    throw ParseError("scene: missing \"classes\" or \"objects\"");
  }
  Scene scene;
  scene.n_classes = detail::get_int(j.at("classes"), "scene.classes");
  if (!j.at("objects").is_array()) throw ParseError("scene.objects: expected an array");
  for (const auto& obj : j.at("objects")) {
    detail::expect_keys(obj, {"class", "box"}, "scene.objects[]");
    if (!obj.contains("class") || !obj.contains("box")) {
      throw ParseError("scene.objects[]: missing \"class\" or \"box\"");
    }
    GroundTruth gt;
    gt.class_id = detail::get_int(obj.at("class"), "scene.objects[].class");
    gt.box = detail::parse_box(obj.at("box"), "scene.objects[].box");
    scene.objects.push_back(gt);
  }
  try {
    validate_scene(scene);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("scene: ") + e.what());
  }
  return scene;
}

inline Scene load_scene(const std::string& path) { return parse_scene(detail::load_json(path)); }

// Predictions file: {"layers": [[{"scores": [...], "box": [...]}, ...], ...]}
inline std::vector<PredictionSet> parse_predictions(const nlohmann::json& j, int n_classes) {
  detail::expect_keys(j, {"layers"}, "predictions");
  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
    throw ParseError("predictions: \"layers\" must be a non-empty array");
  }
  std::vector<PredictionSet> layers;
  for (const auto& layer : j.at("layers")) {
    if (!layer.is_array()) throw ParseError("predictions.layers[]: expected an array");
    PredictionSet preds;
    for (const auto& p : layer) {
      detail::expect_keys(p, {"scores", "box"}, "predictions.layers[][]");
      if (!p.contains("scores") || !p.contains("box")) {
        throw ParseError("predictions.layers[][]: missing \"scores\" or \"box\"");
      }
      Prediction pred;
      if (!p.at("scores").is_array()) throw ParseError("prediction scores: expected an array");
      for (const auto& s : p.at("scores")) {
        pred.scores.push_back(detail::get_number(s, "prediction score"));
      }
      pred.box = detail::parse_box(p.at("box"), "prediction box");
      preds.push_back(std::move(pred));
    }
    try {
      validate_predictions(preds, n_classes);
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("predictions: ") + e.what());
    }
    layers.push_back(std::move(preds));
  }
  return layers;
}

inline std::vector<PredictionSet> load_predictions(const std::string& path, int n_classes) {
  return parse_predictions(detail::load_json(path), n_classes);
}

// ---------------------------------------------------------------------------
// Serialization (manual writers: stable key order, fmt9 floats)
// ---------------------------------------------------------------------------

inline std::string serialize_scene(const Scene& scene) {
  std::ostringstream out;
  out << "{\"classes\": " << scene.n_classes << ", \"objects\": [";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& gt = scene.objects[i];
    if (i > 0) out << ", ";
    out << "{\"class\": " << gt.class_id << ", \"box\": [" << fmt9(gt.box.cx) << ", "
        << fmt9(gt.box.cy) << ", " << fmt9(gt.box.w) << ", " << fmt9(gt.box.h) << "]}";
  }
  out << "]}\n";
  return out.str();
}

inline std::string serialize_predictions(const std::vector<PredictionSet>& layers) {
  std::ostringstream out;
  out << "{\"layers\": [";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) out << ", ";
    out << "[";
    for (std::size_t i = 0; i < layers[l].size(); ++i) {
      const auto& p = layers[l][i];
      if (i > 0) out << ", ";
      out << "{\"scores\": [";
      for (std::size_t c = 0; c < p.scores.size(); ++c) {
        if (c > 0) out << ", ";
        out << fmt9(p.scores[c]);
      }
      out << "], \"box\": [" << fmt9(p.box.cx) << ", " << fmt9(p.box.cy) << ", " << fmt9(p.box.w)
          << ", " << fmt9(p.box.h) << "]}";
    }
    out << "]";
  }
  out << "]}\n";
  return out.str();
}

inline std::string serialize_assignment(const Assignment& assignment) {
  std::ostringstream out;
  out << "{\"pairs\": [";
  for (std::size_t i = 0; i < assignment.pairs.size(); ++i) {
    const auto& p = assignment.pairs[i];
    if (i > 0) out << ", ";
    out << "{\"pred\": " << p.pred << ", \"gt\": " << p.gt << ", \"replica\": " << p.replica << "}";
  }
  out << "], \"unmatched\": [";
  for (std::size_t i = 0; i < assignment.unmatched.size(); ++i) {
    if (i > 0) out << ", ";
    out << assignment.unmatched[i];
  }
  out << "], \"total_cost\": " << fmt9(assignment.total_cost) << "}\n";
  return out.str();
}

inline std::string serialize_loss_report(const LossReport& report, const CriterionConfig& cfg) {
  std::ostringstream out;
  out << "{\"total\": " << fmt9(report.total) << ", \"layers\": [";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& layer = report.layers[l];
    if (l > 0) out << ", ";
    out << "{\"cls_pos\": " << fmt9(layer.terms.cls_pos) << ", \"cls_neg\": "
        << fmt9(layer.terms.cls_neg) << ", \"reg_l1\": " << fmt9(layer.terms.reg_l1)
        << ", \"reg_giou\": " << fmt9(layer.terms.reg_giou) << ", \"n_pos\": " << layer.terms.n_pos
        << ", \"layer_total\": " << fmt9(layer_total(layer.terms, cfg)) << "}";
  }
  out << "], \"grads\": {\"layers\": [";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& g = report.layers[l].grads;
    if (l > 0) out << ", ";
    out << "{\"logits\": [";
    for (std::size_t q = 0; q < g.d_logits.size(); ++q) {
      if (q > 0) out << ", ";
      out << "[";
      for (std::size_t c = 0; c < g.d_logits[q].size(); ++c) {
        if (c > 0) out << ", ";
        out << fmt9(g.d_logits[q][c]);
      }
      out << "]";
    }
    out << "], \"boxes\": [";
    for (std::size_t q = 0; q < g.d_boxes.size(); ++q) {
      if (q > 0) out << ", ";
      out << "[" << fmt9(g.d_boxes[q][0]) << ", " << fmt9(g.d_boxes[q][1]) << ", "
          << fmt9(g.d_boxes[q][2]) << ", " << fmt9(g.d_boxes[q][3]) << "]";
    }
    out << "]}";
  }
  out << "]}}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Variant names and experiment configuration
// ---------------------------------------------------------------------------

inline LossVariant variant_from_name(const std::string& name) {
  if (name == "ia_bce") return LossVariant::ia_bce();
  if (name == "focal") return LossVariant::focal();
  if (name == "qfl1") return LossVariant::qfl(1.0);
  if (name == "qfl2") return LossVariant::qfl(2.0);
  if (name == "vfl") return LossVariant::vfl();
  if (name == "pos_ce") return LossVariant::table_a(WeightForm::kOne, WeightForm::kZero);
  if (name == "t_ce") return LossVariant::table_a(WeightForm::kT, WeightForm::kZero);
  if (name == "sq_sym") return LossVariant::table_a(WeightForm::kSquaredGap, WeightForm::kSquaredGap);
  if (name == "sq_asym")
    return LossVariant::table_a(WeightForm::kSquaredGap, WeightForm::kOneMinusTTimesS2);
  if (name == "soft_bce") return LossVariant::table_a(WeightForm::kT, WeightForm::kOneMinusT);
  throw ParseError("unknown loss variant \"" + name + "\"");
}

inline const std::vector<std::string>& all_variant_names() {
  static const std::vector<std::string> names = {"ia_bce", "focal",  "qfl1",    "qfl2",    "vfl",
                                                 "pos_ce", "t_ce",   "sq_sym",  "sq_asym", "soft_bce"};
  return names;
}

struct ExperimentConfig {
  SceneSpec scene;
  int scene_count = 1;
  TrainConfig train;
  std::vector<VariantArm> variants;
  std::string output_dir;
};

namespace detail {

inline void apply_criterion_overrides(const nlohmann::json& j, CriterionConfig& cfg,
                                      const std::string& context) {
  expect_keys(j,
              {"variant", "alpha", "tau", "k", "gamma", "loss_class", "loss_bbox", "loss_giou",
               "prime_weighting"},
              context);
  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ParseError(context + ".variant: expected a string");
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  }
  if (j.contains("alpha")) cfg.alpha = get_number(j.at("alpha"), context + ".alpha");
  if (j.contains("tau")) cfg.tau = get_number(j.at("tau"), context + ".tau");
  if (j.contains("k")) cfg.k = get_int(j.at("k"), context + ".k");
  if (j.contains("gamma")) cfg.gamma = get_number(j.at("gamma"), context + ".gamma");
  if (j.contains("loss_class")) cfg.loss_class = get_number(j.at("loss_class"), context + ".loss_class");
  if (j.contains("loss_bbox")) cfg.loss_bbox = get_number(j.at("loss_bbox"), context + ".loss_bbox");
  if (j.contains("loss_giou")) cfg.loss_giou = get_number(j.at("loss_giou"), context + ".loss_giou");
  if (j.contains("prime_weighting")) {
    if (!j.at("prime_weighting").is_boolean()) {
      throw ParseError(context + ".prime_weighting: expected a boolean");
    }
    cfg.prime_weighting = j.at("prime_weighting").get<bool>();
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(context + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::expect_keys(j, {"scene", "train", "criterion", "variants", "output_dir"}, "config");
  ExperimentConfig cfg;

  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    detail::expect_keys(
        s, {"n_gt", "n_classes", "center_range", "size_range", "seed", "count"}, "config.scene");
    if (s.contains("n_gt")) cfg.scene.n_gt = detail::get_int(s.at("n_gt"), "scene.n_gt");
    if (s.contains("n_classes")) cfg.scene.n_classes = detail::get_int(s.at("n_classes"), "scene.n_classes");
    if (s.contains("center_range")) {
      const auto& r = s.at("center_range");
      if (!r.is_array() || r.size() != 2) throw ParseError("scene.center_range: expected [lo,hi]");
      cfg.scene.center_min = detail::get_number(r[0], "scene.center_range");
      cfg.scene.center_max = detail::get_number(r[1], "scene.center_range");
    }
    if (s.contains("size_range")) {
      const auto& r = s.at("size_range");
      if (!r.is_array() || r.size() != 2) throw ParseError("scene.size_range: expected [lo,hi]");
      cfg.scene.size_min = detail::get_number(r[0], "scene.size_range");
      cfg.scene.size_max = detail::get_number(r[1], "scene.size_range");
    }
    if (s.contains("seed")) cfg.scene.seed = static_cast<std::uint64_t>(detail::get_int(s.at("seed"), "scene.seed"));
    if (s.contains("count")) cfg.scene_count = detail::get_int(s.at("count"), "scene.count");
    try {
      cfg.scene.validate();
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("config.scene: ") + e.what());
    }
    if (cfg.scene_count < 1) throw ParseError("config.scene.count must be >= 1");
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::expect_keys(t,
                        {"n_queries", "layers", "steps", "lr_logits", "lr_box", "beta1", "beta2",
                         "adam_eps", "seed"},
                        "config.train");
    if (t.contains("n_queries")) cfg.train.n_queries = detail::get_int(t.at("n_queries"), "train.n_queries");
    if (t.contains("layers")) cfg.train.layers = detail::get_int(t.at("layers"), "train.layers");
    if (t.contains("steps")) cfg.train.steps = detail::get_int(t.at("steps"), "train.steps");
    if (t.contains("lr_logits")) cfg.train.lr_logits = detail::get_number(t.at("lr_logits"), "train.lr_logits");
    if (t.contains("lr_box")) cfg.train.lr_box = detail::get_number(t.at("lr_box"), "train.lr_box");
    if (t.contains("beta1")) cfg.train.beta1 = detail::get_number(t.at("beta1"), "train.beta1");
    if (t.contains("beta2")) cfg.train.beta2 = detail::get_number(t.at("beta2"), "train.beta2");
    if (t.contains("adam_eps")) cfg.train.adam_eps = detail::get_number(t.at("adam_eps"), "train.adam_eps");
    if (t.contains("seed")) cfg.train.seed = static_cast<std::uint64_t>(detail::get_int(t.at("seed"), "train.seed"));
  }

  if (j.contains("criterion")) {
    detail::apply_criterion_overrides(j.at("criterion"), cfg.train.criterion, "config.criterion");
  }

  if (j.contains("variants")) {
    if (!j.at("variants").is_array()) throw ParseError("config.variants: expected an array");
    for (const auto& v : j.at("variants")) {
      detail::expect_keys(v, {"name", "criterion"}, "config.variants[]");
      if (!v.contains("name") || !v.at("name").is_string()) {
        throw ParseError("config.variants[]: missing string \"name\"");
      }
      VariantArm arm;
      arm.name = v.at("name").get<std::string>();
      arm.criterion = cfg.train.criterion;
      if (v.contains("criterion")) {
        detail::apply_criterion_overrides(v.at("criterion"), arm.criterion,
                                          "config.variants[" + arm.name + "]");
      }
      cfg.variants.push_back(std::move(arm));
    }
  }

  if (!j.contains("output_dir") || !j.at("output_dir").is_string()) {
    throw ParseError("config: missing string \"output_dir\"");
  }
  cfg.output_dir = j.at("output_dir").get<std::string>();

  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("config.train: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(detail::load_json(path));
}

}  // namespace align
