#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "align/box.hpp"

namespace align {

struct GroundTruth {
  int class_id = 0;
  Box box;
};

// The ground-truth set G for one image.
struct Scene {
  int n_classes = 0;
  std::vector<GroundTruth> objects;
};

// One query's output: per-class probabilities (sigmoid-activated) and a box.
struct Prediction {
  std::vector<double> scores;
  Box box;
};

using PredictionSet = std::vector<Prediction>;

inline void validate_scene(const Scene& scene) {
  if (scene.n_classes < 1) throw std::invalid_argument("Scene: n_classes must be >= 1");
  for (const auto& gt : scene.objects) {
    if (gt.class_id < 0 || gt.class_id >= scene.n_classes) {
      throw std::invalid_argument("Scene: class id " + std::to_string(gt.class_id) +
                                  " outside [0," + std::to_string(scene.n_classes) + ")");
    }
    gt.box.validate();
  }
}

// Probabilities must be strictly inside (0,1); saturated heads are a caller
// bug, not something to patch over here.
inline void validate_predictions(const PredictionSet& preds, int n_classes) {
  for (const auto& p : preds) {
    if (static_cast<int>(p.scores.size()) != n_classes) {
      throw std::invalid_argument("Prediction: expected " + std::to_string(n_classes) +
                                  " scores, got " + std::to_string(p.scores.size()));
    }
    for (double s : p.scores) {
      if (!(s > 0.0 && s < 1.0)) {
        throw std::invalid_argument("Prediction: probability outside (0,1): " +
                                    std::to_string(s));
      }
    }
    p.box.validate();
  }
}

}  // namespace align
