#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace align {

// Normalized center-format bounding box. Widths/heights below kMinBoxSize are
// rejected at construction so that degenerate geometry fails loudly instead of
// being clamped into silence.
inline constexpr double kMinBoxSize = 1e-6;

struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  Box() = default;
  Box(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {
    validate();
  }

  void validate() const {
    if (!(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h))) {
      throw std::invalid_argument("Box: non-finite coordinate");
    }
    if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0) {
      throw std::invalid_argument("Box: center outside [0,1]: cx=" + std::to_string(cx) +
                                  " cy=" + std::to_string(cy));
    }
    if (w < kMinBoxSize || h < kMinBoxSize || w > 1.0 || h > 1.0) {
      throw std::invalid_argument("Box: size outside [1e-6,1]: w=" + std::to_string(w) +
                                  " h=" + std::to_string(h));
    }
  }
};

struct CornerBox {
  double x1, y1, x2, y2;
};

inline CornerBox to_corners(const Box& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

// Areas are taken from corner differences, not w*h, so that intersection,
// union and enclosure are computed from one consistent set of subtractions;
// identical boxes then give iou == giou == 1 bit-exactly.
inline double corner_area(const CornerBox& c) { return (c.x2 - c.x1) * (c.y2 - c.y1); }

inline double iou(const Box& a, const Box& b) {
  const CornerBox ca = to_corners(a);
  const CornerBox cb = to_corners(b);
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = corner_area(ca) + corner_area(cb) - inter;
  return inter / uni;
}

// Generalized IoU: iou - (enclosure - union) / enclosure, in [-1, 1].
inline double giou(const Box& a, const Box& b) {
  const CornerBox ca = to_corners(a);
  const CornerBox cb = to_corners(b);
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = corner_area(ca) + corner_area(cb) - inter;
  const double ew = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const double eh = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const double enc = ew * eh;
  return inter / uni - (enc - uni) / enc;
}

// GIoU of (pred, gt) together with its partial derivatives with respect to the
// prediction's center-format coordinates (cx, cy, w, h). Piecewise smooth; the
// max/min branch points are measure-zero and handled by the callers' probes.
struct GiouGrad {
  double value;
  std::array<double, 4> d_pred;  // d/d{cx, cy, w, h}
};

inline GiouGrad giou_with_grad(const Box& pred, const Box& gt) {
  const CornerBox a = to_corners(pred);
  const CornerBox b = to_corners(gt);

  const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;

  const double uni = corner_area(a) + corner_area(b) - inter;

  const double ew = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double eh = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enc = ew * eh;

  // Partials with respect to the pred corners (x1, y1, x2, y2).
  double dI[4] = {0, 0, 0, 0};
  if (overlap) {
    if (a.x1 > b.x1) dI[0] = -ih;
    if (a.y1 > b.y1) dI[1] = -iw;
    if (a.x2 < b.x2) dI[2] = ih;
    if (a.y2 < b.y2) dI[3] = iw;
  }
  const double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
  const double dA[4] = {-ah, -aw, ah, aw};
  double dU[4], dC[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4; ++i) dU[i] = dA[i] - dI[i];
  if (a.x1 < b.x1) dC[0] = -eh;
  if (a.y1 < b.y1) dC[1] = -ew;
  if (a.x2 > b.x2) dC[2] = eh;
  if (a.y2 > b.y2) dC[3] = ew;

  // giou = I/U - 1 + U/C
  double d_corner[4];
  for (int i = 0; i < 4; ++i) {
    const double d_iou = (dI[i] * uni - inter * dU[i]) / (uni * uni);
    const double d_pen = (dU[i] * enc - uni * dC[i]) / (enc * enc);
    d_corner[i] = d_iou + d_pen;
  }

  // Chain corners -> center format: x1 = cx - w/2, x2 = cx + w/2, etc.
  GiouGrad out;
  out.value = inter / uni - (enc - uni) / enc;
  out.d_pred[0] = d_corner[0] + d_corner[2];
  out.d_pred[1] = d_corner[1] + d_corner[3];
  out.d_pred[2] = 0.5 * (d_corner[2] - d_corner[0]);
  out.d_pred[3] = 0.5 * (d_corner[3] - d_corner[1]);
  return out;
}

// Sum of absolute differences over the four center-format coordinates.
inline double l1_distance(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

}  // namespace align
