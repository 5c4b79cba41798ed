// Single-stage anchor detector. A stride-2 conv stem produces a feature
// pyramid (strides 8, 16, ...); shared 1x1 heads predict (K+1)-way class
// logits and box deltas for A anchors per cell. The pyramid doubles as the
// feature source for the squeeze network, so the detector stays pluggable:
// anything exposing the same pyramid + loss interface can replace it.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "leapd/config.hpp"
#include "leapd/encoders.hpp"
#include "leapd/geometry.hpp"
#include "leapd/graph.hpp"
#include "leapd/rng.hpp"

namespace leapd {

struct FeaturePyramid {
  std::vector<Tensor> levels;  // each (C, H_l, W_l)
  std::vector<int> strides;    // strictly increasing
};

struct Detection {
  BBox box;
  int category = 0;  // dataset ids, 1-based; 0 is background/ignored
  double score = 0.0;
};

// Anchor layout per level: cell-major, then anchor slot.
// flat index = (i*W + j)*A + a. Class channel for slot a, class k is
// a*(K+1)+k; regression channel for coordinate d is a*4+d.
constexpr int kAnchorsPerCell = 4;
constexpr double kAnchorScales[kAnchorsPerCell] = {0.4, 0.8, 1.4, 2.2};
constexpr double kAnchorAspect = 2.0;  // width / height, near the vehicle-shape mean
constexpr double kPositiveIou = 0.5;
constexpr double kNegativeIou = 0.4;
constexpr double kDeltaClamp = 4.0;  // caps exp() in box decoding
constexpr double kSmoothL1Beta = 1.0;

inline BBox anchor_box(int i, int j, int a, int stride) {
  double cx = (j + 0.5) * stride;
  double cy = (i + 0.5) * stride;
  double base = kAnchorScales[a] * stride;
  double w = base * std::sqrt(kAnchorAspect);
  double h = base / std::sqrt(kAnchorAspect);
  return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

// Regression targets: center offsets scaled by anchor size, log size ratios.
inline std::array<double, 4> box_to_deltas(const BBox& anchor, const BBox& gt) {
  double acx = anchor.x + anchor.w / 2.0, acy = anchor.y + anchor.h / 2.0;
  double gcx = gt.x + gt.w / 2.0, gcy = gt.y + gt.h / 2.0;
  return {(gcx - acx) / anchor.w, (gcy - acy) / anchor.h,
          std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

inline BBox deltas_to_box(const BBox& anchor, const std::array<double, 4>& d) {
  double acx = anchor.x + anchor.w / 2.0, acy = anchor.y + anchor.h / 2.0;
  double cx = acx + d[0] * anchor.w;
  double cy = acy + d[1] * anchor.h;
  double w = anchor.w * std::exp(std::clamp(d[2], -kDeltaClamp, kDeltaClamp));
  double h = anchor.h * std::exp(std::clamp(d[3], -kDeltaClamp, kDeltaClamp));
  return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

// Per-anchor assignment for one level. label: -1 ignored, 0 background,
// k >= 1 the matched category. Ties on IoU go to the lowest GT index.
struct LevelAssignment {
  std::vector<int> labels;                                     // A*H*W entries
  std::vector<std::pair<std::size_t, std::array<double, 4>>> reg_targets;  // positives
};

inline LevelAssignment assign_anchors(int H, int W, int stride,
                                      const std::vector<BBox>& gt_boxes,
                                      const std::vector<int>& gt_categories) {
  if (gt_boxes.size() != gt_categories.size())
    throw std::invalid_argument("assign_anchors: box/category count mismatch");
  LevelAssignment out;
  out.labels.assign(static_cast<std::size_t>(H) * W * kAnchorsPerCell, 0);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int a = 0; a < kAnchorsPerCell; ++a) {
        std::size_t idx = (static_cast<std::size_t>(i) * W + j) * kAnchorsPerCell + a;
        BBox anc = anchor_box(i, j, a, stride);
        double best = 0.0;
        int best_gt = -1;
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
          double v = iou(anc, gt_boxes[g]);
          if (v > best) {
            best = v;
            best_gt = static_cast<int>(g);
          }
        }
        if (best >= kPositiveIou) {
          out.labels[idx] = gt_categories[static_cast<std::size_t>(best_gt)];
          out.reg_targets.emplace_back(
              idx, box_to_deltas(anc, gt_boxes[static_cast<std::size_t>(best_gt)]));
        } else if (best >= kNegativeIou) {
          out.labels[idx] = -1;
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Fused anchor losses. Per-anchor graph nodes would dominate the step cost,
// so each loss is one node with an analytic backward over the whole map.
// ---------------------------------------------------------------------------

// Sum over anchors with label >= 0 of (K+1)-way cross-entropy.
inline Var anchor_ce_sum(const Var& cls, const std::vector<int>& labels, int num_classes) {
  const int nc = num_classes + 1;
  if (cls->value.ndim() != 3)
    throw std::invalid_argument("anchor_ce_sum: expected (A*(K+1), H, W) map");
  std::size_t H = cls->value.shape[1], W = cls->value.shape[2];
  std::size_t plane = H * W;
  if (cls->value.shape[0] % static_cast<std::size_t>(nc) != 0 ||
      labels.size() != (cls->value.shape[0] / nc) * plane)
    throw std::invalid_argument("anchor_ce_sum: label count does not match map");
  double total = 0.0;
  for (std::size_t idx = 0; idx < labels.size(); ++idx) {
    int lab = labels[idx];
    if (lab < 0) continue;
    std::size_t cell = idx / kAnchorsPerCell;
    std::size_t a = idx % kAnchorsPerCell;
    double mx = -1e300;
    for (int k = 0; k < nc; ++k)
      mx = std::max(mx, cls->value.data[(a * nc + k) * plane + cell]);
    double z = 0.0;
    for (int k = 0; k < nc; ++k)
      z += std::exp(cls->value.data[(a * nc + k) * plane + cell] - mx);
    double lse = mx + std::log(z);
    total += lse - cls->value.data[(a * nc + lab) * plane + cell];
  }
  return detail::make_op(Tensor::scalar(total), {cls}, [labels, nc, plane](Node& n) {
    auto& p = *n.parents[0];
    double g = n.grad.data[0];
    for (std::size_t idx = 0; idx < labels.size(); ++idx) {
      int lab = labels[idx];
      if (lab < 0) continue;
      std::size_t cell = idx / kAnchorsPerCell;
      std::size_t a = idx % kAnchorsPerCell;
      double mx = -1e300;
      for (int k = 0; k < nc; ++k)
        mx = std::max(mx, p.value.data[(a * nc + k) * plane + cell]);
      double z = 0.0;
      for (int k = 0; k < nc; ++k)
        z += std::exp(p.value.data[(a * nc + k) * plane + cell] - mx);
      for (int k = 0; k < nc; ++k) {
        double soft = std::exp(p.value.data[(a * nc + k) * plane + cell] - mx) / z;
        p.grad.data[(a * nc + k) * plane + cell] += g * (soft - (k == lab ? 1.0 : 0.0));
      }
    }
  });
}

inline double smooth_l1(double x) {
  double ax = std::abs(x);
  return ax < kSmoothL1Beta ? 0.5 * x * x / kSmoothL1Beta : ax - 0.5 * kSmoothL1Beta;
}

// Sum over positive anchors of smooth-L1 across the 4 box deltas.
inline Var smooth_l1_sum(
    const Var& reg,
    const std::vector<std::pair<std::size_t, std::array<double, 4>>>& targets) {
  if (reg->value.ndim() != 3)
    throw std::invalid_argument("smooth_l1_sum: expected (A*4, H, W) map");
  std::size_t plane = reg->value.shape[1] * reg->value.shape[2];
  double total = 0.0;
  for (const auto& [idx, t] : targets) {
    std::size_t cell = idx / kAnchorsPerCell;
    std::size_t a = idx % kAnchorsPerCell;
    for (int d = 0; d < 4; ++d)
      total += smooth_l1(reg->value.data[(a * 4 + d) * plane + cell] - t[static_cast<std::size_t>(d)]);
  }
  return detail::make_op(Tensor::scalar(total), {reg}, [targets, plane](Node& n) {
    auto& p = *n.parents[0];
    double g = n.grad.data[0];
    for (const auto& [idx, t] : targets) {
      std::size_t cell = idx / kAnchorsPerCell;
      std::size_t a = idx % kAnchorsPerCell;
      for (int d = 0; d < 4; ++d) {
        double x = p.value.data[(a * 4 + d) * plane + cell] - t[static_cast<std::size_t>(d)];
        double dx = std::abs(x) < kSmoothL1Beta ? x / kSmoothL1Beta
                                                : (x > 0 ? 1.0 : -1.0);
        p.grad.data[(a * 4 + d) * plane + cell] += g * dx;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

struct PyramidGraph {
  std::vector<Var> levels;
  std::vector<int> strides;
};

class Detector {
 public:
  Detector() = default;

  Detector(const RunConfig& cfg, const SeedContext& seeds)
      : channels_(cfg.detector_channels),
        num_levels_(cfg.detector_levels),
        num_categories_(cfg.num_categories) {
    Rng rng = seeds.stream("detector");
    auto conv = [&](int cin, int cout) {
      double stddev = std::sqrt(2.0 / (cin * 9.0));
      return std::make_pair(
          parameter(gaussian_tensor({static_cast<std::size_t>(cout),
                                     static_cast<std::size_t>(cin), 3, 3},
                                    rng, stddev)),
          parameter(Tensor::zeros({static_cast<std::size_t>(cout)})));
    };
    // Three stride-2 convs reach stride 8 (level 0); one more per extra level.
    int n_convs = 2 + num_levels_;
    stem_w_.resize(static_cast<std::size_t>(n_convs));
    stem_b_.resize(static_cast<std::size_t>(n_convs));
    for (int c = 0; c < n_convs; ++c) {
      auto [w, b] = conv(c == 0 ? 3 : channels_, channels_);
      stem_w_[static_cast<std::size_t>(c)] = w;
      stem_b_[static_cast<std::size_t>(c)] = b;
    }
    int nc = num_categories_ + 1;
    cls_w_ = parameter(gaussian_tensor(
        {static_cast<std::size_t>(kAnchorsPerCell * nc),
         static_cast<std::size_t>(channels_), 1, 1},
        rng, 0.01));
    Tensor cls_bias = Tensor::zeros({static_cast<std::size_t>(kAnchorsPerCell * nc)});
    // Background prior: start near "everything is background" so early
    // training is not flooded with false positives.
    for (int a = 0; a < kAnchorsPerCell; ++a) cls_bias.data[static_cast<std::size_t>(a * nc)] = 4.0;
    cls_b_ = parameter(std::move(cls_bias));
    reg_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(kAnchorsPerCell * 4),
                                        static_cast<std::size_t>(channels_), 1, 1},
                                       rng, 0.01));
    reg_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(kAnchorsPerCell * 4)}));
  }

  int channels() const { return channels_; }
  int num_levels() const { return num_levels_; }
  int num_categories() const { return num_categories_; }
  int max_stride() const { return 8 << (num_levels_ - 1); }

  PyramidGraph extract_pyramid_graph(const Var& image) const {
    if (image->value.ndim() != 3 || image->value.shape[0] != 3)
      throw std::invalid_argument("extract_pyramid: expected (3, H, W) image, got shape " +
                                  shape_str(image->value.shape));
    if (image->value.shape[1] < static_cast<std::size_t>(max_stride()) ||
        image->value.shape[2] < static_cast<std::size_t>(max_stride()))
      throw std::invalid_argument("extract_pyramid: image " +
                                  std::to_string(image->value.shape[1]) + "x" +
                                  std::to_string(image->value.shape[2]) +
                                  " smaller than stride " + std::to_string(max_stride()));
    PyramidGraph out;
    Var x = image;
    int stride = 1;
    for (std::size_t c = 0; c < stem_w_.size(); ++c) {
      x = relu(conv2d(x, stem_w_[c], stem_b_[c], 2, 1));
      stride *= 2;
      if (stride >= 8) {
        out.levels.push_back(x);
        out.strides.push_back(stride);
      }
    }
    return out;
  }

  FeaturePyramid extract_pyramid(const Tensor& image) const {
    PyramidGraph g = extract_pyramid_graph(constant(image));
    FeaturePyramid p;
    p.strides = g.strides;
    for (const auto& l : g.levels) p.levels.push_back(l->value);
    return p;
  }

  Var cls_head_graph(const Var& level) const { return conv2d(level, cls_w_, cls_b_, 1, 0); }
  Var reg_head_graph(const Var& level) const { return conv2d(level, reg_w_, reg_b_, 1, 0); }

  // L_od = mean CE over the mined anchor set + mean smooth-L1 over positives
  // (each positive contributes the sum across its 4 deltas). The mined set is
  // every positive anchor plus the hardest negatives at a 3:1 negative ratio
  // (at least kMinHardNegatives), ranked by current background CE with ties
  // broken by anchor order; remaining negatives are ignored for the step.
  // Empty ground truth keeps the regression term exactly 0.
  static constexpr int kHardNegativeRatio = 3;
  static constexpr int kMinHardNegatives = 8;

  Var detection_loss_graph(const PyramidGraph& pyr, const std::vector<BBox>& gt_boxes,
                           const std::vector<int>& gt_categories) const {
    int nc = num_categories_ + 1;
    std::vector<Var> cls_maps;
    std::vector<LevelAssignment> asgs;
    std::size_t pos_count = 0;
    // (bg CE, level, anchor index) per negative, ranked hardest-first.
    std::vector<std::tuple<double, std::size_t, std::size_t>> negatives;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      const auto& lvl = pyr.levels[l];
      int H = static_cast<int>(lvl->value.shape[1]);
      int W = static_cast<int>(lvl->value.shape[2]);
      asgs.push_back(assign_anchors(H, W, pyr.strides[l], gt_boxes, gt_categories));
      cls_maps.push_back(cls_head_graph(lvl));
      pos_count += asgs.back().reg_targets.size();
      const Tensor& cls = cls_maps.back()->value;
      std::size_t plane = cls.shape[1] * cls.shape[2];
      const auto& labels = asgs.back().labels;
      for (std::size_t idx = 0; idx < labels.size(); ++idx) {
        if (labels[idx] != 0) continue;
        std::size_t cell = idx / kAnchorsPerCell;
        std::size_t a = idx % kAnchorsPerCell;
        double mx = -1e300;
        for (int k = 0; k < nc; ++k)
          mx = std::max(mx, cls.data[(a * nc + k) * plane + cell]);
        double z = 0.0;
        for (int k = 0; k < nc; ++k) z += std::exp(cls.data[(a * nc + k) * plane + cell] - mx);
        double bg_ce = mx + std::log(z) - cls.data[a * nc * plane + cell];
        negatives.emplace_back(bg_ce, l, idx);
      }
    }
    std::size_t keep = std::min(
        negatives.size(),
        std::max<std::size_t>(kHardNegativeRatio * pos_count, kMinHardNegatives));
    std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep),
                      negatives.end(), [](const auto& x, const auto& y) {
                        if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
                        if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
                        return std::get<2>(x) < std::get<2>(y);
                      });
    for (std::size_t k = keep; k < negatives.size(); ++k)
      asgs[std::get<1>(negatives[k])].labels[std::get<2>(negatives[k])] = -1;

    std::vector<Var> ce_sums, sl1_sums;
    std::size_t ce_count = 0;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      for (int lab : asgs[l].labels)
        if (lab >= 0) ++ce_count;
      ce_sums.push_back(anchor_ce_sum(cls_maps[l], asgs[l].labels, num_categories_));
      if (!asgs[l].reg_targets.empty())
        sl1_sums.push_back(smooth_l1_sum(reg_head_graph(pyr.levels[l]), asgs[l].reg_targets));
    }
    Var ce = ce_sums.size() == 1 ? ce_sums[0] : sum(stack_scalars(ce_sums));
    Var loss = scale(ce, ce_count > 0 ? 1.0 / static_cast<double>(ce_count) : 0.0);
    if (pos_count > 0) {
      Var sl1 = sl1_sums.size() == 1 ? sl1_sums[0] : sum(stack_scalars(sl1_sums));
      loss = add(loss, scale(sl1, 1.0 / static_cast<double>(pos_count)));
    }
    return loss;
  }

  double detection_loss(const Tensor& image, const std::vector<BBox>& gt_boxes,
                        const std::vector<int>& gt_categories) const {
    PyramidGraph pyr = extract_pyramid_graph(constant(image));
    return detection_loss_graph(pyr, gt_boxes, gt_categories)->value.item();
  }

  std::vector<Detection> detect(const Tensor& image, double score_threshold,
                                double nms_iou) const {
    PyramidGraph pyr = extract_pyramid_graph(constant(image));
    int nc = num_categories_ + 1;
    std::vector<Detection> candidates;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      Tensor cls = cls_head_graph(pyr.levels[l])->value;
      Tensor reg = reg_head_graph(pyr.levels[l])->value;
      int H = static_cast<int>(cls.shape[1]);
      int W = static_cast<int>(cls.shape[2]);
      std::size_t plane = static_cast<std::size_t>(H) * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int a = 0; a < kAnchorsPerCell; ++a) {
            std::size_t cell = static_cast<std::size_t>(i) * W + j;
            double mx = -1e300;
            for (int k = 0; k < nc; ++k)
              mx = std::max(mx, cls.data[(static_cast<std::size_t>(a) * nc + k) * plane + cell]);
            double z = 0.0;
            for (int k = 0; k < nc; ++k)
              z += std::exp(cls.data[(static_cast<std::size_t>(a) * nc + k) * plane + cell] - mx);
            for (int k = 1; k < nc; ++k) {
              double p = std::exp(cls.data[(static_cast<std::size_t>(a) * nc + k) * plane + cell] - mx) / z;
              if (p < score_threshold) continue;
              std::array<double, 4> d;
              for (int c = 0; c < 4; ++c)
                d[static_cast<std::size_t>(c)] =
                    reg.data[(static_cast<std::size_t>(a) * 4 + c) * plane + cell];
              Detection det;
              det.box = deltas_to_box(anchor_box(i, j, a, pyr.strides[l]), d);
              det.category = k;
              det.score = p;
              candidates.push_back(det);
            }
          }
    }
    return nms(candidates, nms_iou);
  }

  // Greedy per-category NMS; suppresses boxes with IoU strictly above the
  // threshold. Ties in score keep the earlier candidate.
  static std::vector<Detection> nms(const std::vector<Detection>& candidates,
                                    double nms_iou) {
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return candidates[a].score > candidates[b].score;
    });
    std::vector<bool> suppressed(candidates.size(), false);
    std::vector<Detection> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      std::size_t i = order[oi];
      if (suppressed[i]) continue;
      kept.push_back(candidates[i]);
      for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
        std::size_t j = order[oj];
        if (suppressed[j] || candidates[j].category != candidates[i].category) continue;
        if (iou(candidates[i].box, candidates[j].box) > nms_iou) suppressed[j] = true;
      }
    }
    return kept;
  }

  // Feature fed to the squeeze network: the coarsest level by default,
  // a specific level by index, or the mean of all levels pooled onto the
  // coarsest grid.
  Var select_alignment_feature_graph(const PyramidGraph& pyr,
                                     const std::string& mode) const {
    if (pyr.levels.empty())
      throw std::invalid_argument("select_alignment_feature: empty pyramid");
    if (mode == "top") return pyr.levels.back();
    if (mode == "mean") {
      int top_stride = pyr.strides.back();
      Var acc;
      for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
        int factor = top_stride / pyr.strides[l];
        Var v = factor > 1 ? avg_pool(pyr.levels[l], factor) : pyr.levels[l];
        acc = acc ? add(acc, v) : v;
      }
      return scale(acc, 1.0 / static_cast<double>(pyr.levels.size()));
    }
    std::size_t idx = 0;
    try {
      idx = static_cast<std::size_t>(std::stoul(mode));
    } catch (const std::exception&) {
      throw std::invalid_argument("select_alignment_feature: unknown mode '" + mode + "'");
    }
    if (idx >= pyr.levels.size())
      throw std::out_of_range("select_alignment_feature: level " + mode + " out of range");
    return pyr.levels[idx];
  }

  Tensor select_alignment_feature(const FeaturePyramid& pyr, const std::string& mode) const {
    PyramidGraph g;
    g.strides = pyr.strides;
    for (const auto& l : pyr.levels) g.levels.push_back(constant(l));
    return select_alignment_feature_graph(g, mode)->value;
  }

  NamedParams params() const {
    NamedParams p;
    for (std::size_t c = 0; c < stem_w_.size(); ++c) {
      std::string base = "detector.stem" + std::to_string(c + 1);
      p.emplace_back(base + ".w", stem_w_[c]);
      p.emplace_back(base + ".b", stem_b_[c]);
    }
    p.emplace_back("detector.head.cls.w", cls_w_);
    p.emplace_back("detector.head.cls.b", cls_b_);
    p.emplace_back("detector.head.reg.w", reg_w_);
    p.emplace_back("detector.head.reg.b", reg_b_);
    return p;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params()) n += v->value.size();
    return n;
  }

 private:
  int channels_ = 0, num_levels_ = 0, num_categories_ = 0;
  std::vector<Var> stem_w_, stem_b_;
  Var cls_w_, cls_b_, reg_w_, reg_b_;
};

inline std::string format_detection_line(int image_id, const Detection& d) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d", image_id,
                d.box.x, d.box.y, d.box.w, d.box.h, d.score, d.category);
  return buf;
}

}  // namespace leapd
