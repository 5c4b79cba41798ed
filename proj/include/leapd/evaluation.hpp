// COCO-style detection metrics: greedy score-ordered matching, 101-point
// interpolated average precision, mAP at 0.5 / 0.75 / 0.50:0.95. Recall
// thresholds are compared in integer arithmetic (100*tp >= j*npos) so
// results are reproducible bit-for-bit by an independent reference.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "leapd/geometry.hpp"

namespace leapd {

struct EvalDetection {
  int image_id = 0;
  BBox box;
  double score = 0.0;
  int category = 0;
};

struct EvalBox {
  int image_id = 0;
  BBox box;
  int category = 0;
};

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
  return t;
}

// Detections covered >50% by any ignored region are dropped before matching.
inline std::vector<EvalDetection> filter_ignored(
    const std::vector<EvalDetection>& dets,
    const std::map<int, std::vector<BBox>>& ignored_by_image) {
  std::vector<EvalDetection> kept;
  for (const auto& d : dets) {
    auto it = ignored_by_image.find(d.image_id);
    bool drop = false;
    if (it != ignored_by_image.end())
      for (const auto& region : it->second)
        if (intersection_over_area(d.box, region) > 0.5) {
          drop = true;
          break;
        }
    if (!drop) kept.push_back(d);
  }
  return kept;
}

// AP for one category. Greedy matching in descending score order (ties keep
// input order); each detection takes the unmatched GT of highest IoU >=
// threshold in its image, ties going to the lowest GT index.
inline double average_precision(const std::vector<EvalDetection>& dets,
                                const std::vector<EvalBox>& gts, double iou_threshold) {
  const std::size_t npos = gts.size();
  if (npos == 0) return 0.0;
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> gt_matched(gts.size(), false);
  std::vector<int> tp_flags;
  tp_flags.reserve(order.size());
  for (std::size_t oi : order) {
    const auto& d = dets[oi];
    double best_iou = 0.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_matched[g] || gts[g].image_id != d.image_id) continue;
      double v = iou(d.box, gts[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      gt_matched[best_g] = true;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }
  // PR points at every rank; 101-point interpolation over recall j/100.
  std::vector<std::size_t> cum_tp(tp_flags.size());
  std::size_t running = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    running += static_cast<std::size_t>(tp_flags[i]);
    cum_tp[i] = running;
  }
  double ap_sum = 0.0;
  for (int j = 0; j <= 100; ++j) {
    double best_p = 0.0;
    for (std::size_t i = 0; i < cum_tp.size(); ++i) {
      if (100 * cum_tp[i] >= static_cast<std::size_t>(j) * npos) {
        double p = static_cast<double>(cum_tp[i]) / static_cast<double>(i + 1);
        best_p = std::max(best_p, p);
      }
    }
    ap_sum += best_p;
  }
  return ap_sum / 101.0;
}

struct EvalReport {
  bool has_metrics = false;
  double map50 = 0.0, map75 = 0.0, map50_95 = 0.0;
  std::vector<int> categories;             // ids that had ground truth
  std::vector<std::vector<double>> ap;     // [category index][threshold index]
  std::size_t images = 0, gt_count = 0, det_count = 0;
  std::string warning;
};

inline EvalReport map_metrics(const std::vector<EvalDetection>& dets,
                              const std::vector<EvalBox>& gts) {
  EvalReport rep;
  std::set<int> image_ids;
  for (const auto& g : gts) image_ids.insert(g.image_id);
  for (const auto& d : dets) image_ids.insert(d.image_id);
  rep.images = image_ids.size();
  rep.gt_count = gts.size();
  rep.det_count = dets.size();
  std::set<int> cats;
  for (const auto& g : gts) cats.insert(g.category);
  if (cats.empty()) {
    rep.warning = "no ground truth boxes; metrics undefined";
    return rep;
  }
  const std::vector<double> thresholds = coco_iou_thresholds();
  for (int c : cats) {
    std::vector<EvalDetection> cd;
    std::vector<EvalBox> cg;
    for (const auto& d : dets)
      if (d.category == c) cd.push_back(d);
    for (const auto& g : gts)
      if (g.category == c) cg.push_back(g);
    std::vector<double> row;
    for (double t : thresholds) row.push_back(average_precision(cd, cg, t));
    rep.categories.push_back(c);
    rep.ap.push_back(std::move(row));
  }
  double s50 = 0, s75 = 0, s_all = 0;
  for (const auto& row : rep.ap) {
    s50 += row[0];
    s75 += row[5];
    double s = 0;
    for (double v : row) s += v;
    s_all += s / static_cast<double>(row.size());
  }
  double n = static_cast<double>(rep.ap.size());
  rep.map50 = s50 / n;
  rep.map75 = s75 / n;
  rep.map50_95 = s_all / n;
  rep.has_metrics = true;
  return rep;
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string name;
  double map50 = 0, map75 = 0, map50_95 = 0;
  double d50 = 0, d75 = 0, d50_95 = 0;
  bool is_baseline = false;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::string baseline;
};

inline ComparisonTable compare_runs(const std::vector<std::pair<std::string, EvalReport>>& runs,
                                    const std::string& baseline) {
  if (runs.size() < 2) throw std::invalid_argument("compare_runs: need at least 2 runs");
  std::set<std::string> seen;
  for (const auto& [name, rep] : runs)
    if (!seen.insert(name).second)
      throw std::invalid_argument("compare_runs: duplicate run name '" + name + "'");
  const EvalReport* base = nullptr;
  for (const auto& [name, rep] : runs)
    if (name == baseline) base = &rep;
  if (!base) throw std::invalid_argument("compare_runs: baseline run '" + baseline + "' not found");
  ComparisonTable table;
  table.baseline = baseline;
  for (const auto& [name, rep] : runs) {
    ComparisonRow row;
    row.name = name;
    row.map50 = rep.map50;
    row.map75 = rep.map75;
    row.map50_95 = rep.map50_95;
    row.d50 = rep.map50 - base->map50;
    row.d75 = rep.map75 - base->map75;
    row.d50_95 = rep.map50_95 - base->map50_95;
    row.is_baseline = name == baseline;
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string render_comparison(const ComparisonTable& table) {
  std::size_t name_w = 4;
  for (const auto& r : table.rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %9s  %7s  %7s  %8s", static_cast<int>(name_w),
                "run", "mAP50", "mAP75", "mAP50:95", "d50", "d75", "d50:95");
  os << buf << "\n";
  for (const auto& r : table.rows) {
    if (r.is_baseline)
      std::snprintf(buf, sizeof(buf), "%-*s  %8.4f  %8.4f  %9.4f  %7s  %7s  %8s",
                    static_cast<int>(name_w), r.name.c_str(), r.map50, r.map75, r.map50_95,
                    "-", "-", "-");
    else
      std::snprintf(buf, sizeof(buf), "%-*s  %8.4f  %8.4f  %9.4f  %+7.4f  %+7.4f  %+8.4f",
                    static_cast<int>(name_w), r.name.c_str(), r.map50, r.map75, r.map50_95,
                    r.d50, r.d75, r.d50_95);
    os << buf << "\n";
  }
  return os.str();
}

inline std::string report_text(const EvalReport& rep) {
  std::ostringstream os;
  if (!rep.has_metrics) {
    os << "metrics: n/a (" << rep.warning << ")\n";
  } else {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mAP50    %.4f\nmAP75    %.4f\nmAP50:95 %.4f\n",
                  rep.map50, rep.map75, rep.map50_95);
    os << buf;
    for (std::size_t c = 0; c < rep.categories.size(); ++c) {
      std::snprintf(buf, sizeof(buf), "AP50[cat %d] %.4f\n", rep.categories[c], rep.ap[c][0]);
      os << buf;
    }
  }
  os << "images " << rep.images << ", gt " << rep.gt_count << ", detections " << rep.det_count
     << "\n";
  return os.str();
}

}  // namespace leapd
