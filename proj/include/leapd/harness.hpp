// Experiment drivers: evaluating a detector over a dataset, the full
// train-run (one-step or two-step), and the prompt-length ablation.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "leapd/datasets.hpp"
#include "leapd/detector.hpp"
#include "leapd/evaluation.hpp"
#include "leapd/training.hpp"

namespace leapd {

inline EvalReport evaluate_detector(const Detector& det, const std::vector<ImageSample>& samples,
                                    const RunConfig& cfg) {
  std::vector<EvalDetection> dets;
  std::vector<EvalBox> gts;
  std::map<int, std::vector<BBox>> ignored;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    int image_id = static_cast<int>(i);
    const auto& s = samples[i];
    for (const auto& d : det.detect(s.image, cfg.score_threshold, cfg.nms_iou))
      dets.push_back(EvalDetection{image_id, d.box, d.score, d.category});
    for (std::size_t b = 0; b < s.gt_boxes.size(); ++b)
      gts.push_back(EvalBox{image_id, s.gt_boxes[b], s.gt_categories[b]});
    if (!s.ignored_regions.empty()) ignored[image_id] = s.ignored_regions;
  }
  return map_metrics(filter_ignored(dets, ignored), gts);
}

inline std::string eval_row_json(int epoch, const EvalReport& rep, const std::string& tag) {
  std::ostringstream os;
  os << "{\"epoch\":" << epoch << ",\"eval\":\"" << tag << "\"";
  if (rep.has_metrics) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), ",\"map50\":%.17g,\"map75\":%.17g,\"map50_95\":%.17g",
                  rep.map50, rep.map75, rep.map50_95);
    os << buf;
  } else {
    os << ",\"map50\":null,\"map75\":null,\"map50_95\":null";
  }
  os << ",\"images\":" << rep.images << ",\"gt\":" << rep.gt_count << ",\"detections\":"
     << rep.det_count << "}";
  return os.str();
}

inline NamedTensors materialize(const NamedParams& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const auto& [name, v] : params) out.emplace_back(name, v->value);
  return out;
}

// Trains per the config and writes checkpoint.bin + metrics.jsonl under
// out_dir. Two-step mode tunes prompts first (detection loss off), then
// trains detector and squeeze network against the frozen bank.
inline TrainResult train_run(const RunConfig& cfg, const std::vector<ImageSample>& train_samples,
                             const std::vector<ImageSample>* eval_samples,
                             const std::string& out_dir, bool two_step = false) {
  if (train_samples.empty()) throw std::invalid_argument("train: dataset is empty");
  if (two_step && cfg.prompt_mode != PromptMode::learnable)
    throw std::invalid_argument("two-step training requires prompt_mode=learnable");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot write metrics log " + metrics_path);

  DomainVocabulary vocab = vocabulary_for(train_samples, cfg);
  const std::vector<ImageSample>& eval_set = eval_samples ? *eval_samples : train_samples;
  const std::string eval_tag = eval_samples ? "eval" : "train";

  TrainResult result;
  result.metrics_path = metrics_path;
  result.checkpoint_path = ckpt_path;

  auto epoch_eval = [&](TrainState& st, int epoch, std::ostream& out) {
    EvalReport rep = evaluate_detector(st.model.detector, eval_set, st.cfg);
    out << eval_row_json(epoch, rep, eval_tag) << "\n";
  };
  auto no_eval = [](TrainState&, int, std::ostream&) {};

  if (!two_step) {
    TrainState st = make_train_state(cfg, vocab);
    result.steps = run_epochs(st, train_samples, metrics, epoch_eval);
    save_checkpoint(ckpt_path, materialize(collect_checkpoint_params(st.model, cfg)));
  } else {
    RunConfig phase1 = cfg;
    phase1.lambda1 = 0.0;
    phase1.lambda3 = 0.0;
    phase1.lambda4 = 0.0;
    if (!(phase1.lambda2 > 0))
      throw std::invalid_argument("two-step training requires lambda2 > 0");
    TrainState st = make_train_state(phase1, vocab);
    result.steps = run_epochs(st, train_samples, metrics, no_eval, "prompts");
    st.cfg = cfg;
    st.domain_terms_active = cfg.lambda2 > 0 || cfg.lambda3 > 0 || cfg.lambda4 > 0;
    st.step = 0;
    freeze_prompts(st);
    result.steps += run_epochs(st, train_samples, metrics, epoch_eval, "detector");
    save_checkpoint(ckpt_path, materialize(collect_checkpoint_params(st.model, cfg)));
  }
  if (!metrics) throw std::runtime_error("write failure on metrics log " + metrics_path);
  return result;
}

// ---------------------------------------------------------------------------
// Prompt-length ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string label;
  int prompt_len = 0;  // 0 for the manual row
  EvalReport report;
  std::size_t detector_params = 0;
  std::string error;  // non-empty when this row's training failed
};

struct AblationTable {
  std::vector<AblationRow> rows;
};

inline AblationTable ablate_prompt_length(const std::vector<int>& lengths,
                                          const RunConfig& base_cfg,
                                          const std::vector<ImageSample>& train_samples,
                                          const std::vector<ImageSample>& eval_samples,
                                          const std::string& out_root) {
  std::set<int> seen;
  for (int n : lengths) {
    if (n < 1 || n > 64)
      throw std::invalid_argument("ablate: prompt length " + std::to_string(n) +
                                  " outside [1, 64]");
    if (!seen.insert(n).second)
      throw std::invalid_argument("ablate: duplicate length " + std::to_string(n));
  }
  if (lengths.empty()) throw std::invalid_argument("ablate: no lengths given");
  namespace fs = std::filesystem;
  AblationTable table;

  auto run_row = [&](const RunConfig& cfg, const std::string& label, int n) {
    AblationRow row;
    row.label = label;
    row.prompt_len = n;
    try {
      std::string dir = (fs::path(out_root) / label).string();
      train_run(cfg, train_samples, &eval_samples, dir);
      NamedTensors entries = load_checkpoint((fs::path(dir) / "checkpoint.bin").string());
      DomainVocabulary vocab = vocabulary_for(train_samples, cfg);
      TrainState st = make_train_state(cfg, vocab);
      restore_params(st, entries);
      row.report = evaluate_detector(st.model.detector, eval_samples, cfg);
      row.detector_params = st.model.detector.param_count();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  };

  RunConfig manual_cfg = base_cfg;
  manual_cfg.prompt_mode = PromptMode::manual;
  run_row(manual_cfg, "manual", 0);
  for (int n : lengths) {
    RunConfig cfg = base_cfg;
    cfg.prompt_mode = PromptMode::learnable;
    cfg.prompt_len = n;
    run_row(cfg, "n" + std::to_string(n), n);
  }
  return table;
}

inline std::string render_ablation(const AblationTable& table) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-8s  %8s  %8s  %9s  %14s", "prompts", "mAP50", "mAP75",
                "mAP50:95", "detector_params");
  os << buf << "\n";
  for (const auto& r : table.rows) {
    if (!r.error.empty()) {
      std::snprintf(buf, sizeof(buf), "%-8s  failed: %s", r.label.c_str(), r.error.c_str());
    } else {
      std::snprintf(buf, sizeof(buf), "%-8s  %8.4f  %8.4f  %9.4f  %14zu", r.label.c_str(),
                    r.report.map50, r.report.map75, r.report.map50_95, r.detector_params);
    }
    os << buf << "\n";
  }
  return os.str();
}

inline std::string ablation_row_json(const AblationRow& r) {
  std::ostringstream os;
  os << "{\"prompts\":\"" << r.label << "\"";
  if (!r.error.empty()) {
    os << ",\"error\":\"" << r.error << "\"}";
    return os.str();
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                ",\"map50\":%.17g,\"map75\":%.17g,\"map50_95\":%.17g,\"detector_params\":%zu}",
                r.report.map50, r.report.map75, r.report.map50_95, r.detector_params);
  os << buf;
  return os.str();
}

}  // namespace leapd
