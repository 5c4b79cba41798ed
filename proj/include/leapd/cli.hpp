// Command-line entry points. Verbs: gen-data, train, eval, compare, ablate,
// strip, render-overlays. Every verb writes its artifacts under one output
// directory (flag --out, or $LEAPD_OUT/<verb>), refuses to overwrite
// existing artifacts without --force, and drops a manifest.json recording
// version, seed, config hash, and the full config text, from which the run
// can be reproduced. Exit codes: 0 success, 1 usage error, 2 runtime failure.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "leapd/checkpoint.hpp"
#include "leapd/config.hpp"
#include "leapd/datasets.hpp"
#include "leapd/detector.hpp"
#include "leapd/evaluation.hpp"
#include "leapd/harness.hpp"
#include "leapd/render.hpp"
#include "leapd/training.hpp"
#include "leapd/version.hpp"

namespace leapd {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string out;
  bool force = false;
};

inline void add_common(CLI::App* sub, CommonFlags& f, bool with_config = true) {
  if (with_config) sub->add_option("--config", f.config_path, "config file (key = value lines)");
  sub->add_option("--set", f.sets, "config override key=value (repeatable)");
  sub->add_option("--seed", f.seed, "override the config seed");
  sub->add_option("--out", f.out, "output directory (default $LEAPD_OUT/<verb>)");
  sub->add_flag("--force", f.force, "overwrite existing artifacts");
}

inline std::string resolve_out(const std::string& out, const char* verb) {
  if (!out.empty()) return out;
  const char* env = std::getenv("LEAPD_OUT");
  if (env && *env) return (fs::path(env) / verb).string();
  throw UsageError("no output directory: pass --out or set LEAPD_OUT");
}

inline void apply_overrides(RunConfig& cfg, const CommonFlags& f) {
  for (const auto& kv : f.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_config_kv(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!f.seed.empty()) apply_config_kv(cfg, "seed", f.seed);
  cfg.validate();
}

inline RunConfig build_config(const CommonFlags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  apply_overrides(cfg, f);
  return cfg;
}

inline void ensure_writable(const fs::path& dir, std::initializer_list<const char*> artifacts,
                            bool force) {
  if (force) return;
  for (const char* a : artifacts)
    if (fs::exists(dir / a))
      throw std::runtime_error((dir / a).string() + " already exists; use --force to overwrite");
}

inline std::string hash_hex(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

inline void write_manifest(const fs::path& out_dir, const char* verb, const RunConfig& cfg,
                           json extra = json::object()) {
  json m;
  m["version"] = std::string("v") + kVersion;
  m["verb"] = verb;
  m["seed"] = cfg.seed;
  m["config_hash"] = hash_hex(cfg);
  m["config_text"] = serialize_config(cfg);
  for (auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << m.dump(2) << "\n";
}

inline RunConfig config_from_manifest(const std::string& run_dir, const CommonFlags& f) {
  fs::path path = fs::path(run_dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json m = json::parse(in);
  RunConfig cfg = load_config_text(m.at("config_text").get<std::string>());
  apply_overrides(cfg, f);
  return cfg;
}

inline std::vector<DomainLabel> parse_domain_list(const std::string& text) {
  std::vector<DomainLabel> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ';'))
    if (!detail::trim(cur).empty()) out.push_back(parse_domain_triple(detail::trim(cur)));
  if (out.empty()) throw UsageError("empty domain list '" + text + "'");
  return out;
}

inline std::vector<ImageSample> load_dataset(const std::string& dir, const RunConfig& cfg,
                                             Split split) {
  DatasetIndex index = load_visdrone(dir, (fs::path(dir) / "metadata.txt").string(), split,
                                     parse_domain_triple(cfg.fallback_domain),
                                     cfg.num_categories);
  for (const auto& w : index.warnings) std::cerr << "warning: " << w << "\n";
  return load_all(index, cfg.num_categories);
}

inline Detector load_detector(const RunConfig& cfg, const NamedTensors& entries) {
  SeedContext seeds = seed_all(cfg.seed);
  Detector det(cfg, seeds);
  for (auto& [name, v] : det.params()) {
    bool found = false;
    for (const auto& [ename, et] : entries)
      if (ename == name) {
        if (!v->value.same_shape(et))
          throw std::runtime_error("checkpoint shape mismatch for " + name);
        v->value = et;
        found = true;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint missing key " + name);
  }
  return det;
}

inline json report_json(const EvalReport& rep) {
  json j;
  j["has_metrics"] = rep.has_metrics;
  if (rep.has_metrics) {
    j["map50"] = rep.map50;
    j["map75"] = rep.map75;
    j["map50_95"] = rep.map50_95;
    j["categories"] = rep.categories;
    j["ap"] = rep.ap;
  } else {
    j["map50"] = nullptr;
    j["map75"] = nullptr;
    j["map50_95"] = nullptr;
    j["warning"] = rep.warning;
  }
  j["images"] = rep.images;
  j["gt"] = rep.gt_count;
  j["detections"] = rep.det_count;
  return j;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport rep;
  rep.has_metrics = j.at("has_metrics").get<bool>();
  if (rep.has_metrics) {
    rep.map50 = j.at("map50").get<double>();
    rep.map75 = j.at("map75").get<double>();
    rep.map50_95 = j.at("map50_95").get<double>();
    if (j.contains("categories")) rep.categories = j.at("categories").get<std::vector<int>>();
    if (j.contains("ap")) rep.ap = j.at("ap").get<std::vector<std::vector<double>>>();
  }
  rep.images = j.value("images", 0u);
  rep.gt_count = j.value("gt", 0u);
  rep.det_count = j.value("detections", 0u);
  return rep;
}

// Grouped-bar chart of a comparison table (one group per metric).
inline Tensor comparison_chart(const ComparisonTable& table) {
  const int bar_w = 10, gap = 4, group_gap = 22, margin = 14, chart_h = 100;
  int runs = static_cast<int>(table.rows.size());
  int group_w = runs * (bar_w + gap);
  int W = margin * 2 + group_w * 3 + group_gap * 2;
  int H = chart_h + margin * 2;
  Tensor img = Tensor::full({3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, 1.0);
  static const double palette[6][3] = {{0.25, 0.45, 0.85}, {0.85, 0.35, 0.25},
                                       {0.30, 0.70, 0.35}, {0.80, 0.65, 0.20},
                                       {0.60, 0.35, 0.75}, {0.35, 0.65, 0.70}};
  for (int metric = 0; metric < 3; ++metric) {
    for (int r = 0; r < runs; ++r) {
      const auto& row = table.rows[static_cast<std::size_t>(r)];
      double v = metric == 0 ? row.map50 : metric == 1 ? row.map75 : row.map50_95;
      v = std::min(1.0, std::max(0.0, v));
      int h = static_cast<int>(std::lround(v * chart_h));
      const double* col = palette[r % 6];
      int x0 = margin + metric * (group_w + group_gap) + r * (bar_w + gap);
      for (int y = H - margin - h; y < H - margin; ++y)
        for (int x = x0; x < x0 + bar_w; ++x) put_pixel(img, x, y, col[0], col[1], col[2]);
    }
  }
  // Baseline axis.
  for (int x = margin / 2; x < W - margin / 2; ++x)
    put_pixel(img, x, H - margin, 0.1, 0.1, 0.1);
  return img;
}

// ---------------------------------------------------------------------------
// Verb handlers
// ---------------------------------------------------------------------------

inline int handle_gen_data(const CommonFlags& f, const std::string& train_domains,
                           const std::string& heldout_domains, int per_domain,
                           int heldout_per_domain) {
  RunConfig cfg = build_config(f);
  std::string out = resolve_out(f.out, "gen-data");
  fs::create_directories(out);
  if (!f.force && (fs::exists(fs::path(out) / "train") || fs::exists(fs::path(out) / "heldout")))
    throw std::runtime_error("dataset already exists in " + out + "; use --force to overwrite");
  SplitParams params;
  params.canvas_h = cfg.image_size;
  params.canvas_w = cfg.image_size;
  params.objects_min = cfg.objects_min;
  params.objects_max = cfg.objects_max;
  params.num_categories = cfg.num_categories;
  auto [train, heldout] =
      make_domain_split(parse_domain_list(train_domains), parse_domain_list(heldout_domains),
                        per_domain, cfg.seed, out, params, heldout_per_domain);
  write_manifest(out, "gen-data", cfg,
                 {{"train_domains", train_domains},
                  {"heldout_domains", heldout_domains},
                  {"per_domain", per_domain},
                  {"heldout_per_domain", heldout_per_domain},
                  {"train_samples", train.samples.size()},
                  {"heldout_samples", heldout.samples.size()}});
  std::cout << "wrote " << train.samples.size() << " train and " << heldout.samples.size()
            << " heldout scenes under " << out << "\n";
  return 0;
}

inline int handle_train(const CommonFlags& f, const std::string& data_dir,
                        const std::string& eval_dir, bool two_step) {
  if (data_dir.empty()) throw UsageError("train requires --data");
  RunConfig cfg = build_config(f);
  std::string out = resolve_out(f.out, "train");
  fs::create_directories(out);
  ensure_writable(out, {"checkpoint.bin", "metrics.jsonl", "manifest.json"}, f.force);
  std::vector<ImageSample> samples = load_dataset(data_dir, cfg, Split::train);
  std::vector<ImageSample> eval_samples;
  if (!eval_dir.empty()) eval_samples = load_dataset(eval_dir, cfg, Split::heldout);
  TrainResult res = train_run(cfg, samples, eval_dir.empty() ? nullptr : &eval_samples, out,
                              two_step);
  write_manifest(out, "train", cfg,
                 {{"data", data_dir},
                  {"eval_data", eval_dir},
                  {"two_step", two_step},
                  {"steps", res.steps}});
  std::cout << "checkpoint: " << res.checkpoint_path << "\nmetrics: " << res.metrics_path
            << "\n";
  return 0;
}

inline int handle_eval(const CommonFlags& f, const std::string& run_dir,
                       const std::string& data_dir) {
  if (run_dir.empty()) throw UsageError("eval requires --run");
  if (data_dir.empty()) throw UsageError("eval requires --data");
  RunConfig cfg = config_from_manifest(run_dir, f);
  NamedTensors entries = load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string());
  Detector det = load_detector(cfg, entries);
  std::vector<ImageSample> samples = load_dataset(data_dir, cfg, Split::val);

  std::string out = f.out.empty() ? run_dir : f.out;
  fs::create_directories(out);
  ensure_writable(out, {"report.txt", "report.jsonl", "detections.txt"}, f.force);

  std::vector<EvalDetection> dets;
  std::ofstream dump(fs::path(out) / "detections.txt");
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& d : det.detect(samples[i].image, cfg.score_threshold, cfg.nms_iou)) {
      dets.push_back(EvalDetection{static_cast<int>(i), d.box, d.score, d.category});
      dump << format_detection_line(static_cast<int>(i), d) << "\n";
    }
  std::vector<EvalBox> gts;
  std::map<int, std::vector<BBox>> ignored;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t b = 0; b < samples[i].gt_boxes.size(); ++b)
      gts.push_back(EvalBox{static_cast<int>(i), samples[i].gt_boxes[b],
                            samples[i].gt_categories[b]});
    if (!samples[i].ignored_regions.empty())
      ignored[static_cast<int>(i)] = samples[i].ignored_regions;
  }
  EvalReport rep = map_metrics(filter_ignored(dets, ignored), gts);
  if (!rep.has_metrics) std::cerr << "warning: " << rep.warning << "\n";

  std::ofstream txt(fs::path(out) / "report.txt");
  txt << report_text(rep);
  std::ofstream jl(fs::path(out) / "report.jsonl");
  jl << report_json(rep).dump() << "\n";
  if (!f.out.empty()) write_manifest(out, "eval", cfg, {{"run", run_dir}, {"data", data_dir}});
  std::cout << report_text(rep);
  return 0;
}

inline int handle_compare(const CommonFlags& f, const std::string& runs_csv,
                          const std::string& baseline) {
  if (runs_csv.empty()) throw UsageError("compare requires --runs");
  std::vector<std::pair<std::string, EvalReport>> runs;
  std::istringstream in(runs_csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    fs::path report = fs::path(item) / "report.jsonl";
    std::ifstream rin(report);
    if (!rin) throw std::runtime_error("cannot open " + report.string() + " (run eval first)");
    json j = json::parse(rin);
    std::string name = fs::path(item).filename().string();
    if (name.empty()) name = item;
    runs.emplace_back(name, report_from_json(j));
  }
  if (runs.size() < 2) throw UsageError("compare requires at least 2 runs");
  std::string base = baseline.empty() ? runs.front().first : baseline;
  ComparisonTable table = compare_runs(runs, base);

  std::string out = resolve_out(f.out, "compare");
  fs::create_directories(out);
  ensure_writable(out, {"comparison.txt", "comparison.jsonl", "comparison.ppm"}, f.force);
  std::string text = render_comparison(table);
  std::ofstream txt(fs::path(out) / "comparison.txt");
  txt << text;
  std::ofstream jl(fs::path(out) / "comparison.jsonl");
  for (const auto& r : table.rows) {
    json j = {{"run", r.name},      {"map50", r.map50}, {"map75", r.map75},
              {"map50_95", r.map50_95}, {"d50", r.d50},     {"d75", r.d75},
              {"d50_95", r.d50_95},     {"baseline", r.is_baseline}};
    jl << j.dump() << "\n";
  }
  write_ppm((fs::path(out) / "comparison.ppm").string(), comparison_chart(table));
  std::cout << text;
  return 0;
}

inline int handle_ablate(const CommonFlags& f, const std::string& data_dir,
                         const std::string& eval_dir, const std::string& lengths_csv) {
  if (data_dir.empty()) throw UsageError("ablate requires --data");
  RunConfig cfg = build_config(f);
  std::vector<int> lengths;
  std::istringstream in(lengths_csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    try {
      lengths.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("--lengths expects integers, got '" + item + "'");
    }
  }
  std::string out = resolve_out(f.out, "ablate");
  fs::create_directories(out);
  ensure_writable(out, {"ablation.txt", "ablation.jsonl"}, f.force);
  std::vector<ImageSample> train_samples = load_dataset(data_dir, cfg, Split::train);
  std::vector<ImageSample> eval_samples =
      eval_dir.empty() ? train_samples : load_dataset(eval_dir, cfg, Split::heldout);
  AblationTable table = ablate_prompt_length(lengths, cfg, train_samples, eval_samples, out);
  std::string text = render_ablation(table);
  std::ofstream txt(fs::path(out) / "ablation.txt");
  txt << text;
  std::ofstream jl(fs::path(out) / "ablation.jsonl");
  for (const auto& r : table.rows) jl << ablation_row_json(r) << "\n";
  write_manifest(out, "ablate", cfg, {{"data", data_dir}, {"lengths", lengths_csv}});
  std::cout << text;
  return 0;
}

inline int handle_strip(const CommonFlags& f, const std::string& run_dir) {
  if (run_dir.empty()) throw UsageError("strip requires --run");
  fs::path in_path = fs::path(run_dir) / "checkpoint.bin";
  fs::path out_dir = f.out.empty() ? fs::path(run_dir) : fs::path(f.out);
  fs::create_directories(out_dir);
  fs::path out_path = out_dir / "checkpoint_stripped.bin";
  if (!f.force && fs::exists(out_path))
    throw std::runtime_error(out_path.string() + " already exists; use --force to overwrite");
  strip_domain_modules(in_path.string(), out_path.string());
  std::cout << "stripped " << fs::file_size(in_path) << " -> " << fs::file_size(out_path)
            << " bytes: " << out_path.string() << "\n";
  return 0;
}

inline int handle_render_overlays(const CommonFlags& f, const std::string& run_dir,
                                  const std::string& data_dir) {
  if (run_dir.empty()) throw UsageError("render-overlays requires --run");
  if (data_dir.empty()) throw UsageError("render-overlays requires --data");
  RunConfig cfg = config_from_manifest(run_dir, f);
  fs::path ckpt = fs::path(run_dir) / "checkpoint.bin";
  if (!fs::exists(ckpt)) ckpt = fs::path(run_dir) / "checkpoint_stripped.bin";
  Detector det = load_detector(cfg, load_checkpoint(ckpt.string()));
  DatasetIndex index = load_visdrone(data_dir, (fs::path(data_dir) / "metadata.txt").string(),
                                     Split::val, parse_domain_triple(cfg.fallback_domain),
                                     cfg.num_categories);
  std::string out = resolve_out(f.out, "render-overlays");
  fs::create_directories(out);
  int written = 0, skipped = 0;
  for (const auto& entry : index.samples) {
    fs::path target = fs::path(out) / (entry.stem + "_overlay.ppm");
    if (!f.force && fs::exists(target))
      throw std::runtime_error(target.string() + " already exists; use --force to overwrite");
    try {
      ImageSample s = load_sample(entry, cfg.num_categories);
      auto dets = det.detect(s.image, cfg.score_threshold, cfg.nms_iou);
      write_ppm(target.string(), render_overlay(s.image, s.gt_boxes, dets));
      ++written;
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << entry.stem << ": " << e.what() << "\n";
      ++skipped;
    }
  }
  std::cout << "wrote " << written << " overlays";
  if (skipped > 0) std::cout << ", skipped " << skipped;
  std::cout << "\n";
  return 0;
}

}  // namespace cli_detail

inline int cli_run(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"domain-generalized aerial detection: data, training, evaluation"};
  app.require_subcommand(1);

  CommonFlags gen_f;
  std::string gen_train_domains = "low,front,day;high,bird,day";
  std::string gen_heldout_domains = "medium,side,night";
  int gen_per_domain = 100, gen_heldout_per_domain = 50;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic domain-split dataset");
  add_common(gen, gen_f);
  gen->add_option("--train-domains", gen_train_domains,
                  "semicolon-separated altitude,view,weather triples");
  gen->add_option("--heldout-domains", gen_heldout_domains,
                  "semicolon-separated altitude,view,weather triples");
  gen->add_option("--per-domain", gen_per_domain, "train scenes per domain");
  gen->add_option("--heldout-per-domain", gen_heldout_per_domain, "heldout scenes per domain");

  CommonFlags train_f;
  std::string train_data, train_eval_data;
  bool train_two_step = false;
  auto* train = app.add_subcommand("train", "train a detector");
  add_common(train, train_f);
  train->add_option("--data", train_data, "training dataset directory");
  train->add_option("--eval-data", train_eval_data, "per-epoch evaluation dataset directory");
  train->add_flag("--two-step", train_two_step, "tune prompts first, then the detector");

  CommonFlags eval_f;
  std::string eval_run, eval_data;
  auto* eval = app.add_subcommand("eval", "evaluate a trained run on a dataset");
  add_common(eval, eval_f, false);
  eval->add_option("--run", eval_run, "training run directory (manifest + checkpoint)");
  eval->add_option("--data", eval_data, "evaluation dataset directory");

  CommonFlags cmp_f;
  std::string cmp_runs, cmp_baseline;
  auto* cmp = app.add_subcommand("compare", "compare evaluated runs against a baseline");
  add_common(cmp, cmp_f, false);
  cmp->add_option("--runs", cmp_runs, "comma-separated run directories");
  cmp->add_option("--baseline", cmp_baseline, "baseline run name (default: first)");

  CommonFlags abl_f;
  std::string abl_data, abl_eval_data, abl_lengths = "4,8,16,32";
  auto* abl = app.add_subcommand("ablate", "sweep prompt lengths plus a manual baseline");
  add_common(abl, abl_f);
  abl->add_option("--data", abl_data, "training dataset directory");
  abl->add_option("--eval-data", abl_eval_data, "evaluation dataset directory");
  abl->add_option("--lengths", abl_lengths, "comma-separated prompt lengths");

  CommonFlags strip_f;
  std::string strip_run;
  auto* strip = app.add_subcommand("strip", "drop domain modules from a checkpoint");
  add_common(strip, strip_f, false);
  strip->add_option("--run", strip_run, "training run directory");

  CommonFlags ro_f;
  std::string ro_run, ro_data;
  auto* ro = app.add_subcommand("render-overlays", "draw GT and detections over each image");
  add_common(ro, ro_f, false);
  ro->add_option("--run", ro_run, "training run directory");
  ro->add_option("--data", ro_data, "dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed())
      return handle_gen_data(gen_f, gen_train_domains, gen_heldout_domains, gen_per_domain,
                             gen_heldout_per_domain);
    if (train->parsed()) return handle_train(train_f, train_data, train_eval_data, train_two_step);
    if (eval->parsed()) return handle_eval(eval_f, eval_run, eval_data);
    if (cmp->parsed()) return handle_compare(cmp_f, cmp_runs, cmp_baseline);
    if (abl->parsed()) return handle_ablate(abl_f, abl_data, abl_eval_data, abl_lengths);
    if (strip->parsed()) return handle_strip(strip_f, strip_run);
    if (ro->parsed()) return handle_render_overlays(ro_f, ro_run, ro_data);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

inline int cli_run(int argc, char** argv) {
  return cli_run(argc, const_cast<const char* const*>(argv));
}

}  // namespace leapd
