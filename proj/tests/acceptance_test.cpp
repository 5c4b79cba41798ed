// Acceptance gate. Ten criteria, each reported as one "CRITERION k:
// PASS/FAIL" line: closed-form losses, gradient checks, probability
// normalization, mAP oracle agreement, detached inference, trainer
// degeneracy, the smoke experiment, the cross-seed trend, ablation
// structure, and annotation parsing.
#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "leapd/cli.hpp"
#include "leapd/harness.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

using leapd::BBox;
using leapd::Embedding;
using leapd::EvalBox;
using leapd::EvalDetection;
using leapd::ImageSample;
using leapd::RunConfig;
using leapd::Tensor;
using leapd::Var;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void criterion(int k, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
  std::cout << "CRITERION " << k << ": "
            << (::testing::Test::HasFailure() ? "FAIL" : "PASS") << std::endl;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_cfg(int seed) {
  RunConfig cfg;
  cfg.embed_dim = 16;
  cfg.token_dim = 8;
  cfg.text_hidden = 12;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 8;
  cfg.fsn_hidden = 0;
  cfg.detector_channels = 8;
  cfg.detector_levels = 2;
  cfg.num_categories = 3;
  cfg.prompt_len = 3;
  cfg.temperature = 0.2;
  cfg.lr = 0.05;
  cfg.seed = seed;
  return cfg;
}

ImageSample scene(const std::string& domain, std::uint64_t seed, int objects = 5) {
  leapd::SceneSpec spec;
  spec.domain = leapd::parse_domain_triple(domain);
  spec.object_count = objects;
  spec.seed = seed;
  return leapd::generate_scene(spec, 3);
}

std::vector<ImageSample> two_domain_scenes(int n, std::uint64_t seed_base) {
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i)
    out.push_back(scene(i % 2 == 0 ? "low,front,day" : "high,bird,day",
                        seed_base + static_cast<std::uint64_t>(i)));
  return out;
}

Tensor random_image(int h, int w, leapd::Rng& rng) {
  Tensor t = Tensor::zeros({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

Tensor random_vec(std::size_t n, leapd::Rng& rng) {
  Tensor t = Tensor::zeros({n});
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Five ground truths sitting exactly on anchors of a 16x16 image: 5
// positives and 15 negatives, so hard-negative mining keeps every negative
// and the mined set cannot change under finite-difference perturbation.
void anchor_aligned_gts(std::vector<BBox>& gt, std::vector<int>& cats) {
  for (auto [i, j] : {std::pair{0, 0}, std::pair{0, 1}, std::pair{1, 0}, std::pair{1, 1}}) {
    gt.push_back(leapd::anchor_box(i, j, 1, 8));
    cats.push_back(1 + ((i + j) % 3));
  }
  gt.push_back(leapd::anchor_box(0, 0, 1, 16));
  cats.push_back(3);
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::vector<nlohmann::json> rows;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

// ---------------------------------------------------------------------------
// Shared smoke experiment: 2 train domains x 100 scenes, 1 held-out domain
// x 50 scenes, 12 epochs, batch 16, run for seeds 1..5 in both learnable
// and detector-only mode. Built once, reused by the experiment criteria.
// ---------------------------------------------------------------------------

RunConfig smoke_cfg(int seed, leapd::PromptMode mode) {
  RunConfig cfg;  // library defaults, with the tuned smoke pair
  cfg.temperature = 0.2;
  cfg.lr = 0.05;
  cfg.epochs = 12;
  cfg.batch_size = 16;
  cfg.seed = seed;
  cfg.prompt_mode = mode;
  return cfg;
}

struct SmokeRun {
  std::string metrics_path;
  double seconds = 0.0;
};

struct SmokeSuite {
  std::map<std::string, SmokeRun> runs;  // "learnable_3", "detector_only_3"
};

SmokeSuite build_smoke() {
  fs::path root = fresh_dir("leapd_acceptance_smoke");
  leapd::SplitParams params;  // 64x64 canvases, 4..8 objects, 3 categories
  auto [train_idx, heldout_idx] = leapd::make_domain_split(
      {leapd::parse_domain_triple("low,front,day"), leapd::parse_domain_triple("high,bird,day")},
      {leapd::parse_domain_triple("medium,side,day")}, 100, 0, (root / "data").string(), params,
      50);
  std::vector<ImageSample> train = leapd::load_all(train_idx, 3);
  std::vector<ImageSample> heldout = leapd::load_all(heldout_idx, 3);

  SmokeSuite suite;
  for (int seed = 1; seed <= 5; ++seed) {
    for (leapd::PromptMode mode :
         {leapd::PromptMode::learnable, leapd::PromptMode::detector_only}) {
      std::string key = std::string(leapd::to_string(mode)) + "_" + std::to_string(seed);
      auto t0 = std::chrono::steady_clock::now();
      leapd::TrainResult res = leapd::train_run(smoke_cfg(seed, mode), train, &heldout,
                                                (root / key).string());
      suite.runs[key] = SmokeRun{res.metrics_path, seconds_since(t0)};
    }
  }
  return suite;
}

const SmokeSuite& smoke() {
  static SmokeSuite suite = build_smoke();
  return suite;
}

double last_eval_map50(const std::string& metrics_path) {
  nlohmann::json last;
  for (const auto& row : read_jsonl(metrics_path))
    if (row.contains("eval")) last = row;
  if (last.is_null()) throw std::runtime_error("no eval rows in " + metrics_path);
  if (last.at("map50").is_null())
    throw std::runtime_error("undefined mAP50 in " + metrics_path);
  return last.at("map50").get<double>();
}

double median5(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[2];
}

// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion1ClosedFormLosses) {
  criterion(1, [] {
    auto t0 = std::chrono::steady_clock::now();
    const double tol = 1e-6;

    // uniform similarities: cross-entropy is ln K regardless of temperature
    Embedding v;
    v.vector = {1.0, 0.0, 0.0};
    std::vector<Embedding> prompts(4, v);
    std::vector<double> probs = leapd::class_probabilities(v, prompts, 0.01);
    for (double p : probs) EXPECT_NEAR(p, 0.25, tol);
    EXPECT_NEAR(leapd::prompt_ce_loss(probs, 2), std::log(4.0), tol);

    // half-scaled similarity scores and their clamp floors
    EXPECT_NEAR(leapd::similarity_score({1, 0, 0}, {0, 1, 0}), 0.5, tol);
    EXPECT_NEAR(leapd::similarity_score({1, 0, 0}, {1, 0, 0}), 1.0, tol);
    EXPECT_NEAR(leapd::similarity_score({1, 0, 0}, {-1, 0, 0}), 1e-7, 1e-12);
    EXPECT_NEAR(leapd::dissimilarity_score({1, 0, 0}, {0, 1, 0}), 0.5, tol);
    EXPECT_NEAR(leapd::dissimilarity_score({1, 0, 0}, {1, 0, 0}), 1e-7, 1e-12);

    // invariance loss: -(1-s) ln s
    EXPECT_NEAR(leapd::domain_invariant_loss(0.5), 0.5 * std::log(2.0), tol);
    EXPECT_NEAR(leapd::domain_invariant_loss(1.0), 0.0, tol);

    // specificity loss: mean of -(1-ds) ln ds over the prompt set
    EXPECT_NEAR(leapd::domain_specific_loss({1.0, 0.5}), 0.25 * std::log(2.0), tol);

    // weighted combination
    leapd::LossBreakdown b = leapd::total_loss(1, 2, 3, 4, 1, 1, 0.5, 0.5);
    EXPECT_NEAR(b.total, 6.5, tol);
    EXPECT_NEAR(leapd::total_loss(1, 1, 1, 1, 1, 1, 0.5, 0.5).total, 3.0, tol);

    EXPECT_LT(seconds_since(t0), 5.0);
  });
}

TEST(Acceptance, Criterion2GradientChecks) {
  criterion(2, [] {
    auto t0 = std::chrono::steady_clock::now();
    int probes = 0, failures = 0;
    auto tally = [&](const oracles::GradCheckResult& r, const char* what) {
      probes += r.probes;
      failures += r.failures;
      EXPECT_EQ(r.failures, 0) << what << ": worst " << r.worst << " err " << r.max_err;
    };

    leapd::Rng rng(601);
    {  // invariance loss through the squeeze-side normalization
      Var x = leapd::parameter(random_vec(8, rng));
      Var vconst = leapd::constant(random_vec(8, rng));
      auto build = [&] {
        Var fp = leapd::l2_normalize(x);
        Var vn = leapd::l2_normalize(vconst);
        return leapd::domain_invariant_loss_graph(
            leapd::similarity_score_graph(vn, fp, 1e-7));
      };
      leapd::Rng pr(701);
      tally(oracles::check_gradients(build, {{"x", x}}, 40, pr), "L_di");
    }
    {  // specificity loss over two prompt directions
      Var x = leapd::parameter(random_vec(8, rng));
      Var t1 = leapd::constant(random_vec(8, rng));
      Var t2 = leapd::constant(random_vec(8, rng));
      auto build = [&] {
        Var fp = leapd::l2_normalize(x);
        std::vector<Var> ds = {
            leapd::dissimilarity_score_graph(leapd::l2_normalize(t1), fp, 1e-7),
            leapd::dissimilarity_score_graph(leapd::l2_normalize(t2), fp, 1e-7)};
        return leapd::domain_specific_loss_graph(ds);
      };
      leapd::Rng pr(702);
      tally(oracles::check_gradients(build, {{"x", x}}, 40, pr), "L_ds");
    }
    {  // prompt cross-entropy wrt the visual embedding path
      Var xv = leapd::parameter(random_vec(8, rng));
      std::vector<Var> prompt_src;
      for (int k = 0; k < 3; ++k) prompt_src.push_back(leapd::constant(random_vec(8, rng)));
      auto build = [&] {
        Var v = leapd::l2_normalize(xv);
        std::vector<Var> prompts;
        for (const auto& p : prompt_src) prompts.push_back(leapd::l2_normalize(p));
        return leapd::prompt_ce_graph(v, prompts, 0.2, 1);
      };
      leapd::Rng pr(703);
      tally(oracles::check_gradients(build, {{"xv", xv}}, 40, pr), "L_lp");
    }

    std::vector<BBox> gt;
    std::vector<int> cats;
    anchor_aligned_gts(gt, cats);
    {  // detection loss through the pyramid and both heads
      RunConfig cfg = tiny_cfg(7);
      leapd::Detector det(cfg, leapd::seed_all(7));
      leapd::Rng img_rng(13);
      Var img = leapd::constant(random_image(16, 16, img_rng));
      auto build = [&] {
        leapd::PyramidGraph pg = det.extract_pyramid_graph(img);
        return det.detection_loss_graph(pg, gt, cats);
      };
      leapd::Rng pr(704);
      tally(oracles::check_gradients(build, det.params(), 4, pr), "L_od");
    }
    {  // full combined objective through squeeze net and prompt bank
      RunConfig cfg = tiny_cfg(21);
      leapd::DomainVocabulary vocab;
      vocab.observe(leapd::parse_domain_triple("low,front,day"));
      vocab.observe(leapd::parse_domain_triple("high,bird,day"));
      vocab.finalize(0);
      leapd::TrainState st = leapd::make_train_state(cfg, vocab);
      leapd::Rng img_rng(17);
      Var img = leapd::constant(random_image(16, 16, img_rng));
      auto build = [&] {
        leapd::PyramidGraph pyr = st.model.detector.extract_pyramid_graph(img);
        Var od = st.model.detector.detection_loss_graph(pyr, gt, cats);
        Var fp = st.model.fsn.forward_graph(
            st.model.detector.select_alignment_feature_graph(pyr, "top"));
        Var v = st.model.vision.encode_image_graph(img);
        std::vector<Var> prompts;
        for (int c = 0; c < st.model.vocab.n_sc(); ++c)
          prompts.push_back(st.model.text.encode_tokens_graph(
              st.model.bank.class_row_graph(static_cast<std::size_t>(c))));
        Var lp = leapd::prompt_ce_graph(v, prompts, cfg.temperature, 0);
        Var di = leapd::domain_invariant_loss_graph(
            leapd::similarity_score_graph(v, fp, cfg.clamp_eps));
        std::vector<Var> ds_scores;
        for (const auto& t : prompts)
          ds_scores.push_back(leapd::dissimilarity_score_graph(t, fp, cfg.clamp_eps));
        Var ds = leapd::domain_specific_loss_graph(ds_scores);
        return leapd::add(leapd::add(leapd::scale(od, 1.0), leapd::scale(lp, 1.0)),
                          leapd::add(leapd::scale(di, 0.5), leapd::scale(ds, 0.5)));
      };
      leapd::Rng pr(705);
      tally(oracles::check_gradients(build, st.trainable, 3, pr), "L_total");
    }

    EXPECT_GE(probes, 200);
    EXPECT_EQ(failures, 0);
    EXPECT_LT(seconds_since(t0), 120.0);
    std::cout << "  gradients: " << probes << " probes, " << failures << " failures, "
              << seconds_since(t0) << " s\n";
  });
}

TEST(Acceptance, Criterion3ProbabilityNormalization) {
  criterion(3, [] {
    leapd::Rng rng(31);
    const double taus[3] = {0.01, 0.2, 1.0};
    for (int trial = 0; trial < 1000; ++trial) {
      double tau = taus[trial % 3];
      int K = 2 + static_cast<int>(rng.uniform_int(0, 4));

      // arbitrary embeddings: the distribution must stay normalized
      Embedding v;
      v.vector = random_vec(8, rng).data;
      std::vector<Embedding> prompts(static_cast<std::size_t>(K));
      for (auto& p : prompts) p.vector = random_vec(8, rng).data;
      std::vector<double> probs = leapd::class_probabilities(v, prompts, tau);
      double sum = 0.0;
      for (double p : probs) sum += p;
      ASSERT_NEAR(sum, 1.0, 1e-6) << "trial " << trial;

      // prompts engineered so every similarity shifts by the same delta:
      // the softmax output must not move
      double delta = rng.uniform(0.0, 0.3);
      Embedding unit;
      unit.vector = {1.0, 0.0, 0.0};
      std::vector<Embedding> base(static_cast<std::size_t>(K)),
          shifted(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) {
        double a = rng.uniform(-0.8, 0.6);
        base[static_cast<std::size_t>(k)].vector = {a, std::sqrt(1.0 - a * a), 0.0};
        double s = a + delta;
        shifted[static_cast<std::size_t>(k)].vector = {s, std::sqrt(1.0 - s * s), 0.0};
      }
      std::vector<double> p0 = leapd::class_probabilities(unit, base, tau);
      std::vector<double> p1 = leapd::class_probabilities(unit, shifted, tau);
      for (int k = 0; k < K; ++k)
        ASSERT_NEAR(p0[static_cast<std::size_t>(k)], p1[static_cast<std::size_t>(k)], 1e-9)
            << "trial " << trial;
    }
  });
}

TEST(Acceptance, Criterion4MapOracleAgreement) {
  criterion(4, [] {
    auto t0 = std::chrono::steady_clock::now();
    leapd::Rng rng(141);
    int defined = 0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<EvalDetection> dets;
      int nd = static_cast<int>(rng.uniform_int(0, 12));
      for (int i = 0; i < nd; ++i) {
        EvalDetection d;
        d.image_id = static_cast<int>(rng.uniform_int(1, 4));
        d.box = BBox{rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(2, 12),
                     rng.uniform(2, 12)};
        d.score = trial % 2 == 0 ? std::round(rng.uniform() * 4.0) / 4.0 : rng.uniform();
        d.category = static_cast<int>(rng.uniform_int(1, 3));
        dets.push_back(d);
      }
      std::vector<EvalBox> gts;
      int ng = static_cast<int>(rng.uniform_int(0, 10));
      for (int i = 0; i < ng; ++i) {
        EvalBox g;
        g.image_id = static_cast<int>(rng.uniform_int(1, 4));
        g.box = BBox{rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(2, 12),
                     rng.uniform(2, 12)};
        g.category = static_cast<int>(rng.uniform_int(1, 3));
        gts.push_back(g);
      }

      leapd::EvalReport lib = leapd::map_metrics(dets, gts);
      oracles::OracleReport ref = oracles::oracle_map(dets, gts);
      ASSERT_EQ(lib.has_metrics, ref.has_metrics) << "trial " << trial;
      if (!lib.has_metrics) continue;
      ++defined;
      EXPECT_DOUBLE_EQ(lib.map50, ref.map50) << "trial " << trial;
      EXPECT_DOUBLE_EQ(lib.map75, ref.map75) << "trial " << trial;
      EXPECT_DOUBLE_EQ(lib.map50_95, ref.map50_95) << "trial " << trial;
      ASSERT_EQ(lib.categories, ref.categories) << "trial " << trial;
      for (std::size_t c = 0; c < lib.ap.size(); ++c)
        for (std::size_t k = 0; k < 10; ++k)
          EXPECT_DOUBLE_EQ(lib.ap[c][k], ref.ap[c][k]) << "trial " << trial;
    }
    EXPECT_GT(defined, 150);
    EXPECT_LT(seconds_since(t0), 60.0);
  });
}

TEST(Acceptance, Criterion5DetachedInference) {
  criterion(5, [] {
    RunConfig cfg = tiny_cfg(9);
    cfg.epochs = 1;
    cfg.batch_size = 8;
    std::vector<ImageSample> train = two_domain_scenes(12, 300);
    fs::path dir = fresh_dir("leapd_acceptance_detached");
    leapd::TrainResult res = leapd::train_run(cfg, train, nullptr, dir.string());

    std::string stripped_path = (dir / "checkpoint_stripped.bin").string();
    leapd::strip_domain_modules(res.checkpoint_path, stripped_path);

    // full checkpoint into a complete model
    leapd::TrainState full = leapd::make_train_state(cfg, leapd::vocabulary_for(train, cfg));
    leapd::restore_params(full, leapd::load_checkpoint(res.checkpoint_path));

    // stripped checkpoint into a bare detector
    leapd::NamedTensors entries = leapd::load_checkpoint(stripped_path);
    leapd::Detector bare(cfg, leapd::seed_all(static_cast<std::uint64_t>(cfg.seed)));
    std::size_t found = 0;
    for (auto& [name, v] : bare.params())
      for (const auto& [ename, et] : entries)
        if (ename == name) {
          v->value = et;
          ++found;
        }
    ASSERT_EQ(found, bare.params().size());

    std::size_t total = 0;
    for (int i = 0; i < 20; ++i) {
      ImageSample s = scene("medium,side,day", static_cast<std::uint64_t>(1 + i));
      auto a = full.model.detector.detect(s.image, 1e-4, cfg.nms_iou);
      auto b = bare.detect(s.image, 1e-4, cfg.nms_iou);
      ASSERT_EQ(a.size(), b.size()) << "image " << i;
      for (std::size_t d = 0; d < a.size(); ++d) {
        EXPECT_EQ(a[d].box.x, b[d].box.x);
        EXPECT_EQ(a[d].box.y, b[d].box.y);
        EXPECT_EQ(a[d].box.w, b[d].box.w);
        EXPECT_EQ(a[d].box.h, b[d].box.h);
        EXPECT_EQ(a[d].score, b[d].score);
        EXPECT_EQ(a[d].category, b[d].category);
      }
      total += a.size();
    }
    EXPECT_GT(total, 0u);  // the comparison must not be vacuous
  });
}

TEST(Acceptance, Criterion6TrainerDegeneracy) {
  criterion(6, [] {
    RunConfig learn = tiny_cfg(5);
    learn.lambda2 = 0.0;
    learn.lambda3 = 0.0;
    learn.lambda4 = 0.0;
    RunConfig det = learn;
    det.prompt_mode = leapd::PromptMode::detector_only;

    std::vector<ImageSample> scenes = two_domain_scenes(16, 400);
    leapd::DomainVocabulary vocab = leapd::vocabulary_for(scenes, learn);
    leapd::TrainState a = leapd::make_train_state(learn, vocab);
    leapd::TrainState b = leapd::make_train_state(det, vocab);

    double max_diff = 0.0;
    for (int step = 0; step < 50; ++step) {
      std::vector<ImageSample> batch = {scenes[static_cast<std::size_t>((2 * step) % 16)],
                                        scenes[static_cast<std::size_t>((2 * step + 1) % 16)]};
      leapd::LossBreakdown la = leapd::train_step(a, batch);
      leapd::LossBreakdown lb = leapd::train_step(b, batch);
      EXPECT_EQ(la.total, lb.total) << "step " << step;
      for (const auto& [name, va] : a.trainable) {
        if (name.rfind("detector.", 0) != 0) continue;
        bool matched = false;
        for (const auto& [bname, vb] : b.trainable)
          if (bname == name) {
            matched = true;
            ASSERT_EQ(va->value.size(), vb->value.size());
            for (std::size_t k = 0; k < va->value.size(); ++k)
              max_diff = std::max(max_diff,
                                  std::abs(va->value.data[k] - vb->value.data[k]));
          }
        ASSERT_TRUE(matched) << name;
      }
      ASSERT_EQ(max_diff, 0.0) << "trajectories diverged at step " << step;
    }
    EXPECT_EQ(a.step, 50);
    EXPECT_EQ(max_diff, 0.0);
  });
}

TEST(Acceptance, Criterion7SmokeExperiment) {
  criterion(7, [] {
    const SmokeRun& run = smoke().runs.at("learnable_1");
    EXPECT_LT(run.seconds, 1800.0);  // 30-minute single-run budget

    std::vector<nlohmann::json> rows = read_jsonl(run.metrics_path);
    double lp_first = 0, lp_final = 0;
    int n_first = 0, n_final = 0;
    double total_initial = 0, total_final = 0;
    bool saw_loss_row = false;
    int last_epoch = 0;
    for (const auto& r : rows)
      if (r.contains("step")) last_epoch = std::max(last_epoch, r.at("epoch").get<int>());
    ASSERT_EQ(last_epoch, 11);  // 12 epochs logged

    for (const auto& r : rows) {
      if (!r.contains("step")) continue;
      double lt = r.at("L_total").get<double>();
      ASSERT_TRUE(std::isfinite(lt));
      if (!saw_loss_row) total_initial = lt;
      saw_loss_row = true;
      total_final = lt;
      int epoch = r.at("epoch").get<int>();
      if (epoch == 0) {
        lp_first += r.at("L_lp").get<double>();
        ++n_first;
      }
      if (epoch == last_epoch) {
        lp_final += r.at("L_lp").get<double>();
        ++n_final;
      }
    }
    ASSERT_TRUE(saw_loss_row);
    ASSERT_GT(n_first, 0);
    ASSERT_GT(n_final, 0);
    lp_first /= n_first;
    lp_final /= n_final;
    EXPECT_LT(lp_final, lp_first) << "prompt loss did not improve";
    EXPECT_LT(total_final, total_initial) << "total loss did not improve";
    std::cout << "  smoke: " << run.seconds << " s, L_lp " << lp_first << " -> " << lp_final
              << ", L_total " << total_initial << " -> " << total_final << "\n";
  });
}

TEST(Acceptance, Criterion8CrossSeedTrend) {
  criterion(8, [] {
    std::vector<double> learnable, detector_only;
    for (int seed = 1; seed <= 5; ++seed) {
      learnable.push_back(
          last_eval_map50(smoke().runs.at("learnable_" + std::to_string(seed)).metrics_path));
      detector_only.push_back(last_eval_map50(
          smoke().runs.at("detector_only_" + std::to_string(seed)).metrics_path));
    }
    double med_l = median5(learnable);
    double med_d = median5(detector_only);
    std::cout << "  trend: learnable median mAP50 " << med_l << ", detector-only median "
              << med_d << "\n";
    EXPECT_GE(med_l, med_d - 0.005);
  });
}

TEST(Acceptance, Criterion9AblationStructure) {
  criterion(9, [] {
    fs::path root = fresh_dir("leapd_acceptance_ablate");
    leapd::SplitParams params;
    leapd::make_domain_split(
        {leapd::parse_domain_triple("low,front,day"),
         leapd::parse_domain_triple("high,bird,day")},
        {leapd::parse_domain_triple("medium,side,day")}, 12, 0, (root / "data").string(),
        params, 8);

    std::vector<std::string> args = {
        "leapd",  "ablate",
        "--data", (root / "data" / "train").string(),
        "--eval-data", (root / "data" / "heldout").string(),
        "--out",  (root / "out").string(),
        "--lengths", "4,8,16,32",
        "--seed", "5",
        "--set", "embed_dim=16",        "--set", "token_dim=8",
        "--set", "text_hidden=12",      "--set", "vocab_size=64",
        "--set", "detector_channels=8", "--set", "detector_levels=2",
        "--set", "epochs=1",            "--set", "batch_size=8",
        "--set", "temperature=0.2",     "--set", "lr=0.05"};
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());

    std::ostringstream captured;
    std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
    int rc = leapd::cli_run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old);
    ASSERT_EQ(rc, 0) << captured.str();

    std::vector<nlohmann::json> rows = read_jsonl((root / "out" / "ablation.jsonl").string());
    ASSERT_EQ(rows.size(), 5u);  // manual baseline + 4 lengths
    const char* expected[5] = {"manual", "n4", "n8", "n16", "n32"};
    std::vector<std::size_t> param_counts;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(rows[i].at("prompts").get<std::string>(), expected[i]);
      ASSERT_FALSE(rows[i].contains("error"))
          << rows[i].at("prompts").get<std::string>() << ": "
          << rows[i].value("error", std::string());
      param_counts.push_back(rows[i].at("detector_params").get<std::size_t>());
    }
    for (std::size_t c : param_counts)
      EXPECT_EQ(c, param_counts[0]);  // prompt length never touches the detector
  });
}

TEST(Acceptance, Criterion10ParserFixtures) {
  criterion(10, [] {
    const std::vector<std::string> valid = {
        "0,0,10,10,1,1,0,0",     "5,10,20,30,1,2,0,1",   "100,200,50,60,0,3,1,2",
        "-5,-10,40,40,1,4,0,0",  "1,2,3,4,1,5,2,2",      "999,999,1,1,0,6,0,0",
        "12,34,56,78,1,7,1,0",   "0,0,1,1,1,8,0,1",      "7,7,7,7,0,9,0,0",
        "3,1,4,1,1,10,5,9",      "2,7,1,8,0,11,2,8",     "50,40,30,20,1,1,1,1",
        "-1,5,9,9,0,2,0,2",      "8,8,64,64,1,3,0,0",    "63,63,2,2,1,1,0,0",
        "10,20,30,40,0,5,1,1",   "21,22,23,24,1,6,0,0",  "30,30,12,8,1,2,2,0"};
    const std::vector<std::string> ignored = {
        "0,0,32,32,0,0,0,0",  "10,10,5,5,0,0,0,0",  "40,0,24,16,0,0,1,0",
        "-3,-3,10,10,0,0,0,0", "5,50,14,9,0,0,0,2", "16,16,16,16,0,0,0,0",
        "1,1,2,3,0,0,1,1"};
    const std::vector<std::string> malformed = {
        "",
        "1,2,3",
        "1,2,3,4,5,6,7",
        "1,2,3,4,5,6,7,8,9",
        "1,2,3,4,5,6,7,8,",
        ",1,2,3,4,5,6,7",
        "a,2,3,4,5,6,7,8",
        "1,b,3,4,5,6,7,8",
        "1,2,3.5,4,5,6,7,8",
        "1,2,3,4,5,6,7,8 ",
        "1, 2,3,4,5,6,7,8",
        "1,2,3,4,5,6,7,x",
        "1;2;3;4;5;6;7;8",
        "1 2 3 4 5 6 7 8",
        "1,2,3,4,1,1,0,0,extra",
        "12x,2,3,4,5,6,7,8",
        "1,2,,4,5,6,7,8",
        "1,2,3,4,5,6,,8",
        "0x1,2,3,4,5,6,7,8",
        "1e3,2,3,4,5,6,7,8",
        "--1,2,3,4,5,6,7,8",
        "1,2,3,4,5.0,6,7,8",
        "NaN,2,3,4,5,6,7,8",
        "1,,3,4,5,6,7,8,,,",
        ","};
    ASSERT_EQ(valid.size() + ignored.size() + malformed.size(), 50u);

    for (const auto& line : valid) {
      leapd::VisDroneRecord r = leapd::parse_visdrone_line(line);
      EXPECT_FALSE(r.ignored_region()) << line;
      EXPECT_EQ(leapd::format_visdrone_line(r), line);
    }
    for (const auto& line : ignored) {
      leapd::VisDroneRecord r = leapd::parse_visdrone_line(line);
      EXPECT_TRUE(r.ignored_region()) << line;
      EXPECT_EQ(leapd::format_visdrone_line(r), line);
    }
    for (const auto& line : malformed)
      EXPECT_THROW(leapd::parse_visdrone_line(line, 9), std::invalid_argument) << line;

    // field mapping spot check
    leapd::VisDroneRecord r = leapd::parse_visdrone_line("5,10,20,30,1,2,0,1");
    EXPECT_EQ(r.left, 5);
    EXPECT_EQ(r.top, 10);
    EXPECT_EQ(r.width, 20);
    EXPECT_EQ(r.height, 30);
    EXPECT_EQ(r.score, 1);
    EXPECT_EQ(r.category, 2);
    EXPECT_EQ(r.truncation, 0);
    EXPECT_EQ(r.occlusion, 1);
  });
}

}  // namespace
