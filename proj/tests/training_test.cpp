// Joint training step: optimizer algebra pinned against a manual SGD
// reference, gradient routing per loss term, freezing, and the epoch loop.
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "leapd/datasets.hpp"
#include "leapd/training.hpp"

namespace {

using leapd::ImageSample;
using leapd::RunConfig;
using leapd::Tensor;
using leapd::TrainState;
using leapd::Var;

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.embed_dim = 16;
  cfg.token_dim = 8;
  cfg.text_hidden = 12;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 8;
  cfg.fsn_hidden = 0;
  cfg.detector_channels = 8;
  cfg.detector_levels = 2;
  cfg.num_categories = 2;
  cfg.prompt_len = 3;
  cfg.temperature = 0.2;
  cfg.lr = 0.05;
  cfg.seed = 11;
  return cfg;
}

ImageSample scene(const std::string& domain, std::uint64_t seed, int objects = 4) {
  leapd::SceneSpec spec;
  spec.domain = leapd::parse_domain_triple(domain);
  spec.object_count = objects;
  spec.canvas_h = 64;
  spec.canvas_w = 64;
  spec.seed = seed;
  return leapd::generate_scene(spec, 2);
}

std::vector<ImageSample> two_domain_scenes(int n) {
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i)
    out.push_back(scene(i % 2 == 0 ? "low,front,day" : "high,bird,day",
                        static_cast<std::uint64_t>(100 + i)));
  return out;
}

std::vector<Tensor> snapshot(const leapd::NamedParams& params) {
  std::vector<Tensor> out;
  for (const auto& [name, v] : params) out.push_back(v->value);
  return out;
}

bool any_moved_with_prefix(const leapd::NamedParams& params, const std::vector<Tensor>& before,
                           const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].first.rfind(prefix, 0) == 0 && params[i].second->value.data != before[i].data)
      return true;
  return false;
}

bool all_unchanged_with_prefix(const leapd::NamedParams& params,
                               const std::vector<Tensor>& before, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].first.rfind(prefix, 0) == 0 && params[i].second->value.data != before[i].data)
      return false;
  return true;
}

// Rebuilds the detection-only objective through the public graph API and
// applies the raw momentum-SGD update, mirroring the step's op order.
void manual_detection_step(TrainState& st, const std::vector<ImageSample>& batch) {
  const RunConfig& cfg = st.cfg;
  std::vector<Var> od_terms;
  for (const auto& sample : batch) {
    Var image = leapd::constant(sample.image);
    leapd::PyramidGraph pyr = st.model.detector.extract_pyramid_graph(image);
    od_terms.push_back(
        st.model.detector.detection_loss_graph(pyr, sample.gt_boxes, sample.gt_categories));
  }
  Var od = od_terms.size() == 1 ? od_terms[0] : leapd::mean(leapd::stack_scalars(od_terms));
  Var total = leapd::scale(od, cfg.lambda1);
  for (auto& [name, p] : st.trainable) p->grad = Tensor();
  leapd::backward(total);

  double lr = cfg.lr;
  if (cfg.decay_mode == "lr_schedule")
    lr = cfg.lr / (1.0 + cfg.weight_decay * static_cast<double>(st.step));
  for (std::size_t i = 0; i < st.trainable.size(); ++i) {
    auto& [name, param] = st.trainable[i];
    bool decay = cfg.decay_mode == "weight_decay" && !leapd::weight_decay_exempt(name);
    for (std::size_t k = 0; k < param->value.size(); ++k) {
      double g = param->grad.size() == param->value.size() ? param->grad.data[k] : 0.0;
      if (decay) g += cfg.weight_decay * param->value.data[k];
      st.velocity[i].data[k] = cfg.momentum * st.velocity[i].data[k] - lr * g;
      param->value.data[k] += st.velocity[i].data[k];
    }
  }
  ++st.step;
}

void expect_states_bitwise_equal(const TrainState& a, const TrainState& b) {
  ASSERT_EQ(a.trainable.size(), b.trainable.size());
  for (std::size_t i = 0; i < a.trainable.size(); ++i) {
    EXPECT_EQ(a.trainable[i].first, b.trainable[i].first);
    EXPECT_EQ(a.trainable[i].second->value.data, b.trainable[i].second->value.data)
        << a.trainable[i].first;
    EXPECT_EQ(a.velocity[i].data, b.velocity[i].data) << a.trainable[i].first;
  }
}

TEST(TrainStep, MatchesManualSgdBitwise) {
  for (std::string mode : {"weight_decay", "lr_schedule"}) {
    RunConfig cfg = tiny_cfg();
    cfg.prompt_mode = leapd::PromptMode::detector_only;
    cfg.decay_mode = mode;
    cfg.weight_decay = 0.01;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    cfg.lambda4 = 0.0;
    std::vector<ImageSample> scenes = two_domain_scenes(4);
    leapd::DomainVocabulary vocab = leapd::vocabulary_for(scenes, cfg);

    TrainState lib = leapd::make_train_state(cfg, vocab);
    TrainState ref = leapd::make_train_state(cfg, vocab);
    expect_states_bitwise_equal(lib, ref);

    for (int step = 0; step < 6; ++step) {
      // alternate batch sizes to exercise both mean paths
      std::vector<ImageSample> batch(scenes.begin(),
                                     scenes.begin() + (step % 2 == 0 ? 3 : 1));
      leapd::LossBreakdown b = leapd::train_step(lib, batch);
      manual_detection_step(ref, batch);
      EXPECT_TRUE(std::isfinite(b.total));
      EXPECT_DOUBLE_EQ(b.total, cfg.lambda1 * b.od);
      EXPECT_EQ(b.lp, 0.0);
      expect_states_bitwise_equal(lib, ref);
    }
    EXPECT_EQ(lib.step, 6);
  }
}

TEST(TrainStep, RoutesGradientsByLossTerm) {
  std::vector<ImageSample> scenes = two_domain_scenes(3);

  auto run_one = [&](double l1, double l2, double l3, double l4) {
    RunConfig cfg = tiny_cfg();
    cfg.weight_decay = 0.0;  // isolate gradient flow from decay
    cfg.lambda1 = l1;
    cfg.lambda2 = l2;
    cfg.lambda3 = l3;
    cfg.lambda4 = l4;
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    std::vector<Tensor> before = snapshot(st.trainable);
    leapd::train_step(st, scenes);
    return std::make_tuple(std::move(st), std::move(before));
  };

  {  // prompt CE reaches only the prompt bank (encoders frozen, no pyramid)
    auto [st, before] = run_one(0.0, 1.0, 0.0, 0.0);
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "prompt_bank"));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "detector."));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "fsn."));
  }
  {  // invariance loss reaches squeeze net and backbone, not heads or bank
    auto [st, before] = run_one(0.0, 0.0, 0.5, 0.0);
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "fsn."));
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "detector.stem"));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "detector.head"));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "prompt_bank"));
  }
  {  // dissimilarity loss additionally reaches the bank through the prompts
    auto [st, before] = run_one(0.0, 0.0, 0.0, 0.5);
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "fsn."));
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "detector.stem"));
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "prompt_bank"));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "detector.head"));
  }
  {  // detection loss never touches domain modules
    auto [st, before] = run_one(1.0, 0.0, 0.0, 0.0);
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "detector.stem"));
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "detector.head.cls"));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "fsn."));
    EXPECT_TRUE(all_unchanged_with_prefix(st.trainable, before, "prompt_bank"));
  }
  {  // an anchor-aligned ground truth guarantees regression-head gradient
    RunConfig cfg = tiny_cfg();
    cfg.weight_decay = 0.0;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    cfg.lambda4 = 0.0;
    ImageSample s = scenes[0];
    s.gt_boxes = {leapd::anchor_box(1, 1, 1, 8)};
    s.gt_categories = {1};
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    std::vector<Tensor> before = snapshot(st.trainable);
    leapd::train_step(st, {s});
    EXPECT_TRUE(any_moved_with_prefix(st.trainable, before, "detector.head.reg"));
  }
}

TEST(TrainStep, WeightDecayExemptsPromptBank) {
  EXPECT_TRUE(leapd::weight_decay_exempt("prompt_bank.context"));
  EXPECT_FALSE(leapd::weight_decay_exempt("detector.stem1.w"));
  EXPECT_FALSE(leapd::weight_decay_exempt("fsn.fc2.w"));

  RunConfig cfg = tiny_cfg();
  cfg.weight_decay = 0.1;
  cfg.lambda2 = 0.0;
  cfg.lambda3 = 0.0;
  cfg.lambda4 = 0.0;  // only the detection term: fsn and bank get no gradient
  std::vector<ImageSample> scenes = two_domain_scenes(2);
  TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
  std::vector<Tensor> before = snapshot(st.trainable);
  leapd::train_step(st, scenes);

  for (std::size_t i = 0; i < st.trainable.size(); ++i) {
    const auto& [name, v] = st.trainable[i];
    if (name.rfind("prompt_bank", 0) == 0) {
      EXPECT_EQ(v->value.data, before[i].data);  // exempt and gradient-free
    } else if (name.rfind("fsn.", 0) == 0) {
      // gradient-free but decayed: theta += momentum*0 - lr*(wd*theta)
      for (std::size_t k = 0; k < v->value.size(); ++k) {
        double g = cfg.weight_decay * before[i].data[k];
        double expected = before[i].data[k] + (cfg.momentum * 0.0 - cfg.lr * g);
        EXPECT_EQ(v->value.data[k], expected) << name;
      }
    }
  }
}

TEST(TrainStep, ErrorsAreSpecific) {
  std::vector<ImageSample> scenes = two_domain_scenes(2);

  {
    RunConfig cfg = tiny_cfg();
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    try {
      leapd::train_step(st, {});
      FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
      EXPECT_STREQ(e.what(), "train_step: empty batch");
    }
  }
  {
    RunConfig cfg = tiny_cfg();
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    cfg.lambda4 = 0.0;
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    try {
      leapd::train_step(st, scenes);
      FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
      EXPECT_STREQ(e.what(), "train_step: all loss terms have zero weight");
    }
  }
  {
    // detector-only mode deactivates domain terms even with positive weights
    RunConfig cfg = tiny_cfg();
    cfg.prompt_mode = leapd::PromptMode::detector_only;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 1.0;
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    EXPECT_FALSE(st.domain_terms_active);
    EXPECT_THROW(leapd::train_step(st, scenes), std::invalid_argument);
  }
  {
    RunConfig cfg = tiny_cfg();
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    cfg.lambda4 = 0.0;
    TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));
    // poison a classification logit: the stems cannot carry a NaN because
    // their relu clamps it away, but the class cross-entropy keeps it
    bool poisoned = false;
    for (auto& [name, v] : st.trainable)
      if (name == "detector.head.cls.b") {
        v->value.data[0] = std::numeric_limits<double>::quiet_NaN();
        poisoned = true;
      }
    ASSERT_TRUE(poisoned);
    try {
      leapd::train_step(st, scenes);
      FAIL() << "expected throw";
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "train_step: non-finite L_od at step 0");
    }
  }
}

TEST(TrainState, FreezePromptsStopsBankUpdates) {
  RunConfig cfg = tiny_cfg();
  std::vector<ImageSample> scenes = two_domain_scenes(2);
  TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));

  std::size_t before_n = st.trainable.size();
  ASSERT_EQ(st.velocity.size(), before_n);
  bool bank_trainable = false;
  for (const auto& [name, v] : st.trainable)
    if (name.rfind("prompt_bank", 0) == 0) bank_trainable = true;
  ASSERT_TRUE(bank_trainable);

  leapd::freeze_prompts(st);
  EXPECT_TRUE(st.prompts_frozen);
  EXPECT_EQ(st.trainable.size(), before_n - 1);
  EXPECT_EQ(st.velocity.size(), st.trainable.size());
  for (const auto& [name, v] : st.trainable)
    EXPECT_NE(name.rfind("prompt_bank", 0), 0u) << name;

  Tensor bank_before = st.model.bank.params()[0].second->value;
  leapd::train_step(st, scenes);
  EXPECT_EQ(st.model.bank.params()[0].second->value.data, bank_before.data);
}

TEST(EpochOrder, DeterministicPermutationPerEpoch) {
  leapd::SeedContext seeds = leapd::seed_all(9);
  std::vector<std::size_t> e0 = leapd::epoch_order(seeds, 0, 10);
  std::vector<std::size_t> e0_again = leapd::epoch_order(seeds, 0, 10);
  std::vector<std::size_t> e1 = leapd::epoch_order(seeds, 1, 10);
  EXPECT_EQ(e0, e0_again);
  EXPECT_NE(e0, e1);

  for (auto* v : {&e0, &e1}) {
    std::vector<std::size_t> sorted = *v;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  }
  EXPECT_TRUE(leapd::epoch_order(seeds, 0, 0).empty());
  EXPECT_EQ(leapd::epoch_order(seeds, 3, 1), std::vector<std::size_t>{0});
}

TEST(RunEpochs, StreamsOneRowPerStepPlusEvalRows) {
  RunConfig cfg = tiny_cfg();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  std::vector<ImageSample> scenes = two_domain_scenes(7);  // ceil(7/4) = 2 steps/epoch
  TrainState st = leapd::make_train_state(cfg, leapd::vocabulary_for(scenes, cfg));

  std::ostringstream os;
  std::vector<int> eval_epochs;
  int steps = leapd::run_epochs(
      st, scenes, os,
      [&](TrainState&, int epoch, std::ostream& out) {
        eval_epochs.push_back(epoch);
        out << "{\"eval_marker\":" << epoch << "}\n";
      },
      "prompts");

  EXPECT_EQ(steps, 4);
  EXPECT_EQ(st.step, 4);
  EXPECT_EQ(eval_epochs, (std::vector<int>{0, 1}));

  std::vector<nlohmann::json> rows;
  std::istringstream is(os.str());
  for (std::string line; std::getline(is, line);) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 6u);

  // interleaving: two loss rows, eval, two loss rows, eval
  std::vector<int> loss_rows = {0, 1, 3, 4};
  for (std::size_t i = 0; i < loss_rows.size(); ++i) {
    const nlohmann::json& r = rows[static_cast<std::size_t>(loss_rows[i])];
    EXPECT_EQ(r.at("step").get<long>(), static_cast<long>(i));
    EXPECT_EQ(r.at("epoch").get<int>(), i < 2 ? 0 : 1);
    EXPECT_EQ(r.at("phase").get<std::string>(), "prompts");
    for (const char* key : {"L_od", "L_lp", "L_di", "L_ds", "L_total"})
      EXPECT_TRUE(std::isfinite(r.at(key).get<double>())) << key;
  }
  EXPECT_EQ(rows[2].at("eval_marker").get<int>(), 0);
  EXPECT_EQ(rows[5].at("eval_marker").get<int>(), 1);

  try {
    leapd::run_epochs(st, {}, os, [](TrainState&, int, std::ostream&) {}, "");
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "train: dataset is empty");
  }
}

TEST(LossRowJson, FormatsRoundTrippableDoubles) {
  leapd::LossBreakdown b = leapd::total_loss(1.0 / 3.0, 0.25, 0.1, 0.0, 1, 1, 0.5, 0.5);
  std::string row = leapd::loss_row_json(42, 3, b);
  nlohmann::json j = nlohmann::json::parse(row);
  EXPECT_EQ(j.at("step").get<long>(), 42);
  EXPECT_EQ(j.at("epoch").get<int>(), 3);
  EXPECT_EQ(j.at("L_od").get<double>(), b.od);  // %.17g is lossless for doubles
  EXPECT_EQ(j.at("L_total").get<double>(), b.total);
  EXPECT_FALSE(j.contains("phase"));

  nlohmann::json tagged = nlohmann::json::parse(leapd::loss_row_json(0, 0, b, "detector"));
  EXPECT_EQ(tagged.at("phase").get<std::string>(), "detector");
}

TEST(BuildModel, TrainableAndCheckpointSetsFollowMode) {
  std::vector<ImageSample> scenes = two_domain_scenes(2);

  RunConfig cfg = tiny_cfg();
  leapd::DomainVocabulary vocab = leapd::vocabulary_for(scenes, cfg);
  EXPECT_EQ(vocab.n_sc(), 2);

  TrainState learnable = leapd::make_train_state(cfg, vocab);
  bool has_bank = false, has_fsn = false, has_encoder = false;
  for (const auto& [name, v] : learnable.trainable) {
    if (name.rfind("prompt_bank", 0) == 0) has_bank = true;
    if (name.rfind("fsn.", 0) == 0) has_fsn = true;
    if (name.rfind("vision.", 0) == 0 || name.rfind("text.", 0) == 0) has_encoder = true;
  }
  EXPECT_TRUE(has_bank);
  EXPECT_TRUE(has_fsn);
  EXPECT_FALSE(has_encoder);  // frozen by default
  for (const auto& [name, v] : learnable.model.vision.params())
    EXPECT_FALSE(v->requires_grad) << name;

  // checkpoint set additionally carries the frozen encoders
  bool ckpt_encoder = false;
  for (const auto& [name, v] : leapd::collect_checkpoint_params(learnable.model, cfg))
    if (name.rfind("vision.", 0) == 0 || name.rfind("text.", 0) == 0) ckpt_encoder = true;
  EXPECT_TRUE(ckpt_encoder);

  RunConfig det = tiny_cfg();
  det.prompt_mode = leapd::PromptMode::detector_only;
  TrainState detector_only = leapd::make_train_state(det, vocab);
  for (const auto& [name, v] : detector_only.trainable)
    EXPECT_EQ(name.rfind("detector.", 0), 0u) << name;
  EXPECT_EQ(leapd::collect_checkpoint_params(detector_only.model, det).size(),
            detector_only.trainable.size());

  RunConfig man = tiny_cfg();
  man.prompt_mode = leapd::PromptMode::manual;
  TrainState manual = leapd::make_train_state(man, vocab);
  for (const auto& [name, v] : manual.trainable)
    EXPECT_NE(name.rfind("prompt_bank", 0), 0u) << name;  // no bank in manual mode

  // same seed, same domains: initial parameters reproduce bitwise
  TrainState again = leapd::make_train_state(cfg, vocab);
  ASSERT_EQ(again.trainable.size(), learnable.trainable.size());
  for (std::size_t i = 0; i < again.trainable.size(); ++i)
    EXPECT_EQ(again.trainable[i].second->value.data,
              learnable.trainable[i].second->value.data);
}

}  // namespace
