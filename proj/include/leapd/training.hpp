// One-step joint training: every batch updates detector, squeeze network,
// and prompt bank from a single combined objective. Zero-weight loss terms
// are skipped at graph construction, so a run with only the detection term
// is arithmetically indistinguishable from a detector-only run.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "leapd/alignment.hpp"
#include "leapd/checkpoint.hpp"
#include "leapd/config.hpp"
#include "leapd/datasets.hpp"
#include "leapd/detector.hpp"
#include "leapd/domain.hpp"
#include "leapd/encoders.hpp"
#include "leapd/graph.hpp"
#include "leapd/prompting.hpp"
#include "leapd/rng.hpp"

namespace leapd {

struct ModelBundle {
  Detector detector;
  Fsn fsn;
  VisionEncoder vision;
  TextEncoder text;
  PromptBank bank;
  DomainVocabulary vocab;
};

inline ModelBundle build_model(const RunConfig& cfg, const DomainVocabulary& vocab) {
  SeedContext seeds = seed_all(static_cast<std::uint64_t>(cfg.seed));
  ModelBundle m;
  m.vocab = vocab;
  m.detector = Detector(cfg, seeds);
  m.fsn = Fsn(cfg.embed_dim, cfg.detector_channels, cfg.fsn_hidden, seeds);
  m.vision = VisionEncoder(cfg.embed_dim, 3, seeds);
  m.text = TextEncoder(cfg.embed_dim, cfg.token_dim, cfg.text_hidden, cfg.vocab_size,
                       cfg.max_seq_len, seeds);
  m.bank = PromptBank::init(cfg.prompt_len, std::max(1, vocab.n_sc()), cfg.token_dim,
                            static_cast<std::uint64_t>(cfg.seed));
  return m;
}

// Encoders train only when switched on explicitly; the prompt-learning
// convention keeps them frozen while prompts and detector move.
inline bool resolve_train_switch(TrainSwitch s) { return s == TrainSwitch::on; }

inline NamedParams collect_trainable(const ModelBundle& m, const RunConfig& cfg) {
  NamedParams out = m.detector.params();
  if (cfg.prompt_mode == PromptMode::detector_only) return out;
  for (auto& p : m.fsn.params()) out.push_back(p);
  if (cfg.prompt_mode == PromptMode::learnable)
    for (auto& p : m.bank.params()) out.push_back(p);
  if (resolve_train_switch(cfg.train_vision_encoder))
    for (auto& p : m.vision.params()) out.push_back(p);
  if (resolve_train_switch(cfg.train_text_encoder))
    for (auto& p : m.text.params()) out.push_back(p);
  return out;
}

inline NamedParams collect_checkpoint_params(const ModelBundle& m, const RunConfig& cfg) {
  NamedParams out = m.detector.params();
  if (cfg.prompt_mode == PromptMode::detector_only) return out;
  for (auto& p : m.fsn.params()) out.push_back(p);
  for (auto& p : m.vision.params()) out.push_back(p);
  for (auto& p : m.text.params()) out.push_back(p);
  if (cfg.prompt_mode == PromptMode::learnable)
    for (auto& p : m.bank.params()) out.push_back(p);
  return out;
}

inline bool weight_decay_exempt(const std::string& name) {
  return name.rfind("prompt_bank", 0) == 0;
}

struct TrainState {
  RunConfig cfg;
  ModelBundle model;
  NamedParams trainable;
  std::vector<Tensor> velocity;
  long step = 0;
  int epoch = 0;
  bool domain_terms_active = false;  // any of lambda2..4 > 0 outside detector_only
  bool prompts_frozen = false;       // two-step phase 2
};

inline TrainState make_train_state(const RunConfig& cfg, const DomainVocabulary& vocab) {
  TrainState st;
  st.cfg = cfg;
  st.model = build_model(cfg, vocab);
  st.trainable = collect_trainable(st.model, cfg);
  for (const auto& [name, v] : st.trainable) st.velocity.push_back(Tensor::zeros(v->value.shape));
  st.domain_terms_active = cfg.prompt_mode != PromptMode::detector_only &&
                           (cfg.lambda2 > 0 || cfg.lambda3 > 0 || cfg.lambda4 > 0);
  // Frozen encoders take no gradient, so their backward work is skipped.
  if (!resolve_train_switch(cfg.train_vision_encoder))
    for (auto& [name, v] : st.model.vision.params()) v->requires_grad = false;
  if (!resolve_train_switch(cfg.train_text_encoder))
    for (auto& [name, v] : st.model.text.params()) v->requires_grad = false;
  return st;
}

// Two-step phase 2: prompts stop training, detector and squeeze network
// continue against the tuned prompt bank.
inline void freeze_prompts(TrainState& st) {
  st.prompts_frozen = true;
  for (std::size_t i = st.trainable.size(); i > 0; --i)
    if (st.trainable[i - 1].first.rfind("prompt_bank", 0) == 0) {
      st.trainable.erase(st.trainable.begin() + static_cast<std::ptrdiff_t>(i - 1));
      st.velocity.erase(st.velocity.begin() + static_cast<std::ptrdiff_t>(i - 1));
    }
}

// Overwrites model parameters from checkpoint entries. Training with any
// domain loss active requires the domain modules to be present.
inline void restore_params(TrainState& st, const NamedTensors& entries) {
  if (st.domain_terms_active) {
    bool has_fsn = false, has_bank = false;
    for (const auto& [name, t] : entries) {
      if (name.rfind("fsn.", 0) == 0) has_fsn = true;
      if (name.rfind("prompt_bank", 0) == 0) has_bank = true;
    }
    bool need_bank = st.cfg.prompt_mode == PromptMode::learnable;
    if (!has_fsn || (need_bank && !has_bank))
      throw std::runtime_error("domain modules absent from checkpoint");
  }
  NamedParams all = collect_checkpoint_params(st.model, st.cfg);
  for (auto& [name, v] : all) {
    for (const auto& [ename, et] : entries)
      if (ename == name) {
        if (!v->value.same_shape(et))
          throw std::runtime_error("checkpoint shape mismatch for " + name);
        v->value = et;
        break;
      }
  }
}

// ---------------------------------------------------------------------------
// Prompt embeddings for one step (identical across the batch, built once)
// ---------------------------------------------------------------------------

inline std::vector<Var> step_prompt_embeddings(const TrainState& st) {
  const ModelBundle& m = st.model;
  std::vector<Var> out;
  if (st.cfg.prompt_mode == PromptMode::learnable) {
    for (int c = 0; c < m.vocab.n_sc(); ++c) {
      Var row = m.bank.class_row_graph(static_cast<std::size_t>(c));
      if (st.prompts_frozen) row = constant(row->value);
      out.push_back(m.text.encode_tokens_graph(row));
    }
  } else {
    for (const auto& d : m.vocab.classes())
      out.push_back(m.text.encode_ids_graph(m.text.token_ids(build_manual_prompt(d))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// One optimizer step over a batch
// ---------------------------------------------------------------------------

inline LossBreakdown train_step(TrainState& st, const std::vector<ImageSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const RunConfig& cfg = st.cfg;
  const ModelBundle& m = st.model;
  const bool domain = st.domain_terms_active;
  const bool use_od = cfg.lambda1 > 0;
  const bool use_lp = domain && cfg.lambda2 > 0;
  const bool use_di = domain && cfg.lambda3 > 0;
  const bool use_ds = domain && cfg.lambda4 > 0;
  if (!use_od && !use_lp && !use_di && !use_ds)
    throw std::invalid_argument("train_step: all loss terms have zero weight");

  std::vector<Var> prompts;
  if (use_lp || use_ds) prompts = step_prompt_embeddings(st);

  std::vector<Var> od_terms, lp_terms, di_terms, ds_terms;
  for (const auto& sample : batch) {
    Var image = constant(sample.image);
    PyramidGraph pyr;
    if (use_od || use_di || use_ds) pyr = m.detector.extract_pyramid_graph(image);
    if (use_od)
      od_terms.push_back(
          m.detector.detection_loss_graph(pyr, sample.gt_boxes, sample.gt_categories));
    if (!domain) continue;
    Var fprime;
    if (use_di || use_ds) {
      Var f = m.detector.select_alignment_feature_graph(pyr, cfg.alignment_level);
      fprime = m.fsn.forward_graph(f);
    }
    Var v;
    if (use_lp || use_di) v = m.vision.encode_image_graph(image);
    if (use_lp) {
      int cls = m.vocab.class_index(sample.domain);
      lp_terms.push_back(prompt_ce_graph(v, prompts, cfg.temperature, cls));
    }
    if (use_di)
      di_terms.push_back(domain_invariant_loss_graph(
          similarity_score_graph(v, fprime, cfg.clamp_eps)));
    if (use_ds) {
      std::vector<Var> ds_scores;
      if (cfg.dissimilarity_target == "own") {
        int cls = m.vocab.class_index(sample.domain);
        ds_scores.push_back(dissimilarity_score_graph(prompts[static_cast<std::size_t>(cls)],
                                                      fprime, cfg.clamp_eps));
      } else {
        for (const auto& t : prompts)
          ds_scores.push_back(dissimilarity_score_graph(t, fprime, cfg.clamp_eps));
      }
      ds_terms.push_back(domain_specific_loss_graph(ds_scores));
    }
  }

  auto batch_mean = [](const std::vector<Var>& terms) {
    return terms.size() == 1 ? terms[0] : mean(stack_scalars(terms));
  };
  Var od = use_od ? batch_mean(od_terms) : Var{};
  Var lp = use_lp ? batch_mean(lp_terms) : Var{};
  Var di = use_di ? batch_mean(di_terms) : Var{};
  Var ds = use_ds ? batch_mean(ds_terms) : Var{};

  auto check_finite = [&](const char* name, double v) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("train_step: non-finite ") + name + " at step " +
                               std::to_string(st.step));
  };
  if (od) check_finite("L_od", od->value.item());
  if (lp) check_finite("L_lp", lp->value.item());
  if (di) check_finite("L_di", di->value.item());
  if (ds) check_finite("L_ds", ds->value.item());

  // Zero-weight terms never enter the graph, so the composed objective
  // degenerates exactly to the surviving terms.
  Var total;
  auto accumulate = [&](const Var& term, double weight) {
    Var w = scale(term, weight);
    total = total ? add(total, w) : w;
  };
  if (od) accumulate(od, cfg.lambda1);
  if (lp) accumulate(lp, cfg.lambda2);
  if (di) accumulate(di, cfg.lambda3);
  if (ds) accumulate(ds, cfg.lambda4);
  // A parameter can drop out of the graph for a step (a batch with no
  // positive anchors builds no regression term); backward resets only
  // reachable gradients, so clear first or a stale one would be re-applied.
  for (auto& [name, p] : st.trainable) p->grad = Tensor();
  backward(total);

  double lr = cfg.lr;
  if (cfg.decay_mode == "lr_schedule")
    lr = cfg.lr / (1.0 + cfg.weight_decay * static_cast<double>(st.step));
  for (std::size_t i = 0; i < st.trainable.size(); ++i) {
    auto& [name, param] = st.trainable[i];
    Tensor& vel = st.velocity[i];
    bool decay = cfg.decay_mode == "weight_decay" && !weight_decay_exempt(name);
    for (std::size_t k = 0; k < param->value.size(); ++k) {
      double g = param->grad.size() == param->value.size() ? param->grad.data[k] : 0.0;
      if (decay) g += cfg.weight_decay * param->value.data[k];
      vel.data[k] = cfg.momentum * vel.data[k] - lr * g;
      param->value.data[k] += vel.data[k];
    }
  }

  LossBreakdown b = total_loss(od ? od->value.item() : 0.0, lp ? lp->value.item() : 0.0,
                               di ? di->value.item() : 0.0, ds ? ds->value.item() : 0.0,
                               cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4);
  ++st.step;
  return b;
}

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int steps = 0;
};

inline std::vector<std::size_t> epoch_order(const SeedContext& seeds, int epoch,
                                            std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = seeds.stream("shuffle", static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<long long>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline std::string loss_row_json(long step, int epoch, const LossBreakdown& b,
                                 const std::string& phase = "") {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"step\":%ld,\"epoch\":%d,\"L_od\":%.17g,\"L_lp\":%.17g,\"L_di\":%.17g,"
                "\"L_ds\":%.17g,\"L_total\":%.17g",
                step, epoch, b.od, b.lp, b.di, b.ds, b.total);
  os << buf;
  if (!phase.empty()) os << ",\"phase\":\"" << phase << "\"";
  os << "}";
  return os.str();
}

// Loads every sample of an index into memory. Desk-scale datasets fit.
inline std::vector<ImageSample> load_all(const DatasetIndex& index, int num_categories) {
  std::vector<ImageSample> out;
  out.reserve(index.samples.size());
  for (const auto& e : index.samples) out.push_back(load_sample(e, num_categories));
  return out;
}

inline DomainVocabulary vocabulary_for(const std::vector<ImageSample>& samples,
                                       const RunConfig& cfg) {
  DomainVocabulary vocab;
  for (const auto& s : samples) vocab.observe(s.domain);
  vocab.finalize(cfg.n_sc);
  return vocab;
}

// Runs epochs x ceil(N/batch) steps with per-epoch reshuffling, streaming
// one loss row per step (and one eval row per epoch when an evaluator is
// supplied) to metrics_out. Returns the step count.
template <typename EvalFn>
inline int run_epochs(TrainState& st, const std::vector<ImageSample>& samples,
                      std::ostream& metrics_out, EvalFn&& per_epoch_eval,
                      const std::string& phase = "") {
  if (samples.empty()) throw std::invalid_argument("train: dataset is empty");
  SeedContext seeds = seed_all(static_cast<std::uint64_t>(st.cfg.seed));
  int steps = 0;
  for (int epoch = 0; epoch < st.cfg.epochs; ++epoch) {
    st.epoch = epoch;
    std::vector<std::size_t> order = epoch_order(seeds, epoch, samples.size());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(st.cfg.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(st.cfg.batch_size));
      std::vector<ImageSample> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(samples[order[k]]);
      LossBreakdown b = train_step(st, batch);
      metrics_out << loss_row_json(st.step - 1, epoch, b, phase) << "\n";
      ++steps;
    }
    per_epoch_eval(st, epoch, metrics_out);
  }
  return steps;
}

}  // namespace leapd
