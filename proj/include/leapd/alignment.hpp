// The domain-alignment math: cosine similarity, temperature-softmax class
// probabilities, prompt cross-entropy, the Feature-map Squeeze Network,
// similarity/dissimilarity scores, and the domain-invariant / domain-
// specific losses. Natural log throughout. Scores are clamped to
// [clamp_eps, 1] before any log, since both losses diverge at 0.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "leapd/encoders.hpp"
#include "leapd/graph.hpp"
#include "leapd/rng.hpp"

namespace leapd {

constexpr double kDefaultClampEps = 1e-7;

// ---------------------------------------------------------------------------
// Plain math (spec-level operations on raw vectors)
// ---------------------------------------------------------------------------

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double ab = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  return ab / (std::sqrt(na) * std::sqrt(nb));
}

// Softmax over sim(v, t_i)/tau.
inline std::vector<double> class_probabilities(const Embedding& v,
                                               const std::vector<Embedding>& prompts,
                                               double tau) {
  if (prompts.empty()) throw std::invalid_argument("class_probabilities: no prompts");
  if (!(tau > 0.0)) throw std::invalid_argument("class_probabilities: tau must be positive");
  std::vector<double> logits(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i)
    logits[i] = cosine_similarity(v.vector, prompts[i].vector) / tau;
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  std::vector<double> p(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) p[i] = std::exp(logits[i] - mx) / z;
  return p;
}

inline double prompt_ce_loss(const std::vector<double>& probs, int true_class) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= probs.size())
    throw std::out_of_range("prompt_ce_loss: class index out of range");
  return -std::log(probs[static_cast<std::size_t>(true_class)]);
}

// s = (1 + sim(v, f'))/2, clamped to [eps, 1].
inline double similarity_score(const std::vector<double>& v, const std::vector<double>& fp,
                               double eps = kDefaultClampEps) {
  double s = (1.0 + cosine_similarity(v, fp)) / 2.0;
  return std::min(1.0, std::max(eps, s));
}

// ds = (1 - sim(t, f'))/2, clamped to [eps, 1].
inline double dissimilarity_score(const std::vector<double>& t, const std::vector<double>& fp,
                                  double eps = kDefaultClampEps) {
  double ds = (1.0 - cosine_similarity(t, fp)) / 2.0;
  return std::min(1.0, std::max(eps, ds));
}

// L_di = -(1-s) ln s; zero iff s = 1.
inline double domain_invariant_loss(double s, double eps = kDefaultClampEps) {
  if (s < eps || s > 1.0)
    throw std::invalid_argument("domain_invariant_loss: s outside [eps, 1]");
  return -(1.0 - s) * std::log(s);
}

// dL_di/ds, for gradient cross-checks.
inline double domain_invariant_loss_dds(double s) {
  return std::log(s) - (1.0 - s) / s;
}

// L_ds = -(1/N_sc) sum (1-ds_i) ln ds_i; zero iff every ds_i = 1.
inline double domain_specific_loss(const std::vector<double>& ds_list,
                                   double eps = kDefaultClampEps) {
  if (ds_list.empty()) throw std::invalid_argument("domain_specific_loss: empty list");
  double acc = 0;
  for (double ds : ds_list) {
    if (ds < eps || ds > 1.0)
      throw std::invalid_argument("domain_specific_loss: ds outside [eps, 1]");
    acc += -(1.0 - ds) * std::log(ds);
  }
  return acc / static_cast<double>(ds_list.size());
}

struct LossBreakdown {
  double od = 0, lp = 0, di = 0, ds = 0, total = 0;
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 0.5, lambda4 = 0.5;
};

// Weighted sum of the four terms. Rejects non-finite parts, naming the offender.
inline LossBreakdown total_loss(double od, double lp, double di, double ds,
                                double l1 = 1.0, double l2 = 1.0, double l3 = 0.5,
                                double l4 = 0.5) {
  const char* names[4] = {"L_od", "L_lp", "L_di", "L_ds"};
  double parts[4] = {od, lp, di, ds};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(parts[i]))
      throw std::runtime_error(std::string("total_loss: non-finite term ") + names[i]);
  LossBreakdown b;
  b.od = od;
  b.lp = lp;
  b.di = di;
  b.ds = ds;
  b.lambda1 = l1;
  b.lambda2 = l2;
  b.lambda3 = l3;
  b.lambda4 = l4;
  b.total = l1 * od + l2 * lp + l3 * di + l4 * ds;
  return b;
}

// ---------------------------------------------------------------------------
// Feature-map Squeeze Network: pyramid feature f -> unit d-vector f'.
// Global average pool, affine map (optionally one hidden layer), normalize.
// ---------------------------------------------------------------------------
class Fsn {
 public:
  Fsn() = default;

  Fsn(int embed_dim, int in_channels, int hidden, const SeedContext& seeds)
      : d_(embed_dim), c_(in_channels), hidden_(hidden) {
    Rng rng = seeds.stream("fsn");
    if (hidden > 0) {
      fc1_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(hidden),
                                          static_cast<std::size_t>(in_channels)},
                                         rng, std::sqrt(1.0 / in_channels)));
      fc1_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(hidden)}));
      fc2_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(embed_dim),
                                          static_cast<std::size_t>(hidden)},
                                         rng, std::sqrt(1.0 / hidden)));
      fc2_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(embed_dim)}));
    } else {
      fc2_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(embed_dim),
                                          static_cast<std::size_t>(in_channels)},
                                         rng, std::sqrt(1.0 / in_channels)));
      fc2_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(embed_dim)}));
    }
  }

  int embed_dim() const { return d_; }
  int in_channels() const { return c_; }

  Var forward_graph(const Var& fmap) const {
    if (fmap->value.ndim() != 3 || fmap->value.shape[0] != static_cast<std::size_t>(c_))
      throw std::invalid_argument("fsn_forward: expected " + std::to_string(c_) +
                                  " channels, got shape " + shape_str(fmap->value.shape));
    Var x = global_avg_pool(fmap);
    if (hidden_ > 0) x = tanh_act(add(matvec(fc1_w_, x), fc1_b_));
    Var e = add(matvec(fc2_w_, x), fc2_b_);
    return l2_normalize(e);
  }

  Embedding forward(const Tensor& fmap) const {
    Var out = forward_graph(constant(fmap));
    return Embedding{out->value.data, EmbeddingKind::squeezed};
  }

  NamedParams params() const {
    NamedParams p;
    if (hidden_ > 0) {
      p.emplace_back("fsn.fc1.w", fc1_w_);
      p.emplace_back("fsn.fc1.b", fc1_b_);
    }
    p.emplace_back("fsn.fc2.w", fc2_w_);
    p.emplace_back("fsn.fc2.b", fc2_b_);
    return p;
  }

 private:
  int d_ = 0, c_ = 0, hidden_ = 0;
  Var fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// ---------------------------------------------------------------------------
// Graph versions used inside the training objective
// ---------------------------------------------------------------------------

inline Var similarity_score_graph(const Var& v, const Var& fp, double eps) {
  return clamp(scale(add_scalar(dot(v, fp), 1.0), 0.5), eps, 1.0);
}

inline Var dissimilarity_score_graph(const Var& t, const Var& fp, double eps) {
  return clamp(scale(add_scalar(neg(dot(t, fp)), 1.0), 0.5), eps, 1.0);
}

inline Var domain_invariant_loss_graph(const Var& s) {
  Var one = scalar_const(1.0);
  return neg(mul(sub(one, s), ln(s)));
}

inline Var domain_specific_loss_graph(const std::vector<Var>& ds_list) {
  if (ds_list.empty()) throw std::invalid_argument("domain_specific_loss: empty list");
  Var one = scalar_const(1.0);
  std::vector<Var> terms;
  terms.reserve(ds_list.size());
  for (const auto& ds : ds_list) terms.push_back(neg(mul(sub(one, ds), ln(ds))));
  return mean(stack_scalars(terms));
}

// -ln softmax(sim(v, t_i)/tau)[true_class].
inline Var prompt_ce_graph(const Var& v, const std::vector<Var>& prompts, double tau,
                           int true_class) {
  if (prompts.empty()) throw std::invalid_argument("prompt_ce: no prompts");
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= prompts.size())
    throw std::out_of_range("prompt_ce: class index out of range");
  std::vector<Var> sims;
  sims.reserve(prompts.size());
  for (const auto& t : prompts) sims.push_back(dot(v, t));
  Var logits = scale(stack_scalars(sims), 1.0 / tau);
  return neg(pick(log_softmax(logits), static_cast<std::size_t>(true_class)));
}

}  // namespace leapd
