// Manual prompt template and the learnable prompt bank: one row of n
// context vectors per shooting-condition class, fed straight to the text
// encoder in place of tokenized text.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "leapd/domain.hpp"
#include "leapd/encoders.hpp"
#include "leapd/graph.hpp"
#include "leapd/rng.hpp"

namespace leapd {

// The template keeps its original leading article regardless of the
// altitude word that follows.
inline std::string build_manual_prompt(const DomainLabel& domain) {
  return std::string("An ") + to_string(domain.altitude) + " altitude " +
         to_string(domain.view) + " view of a " + to_string(domain.weather) +
         " day taken by a drone";
}

class PromptBank {
 public:
  PromptBank() = default;

  static PromptBank init(int n, int n_sc, int token_dim, uint64_t seed) {
    if (n < 1 || n_sc < 1 || token_dim < 1)
      throw std::invalid_argument("prompt bank sizes must be positive");
    PromptBank b;
    b.n_ = n;
    b.n_sc_ = n_sc;
    b.d_tok_ = token_dim;
    Rng rng = seed_all(seed).stream("prompt_bank");
    b.context_ = parameter(gaussian_tensor({static_cast<std::size_t>(n_sc),
                                            static_cast<std::size_t>(n),
                                            static_cast<std::size_t>(token_dim)},
                                           rng, 0.02));
    return b;
  }

  int n() const { return n_; }
  int n_sc() const { return n_sc_; }
  int token_dim() const { return d_tok_; }
  const Var& context() const { return context_; }
  Var& context() { return context_; }

  // Row class_index as a (n, d_tok) graph slice; gradients reach the bank.
  Var class_row_graph(int class_index) const {
    if (class_index < 0 || class_index >= n_sc_)
      throw std::out_of_range("prompt bank class index " + std::to_string(class_index) +
                              " out of range [0, " + std::to_string(n_sc_) + ")");
    return slice_first(context_, static_cast<std::size_t>(class_index));
  }

  TokenStream class_stream(int class_index) const {
    Var row = class_row_graph(class_index);
    TokenStream s;
    s.source = TokenSource::learnable_context;
    for (int i = 0; i < n_; ++i) {
      std::vector<double> v(static_cast<std::size_t>(d_tok_));
      for (int j = 0; j < d_tok_; ++j)
        v[static_cast<std::size_t>(j)] =
            row->value(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      s.vectors.push_back(std::move(v));
    }
    return s;
  }

  NamedParams params() const { return {{"prompt_bank.context", context_}}; }

 private:
  int n_ = 0, n_sc_ = 0, d_tok_ = 0;
  Var context_;
};

inline Var embed_class_prompt_graph(const PromptBank& bank, int class_index,
                                    const TextEncoder& enc) {
  return enc.encode_tokens_graph(bank.class_row_graph(class_index));
}

inline Embedding embed_class_prompt(const PromptBank& bank, int class_index,
                                    const TextEncoder& enc) {
  Var out = embed_class_prompt_graph(bank, class_index, enc);
  return Embedding{out->value.data, EmbeddingKind::textual};
}

// Ordered by class_index; element i equals the per-class call.
inline std::vector<Var> embed_all_prompts_graph(const PromptBank& bank,
                                                const TextEncoder& enc) {
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(bank.n_sc()));
  for (int i = 0; i < bank.n_sc(); ++i)
    out.push_back(embed_class_prompt_graph(bank, i, enc));
  return out;
}

inline std::vector<Embedding> embed_all_prompts(const PromptBank& bank,
                                                const TextEncoder& enc) {
  std::vector<Embedding> out;
  for (int i = 0; i < bank.n_sc(); ++i) out.push_back(embed_class_prompt(bank, i, enc));
  return out;
}

// Manual-mode counterpart: one embedded template per shooting-condition
// class, so both prompt modes hand the alignment code the same shape.
inline std::vector<Var> embed_manual_prompts_graph(const std::vector<DomainLabel>& classes,
                                                   const TextEncoder& enc) {
  std::vector<Var> out;
  out.reserve(classes.size());
  for (const auto& d : classes)
    out.push_back(enc.encode_ids_graph(enc.token_ids(build_manual_prompt(d))));
  return out;
}

}  // namespace leapd
