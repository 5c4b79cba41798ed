// The vision-language encoder pair. Both map into the shared d-dimensional
// space and finish with an explicit L2 normalization, so cosine similarity
// downstream reduces to a dot product. Deliberately small: three conv
// stages for vision, mean-pool plus one hidden layer for text. The module
// interface admits a pretrained drop-in; none is bundled.
#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <utility>
#include <vector>

#include "leapd/graph.hpp"
#include "leapd/rng.hpp"
#include "leapd/tensor.hpp"

namespace leapd {

enum class EmbeddingKind { visual, textual, squeezed };
enum class TokenSource { tokenized_text, learnable_context };

struct Embedding {
  std::vector<double> vector;
  EmbeddingKind kind = EmbeddingKind::visual;
};

struct TokenStream {
  std::vector<std::vector<double>> vectors;
  TokenSource source = TokenSource::tokenized_text;
};

using NamedParams = std::vector<std::pair<std::string, Var>>;

inline Tensor gaussian_tensor(std::vector<std::size_t> shape, Rng& rng, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.gaussian(0.0, stddev);
  return t;
}

// ---------------------------------------------------------------------------
// Text encoder. Consumes token vectors, emits a unit-norm
// d-vector: mean over tokens -> affine+tanh -> affine -> normalize.
// ---------------------------------------------------------------------------
class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(int embed_dim, int token_dim, int hidden, int vocab, int max_seq,
              const SeedContext& seeds)
      : d_(embed_dim), d_tok_(token_dim), max_seq_(max_seq), vocab_size_(vocab) {
    Rng rng = seeds.stream("text_encoder");
    vocab_ = parameter(gaussian_tensor({static_cast<std::size_t>(vocab),
                                        static_cast<std::size_t>(token_dim)},
                                       rng, 0.02));
    double s1 = std::sqrt(1.0 / token_dim);
    fc1_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(hidden),
                                        static_cast<std::size_t>(token_dim)}, rng, s1));
    fc1_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(hidden)}));
    double s2 = std::sqrt(1.0 / hidden);
    fc2_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(embed_dim),
                                        static_cast<std::size_t>(hidden)}, rng, s2));
    fc2_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(embed_dim)}));
  }

  int embed_dim() const { return d_; }
  int token_dim() const { return d_tok_; }
  int max_seq_len() const { return max_seq_; }

  // Lowercased whitespace tokens hashed into the vocabulary.
  std::vector<std::size_t> token_ids(const std::string& text) const {
    if (text.empty()) throw std::invalid_argument("tokenize: empty text");
    std::vector<std::size_t> ids;
    std::string word;
    auto flush = [&] {
      if (!word.empty()) {
        ids.push_back(hash_word(word) % static_cast<std::size_t>(vocab_size_));
        word.clear();
      }
    };
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) flush();
      else word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    if (ids.empty()) throw std::invalid_argument("tokenize: no tokens in text");
    if (ids.size() > static_cast<std::size_t>(max_seq_))
      ids.resize(static_cast<std::size_t>(max_seq_));
    return ids;
  }

  TokenStream tokenize(const std::string& text) const {
    auto ids = token_ids(text);
    TokenStream s;
    s.source = TokenSource::tokenized_text;
    for (auto id : ids) {
      std::vector<double> v(static_cast<std::size_t>(d_tok_));
      for (int j = 0; j < d_tok_; ++j)
        v[static_cast<std::size_t>(j)] = vocab_->value(id, static_cast<std::size_t>(j));
      s.vectors.push_back(std::move(v));
    }
    return s;
  }

  // Graph path over a (T, d_tok) token matrix.
  Var encode_tokens_graph(const Var& tokens) const {
    if (tokens->value.ndim() != 2 || tokens->value.shape[0] == 0)
      throw std::invalid_argument("encode_tokens: empty token stream");
    if (tokens->value.shape[1] != static_cast<std::size_t>(d_tok_))
      throw std::invalid_argument("encode_tokens: token dim " +
                                  std::to_string(tokens->value.shape[1]) + " != " +
                                  std::to_string(d_tok_));
    Var pooled = mean_rows(tokens);
    Var h = tanh_act(add(matvec(fc1_w_, pooled), fc1_b_));
    Var e = add(matvec(fc2_w_, h), fc2_b_);
    return l2_normalize(e);
  }

  Var encode_ids_graph(const std::vector<std::size_t>& ids) const {
    return encode_tokens_graph(gather_rows(vocab_, ids));
  }

  Embedding encode_tokens(const TokenStream& stream) const {
    if (stream.vectors.empty())
      throw std::invalid_argument("encode_tokens: empty token stream");
    Tensor t = Tensor::zeros({stream.vectors.size(), static_cast<std::size_t>(d_tok_)});
    for (std::size_t i = 0; i < stream.vectors.size(); ++i) {
      if (stream.vectors[i].size() != static_cast<std::size_t>(d_tok_))
        throw std::invalid_argument("encode_tokens: token dim mismatch");
      for (int j = 0; j < d_tok_; ++j)
        t(i, static_cast<std::size_t>(j)) = stream.vectors[i][static_cast<std::size_t>(j)];
    }
    Var out = encode_tokens_graph(constant(std::move(t)));
    return Embedding{out->value.data, EmbeddingKind::textual};
  }

  NamedParams params() const {
    return {{"text.vocab", vocab_}, {"text.fc1.w", fc1_w_}, {"text.fc1.b", fc1_b_},
            {"text.fc2.w", fc2_w_}, {"text.fc2.b", fc2_b_}};
  }

 private:
  static std::size_t hash_word(const std::string& w) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : w) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }

  int d_ = 0, d_tok_ = 0, max_seq_ = 0, vocab_size_ = 0;
  Var vocab_, fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// ---------------------------------------------------------------------------
// Vision encoder. Three stride-2 conv stages, global average
// pool, affine projection to d, L2 normalize.
// ---------------------------------------------------------------------------
class VisionEncoder {
 public:
  VisionEncoder() = default;

  VisionEncoder(int embed_dim, int in_channels, const SeedContext& seeds)
      : d_(embed_dim), in_channels_(in_channels) {
    Rng rng = seeds.stream("vision_encoder");
    int chans[4] = {in_channels, 8, 16, 32};
    for (int s = 0; s < 3; ++s) {
      double std = std::sqrt(2.0 / (chans[s] * 9.0));
      conv_w_[s] = parameter(gaussian_tensor({static_cast<std::size_t>(chans[s + 1]),
                                              static_cast<std::size_t>(chans[s]), 3, 3},
                                             rng, std));
      conv_b_[s] = parameter(Tensor::zeros({static_cast<std::size_t>(chans[s + 1])}));
    }
    double sp = std::sqrt(1.0 / 32.0);
    proj_w_ = parameter(gaussian_tensor({static_cast<std::size_t>(embed_dim), 32}, rng, sp));
    proj_b_ = parameter(Tensor::zeros({static_cast<std::size_t>(embed_dim)}));
  }

  int embed_dim() const { return d_; }

  Var encode_image_graph(const Var& image) const {
    const Tensor& img = image->value;
    if (img.ndim() != 3 || img.shape[0] != static_cast<std::size_t>(in_channels_))
      throw std::invalid_argument("encode_image: expected " + std::to_string(in_channels_) +
                                  " channels, got shape " + shape_str(img.shape));
    if (img.shape[1] < 8 || img.shape[2] < 8)
      throw std::invalid_argument("encode_image: spatial dims must be >= 8x8");
    Var x = image;
    for (int s = 0; s < 3; ++s) x = relu(conv2d(x, conv_w_[s], conv_b_[s], 2, 1));
    Var pooled = global_avg_pool(x);
    Var e = add(matvec(proj_w_, pooled), proj_b_);
    return l2_normalize(e);
  }

  Embedding encode_image(const Tensor& image) const {
    Var out = encode_image_graph(constant(image));
    return Embedding{out->value.data, EmbeddingKind::visual};
  }

  NamedParams params() const {
    return {{"vision.conv1.w", conv_w_[0]}, {"vision.conv1.b", conv_b_[0]},
            {"vision.conv2.w", conv_w_[1]}, {"vision.conv2.b", conv_b_[1]},
            {"vision.conv3.w", conv_w_[2]}, {"vision.conv3.b", conv_b_[2]},
            {"vision.proj.w", proj_w_},     {"vision.proj.b", proj_b_}};
  }

 private:
  int d_ = 0, in_channels_ = 3;
  Var conv_w_[3], conv_b_[3];
  Var proj_w_, proj_b_;
};

}  // namespace leapd
