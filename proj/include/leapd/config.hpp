// Run configuration. File format: UTF-8 text, one `key = value` per line,
// `#` starts a comment. Overrides win over the file, the file wins over
// defaults. Unknown keys and out-of-range values are hard errors.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace leapd {

enum class PromptMode { manual, learnable, detector_only };

inline const char* to_string(PromptMode m) {
  switch (m) {
    case PromptMode::manual: return "manual";
    case PromptMode::learnable: return "learnable";
    case PromptMode::detector_only: return "detector_only";
  }
  return "?";
}

inline PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "manual") return PromptMode::manual;
  if (s == "learnable") return PromptMode::learnable;
  if (s == "detector_only") return PromptMode::detector_only;
  throw std::invalid_argument("prompt_mode must be manual, learnable, or detector_only; got '" + s + "'");
}

// auto: frozen in learnable mode, trainable text path in manual mode.
enum class TrainSwitch { auto_mode, on, off };

inline const char* to_string(TrainSwitch t) {
  switch (t) {
    case TrainSwitch::auto_mode: return "auto";
    case TrainSwitch::on: return "true";
    case TrainSwitch::off: return "false";
  }
  return "?";
}

inline TrainSwitch parse_train_switch(const std::string& s, const std::string& key) {
  if (s == "auto") return TrainSwitch::auto_mode;
  if (s == "true") return TrainSwitch::on;
  if (s == "false") return TrainSwitch::off;
  throw std::invalid_argument(key + " must be auto, true, or false; got '" + s + "'");
}

struct RunConfig {
  // Method hyperparameters (paper defaults).
  int embed_dim = 64;
  int prompt_len = 8;
  double temperature = 0.01;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 0.5;
  double lambda4 = 0.5;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int epochs = 12;
  int batch_size = 16;
  uint64_t seed = 0;
  double clamp_eps = 1e-7;
  PromptMode prompt_mode = PromptMode::learnable;

  // Architecture knobs.
  int token_dim = 32;
  int max_seq_len = 16;
  int vocab_size = 512;
  int text_hidden = 48;
  int fsn_hidden = 0;          // 0 = single affine map
  int detector_channels = 32;
  int detector_levels = 2;     // strides 8, 16, 32, ... per level
  int num_categories = 3;
  int n_sc = 0;                // 0 = count distinct triples in metadata

  // Inference / alignment plumbing.
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::string alignment_level = "top";        // top | mean | <level index>
  std::string dissimilarity_target = "all";   // all | own
  std::string decay_mode = "weight_decay";    // weight_decay | lr_schedule
  TrainSwitch train_vision_encoder = TrainSwitch::auto_mode;
  TrainSwitch train_text_encoder = TrainSwitch::auto_mode;
  std::string fallback_domain = "low,front,day";

  // Synthetic data knobs.
  int image_size = 64;
  int objects_min = 4;
  int objects_max = 8;

  void validate() const {
    if (embed_dim < 2) throw std::invalid_argument("embed_dim must be >= 2");
    if (prompt_len < 1 || prompt_len > 64)
      throw std::invalid_argument("prompt_len must lie in [1, 64]");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw std::invalid_argument("lambda coefficients must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(clamp_eps > 0.0) || clamp_eps > 0.01)
      throw std::invalid_argument("clamp_eps must lie in (0, 0.01]");
    if (token_dim < 1) throw std::invalid_argument("token_dim must be >= 1");
    if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
    if (text_hidden < 1) throw std::invalid_argument("text_hidden must be >= 1");
    if (fsn_hidden < 0) throw std::invalid_argument("fsn_hidden must be >= 0");
    if (detector_channels < 1) throw std::invalid_argument("detector_channels must be >= 1");
    if (detector_levels < 2 || detector_levels > 4)
      throw std::invalid_argument("detector_levels must lie in [2, 4]");
    if (num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
    if (n_sc < 0 || n_sc > 27) throw std::invalid_argument("n_sc must lie in [0, 27]");
    if (nms_iou < 0.0 || nms_iou > 1.0)
      throw std::invalid_argument("nms_iou must lie in [0, 1]");
    if (alignment_level != "top" && alignment_level != "mean") {
      for (char c : alignment_level)
        if (c < '0' || c > '9')
          throw std::invalid_argument("alignment_level must be top, mean, or a level index");
      if (alignment_level.empty())
        throw std::invalid_argument("alignment_level must be top, mean, or a level index");
    }
    if (dissimilarity_target != "all" && dissimilarity_target != "own")
      throw std::invalid_argument("dissimilarity_target must be all or own");
    if (decay_mode != "weight_decay" && decay_mode != "lr_schedule")
      throw std::invalid_argument("decay_mode must be weight_decay or lr_schedule");
    if (image_size < 64) throw std::invalid_argument("image_size must be >= 64");
    if (objects_min < 0 || objects_max < objects_min)
      throw std::invalid_argument("objects_min..objects_max must be a non-empty range");
  }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double_field(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("value for " + key + " is not a number: '" + v + "'");
  }
}

inline int parse_int_field(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<int>(d);
  } catch (...) {
    throw std::invalid_argument("value for " + key + " is not an integer: '" + v + "'");
  }
}

inline uint64_t parse_u64_field(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("value for " + key + " is not an integer: '" + v + "'");
  }
}

}  // namespace detail

inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_double_field;
  using detail::parse_int_field;
  using detail::parse_u64_field;
  if (key == "embed_dim") c.embed_dim = parse_int_field(key, value);
  else if (key == "prompt_len") c.prompt_len = parse_int_field(key, value);
  else if (key == "temperature") c.temperature = parse_double_field(key, value);
  else if (key == "lambda1") c.lambda1 = parse_double_field(key, value);
  else if (key == "lambda2") c.lambda2 = parse_double_field(key, value);
  else if (key == "lambda3") c.lambda3 = parse_double_field(key, value);
  else if (key == "lambda4") c.lambda4 = parse_double_field(key, value);
  else if (key == "lr") c.lr = parse_double_field(key, value);
  else if (key == "momentum") c.momentum = parse_double_field(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_double_field(key, value);
  else if (key == "epochs") c.epochs = parse_int_field(key, value);
  else if (key == "batch_size") c.batch_size = parse_int_field(key, value);
  else if (key == "seed") c.seed = parse_u64_field(key, value);
  else if (key == "clamp_eps") c.clamp_eps = parse_double_field(key, value);
  else if (key == "prompt_mode") c.prompt_mode = parse_prompt_mode(value);
  else if (key == "token_dim") c.token_dim = parse_int_field(key, value);
  else if (key == "max_seq_len") c.max_seq_len = parse_int_field(key, value);
  else if (key == "vocab_size") c.vocab_size = parse_int_field(key, value);
  else if (key == "text_hidden") c.text_hidden = parse_int_field(key, value);
  else if (key == "fsn_hidden") c.fsn_hidden = parse_int_field(key, value);
  else if (key == "detector_channels") c.detector_channels = parse_int_field(key, value);
  else if (key == "detector_levels") c.detector_levels = parse_int_field(key, value);
  else if (key == "num_categories") c.num_categories = parse_int_field(key, value);
  else if (key == "n_sc") c.n_sc = parse_int_field(key, value);
  else if (key == "score_threshold") c.score_threshold = parse_double_field(key, value);
  else if (key == "nms_iou") c.nms_iou = parse_double_field(key, value);
  else if (key == "alignment_level") c.alignment_level = value;
  else if (key == "dissimilarity_target") c.dissimilarity_target = value;
  else if (key == "decay_mode") c.decay_mode = value;
  else if (key == "train_vision_encoder") c.train_vision_encoder = parse_train_switch(value, key);
  else if (key == "train_text_encoder") c.train_text_encoder = parse_train_switch(value, key);
  else if (key == "fallback_domain") c.fallback_domain = value;
  else if (key == "image_size") c.image_size = parse_int_field(key, value);
  else if (key == "objects_min") c.objects_min = parse_int_field(key, value);
  else if (key == "objects_max") c.objects_max = parse_int_field(key, value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

inline RunConfig load_config_text(const std::string& text,
                                  const std::map<std::string, std::string>& overrides = {}) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  " is not `key = value`: '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    apply_config_kv(c, key, value);
  }
  for (const auto& [k, v] : overrides) apply_config_kv(c, k, v);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path,
                             const std::map<std::string, std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str(), overrides);
}

// Canonical text form; parsing it again reproduces the config field-for-field.
inline std::string serialize_config(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream out;
  out << "embed_dim = " << c.embed_dim << "\n";
  out << "prompt_len = " << c.prompt_len << "\n";
  out << "temperature = " << fmt_double(c.temperature) << "\n";
  out << "lambda1 = " << fmt_double(c.lambda1) << "\n";
  out << "lambda2 = " << fmt_double(c.lambda2) << "\n";
  out << "lambda3 = " << fmt_double(c.lambda3) << "\n";
  out << "lambda4 = " << fmt_double(c.lambda4) << "\n";
  out << "lr = " << fmt_double(c.lr) << "\n";
  out << "momentum = " << fmt_double(c.momentum) << "\n";
  out << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "seed = " << c.seed << "\n";
  out << "clamp_eps = " << fmt_double(c.clamp_eps) << "\n";
  out << "prompt_mode = " << to_string(c.prompt_mode) << "\n";
  out << "token_dim = " << c.token_dim << "\n";
  out << "max_seq_len = " << c.max_seq_len << "\n";
  out << "vocab_size = " << c.vocab_size << "\n";
  out << "text_hidden = " << c.text_hidden << "\n";
  out << "fsn_hidden = " << c.fsn_hidden << "\n";
  out << "detector_channels = " << c.detector_channels << "\n";
  out << "detector_levels = " << c.detector_levels << "\n";
  out << "num_categories = " << c.num_categories << "\n";
  out << "n_sc = " << c.n_sc << "\n";
  out << "score_threshold = " << fmt_double(c.score_threshold) << "\n";
  out << "nms_iou = " << fmt_double(c.nms_iou) << "\n";
  out << "alignment_level = " << c.alignment_level << "\n";
  out << "dissimilarity_target = " << c.dissimilarity_target << "\n";
  out << "decay_mode = " << c.decay_mode << "\n";
  out << "train_vision_encoder = " << to_string(c.train_vision_encoder) << "\n";
  out << "train_text_encoder = " << to_string(c.train_text_encoder) << "\n";
  out << "fallback_domain = " << c.fallback_domain << "\n";
  out << "image_size = " << c.image_size << "\n";
  out << "objects_min = " << c.objects_min << "\n";
  out << "objects_max = " << c.objects_max << "\n";
  return out.str();
}

inline uint64_t config_hash(const RunConfig& c) {
  std::string s = serialize_config(c);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace leapd
