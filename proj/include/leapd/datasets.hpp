// Dataset ingestion and synthesis. Real data follows the VisDrone layout
// (images/ + annotations/ with 8-field integer lines) plus a metadata
// sidecar mapping image stems to shooting-condition triples. The synthetic
// generator writes the same layout, so both paths share one loader.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "leapd/domain.hpp"
#include "leapd/geometry.hpp"
#include "leapd/image.hpp"
#include "leapd/rng.hpp"
#include "leapd/tensor.hpp"

namespace leapd {

// ---------------------------------------------------------------------------
// VisDrone annotation format
// ---------------------------------------------------------------------------

struct VisDroneRecord {
  int left = 0, top = 0, width = 0, height = 0;
  int score = 0, category = 0, truncation = 0, occlusion = 0;
  bool ignored_region() const { return category == 0; }
  BBox box() const {
    return BBox{static_cast<double>(left), static_cast<double>(top),
                static_cast<double>(width), static_cast<double>(height)};
  }
};

inline VisDroneRecord parse_visdrone_line(const std::string& line, int line_no = 1) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 8)
    throw std::invalid_argument("line " + std::to_string(line_no) +
                                ": expected 8 fields, got " + std::to_string(fields.size()));
  int vals[8];
  for (int i = 0; i < 8; ++i) {
    const std::string& f = fields[static_cast<std::size_t>(i)];
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), vals[i]);
    if (ec != std::errc() || p != f.data() + f.size())
      throw std::invalid_argument("line " + std::to_string(line_no) +
                                  ": non-integer field '" + f + "'");
  }
  VisDroneRecord r;
  r.left = vals[0];
  r.top = vals[1];
  r.width = vals[2];
  r.height = vals[3];
  r.score = vals[4];
  r.category = vals[5];
  r.truncation = vals[6];
  r.occlusion = vals[7];
  return r;
}

inline std::string format_visdrone_line(const VisDroneRecord& r) {
  std::ostringstream os;
  os << r.left << ',' << r.top << ',' << r.width << ',' << r.height << ',' << r.score
     << ',' << r.category << ',' << r.truncation << ',' << r.occlusion;
  return os.str();
}

// ---------------------------------------------------------------------------
// Dataset index
// ---------------------------------------------------------------------------

enum class Split { train, val, heldout };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::heldout: return "heldout";
  }
  return "?";
}

struct DatasetEntry {
  std::string image_path;
  std::string annotation_path;
  DomainLabel domain;
  std::string stem;
};

struct DatasetIndex {
  std::vector<DatasetEntry> samples;
  std::vector<std::string> categories;  // index 0 is category id 1
  Split split = Split::train;
  std::vector<std::string> warnings;
};

struct ImageSample {
  Tensor image;  // (3, H, W)
  std::vector<BBox> gt_boxes;
  std::vector<int> gt_categories;          // parallel to gt_boxes, ids >= 1
  std::vector<BBox> ignored_regions;       // category-0 zones
  DomainLabel domain;
  std::string id;
};

inline const std::vector<std::string>& visdrone_category_names() {
  static const std::vector<std::string> names = {
      "pedestrian", "people", "bicycle", "car", "van",
      "truck", "tricycle", "awning-tricycle", "bus", "motor"};
  return names;
}

inline std::vector<std::string> default_category_names(int num_categories) {
  std::vector<std::string> out;
  const auto& vd = visdrone_category_names();
  for (int i = 0; i < num_categories; ++i) {
    if (static_cast<std::size_t>(i) < vd.size()) out.push_back(vd[static_cast<std::size_t>(i)]);
    else out.push_back("cat" + std::to_string(i + 1));
  }
  return out;
}

// Reads stem -> domain lines of the form `stem,altitude,view,weather`.
inline std::map<std::string, DomainLabel> load_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metadata file " + path);
  std::map<std::string, DomainLabel> meta;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    if (parts.size() != 4)
      throw std::runtime_error("metadata " + path + " line " + std::to_string(line_no) +
                               ": expected 4 fields, got " + std::to_string(parts.size()));
    try {
      DomainLabel d;
      d.altitude = parse_altitude(parts[1]);
      d.view = parse_view(parts[2]);
      d.weather = parse_weather(parts[3]);
      meta[parts[0]] = d;
    } catch (const std::exception& e) {
      throw std::runtime_error("metadata " + path + " line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return meta;
}

// Indexes root/images/*.ppm against root/annotations/<stem>.txt. Stems
// missing from the metadata map get the fallback domain plus a warning.
inline DatasetIndex load_visdrone(const std::string& root, const std::string& metadata_path,
                                  Split split, const DomainLabel& fallback,
                                  int num_categories) {
  namespace fs = std::filesystem;
  fs::path images_dir = fs::path(root) / "images";
  fs::path ann_dir = fs::path(root) / "annotations";
  if (!fs::is_directory(images_dir))
    throw std::runtime_error("dataset root " + root + " has no images/ directory");
  std::map<std::string, DomainLabel> meta;
  if (!metadata_path.empty() && fs::exists(metadata_path)) meta = load_metadata(metadata_path);

  DatasetIndex index;
  index.split = split;
  std::vector<std::string> missing;
  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") image_files.push_back(e.path());
  std::sort(image_files.begin(), image_files.end());
  for (const auto& img : image_files) {
    std::string stem = img.stem().string();
    fs::path ann = ann_dir / (stem + ".txt");
    if (!fs::exists(ann)) {
      missing.push_back(stem);
      continue;
    }
    DatasetEntry entry;
    entry.image_path = img.string();
    entry.annotation_path = ann.string();
    entry.stem = stem;
    auto it = meta.find(stem);
    if (it != meta.end()) {
      entry.domain = it->second;
    } else {
      entry.domain = fallback;
      index.warnings.push_back("no metadata for " + stem + "; using fallback domain " +
                               domain_triple_str(fallback));
    }
    index.samples.push_back(std::move(entry));
  }
  if (!missing.empty()) {
    std::string msg = "missing annotation for:";
    for (const auto& s : missing) msg += " " + s;
    throw std::runtime_error(msg);
  }
  fs::path cat_file = fs::path(root) / "categories.txt";
  if (fs::exists(cat_file)) {
    std::ifstream in(cat_file);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (!line.empty()) index.categories.push_back(line);
    }
  } else {
    index.categories = default_category_names(num_categories);
  }
  return index;
}

// Loads one sample. Category 0 boxes become ignored regions, categories
// outside [1, num_categories] and non-positive boxes are dropped.
inline ImageSample load_sample(const DatasetEntry& entry, int num_categories) {
  ImageSample s;
  s.image = read_ppm(entry.image_path);
  s.domain = entry.domain;
  s.id = entry.stem;
  std::ifstream in(entry.annotation_path);
  if (!in) throw std::runtime_error("cannot open annotation file " + entry.annotation_path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    VisDroneRecord r;
    try {
      r = parse_visdrone_line(line, line_no);
    } catch (const std::exception& e) {
      throw std::runtime_error(entry.annotation_path + ": " + e.what());
    }
    if (r.width <= 0 || r.height <= 0) continue;
    if (r.ignored_region()) {
      s.ignored_regions.push_back(r.box());
    } else if (r.category >= 1 && r.category <= num_categories) {
      s.gt_boxes.push_back(r.box());
      s.gt_categories.push_back(r.category);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic domain-shift scenes
// ---------------------------------------------------------------------------

struct SceneSpec {
  DomainLabel domain;
  int object_count = 0;
  int canvas_h = 64, canvas_w = 64;
  std::uint64_t seed = 0;
};

// Nuisance constants. Altitude scales object size; view shears horizontally
// (bird additionally flattens height); weather dims and noises the frame.
constexpr double kAltitudeScale[3] = {1.0, 0.6, 0.35};   // low, medium, high
constexpr double kViewShear[3] = {0.0, 0.25, 0.5};       // front, side, bird
constexpr double kBirdFlatten = 0.7;                     // height multiplier, bird only
constexpr double kWeatherBrightness[3] = {1.0, 0.35, 0.7};  // day, night, foggy
constexpr double kWeatherNoise[3] = {0.01, 0.03, 0.01};
constexpr double kHazeMax = 0.25;                        // foggy blend toward white

struct ObjectStyle {
  double base_size;   // nominal half-diagonal scale in pixels
  double aspect;      // width / height
  double r, g, b;
};

inline ObjectStyle object_style(int category) {
  static const ObjectStyle table[] = {
      {10.0, 1.8, 0.80, 0.20, 0.20},  // car: red
      {16.0, 2.8, 0.15, 0.30, 0.80},  // truck: blue
      {13.0, 1.4, 0.80, 0.75, 0.15},  // van: yellow
      {11.0, 1.0, 0.15, 0.70, 0.30},  // spare shades for higher ids
      {14.0, 2.2, 0.70, 0.25, 0.70},
      {12.0, 1.6, 0.20, 0.70, 0.70},
  };
  return table[static_cast<std::size_t>((category - 1) % 6)];
}

inline ImageSample generate_scene(const SceneSpec& spec, int num_categories) {
  if (spec.canvas_h < 64 || spec.canvas_w < 64)
    throw std::invalid_argument("generate_scene: canvas must be at least 64x64");
  if (spec.object_count < 0)
    throw std::invalid_argument("generate_scene: object_count must be >= 0");
  const int H = spec.canvas_h, W = spec.canvas_w;
  SeedContext seeds = seed_all(spec.seed);
  const int ai = static_cast<int>(spec.domain.altitude);
  const int vi = static_cast<int>(spec.domain.view);
  const int wi = static_cast<int>(spec.domain.weather);

  ImageSample out;
  out.domain = spec.domain;
  out.image = Tensor::zeros({3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)});

  // Blocky ground texture: an 8x8 brightness field, nearest-neighbor upsampled.
  Rng bg = seeds.stream("bg");
  double field[8][8];
  for (auto& row : field)
    for (double& v : row) v = bg.uniform(0.35, 0.6);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = field[y * 8 / H][x * 8 / W];
      for (int c = 0; c < 3; ++c)
        out.image.data[(static_cast<std::size_t>(c) * H + y) * W + x] = v;
    }

  const double alt = kAltitudeScale[ai];
  const double shear = kViewShear[vi];
  const double flatten = spec.domain.view == View::bird ? kBirdFlatten : 1.0;

  for (int i = 0; i < spec.object_count; ++i) {
    Rng os = seeds.stream("obj", static_cast<std::uint64_t>(i));
    // Domain-independent draws first, so the same seed yields the same base
    // geometry under every domain; nuisances only transform it.
    int category = os.uniform_int(1, num_categories);
    ObjectStyle style = object_style(category);
    double size_jitter = os.uniform(0.8, 1.25);
    double base = style.base_size * size_jitter;
    double hw0 = base * std::sqrt(style.aspect) / 2.0;
    double hh0 = base / std::sqrt(style.aspect) / 2.0;
    double hw = hw0 * alt;
    double hh = hh0 * alt * flatten;
    int min_x = W, max_x = -1, min_y = H, max_y = -1;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      double cx = os.uniform(0.0, static_cast<double>(W));
      double cy = os.uniform(0.0, static_cast<double>(H));
      // Fill pixels whose centers land inside the sheared rectangle; the GT
      // box is the tight bound of what was actually drawn.
      min_x = W;
      max_x = -1;
      min_y = H;
      max_y = -1;
      int y_lo = std::max(0, static_cast<int>(std::floor(cy - hh)));
      int y_hi = std::min(H - 1, static_cast<int>(std::ceil(cy + hh)));
      int reach = static_cast<int>(std::ceil(hw + shear * hh)) + 1;
      int x_lo = std::max(0, static_cast<int>(std::floor(cx)) - reach);
      int x_hi = std::min(W - 1, static_cast<int>(std::ceil(cx)) + reach);
      std::vector<std::pair<int, int>> pixels;
      for (int y = y_lo; y <= y_hi; ++y) {
        double dy = (y + 0.5) - cy;
        if (std::abs(dy) > hh) continue;
        for (int x = x_lo; x <= x_hi; ++x) {
          double dx = (x + 0.5) - cx;
          if (std::abs(dx - shear * dy) > hw) continue;
          pixels.emplace_back(x, y);
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
      }
      if (pixels.empty()) continue;
      placed = true;
      for (auto [x, y] : pixels) {
        out.image.data[(0 * static_cast<std::size_t>(H) + y) * W + x] = style.r;
        out.image.data[(1 * static_cast<std::size_t>(H) + y) * W + x] = style.g;
        out.image.data[(2 * static_cast<std::size_t>(H) + y) * W + x] = style.b;
      }
    }
    if (!placed) continue;
    out.gt_boxes.push_back(BBox{static_cast<double>(min_x), static_cast<double>(min_y),
                                static_cast<double>(max_x - min_x + 1),
                                static_cast<double>(max_y - min_y + 1)});
    out.gt_categories.push_back(category);
  }

  // Weather: brightness, then foggy haze, then pixel noise, then clamp.
  double bright = kWeatherBrightness[wi];
  for (double& v : out.image.data) v *= bright;
  if (spec.domain.weather == Weather::foggy) {
    Rng hz = seeds.stream("haze");
    double grid[4][4];
    for (auto& row : grid)
      for (double& v : row) v = hz.uniform(0.0, kHazeMax);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double fy = static_cast<double>(y) * 3.0 / (H - 1);
        double fx = static_cast<double>(x) * 3.0 / (W - 1);
        int y0 = std::min(2, static_cast<int>(fy)), x0 = std::min(2, static_cast<int>(fx));
        double ty = fy - y0, tx = fx - x0;
        double a = grid[y0][x0] * (1 - tx) + grid[y0][x0 + 1] * tx;
        double b = grid[y0 + 1][x0] * (1 - tx) + grid[y0 + 1][x0 + 1] * tx;
        double alpha = a * (1 - ty) + b * ty;
        for (int c = 0; c < 3; ++c) {
          double& v = out.image.data[(static_cast<std::size_t>(c) * H + y) * W + x];
          v = v * (1 - alpha) + alpha;
        }
      }
  }
  Rng noise = seeds.stream("noise");
  double sigma = kWeatherNoise[wi];
  for (double& v : out.image.data) v += sigma * noise.gaussian();
  for (double& v : out.image.data) v = std::min(1.0, std::max(0.0, v));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic split generation (writes the VisDrone layout to disk)
// ---------------------------------------------------------------------------

struct SplitParams {
  int canvas_h = 64, canvas_w = 64;
  int objects_min = 4, objects_max = 8;
  int num_categories = 3;
};

inline void write_split(const std::string& root, const std::string& split_name,
                        const std::vector<DomainLabel>& domains, int per_domain,
                        std::uint64_t seed, const SplitParams& params) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(root) / split_name;
  fs::create_directories(base / "images");
  fs::create_directories(base / "annotations");
  std::vector<DomainLabel> order = domains;
  std::sort(order.begin(), order.end(), [](const DomainLabel& a, const DomainLabel& b) {
    auto key = [](const DomainLabel& d) {
      return static_cast<int>(d.altitude) * 9 + static_cast<int>(d.view) * 3 +
             static_cast<int>(d.weather);
    };
    return key(a) < key(b);
  });
  std::uint64_t split_seed = derive_seed(seed, split_name);
  std::ofstream meta(base / "metadata.txt");
  std::ofstream cats(base / "categories.txt");
  for (const auto& name : default_category_names(params.num_categories)) cats << name << "\n";
  int idx = 0;
  for (const auto& domain : order) {
    for (int k = 0; k < per_domain; ++k, ++idx) {
      SceneSpec spec;
      spec.domain = domain;
      spec.canvas_h = params.canvas_h;
      spec.canvas_w = params.canvas_w;
      spec.seed = derive_seed(split_seed, "scene", static_cast<std::uint64_t>(idx));
      Rng count_rng = seed_all(spec.seed).stream("count");
      spec.object_count = count_rng.uniform_int(params.objects_min, params.objects_max);
      ImageSample sample = generate_scene(spec, params.num_categories);
      char stem[32];
      std::snprintf(stem, sizeof(stem), "scene_%06d", idx);
      write_ppm((base / "images" / (std::string(stem) + ".ppm")).string(), sample.image);
      std::ofstream ann(base / "annotations" / (std::string(stem) + ".txt"));
      for (std::size_t b = 0; b < sample.gt_boxes.size(); ++b) {
        VisDroneRecord r;
        r.left = static_cast<int>(sample.gt_boxes[b].x);
        r.top = static_cast<int>(sample.gt_boxes[b].y);
        r.width = static_cast<int>(sample.gt_boxes[b].w);
        r.height = static_cast<int>(sample.gt_boxes[b].h);
        r.score = 1;
        r.category = sample.gt_categories[b];
        ann << format_visdrone_line(r) << "\n";
      }
      meta << stem << ',' << to_string(domain.altitude) << ',' << to_string(domain.view)
           << ',' << to_string(domain.weather) << "\n";
    }
  }
}

inline std::pair<DatasetIndex, DatasetIndex> make_domain_split(
    const std::vector<DomainLabel>& domains_train,
    const std::vector<DomainLabel>& domains_heldout, int per_domain, std::uint64_t seed,
    const std::string& out_root, const SplitParams& params, int heldout_per_domain = -1) {
  if (domains_train.empty() || domains_heldout.empty())
    throw std::invalid_argument("make_domain_split: both domain sets must be non-empty");
  for (const auto& a : domains_train)
    for (const auto& b : domains_heldout)
      if (a.same_triple(b))
        throw std::invalid_argument("make_domain_split: train and heldout domains overlap at " +
                                    domain_triple_str(a));
  if (heldout_per_domain < 0) heldout_per_domain = per_domain;
  write_split(out_root, "train", domains_train, per_domain, seed, params);
  write_split(out_root, "heldout", domains_heldout, heldout_per_domain, seed, params);
  DomainLabel fallback;  // unused: generated metadata is complete
  DatasetIndex train = load_visdrone((std::filesystem::path(out_root) / "train").string(),
                                     (std::filesystem::path(out_root) / "train" / "metadata.txt").string(),
                                     Split::train, fallback, params.num_categories);
  DatasetIndex heldout = load_visdrone((std::filesystem::path(out_root) / "heldout").string(),
                                       (std::filesystem::path(out_root) / "heldout" / "metadata.txt").string(),
                                       Split::heldout, fallback, params.num_categories);
  return {train, heldout};
}

}  // namespace leapd
