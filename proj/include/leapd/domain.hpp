// Shooting-condition vocabulary: the (altitude, view, weather) triple that
// defines a domain class, plus the bijective triple -> class_index mapping
// built from observed metadata.
#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace leapd {

enum class Altitude { low, medium, high };
enum class View { front, side, bird };
enum class Weather { day, night, foggy };

struct DomainLabel {
  Altitude altitude = Altitude::low;
  View view = View::front;
  Weather weather = Weather::day;
  int class_index = 0;

  auto triple() const { return std::make_tuple(altitude, view, weather); }
  bool same_triple(const DomainLabel& o) const { return triple() == o.triple(); }
};

inline const char* to_string(Altitude a) {
  switch (a) {
    case Altitude::low: return "low";
    case Altitude::medium: return "medium";
    case Altitude::high: return "high";
  }
  return "?";
}
inline const char* to_string(View v) {
  switch (v) {
    case View::front: return "front";
    case View::side: return "side";
    case View::bird: return "bird";
  }
  return "?";
}
inline const char* to_string(Weather w) {
  switch (w) {
    case Weather::day: return "day";
    case Weather::night: return "night";
    case Weather::foggy: return "foggy";
  }
  return "?";
}

inline Altitude parse_altitude(const std::string& s) {
  if (s == "low") return Altitude::low;
  if (s == "medium") return Altitude::medium;
  if (s == "high") return Altitude::high;
  throw std::invalid_argument("unknown altitude word '" + s + "'");
}
inline View parse_view(const std::string& s) {
  if (s == "front") return View::front;
  if (s == "side") return View::side;
  if (s == "bird") return View::bird;
  throw std::invalid_argument("unknown view word '" + s + "'");
}
inline Weather parse_weather(const std::string& s) {
  if (s == "day") return Weather::day;
  if (s == "night") return Weather::night;
  if (s == "foggy") return Weather::foggy;
  throw std::invalid_argument("unknown weather word '" + s + "'");
}

inline std::string domain_triple_str(const DomainLabel& d) {
  return std::string(to_string(d.altitude)) + "," + to_string(d.view) + "," +
         to_string(d.weather);
}

// Parses "altitude,view,weather".
inline DomainLabel parse_domain_triple(const std::string& text) {
  std::array<std::string, 3> parts;
  std::size_t start = 0, field = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      if (field >= 3) throw std::invalid_argument("domain triple has too many fields: " + text);
      parts[field++] = text.substr(start, i - start);
      start = i + 1;
    }
  }
  if (field != 3)
    throw std::invalid_argument("domain triple needs 3 fields, got " +
                                std::to_string(field) + ": " + text);
  DomainLabel d;
  d.altitude = parse_altitude(parts[0]);
  d.view = parse_view(parts[1]);
  d.weather = parse_weather(parts[2]);
  return d;
}

// Assigns class indices to the distinct triples actually observed.
// Indices are ranks in canonical (altitude, view, weather) enum order, so
// the mapping is independent of observation order.
class DomainVocabulary {
 public:
  void observe(const DomainLabel& d) { seen_[key(d)] = d; }

  void finalize(int n_sc_override = 0) {
    index_.clear();
    int i = 0;
    for (auto& [k, d] : seen_) index_[k] = i++;
    n_sc_ = i;
    if (n_sc_override > 0) {
      if (n_sc_override < n_sc_)
        throw std::invalid_argument("n_sc override " + std::to_string(n_sc_override) +
                                    " is below the " + std::to_string(n_sc_) +
                                    " distinct triples observed");
      n_sc_ = n_sc_override;
    }
    if (n_sc_ < 1 || n_sc_ > 27)
      throw std::invalid_argument("N_sc must lie in [1, 27], got " + std::to_string(n_sc_));
  }

  int n_sc() const { return n_sc_; }

  int class_index(const DomainLabel& d) const {
    auto it = index_.find(key(d));
    if (it == index_.end())
      throw std::invalid_argument("domain " + domain_triple_str(d) +
                                  " was not observed in the training metadata");
    return it->second;
  }

  DomainLabel assign(DomainLabel d) const {
    d.class_index = class_index(d);
    return d;
  }

  std::vector<DomainLabel> classes() const {
    std::vector<DomainLabel> out(static_cast<std::size_t>(n_sc_));
    for (auto& [k, idx] : index_) {
      DomainLabel d = seen_.at(k);
      d.class_index = idx;
      out[static_cast<std::size_t>(idx)] = d;
    }
    // Override slots beyond the observed triples stay default-constructed;
    // they exist only so the prompt bank can be sized by hand.
    for (std::size_t i = index_.size(); i < out.size(); ++i)
      out[i].class_index = static_cast<int>(i);
    return out;
  }

 private:
  static int key(const DomainLabel& d) {
    return static_cast<int>(d.altitude) * 9 + static_cast<int>(d.view) * 3 +
           static_cast<int>(d.weather);
  }
  std::map<int, DomainLabel> seen_;
  std::map<int, int> index_;
  int n_sc_ = 0;
};

}  // namespace leapd
