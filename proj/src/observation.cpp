#include "rpr/observation.hpp"

#include <bit>
#include <charconv>
#include <cstdint>

#include "rpr/error.hpp"

namespace rpr {

Observation Observation::discrete(std::size_t index) {
  Observation obs;
  obs.data_ = index;
  return obs;
}

Observation Observation::vector(std::vector<double> values) {
  if (values.empty()) throw ConfigError("vector observation must not be empty");
  Observation obs;
  obs.data_ = std::move(values);
  return obs;
}

std::size_t Observation::index() const {
  if (!is_discrete()) throw ConfigError("observation is not discrete");
  return std::get<std::size_t>(data_);
}

std::span<const double> Observation::values() const {
  if (is_discrete()) throw ConfigError("observation is not a vector");
  return std::get<std::vector<double>>(data_);
}

std::size_t Observation::dimension() const {
  return is_discrete() ? 1 : std::get<std::vector<double>>(data_).size();
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw IoError("cannot format number");
  return std::string(buf, end);
}

std::string Observation::repr() const {
  if (is_discrete()) return std::to_string(index());
  std::string out;
  for (double v : values()) {
    if (!out.empty()) out += ';';
    std::string num = format_double(v);
    if (num.find_first_of(".eEn") == std::string::npos) num += ".0";
    out += num;
  }
  return out;
}

Observation Observation::parse(const std::string& text) {
  if (text.empty()) throw IoError("empty state representation");
  const bool vector_form = text.find_first_of(".;eE-") != std::string::npos;
  if (!vector_form) {
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), idx);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      throw IoError("bad discrete state representation: " + text);
    }
    return discrete(idx);
  }
  std::vector<double> values;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  while (p < end) {
    double v = 0.0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw IoError("bad vector state representation: " + text);
    values.push_back(v);
    p = next;
    if (p < end) {
      if (*p != ';') throw IoError("bad vector state representation: " + text);
      ++p;
    }
  }
  return vector(std::move(values));
}

std::size_t ObservationHash::operator()(const Observation& obs) const noexcept {
  if (obs.is_discrete()) return std::hash<std::size_t>{}(obs.index());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : obs.values()) {
    h ^= std::bit_cast<std::uint64_t>(v + 0.0);
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

}  // namespace rpr
