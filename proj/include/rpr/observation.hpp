#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace rpr {

using ActionId = std::size_t;

/// A state observation: either a discrete index or a fixed-length real vector.
class Observation {
 public:
  Observation() = default;

  static Observation discrete(std::size_t index);
  static Observation vector(std::vector<double> values);

  bool is_discrete() const { return std::holds_alternative<std::size_t>(data_); }
  std::size_t index() const;
  std::span<const double> values() const;
  /// 1 for discrete observations, the vector length otherwise.
  std::size_t dimension() const;

  /// `state_repr` column format: integer id or semicolon-joined decimals.
  std::string repr() const;
  static Observation parse(const std::string& text);

  friend bool operator==(const Observation& a, const Observation& b) = default;

 private:
  std::variant<std::size_t, std::vector<double>> data_{std::size_t{0}};
};

struct ObservationHash {
  std::size_t operator()(const Observation& obs) const noexcept;
};

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace rpr
