#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace chainmeld {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using Values = std::vector<double>;
using ConstValues = std::span<const double>;

enum class SupportKind { real, positive, discrete };

/// Support of a single coordinate. Discrete coordinates hold integer codes
/// in [0, cardinality) stored as doubles.
struct CoordinateSupport {
  SupportKind kind = SupportKind::real;
  std::size_t cardinality = 0;

  static CoordinateSupport real() { return {SupportKind::real, 0}; }
  static CoordinateSupport positive() { return {SupportKind::positive, 0}; }
  static CoordinateSupport discrete(std::size_t k) { return {SupportKind::discrete, k}; }

  bool is_discrete() const { return kind == SupportKind::discrete; }
  bool contains(double x) const;

  friend bool operator==(const CoordinateSupport&, const CoordinateSupport&) = default;
};

using Support = std::vector<CoordinateSupport>;

/// A shared quantity between submodels m and m+1.
struct PhiBlock {
  std::string label;
  std::size_t dim = 1;
  Support support;  // one entry per coordinate

  static PhiBlock real(std::string label, std::size_t dim = 1);
  static PhiBlock discrete(std::string label, std::size_t cardinality, std::size_t dim = 1);
};

/// Values for every shared block, in chain order.
struct PhiVector {
  std::vector<Values> blocks;
};

/// Values for every submodel-specific parameter vector; entries may be empty.
struct PsiVector {
  std::vector<Values> parts;
};

/// Coordinate labels for a block of dimension dim: "name" when dim == 1,
/// "name[0]", "name[1]", ... otherwise.
std::vector<std::string> coordinate_labels(const std::string& name, std::size_t dim);

}  // namespace chainmeld
