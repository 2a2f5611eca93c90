#include "chainmeld/types.hpp"

#include <cmath>

namespace chainmeld {

bool CoordinateSupport::contains(double x) const {
  switch (kind) {
    case SupportKind::real:
      return std::isfinite(x);
    case SupportKind::positive:
      return std::isfinite(x) && x > 0.0;
    case SupportKind::discrete:
      return x >= 0.0 && x < static_cast<double>(cardinality) && std::floor(x) == x;
  }
  return false;
}

PhiBlock PhiBlock::real(std::string label, std::size_t dim) {
  return PhiBlock{std::move(label), dim, Support(dim, CoordinateSupport::real())};
}

PhiBlock PhiBlock::discrete(std::string label, std::size_t cardinality, std::size_t dim) {
  return PhiBlock{std::move(label), dim, Support(dim, CoordinateSupport::discrete(cardinality))};
}

std::vector<std::string> coordinate_labels(const std::string& name, std::size_t dim) {
  if (dim == 1) return {name};
  std::vector<std::string> out;
  out.reserve(dim);
  for (std::size_t i = 0; i < dim; ++i) out.push_back(name + "[" + std::to_string(i) + "]");
  return out;
}

}  // namespace chainmeld
