#include "cpift/dataset.hpp"

#include "cpift/error.hpp"

namespace cpift {

void Dataset::push_back(std::span<const double> x, std::uint32_t label) {
  if (x.size() != dim) throw Error("feature length does not match dataset dim");
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

void Dataset::append(const Dataset& other) {
  if (other.empty()) return;
  if (empty() && dim == 0) dim = other.dim;
  if (other.dim != dim) throw Error("cannot append datasets of different dims");
  features.insert(features.end(), other.features.begin(), other.features.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dim = dim;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw Error("dataset row out of range");
    out.push_back(row(i), labels[i]);
  }
  return out;
}

}  // namespace cpift
