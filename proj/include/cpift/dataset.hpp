#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cpift {

// Labelled feature vectors stored row-major in one buffer.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }

  void push_back(std::span<const double> x, std::uint32_t label);
  void append(const Dataset& other);

  /// Rows at `indices`, in that order.
  Dataset select(std::span<const std::size_t> indices) const;
};

}  // namespace cpift
