#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpift/dataset.hpp"
#include "cpift/tensorstore.hpp"

namespace cpift {

/// Fully connected classifier with tanh hidden layers and linear logits.
/// Layer k maps dims[k] -> dims[k+1] through tensors "layer{k}.weight"
/// (shape [out, in], row-major) and "layer{k}.bias" (shape [out]).
///
/// The class only describes the architecture and where each tensor lives in
/// the flat parameter buffer; parameter values are always passed in.
class Mlp {
 public:
  explicit Mlp(std::vector<std::size_t> layer_dims);

  /// Recovers the architecture from a snapshot's tensor shapes.
  static Mlp from_snapshot(const ParameterSnapshot& snap);

  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return dims_.size() - 1; }
  std::size_t param_count() const { return layout_.dim(); }

  bool compatible(const ParameterSnapshot& snap) const { return layout_.same_layout(snap); }
  void check_compatible(const ParameterSnapshot& snap) const;

  /// Weights ~ N(0, 1/fan_in), biases zero.
  ParameterSnapshot init(std::uint64_t seed) const;
  ParameterSnapshot zeros() const;
  /// Snapshot in this architecture's layout holding `params`.
  ParameterSnapshot wrap(std::vector<double> params, SnapshotMeta meta = {}) const;

  std::vector<double> logits(std::span<const double> params, std::span<const double> x) const;

  /// Index of the largest logit; ties resolve to the smallest class.
  std::uint32_t predict(std::span<const double> params, std::span<const double> x) const;

  /// Weighted mean cross-entropy over `rows` of `data`:
  /// sum_i w_i * (-log softmax(logits_i)[y_i]) / sum_i w_i. Empty weights
  /// means all ones.
  double loss(std::span<const double> params, const Dataset& data,
              std::span<const std::size_t> rows, std::span<const double> weights = {}) const;

  /// Same loss; writes its exact gradient into `grad` (length param_count).
  double loss_and_grad(std::span<const double> params, const Dataset& data,
                       std::span<const std::size_t> rows, std::span<const double> weights,
                       std::span<double> grad) const;

  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;

 private:
  struct LayerOffsets {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };

  void check_batch(std::span<const double> params, const Dataset& data,
                   std::span<const std::size_t> rows, std::span<const double> weights) const;
  // Fills acts[0..L] (acts[0] = input, hidden layers post-tanh, acts[L] = logits).
  void forward(std::span<const double> params, std::span<const double> x,
               std::vector<std::vector<double>>& acts) const;

  std::vector<std::size_t> dims_;
  std::vector<LayerOffsets> offsets_;
  ParameterSnapshot layout_;
};

}  // namespace cpift
