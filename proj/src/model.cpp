#include "cpift/model.hpp"

#include <algorithm>
#include <cmath>

#include "cpift/error.hpp"
#include "cpift/rng.hpp"

namespace cpift {

Mlp::Mlp(std::vector<std::size_t> layer_dims) : dims_(std::move(layer_dims)) {
  if (dims_.size() < 2) throw Error("an MLP needs at least input and output dims");
  for (std::size_t d : dims_) {
    if (d == 0) throw Error("layer dims must be positive");
  }
  std::vector<TensorSpec> specs;
  for (std::size_t k = 0; k < num_layers(); ++k) {
    specs.push_back({weight_name(k), {dims_[k + 1], dims_[k]},
                     std::vector<double>(dims_[k + 1] * dims_[k], 0.0)});
    specs.push_back({bias_name(k), {dims_[k + 1]}, std::vector<double>(dims_[k + 1], 0.0)});
  }
  layout_ = ParameterSnapshot::from_tensors(std::move(specs));
  offsets_.resize(num_layers());
  for (std::size_t k = 0; k < num_layers(); ++k) {
    offsets_[k].weight = layout_.tensor(weight_name(k)).offset_elems;
    offsets_[k].bias = layout_.tensor(bias_name(k)).offset_elems;
  }
}

Mlp Mlp::from_snapshot(const ParameterSnapshot& snap) {
  std::vector<std::size_t> dims;
  for (std::size_t k = 0;; ++k) {
    const std::string name = "layer" + std::to_string(k) + ".weight";
    if (!snap.has_tensor(name)) break;
    const auto& shape = snap.tensor(name).shape;
    if (shape.size() != 2) throw Error(name + " must be 2-D");
    if (k == 0) dims.push_back(shape[1]);
    if (shape[1] != dims.back()) throw Error(name + " input dim does not chain");
    dims.push_back(shape[0]);
  }
  if (dims.size() < 2) throw Error("snapshot does not hold an MLP");
  Mlp mlp(std::move(dims));
  mlp.check_compatible(snap);
  return mlp;
}

std::string Mlp::weight_name(std::size_t layer) const {
  return "layer" + std::to_string(layer) + ".weight";
}

std::string Mlp::bias_name(std::size_t layer) const {
  return "layer" + std::to_string(layer) + ".bias";
}

void Mlp::check_compatible(const ParameterSnapshot& snap) const {
  if (!compatible(snap)) throw Error("snapshot layout does not match the model architecture");
}

ParameterSnapshot Mlp::init(std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<double> params(param_count(), 0.0);
  for (std::size_t k = 0; k < num_layers(); ++k) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_[k]));
    const std::size_t n = dims_[k] * dims_[k + 1];
    for (std::size_t i = 0; i < n; ++i) params[offsets_[k].weight + i] = scale * rng.normal();
  }
  return wrap(std::move(params));
}

ParameterSnapshot Mlp::zeros() const { return layout_; }

ParameterSnapshot Mlp::wrap(std::vector<double> params, SnapshotMeta meta) const {
  return layout_.with_data(std::move(params)).with_meta(std::move(meta));
}

void Mlp::forward(std::span<const double> params, std::span<const double> x,
                  std::vector<std::vector<double>>& acts) const {
  acts.resize(dims_.size());
  acts[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < num_layers(); ++k) {
    const std::size_t in = dims_[k];
    const std::size_t out = dims_[k + 1];
    const double* w = params.data() + offsets_[k].weight;
    const double* b = params.data() + offsets_[k].bias;
    const std::vector<double>& a = acts[k];
    std::vector<double>& z = acts[k + 1];
    z.resize(out);
    const bool hidden = k + 1 < num_layers();
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = hidden ? std::tanh(s) : s;
    }
  }
}

std::vector<double> Mlp::logits(std::span<const double> params, std::span<const double> x) const {
  if (params.size() != param_count()) throw Error("parameter count mismatch");
  if (x.size() != input_dim()) throw Error("input length mismatch");
  std::vector<std::vector<double>> acts;
  forward(params, x, acts);
  return std::move(acts.back());
}

std::uint32_t Mlp::predict(std::span<const double> params, std::span<const double> x) const {
  const std::vector<double> z = logits(params, x);
  return static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

void Mlp::check_batch(std::span<const double> params, const Dataset& data,
                      std::span<const std::size_t> rows, std::span<const double> weights) const {
  if (params.size() != param_count()) throw Error("parameter count mismatch");
  if (rows.empty()) throw Error("empty batch");
  if (data.dim != input_dim()) throw Error("input length mismatch");
  if (!weights.empty() && weights.size() != rows.size()) throw Error("weight count mismatch");
  for (std::size_t r : rows) {
    if (r >= data.size()) throw Error("batch row out of range");
    if (data.labels[r] >= output_dim()) throw Error("label out of range");
  }
}

double Mlp::loss(std::span<const double> params, const Dataset& data,
                 std::span<const std::size_t> rows, std::span<const double> weights) const {
  check_batch(params, data, rows, weights);
  std::vector<std::vector<double>> acts;
  double total = 0.0;
  double weight_sum = 0.0;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const double w = weights.empty() ? 1.0 : weights[n];
    forward(params, data.row(rows[n]), acts);
    const std::vector<double>& z = acts.back();
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += w * (m + std::log(s) - z[data.labels[rows[n]]]);
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) throw Error("batch weights sum to zero");
  return total / weight_sum;
}

double Mlp::loss_and_grad(std::span<const double> params, const Dataset& data,
                          std::span<const std::size_t> rows, std::span<const double> weights,
                          std::span<double> grad) const {
  check_batch(params, data, rows, weights);
  if (grad.size() != param_count()) throw Error("gradient length mismatch");

  double weight_sum = 0.0;
  for (std::size_t n = 0; n < rows.size(); ++n) weight_sum += weights.empty() ? 1.0 : weights[n];
  if (!(weight_sum > 0.0)) throw Error("batch weights sum to zero");

  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<std::vector<double>> acts;
  std::vector<double> delta;
  std::vector<double> prev_delta;
  double total = 0.0;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const double w = (weights.empty() ? 1.0 : weights[n]) / weight_sum;
    const std::uint32_t label = data.labels[rows[n]];
    forward(params, data.row(rows[n]), acts);

    const std::vector<double>& z = acts.back();
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double lse = m + std::log(s);
    total += w * (lse - z[label]);

    // dL/dlogits = w * (softmax - onehot)
    delta.resize(z.size());
    for (std::size_t o = 0; o < z.size(); ++o) {
      delta[o] = w * (std::exp(z[o] - lse) - (o == label ? 1.0 : 0.0));
    }
    for (std::size_t k = num_layers(); k-- > 0;) {
      const std::size_t in = dims_[k];
      const std::size_t out = dims_[k + 1];
      const std::vector<double>& a = acts[k];
      double* gw = grad.data() + offsets_[k].weight;
      double* gb = grad.data() + offsets_[k].bias;
      for (std::size_t o = 0; o < out; ++o) {
        gb[o] += delta[o];
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += delta[o] * a[i];
      }
      if (k == 0) break;
      const double* wmat = params.data() + offsets_[k].weight;
      prev_delta.assign(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = wmat + o * in;
        for (std::size_t i = 0; i < in; ++i) prev_delta[i] += row[i] * delta[o];
      }
      for (std::size_t i = 0; i < in; ++i) prev_delta[i] *= 1.0 - a[i] * a[i];
      delta.swap(prev_delta);
    }
  }
  return total;
}

}  // namespace cpift
