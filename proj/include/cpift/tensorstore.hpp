#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cpift {

struct TensorMeta {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset_elems = 0;
  std::size_t len_elems = 0;

  bool operator==(const TensorMeta&) const = default;
};

// Input to ParameterSnapshot::from_tensors.
struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

using SnapshotMeta = std::map<std::string, std::string>;

/// Named tensors flattened into one float64 buffer in canonical order
/// (lexicographic by tensor name). A global index j in [0, dim()) addresses
/// exactly one (tensor, within-tensor offset) pair.
///
/// Snapshots are immutable; the layout and data buffers are shared between
/// copies, and "modification" goes through with_data()/with_meta().
class ParameterSnapshot {
 public:
  ParameterSnapshot();

  /// Sorts tensors into canonical order and assigns offsets. Throws on
  /// duplicate names, non-positive shape entries or shape/value mismatch.
  static ParameterSnapshot from_tensors(std::vector<TensorSpec> tensors, SnapshotMeta meta = {});

  /// Builds from an already canonical layout (as stored on disk).
  static ParameterSnapshot from_layout(std::vector<TensorMeta> layout, std::vector<double> data,
                                       SnapshotMeta meta = {});

  const std::vector<TensorMeta>& tensors() const { return *layout_; }
  std::span<const double> data() const { return *data_; }
  std::size_t dim() const { return data_->size(); }
  const SnapshotMeta& meta() const { return meta_; }
  bool empty() const { return layout_->empty(); }

  const TensorMeta& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;
  std::span<const double> values(std::string_view name) const;

  std::size_t global_index(std::string_view name, std::size_t within) const;
  /// Inverse of global_index.
  std::pair<const TensorMeta*, std::size_t> locate(std::size_t global) const;

  ParameterSnapshot with_data(std::vector<double> data) const;
  ParameterSnapshot with_meta(SnapshotMeta meta) const;

  /// Same tensor names, shapes and offsets.
  bool same_layout(const ParameterSnapshot& other) const;

  /// Bitwise equality of layout, data and metadata (distinguishes -0.0/+0.0).
  bool bit_identical(const ParameterSnapshot& other) const;

 private:
  ParameterSnapshot(std::shared_ptr<const std::vector<TensorMeta>> layout,
                    std::shared_ptr<const std::vector<double>> data, SnapshotMeta meta);

  std::shared_ptr<const std::vector<TensorMeta>> layout_;
  std::shared_ptr<const std::vector<double>> data_;
  SnapshotMeta meta_;
};

// On-disk container: "CPIFTSNP" | u32 version | u64 header length | JSON
// header | D little-endian binary64 values. Encoding refuses empty snapshots
// and non-finite values.
inline constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<std::uint8_t> encode_snapshot(const ParameterSnapshot& snap);
ParameterSnapshot decode_snapshot(std::span<const std::uint8_t> bytes);

void write_snapshot(const ParameterSnapshot& snap, const std::filesystem::path& path);
ParameterSnapshot read_snapshot(const std::filesystem::path& path);

}  // namespace cpift
