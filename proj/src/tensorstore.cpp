#include "cpift/tensorstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "cpift/error.hpp"
#include "cpift/io.hpp"

namespace cpift {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'I', 'F', 'T', 'S', 'N', 'P'};
constexpr std::size_t kPreambleBytes = 8 + 4 + 8;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) {
    if (s == 0) throw Error("tensor shape entries must be positive");
    n *= s;
  }
  return n;
}

void validate_layout(const std::vector<TensorMeta>& layout, std::size_t data_len) {
  std::size_t next = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const TensorMeta& t = layout[i];
    if (t.name.empty()) throw Error("tensor name must be non-empty");
    if (i > 0 && !(layout[i - 1].name < t.name)) {
      throw Error("tensors not in canonical order: " + layout[i - 1].name + ", " + t.name);
    }
    if (t.shape.empty()) throw Error("tensor " + t.name + " has empty shape");
    if (shape_product(t.shape) != t.len_elems) {
      throw Error("tensor " + t.name + ": len_elems does not match shape");
    }
    if (t.offset_elems != next) throw Error("tensor " + t.name + ": offsets are not contiguous");
    next += t.len_elems;
  }
  if (next != data_len) throw Error("header/data length mismatch");
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t pos) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[pos + i]) << (8 * i);
  }
  return value;
}

}  // namespace

ParameterSnapshot::ParameterSnapshot()
    : layout_(std::make_shared<const std::vector<TensorMeta>>()),
      data_(std::make_shared<const std::vector<double>>()) {}

ParameterSnapshot::ParameterSnapshot(std::shared_ptr<const std::vector<TensorMeta>> layout,
                                     std::shared_ptr<const std::vector<double>> data,
                                     SnapshotMeta meta)
    : layout_(std::move(layout)), data_(std::move(data)), meta_(std::move(meta)) {}

ParameterSnapshot ParameterSnapshot::from_tensors(std::vector<TensorSpec> tensors,
                                                  SnapshotMeta meta) {
  std::sort(tensors.begin(), tensors.end(),
            [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });
  std::vector<TensorMeta> layout;
  std::vector<double> data;
  layout.reserve(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    TensorSpec& t = tensors[i];
    if (i > 0 && tensors[i - 1].name == t.name) throw Error("duplicate tensor name: " + t.name);
    if (t.shape.empty()) throw Error("tensor " + t.name + " has empty shape");
    const std::size_t len = shape_product(t.shape);
    if (len != t.values.size()) {
      throw Error("tensor " + t.name + ": value count does not match shape");
    }
    layout.push_back({t.name, t.shape, data.size(), len});
    data.insert(data.end(), t.values.begin(), t.values.end());
  }
  return from_layout(std::move(layout), std::move(data), std::move(meta));
}

ParameterSnapshot ParameterSnapshot::from_layout(std::vector<TensorMeta> layout,
                                                 std::vector<double> data, SnapshotMeta meta) {
  validate_layout(layout, data.size());
  return ParameterSnapshot(std::make_shared<const std::vector<TensorMeta>>(std::move(layout)),
                           std::make_shared<const std::vector<double>>(std::move(data)),
                           std::move(meta));
}

const TensorMeta& ParameterSnapshot::tensor(std::string_view name) const {
  auto it = std::lower_bound(layout_->begin(), layout_->end(), name,
                             [](const TensorMeta& t, std::string_view n) { return t.name < n; });
  if (it == layout_->end() || it->name != name) {
    throw Error("unknown tensor: " + std::string(name));
  }
  return *it;
}

bool ParameterSnapshot::has_tensor(std::string_view name) const {
  auto it = std::lower_bound(layout_->begin(), layout_->end(), name,
                             [](const TensorMeta& t, std::string_view n) { return t.name < n; });
  return it != layout_->end() && it->name == name;
}

std::span<const double> ParameterSnapshot::values(std::string_view name) const {
  const TensorMeta& t = tensor(name);
  return data().subspan(t.offset_elems, t.len_elems);
}

std::size_t ParameterSnapshot::global_index(std::string_view name, std::size_t within) const {
  const TensorMeta& t = tensor(name);
  if (within >= t.len_elems) throw Error("index out of range");
  return t.offset_elems + within;
}

std::pair<const TensorMeta*, std::size_t> ParameterSnapshot::locate(std::size_t global) const {
  if (global >= dim()) throw Error("index out of range");
  // First tensor whose end lies beyond `global`.
  auto it = std::upper_bound(layout_->begin(), layout_->end(), global,
                             [](std::size_t g, const TensorMeta& t) {
                               return g < t.offset_elems + t.len_elems;
                             });
  return {&*it, global - it->offset_elems};
}

ParameterSnapshot ParameterSnapshot::with_data(std::vector<double> data) const {
  if (data.size() != dim()) throw Error("header/data length mismatch");
  return ParameterSnapshot(layout_, std::make_shared<const std::vector<double>>(std::move(data)),
                           meta_);
}

ParameterSnapshot ParameterSnapshot::with_meta(SnapshotMeta meta) const {
  return ParameterSnapshot(layout_, data_, std::move(meta));
}

bool ParameterSnapshot::same_layout(const ParameterSnapshot& other) const {
  return layout_ == other.layout_ || *layout_ == *other.layout_;
}

bool ParameterSnapshot::bit_identical(const ParameterSnapshot& other) const {
  if (!same_layout(other) || meta_ != other.meta_) return false;
  return data_->size() == other.data_->size() &&
         std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(double)) == 0;
}

std::vector<std::uint8_t> encode_snapshot(const ParameterSnapshot& snap) {
  if (snap.empty()) throw Error("empty snapshot");
  for (double v : snap.data()) {
    if (!std::isfinite(v)) throw Error("non-finite value");
  }

  ordered_json header;
  header["dtype"] = "f64";
  header["tensors"] = ordered_json::array();
  for (const TensorMeta& t : snap.tensors()) {
    ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["offset_elems"] = t.offset_elems;
    entry["len_elems"] = t.len_elems;
    header["tensors"].push_back(std::move(entry));
  }
  header["meta"] = ordered_json::object();
  for (const auto& [key, value] : snap.meta()) header["meta"][key] = value;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + text.size() + snap.dim() * 8);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kSnapshotVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (double v : snap.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParameterSnapshot decode_snapshot(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) throw Error("truncated header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw Error("bad magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kSnapshotVersion) {
    throw Error("unsupported version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPreambleBytes) throw Error("truncated header");

  const auto* text_begin = reinterpret_cast<const char*>(bytes.data() + kPreambleBytes);
  json header;
  try {
    header = json::parse(text_begin, text_begin + header_len);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed header: ") + e.what());
  }

  std::vector<TensorMeta> layout;
  SnapshotMeta meta;
  try {
    if (header.at("dtype").get<std::string>() != "f64") throw Error("unsupported dtype");
    for (const json& t : header.at("tensors")) {
      layout.push_back({t.at("name").get<std::string>(),
                        t.at("shape").get<std::vector<std::size_t>>(),
                        t.at("offset_elems").get<std::size_t>(),
                        t.at("len_elems").get<std::size_t>()});
    }
    if (header.contains("meta")) meta = header.at("meta").get<SnapshotMeta>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed header: ") + e.what());
  }
  if (layout.empty()) throw Error("empty snapshot");

  std::size_t dim = 0;
  for (const TensorMeta& t : layout) dim += t.len_elems;
  const std::size_t data_start = kPreambleBytes + header_len;
  const std::size_t available = bytes.size() - data_start;
  if (available < dim * 8) throw Error("truncated data section");
  if (available > dim * 8) throw Error("header/data length mismatch");

  std::vector<double> data(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, data_start + 8 * i));
    if (!std::isfinite(data[i])) throw Error("non-finite value");
  }
  return ParameterSnapshot::from_layout(std::move(layout), std::move(data), std::move(meta));
}

void write_snapshot(const ParameterSnapshot& snap, const std::filesystem::path& path) {
  write_bytes(path, encode_snapshot(snap));
}

ParameterSnapshot read_snapshot(const std::filesystem::path& path) {
  return decode_snapshot(read_bytes(path));
}

}  // namespace cpift
