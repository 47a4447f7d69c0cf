// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ragged_attn {

/// Raised when an input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor with owned contiguous storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw InvalidArgument("tensor storage length " +
                            std::to_string(data_.size()) +
                            " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Row view over the last dimension for a rank-2 interpretation
  /// [size / cols, cols].
  std::span<T> row(std::size_t r, std::size_t cols) {
    return std::span<T>(data_).subspan(r * cols, cols);
  }
  std::span<const T> row(std::size_t r, std::size_t cols) const {
    return std::span<const T>(data_).subspan(r * cols, cols);
  }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(),
                         [](T x) { return std::isfinite(x); });
    } else {
      return true;
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using FloatTensor = Tensor<float>;

/// Transformer shape. embed_dim is derived as heads * head_dim.
struct ModelConfig {
  std::string name = "custom";
  std::size_t depth = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t mlp_hidden = 0;
  std::size_t seq_len = 0;
  std::size_t prune_layer = 1;  // 1-based; depth + 1 never prunes
  std::size_t num_classes = 0;

  std::size_t embed_dim() const noexcept { return heads * head_dim; }

  void validate() const {
    if (depth == 0 || heads == 0 || head_dim == 0 || mlp_hidden == 0 ||
        num_classes == 0) {
      throw InvalidArgument("model config '" + name +
                            "': depth, heads, head_dim, mlp_hidden and "
                            "num_classes must be positive");
    }
    if (seq_len < 1) {
      throw InvalidArgument("model config '" + name + "': seq_len must be >= 1");
    }
    if (prune_layer < 1 || prune_layer > depth + 1) {
      throw InvalidArgument("model config '" + name + "': prune_layer " +
                            std::to_string(prune_layer) + " outside [1, " +
                            std::to_string(depth + 1) + "]");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline ModelConfig make_model_config(std::string name, std::size_t depth,
                                     std::size_t heads, std::size_t head_dim,
                                     std::size_t seq_len,
                                     std::size_t prune_layer,
                                     std::size_t num_classes) {
  ModelConfig c;
  c.name = std::move(name);
  c.depth = depth;
  c.heads = heads;
  c.head_dim = head_dim;
  c.mlp_hidden = 4 * heads * head_dim;
  c.seq_len = seq_len;
  c.prune_layer = prune_layer;
  c.num_classes = num_classes;
  c.validate();
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"deit_tiny", "deit_small",
                                                 "deit_base", "desk"};
  return names;
}

/// Named model presets: the three DeiT scales plus a small desk config.
inline ModelConfig make_config(std::string_view preset) {
  if (preset == "deit_tiny") return make_model_config("deit_tiny", 12, 3, 64, 197, 5, 1000);
  if (preset == "deit_small") return make_model_config("deit_small", 12, 6, 64, 197, 5, 1000);
  if (preset == "deit_base") return make_model_config("deit_base", 12, 12, 64, 197, 5, 1000);
  if (preset == "desk") return make_model_config("desk", 6, 4, 16, 33, 3, 10);
  throw InvalidArgument("unknown model preset '" + std::string(preset) + "'");
}

/// Checks the cu_seqlens offset invariants. Returns std::nullopt when the
/// vector is valid, otherwise a description of the first violation.
inline std::optional<std::string> validate_cu_seqlens(
    std::span<const std::int64_t> cu, std::int64_t total_tokens) {
  if (cu.empty()) return "cu_seqlens is empty (length must be >= 1)";
  if (cu[0] != 0) {
    return "cu_seqlens[0] = " + std::to_string(cu[0]) + ", expected 0";
  }
  for (std::size_t i = 1; i < cu.size(); ++i) {
    if (cu[i] < cu[i - 1]) {
      return "cu_seqlens non-monotone at index " + std::to_string(i) + " (" +
             std::to_string(cu[i - 1]) + " > " + std::to_string(cu[i]) + ")";
    }
  }
  if (cu.back() != total_tokens) {
    return "cu_seqlens[" + std::to_string(cu.size() - 1) +
           "] = " + std::to_string(cu.back()) + ", expected total " +
           std::to_string(total_tokens);
  }
  return std::nullopt;
}

inline void require_valid_cu_seqlens(std::span<const std::int64_t> cu,
                                     std::int64_t total_tokens) {
  if (auto err = validate_cu_seqlens(cu, total_tokens)) {
    throw InvalidArgument(*err);
  }
}

/// Padded activations [B, S, D].
class DenseBatch {
 public:
  DenseBatch() = default;
  explicit DenseBatch(FloatTensor data) : data_(std::move(data)) {
    if (data_.rank() != 3) {
      throw InvalidArgument("DenseBatch expects rank-3 [B, S, D], got " +
                            shape_to_string(data_.shape()));
    }
  }
  DenseBatch(std::size_t batch, std::size_t seq, std::size_t width,
             float fill = 0.0f)
      : data_({batch, seq, width}, fill) {}

  std::size_t batch() const { return data_.dim(0); }
  std::size_t seq_len() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }

  const FloatTensor& tensor() const noexcept { return data_; }
  FloatTensor& tensor() noexcept { return data_; }
  std::span<const float> token(std::size_t image, std::size_t pos) const {
    return data_.row(image * seq_len() + pos, width());
  }
  std::span<float> token(std::size_t image, std::size_t pos) {
    return data_.row(image * seq_len() + pos, width());
  }

 private:
  FloatTensor data_;
};

/// Packed [T_total, D] token matrix with cu_seqlens offsets; image i owns
/// rows [cu[i], cu[i+1]).
class RaggedBatch {
 public:
  RaggedBatch(FloatTensor packed, std::vector<std::int64_t> cu_seqlens)
      : packed_(std::move(packed)), cu_(std::move(cu_seqlens)) {
    if (packed_.rank() != 2) {
      throw InvalidArgument("RaggedBatch expects rank-2 [T, D], got " +
                            shape_to_string(packed_.shape()));
    }
    require_valid_cu_seqlens(cu_, static_cast<std::int64_t>(packed_.dim(0)));
  }

  std::size_t batch() const noexcept { return cu_.size() - 1; }
  std::size_t total_tokens() const { return packed_.dim(0); }
  std::size_t width() const { return packed_.dim(1); }
  std::size_t length(std::size_t image) const {
    return static_cast<std::size_t>(cu_[image + 1] - cu_[image]);
  }

  const FloatTensor& packed() const noexcept { return packed_; }
  FloatTensor& packed() noexcept { return packed_; }
  const std::vector<std::int64_t>& cu_seqlens() const noexcept { return cu_; }

 private:
  FloatTensor packed_;
  std::vector<std::int64_t> cu_;
};

/// Packed Q, K, V in token-major [T, H, d] layout sharing one cu_seqlens.
class RaggedQKV {
 public:
  RaggedQKV(FloatTensor q, FloatTensor k, FloatTensor v,
            std::vector<std::int64_t> cu_seqlens)
      : q_(std::move(q)), k_(std::move(k)), v_(std::move(v)),
        cu_(std::move(cu_seqlens)) {
    if (q_.rank() != 3) {
      throw InvalidArgument("RaggedQKV expects rank-3 [T, H, d], got " +
                            shape_to_string(q_.shape()));
    }
    if (k_.shape() != q_.shape() || v_.shape() != q_.shape()) {
      throw InvalidArgument("RaggedQKV: q, k, v shapes differ (" +
                            shape_to_string(q_.shape()) + ", " +
                            shape_to_string(k_.shape()) + ", " +
                            shape_to_string(v_.shape()) + ")");
    }
    require_valid_cu_seqlens(cu_, static_cast<std::int64_t>(q_.dim(0)));
  }

  std::size_t batch() const noexcept { return cu_.size() - 1; }
  std::size_t total_tokens() const { return q_.dim(0); }
  std::size_t heads() const { return q_.dim(1); }
  std::size_t head_dim() const { return q_.dim(2); }

  const FloatTensor& q() const noexcept { return q_; }
  const FloatTensor& k() const noexcept { return k_; }
  const FloatTensor& v() const noexcept { return v_; }
  const std::vector<std::int64_t>& cu_seqlens() const noexcept { return cu_; }

 private:
  FloatTensor q_, k_, v_;
  std::vector<std::int64_t> cu_;
};

/// Per-(image, position) survival mask [B, S]. Position 0 is CLS and always
/// survives.
class KeepMask {
 public:
  KeepMask(std::size_t batch, std::size_t seq, std::vector<std::uint8_t> mask)
      : batch_(batch), seq_(seq), mask_(std::move(mask)) {
    if (mask_.size() != batch_ * seq_) {
      throw InvalidArgument("KeepMask storage length " +
                            std::to_string(mask_.size()) + " != B*S = " +
                            std::to_string(batch_ * seq_));
    }
    if (seq_ == 0) throw InvalidArgument("KeepMask requires S >= 1");
    for (std::size_t i = 0; i < batch_; ++i) {
      if (!mask_[i * seq_]) {
        throw InvalidArgument("KeepMask: CLS token of image " +
                              std::to_string(i) + " is dropped");
      }
    }
  }

  static KeepMask all_true(std::size_t batch, std::size_t seq) {
    return KeepMask(batch, seq, std::vector<std::uint8_t>(batch * seq, 1));
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t seq_len() const noexcept { return seq_; }
  bool kept(std::size_t image, std::size_t pos) const {
    return mask_[image * seq_ + pos] != 0;
  }
  std::size_t kept_count(std::size_t image) const {
    auto first = mask_.begin() + static_cast<std::ptrdiff_t>(image * seq_);
    return static_cast<std::size_t>(
        std::count_if(first, first + static_cast<std::ptrdiff_t>(seq_),
                      [](std::uint8_t b) { return b != 0; }));
  }
  std::size_t total_kept() const {
    return static_cast<std::size_t>(std::count_if(
        mask_.begin(), mask_.end(), [](std::uint8_t b) { return b != 0; }));
  }
  std::span<const std::uint8_t> values() const noexcept { return mask_; }

  friend bool operator==(const KeepMask&, const KeepMask&) = default;

 private:
  std::size_t batch_ = 0;
  std::size_t seq_ = 0;
  std::vector<std::uint8_t> mask_;
};

/// Blocking of the attention kernel: query rows, key rows, feature width.
struct TileConfig {
  std::size_t block_m = 64;
  std::size_t block_n = 64;
  std::size_t block_d = 64;

  void validate() const {
    if (block_m == 0 || block_n == 0 || block_d == 0) {
      throw InvalidArgument("tile sizes must be positive (block_m=" +
                            std::to_string(block_m) + ", block_n=" +
                            std::to_string(block_n) + ", block_d=" +
                            std::to_string(block_d) + ")");
    }
  }

  friend bool operator==(const TileConfig&, const TileConfig&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) {
  return (a + b - 1) / b;
}

}  // namespace ragged_attn
