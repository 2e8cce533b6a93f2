#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latentaccel {

/// Guard used for every division by a norm or standard deviation.
inline constexpr double kEpsilon = 1e-8;

/// Raised on violated preconditions (bad shapes, out-of-range arguments).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class... Parts>
std::string concat(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

}  // namespace detail

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of finite doubles.
///
/// Construction validates that the shape is non-degenerate, that it matches
/// the element count, and that no element is NaN or infinite. Arithmetic
/// helpers below return new tensors; nothing mutates through a const view.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {
    detail::require(std::isfinite(fill), "tensor fill value must be finite");
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    detail::require(checked_size(shape_) == data_.size(),
                    detail::concat("shape ", shape_string(shape_), " needs ",
                                   shape_size(shape_), " elements, got ",
                                   data_.size()));
    for (double v : data_)
      detail::require(std::isfinite(v), "tensor elements must be finite");
  }

  /// 1-D tensor from a list of values.
  static Tensor vector(std::vector<double> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element (r, c) of a rank-2 tensor.
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Elements per leading-axis slice ("per frame" / "per token").
  std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    detail::require(rank() >= 1 && begin < end && end <= rows(),
                    detail::concat("row slice [", begin, ",", end,
                                   ") out of range for shape ",
                                   shape_string(shape_)));
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    const std::size_t stride = row_size();
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
    return Tensor(std::move(out_shape), std::move(out));
  }

  /// Overwrites rows starting at `begin` with the rows of `src`.
  void assign_rows(std::size_t begin, const Tensor& src) {
    detail::require(src.rank() == rank() && src.row_size() == row_size() &&
                        begin + src.rows() <= rows(),
                    "row assignment does not fit the destination tensor");
    std::copy(src.data_.begin(), src.data_.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(begin * row_size()));
  }

  Tensor reshaped(Shape shape) const {
    detail::require(shape_size(shape) == size(), "reshape must keep element count");
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    detail::require(!shape.empty(), "tensor shape must have at least one axis");
    for (std::size_t d : shape) detail::require(d > 0, "tensor dimensions must be positive");
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  detail::require(a.shape() == b.shape(),
                  detail::concat(what, ": shape mismatch ", shape_string(a.shape()),
                                 " vs ", shape_string(b.shape())));
}

/// Elementwise a·x + b·y.
inline Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  require_same_shape(x, y, "axpby");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return Tensor(x.shape(), std::move(out));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return axpby(1.0, a, 1.0, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return axpby(1.0, a, -1.0, b); }

inline Tensor operator*(double s, const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= s;
  return Tensor(x.shape(), std::move(out));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const Tensor& x) { return std::sqrt(dot(x.values(), x.values())); }

/// Mean of |x| over all elements.
inline double mean_abs(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += std::abs(v);
  return acc / static_cast<double>(x.size());
}

/// Row-major product of [n,k] and [k,m] matrices.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
                  detail::concat("matmul: incompatible shapes ", shape_string(a.shape()),
                                 " x ", shape_string(b.shape())));
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * b.at(p, j);
    }
  return Tensor({n, m}, std::move(out));
}

/// Adds a length-m row vector to every row of an [n,m] matrix.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  detail::require(x.rank() == 2 && row.size() == x.shape()[1], "add_row: width mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.shape()[1]; ++j) out.at(i, j) += row[j];
  return out;
}

/// Concatenates rank-2 tensors along the feature (last) axis.
inline Tensor concat_columns(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_columns: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t width = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == 2 && p.rows() == n,
                    "concat_columns: all parts must be rank-2 with equal token count");
    width += p.shape()[1];
  }
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t col = 0;
    for (const Tensor& p : parts)
      for (std::size_t j = 0; j < p.shape()[1]; ++j) out.at(i, col++) = p.at(i, j);
  }
  return out;
}

inline Tensor map(const Tensor& x, double (*fn)(double)) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = fn(v);
  return Tensor(x.shape(), std::move(out));
}

inline Tensor tanh(const Tensor& x) { return map(x, [](double v) { return std::tanh(v); }); }

/// Row-wise softmax of a rank-2 tensor, max-shifted.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require(x.rank() == 2, "softmax_rows expects a rank-2 tensor");
  Tensor out = x;
  const std::size_t m = x.shape()[1];
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double hi = x.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) hi = std::max(hi, x.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += (out.at(i, j) = std::exp(x.at(i, j) - hi));
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= total;
  }
  return out;
}

inline Tensor transpose(const Tensor& x) {
  detail::require(x.rank() == 2, "transpose expects a rank-2 tensor");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct FeatureStats {
  double mean = 0.0;
  double std = 0.0;  // population (N-divisor)
};

/// Axis over which first and second moments are taken.
///
/// `global` reduces over every element. `per_channel` reduces over all rows
/// separately for each position of the last axis.
enum class StatsAxis { global, per_channel };

/// Population mean and standard deviation over all elements.
inline FeatureStats stats(std::span<const double> x) {
  detail::require(!x.empty(), "empty input");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

inline FeatureStats stats(const Tensor& x) { return stats(x.values()); }

/// Stats for each last-axis channel.
inline std::vector<FeatureStats> channel_stats(const Tensor& x) {
  detail::require(!x.empty(), "empty input");
  const std::size_t channels = x.shape().back();
  const std::size_t count = x.size() / channels;
  std::vector<FeatureStats> out(channels);
  std::vector<double> column(count);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t r = 0; r < count; ++r) column[r] = x[r * channels + c];
    out[c] = stats(column);
  }
  return out;
}

/// Rescales `x` so its stats become `target`; a source std below kEpsilon is
/// clamped to kEpsilon, which collapses constant inputs onto `target.mean`.
inline Tensor normalize_to(const Tensor& x, FeatureStats target) {
  const FeatureStats src = stats(x);
  const double denom = std::max(src.std, kEpsilon);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (x[i] - src.mean) / denom * target.std + target.mean;
  return Tensor(x.shape(), std::move(out));
}

/// Per-channel variant of normalize_to; `target` holds one entry per channel.
inline Tensor normalize_to(const Tensor& x, const std::vector<FeatureStats>& target) {
  const std::size_t channels = x.shape().back();
  detail::require(target.size() == channels, "normalize_to: channel count mismatch");
  const std::vector<FeatureStats> src = channel_stats(x);
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % channels;
    out[i] = (x[i] - src[c].mean) / std::max(src[c].std, kEpsilon) * target[c].std +
             target[c].mean;
  }
  return out;
}

/// ||a - b|| / max(||b||, eps).
inline double relative_l2(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "relative_l2");
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(num) / std::max(l2_norm(b), kEpsilon);
}

// ---------------------------------------------------------------------------
// Randomness

/// SplitMix64 (Steele, Lea & Flood; the constants of Vigna's reference
/// splitmix64.c). Output is a pure function of the seed and draw index, so a
/// seed reproduces the same stream on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller. The second variate of each pair is
  /// cached, so draws come in deterministic pairs.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// I.i.d. N(0, 1) tensor.
inline Tensor gaussian(const Shape& shape, SeededRng& rng, double scale = 1.0) {
  Tensor out(shape);
  for (double& v : out.values()) v = scale * rng.normal();
  return out;
}

/// Order-sensitive FNV-1a over the raw bits of every element.
inline std::uint64_t checksum(const Tensor& x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : x.values()) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace latentaccel
