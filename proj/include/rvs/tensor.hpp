#ifndef RVS_TENSOR_HPP
#define RVS_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <type_traits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rvs {

// Error taxonomy. Everything derives from std::runtime_error or
// std::invalid_argument so callers can catch broadly.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

// Allocator whose value-initialisation is a no-op, so large buffers that are
// about to be overwritten are not zeroed first.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Tag for tensors whose contents the caller overwrites before reading.
struct uninitialized_t {};
inline constexpr uninitialized_t uninitialized{};

/// Dense row-major array with shape metadata. Images use NHWC.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Buffer = std::vector<T, detail::default_init_allocator<T>>;

  Tensor() = default;

  Tensor(Shape shape, uninitialized_t) : shape_(std::move(shape)), data_(shape_volume(shape_)) {
    check_extents();
  }

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(std::move(shape), Buffer(data.begin(), data.end())) {}

  Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_volume(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, Buffer{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  const Buffer& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T item() const {
    if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_volume(s) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    typename Tensor<U>::Buffer out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (auto e : shape_)
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
  }

  Shape shape_;
  Buffer data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

template <typename T>
T max_abs(const Tensor<T>& t) {
  T m = 0;
  for (T v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace rvs

#endif  // RVS_TENSOR_HPP
