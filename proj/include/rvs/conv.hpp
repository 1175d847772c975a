#ifndef RVS_CONV_HPP
#define RVS_CONV_HPP

#include <algorithm>
#include <cstddef>
#include <vector>

#include "rvs/linalg.hpp"
#include "rvs/tape.hpp"

namespace rvs {

enum class PadMode { valid, same };

struct Padding {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

/// TensorFlow-style "same" padding: output extent ceil(in / stride), extra
/// padding goes to the bottom/right.
inline Padding same_padding(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw,
                            std::size_t stride) {
  auto split = [&](std::size_t in, std::size_t k, std::size_t& before, std::size_t& after) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t need = (out - 1) * stride + k;
    const std::size_t total = need > in ? need - in : 0;
    before = total / 2;
    after = total - before;
  };
  Padding p;
  split(in_h, kh, p.top, p.bottom);
  split(in_w, kw, p.left, p.right);
  return p;
}

/// Geometry of a cross-correlation from an [n,h,w,c] input to an [n,oh,ow,f] output.
struct ConvGeometry {
  std::size_t n, h, w, c;
  std::size_t kh, kw, f;
  std::size_t stride;
  Padding pad;
  std::size_t oh, ow;

  std::size_t patch() const { return kh * kw * c; }
  std::size_t out_rows() const { return n * oh * ow; }

  static ConvGeometry make(const Shape& input, const Shape& kernel, std::size_t stride,
                           Padding pad) {
    if (input.size() != 4) throw DimensionError("conv: input must be NHWC, got " + shape_str(input));
    if (kernel.size() != 4)
      throw DimensionError("conv: kernel must be [kh,kw,c,f], got " + shape_str(kernel));
    if (stride < 1) throw ConfigError("conv: stride must be >= 1");
    if (kernel[2] != input[3])
      throw DimensionError("conv: channel mismatch, input " + shape_str(input) + " kernel " +
                           shape_str(kernel));
    ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[1], kernel[3],
                   stride,   pad,      0,        0};
    const std::size_t ph = g.h + pad.top + pad.bottom, pw = g.w + pad.left + pad.right;
    if (g.kh > ph || g.kw > pw)
      throw DimensionError("conv: kernel " + shape_str(kernel) + " does not fit padded input " +
                           shape_str(input));
    g.oh = (ph - g.kh) / stride + 1;
    g.ow = (pw - g.kw) / stride + 1;
    return g;
  }
};

namespace detail {

// Output columns [lo, hi) whose tap kx lands inside the input row.
inline void valid_range(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad.left);
  // need 0 <= ox*s + off < w
  const std::ptrdiff_t first = off >= 0 ? 0 : (-off + s - 1) / s;
  const std::ptrdiff_t end = (static_cast<std::ptrdiff_t>(g.w) - off + s - 1) / s;
  lo = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(first, 0, static_cast<std::ptrdiff_t>(g.ow)));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(end, static_cast<std::ptrdiff_t>(lo),
                                                           static_cast<std::ptrdiff_t>(g.ow)));
}

// cols[(b,oy,ox), (ky,kx,ci)] = x[b, oy*s+ky-top, ox*s+kx-left, ci] (zero outside).
// C > 0 fixes the channel count at compile time so the per-pixel copies vectorise.
// Only output lines (b, oy) with b*oh + oy in [l0, l1) are produced; `cols`
// starts at line l0.
template <typename T, std::size_t C = 0>
void im2col_impl(const T* x, const ConvGeometry& g, std::size_t l0, std::size_t l1, T* cols) {
  const std::size_t c = C ? C : g.c, patch = g.kh * g.kw * c;
  for (std::size_t line = l0; line < l1; ++line) {
      const std::size_t b = line / g.oh, oy = line % g.oh;
      T* base = cols + (line - l0) * g.ow * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                  static_cast<std::ptrdiff_t>(g.pad.top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
          for (std::size_t ox = 0; ox < g.ow; ++ox)
            std::fill_n(base + ox * patch + ky * g.kw * c, g.kw * c, T(0));
          continue;
        }
        const T* xrow = x + (b * g.h + static_cast<std::size_t>(iy)) * g.w * c;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          std::size_t lo, hi;
          valid_range(g, kx, lo, hi);
          T* dst = base + (ky * g.kw + kx) * c;
          for (std::size_t ox = 0; ox < lo; ++ox) std::fill_n(dst + ox * patch, c, T(0));
          for (std::size_t ox = hi; ox < g.ow; ++ox) std::fill_n(dst + ox * patch, c, T(0));
          for (std::size_t ox = lo; ox < hi; ++ox) {
            const T* src = xrow + (ox * g.stride + kx - g.pad.left) * c;
            T* d = dst + ox * patch;
            for (std::size_t ci = 0; ci < c; ++ci) d[ci] = src[ci];
          }
        }
      }
    }
}

// Adjoint of im2col: scatter-add patches back into x.
template <typename T, std::size_t C = 0>
void col2im_impl(const T* cols, const ConvGeometry& g, std::size_t l0, std::size_t l1, T* x) {
  const std::size_t c = C ? C : g.c, patch = g.kh * g.kw * c;
  for (std::size_t line = l0; line < l1; ++line) {
      const std::size_t b = line / g.oh, oy = line % g.oh;
      const T* base = cols + (line - l0) * g.ow * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                  static_cast<std::ptrdiff_t>(g.pad.top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        T* xrow = x + (b * g.h + static_cast<std::size_t>(iy)) * g.w * c;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          std::size_t lo, hi;
          valid_range(g, kx, lo, hi);
          const T* src = base + (ky * g.kw + kx) * c;
          for (std::size_t ox = lo; ox < hi; ++ox) {
            T* d = xrow + (ox * g.stride + kx - g.pad.left) * c;
            const T* sp = src + ox * patch;
            for (std::size_t ci = 0; ci < c; ++ci) d[ci] += sp[ci];
          }
        }
      }
    }
}

template <typename T>
void im2col_lines(const T* x, const ConvGeometry& g, std::size_t l0, std::size_t l1, T* cols) {
  switch (g.c) {
    case 3: return im2col_impl<T, 3>(x, g, l0, l1, cols);
    case 8: return im2col_impl<T, 8>(x, g, l0, l1, cols);
    case 16: return im2col_impl<T, 16>(x, g, l0, l1, cols);
    case 32: return im2col_impl<T, 32>(x, g, l0, l1, cols);
    case 64: return im2col_impl<T, 64>(x, g, l0, l1, cols);
    default: return im2col_impl<T>(x, g, l0, l1, cols);
  }
}

template <typename T>
void col2im_lines(const T* cols, const ConvGeometry& g, std::size_t l0, std::size_t l1, T* x) {
  switch (g.c) {
    case 3: return col2im_impl<T, 3>(cols, g, l0, l1, x);
    case 8: return col2im_impl<T, 8>(cols, g, l0, l1, x);
    case 16: return col2im_impl<T, 16>(cols, g, l0, l1, x);
    case 32: return col2im_impl<T, 32>(cols, g, l0, l1, x);
    case 64: return col2im_impl<T, 64>(cols, g, l0, l1, x);
    default: return col2im_impl<T>(cols, g, l0, l1, x);
  }
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  im2col_lines(x, g, 0, g.n * g.oh, cols);
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  col2im_lines(cols, g, 0, g.n * g.oh, x);
}

template <typename T>
using Scratch = typename Tensor<T>::Buffer;

// The patch matrix of a whole batch is several times larger than the
// activations; building it a few output lines at a time keeps it in cache.
template <typename T>
std::size_t chunk_lines(const ConvGeometry& g) {
  constexpr std::size_t target_bytes = 128 * 1024;
  const std::size_t per_line = g.ow * g.patch() * sizeof(T);
  return std::max<std::size_t>(1, target_bytes / per_line);
}

template <typename F>
void for_each_chunk(const ConvGeometry& g, std::size_t lines_per_chunk, F&& f) {
  const std::size_t lines = g.n * g.oh;
  for (std::size_t l0 = 0; l0 < lines; l0 += lines_per_chunk) f(l0, std::min(lines, l0 + lines_per_chunk));
}

// y[rows, f] = im2col(x) * K
template <typename T>
void conv_forward(const T* x, const T* k, const ConvGeometry& g, T* y) {
  const std::size_t cl = chunk_lines<T>(g), row = g.ow;
  Scratch<T> cols(cl * row * g.patch());
  for_each_chunk(g, cl, [&](std::size_t l0, std::size_t l1) {
    im2col_lines(x, g, l0, l1, cols.data());
    linalg::gemm_nn(cols.data(), k, y + l0 * row * g.f, (l1 - l0) * row, g.patch(), g.f);
  });
}

// dx += col2im(dy * K^T)
template <typename T>
void conv_backward_input(const T* dy, const T* k, const ConvGeometry& g, T* dx) {
  const std::size_t cl = chunk_lines<T>(g), row = g.ow;
  Scratch<T> cols(cl * row * g.patch());
  for_each_chunk(g, cl, [&](std::size_t l0, std::size_t l1) {
    linalg::gemm_nt(dy + l0 * row * g.f, k, cols.data(), (l1 - l0) * row, g.f, g.patch());
    col2im_lines(cols.data(), g, l0, l1, dx);
  });
}

// dk += im2col(x)^T * dy
template <typename T>
void conv_backward_kernel(const T* x, const T* dy, const ConvGeometry& g, T* dk) {
  const std::size_t cl = chunk_lines<T>(g), row = g.ow;
  Scratch<T> cols(cl * row * g.patch());
  for_each_chunk(g, cl, [&](std::size_t l0, std::size_t l1) {
    im2col_lines(x, g, l0, l1, cols.data());
    linalg::gemm_tn(cols.data(), dy + l0 * row * g.f, dk, (l1 - l0) * row, g.patch(), g.f, true);
  });
}

}  // namespace detail

/// Cross-correlation of NHWC input with a [kh,kw,c,f] kernel.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride, PadMode mode) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4)
    throw DimensionError("conv2d: expected NHWC input and 4-d kernel, got " + shape_str(xs) +
                         " and " + shape_str(ks));
  const Padding pad =
      mode == PadMode::same ? same_padding(xs[1], xs[2], ks[0], ks[1], stride) : Padding{};
  const ConvGeometry g = ConvGeometry::make(xs, ks, stride, pad);
  Tensor<T> out(Shape{g.n, g.oh, g.ow, g.f}, uninitialized);
  detail::conv_forward(x.value().raw(), kernel.value().raw(), g, out.raw());
  return x.tape().record(std::move(out), {x, kernel}, [x, kernel, g](Tape<T>& t, const Tensor<T>& dy) {
    if (kernel.requires_grad())
      detail::conv_backward_kernel(x.value().raw(), dy.raw(), g, t.grad_buffer(kernel.id()).raw());
    if (x.requires_grad())
      detail::conv_backward_input(dy.raw(), kernel.value().raw(), g, t.grad_buffer(x.id()).raw());
  });
}

/// Transposed convolution: [n,h,w,f] -> [n,h*s,w*s,c] with a [kh,kw,c,f] kernel.
/// Forward is exactly the input-gradient of conv2d(same padding) with the same kernel.
template <typename T>
Var<T> deconv2d(Var<T> x, Var<T> kernel, std::size_t stride) {
  if (stride < 1) throw ConfigError("deconv2d: stride must be >= 1");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4)
    throw DimensionError("deconv2d: expected NHWC input and 4-d kernel, got " + shape_str(xs) +
                         " and " + shape_str(ks));
  if (ks[3] != xs[3])
    throw DimensionError("deconv2d: channel mismatch, input " + shape_str(xs) + " kernel " +
                         shape_str(ks));
  const std::size_t oh = xs[1] * stride, ow = xs[2] * stride;
  const Shape out_shape{xs[0], oh, ow, ks[2]};
  const ConvGeometry g =
      ConvGeometry::make(out_shape, ks, stride, same_padding(oh, ow, ks[0], ks[1], stride));
  if (g.oh != xs[1] || g.ow != xs[2])
    throw DimensionError("deconv2d: kernel " + shape_str(ks) + " incompatible with stride");
  Tensor<T> out(out_shape);
  detail::conv_backward_input(x.value().raw(), kernel.value().raw(), g, out.raw());
  return x.tape().record(std::move(out), {x, kernel}, [x, kernel, g](Tape<T>& t, const Tensor<T>& dy) {
    // the input gradient is conv2d(dy), the kernel gradient im2col(dy)^T * x
    const std::size_t cl = detail::chunk_lines<T>(g), row = g.ow;
    detail::Scratch<T> cols(cl * row * g.patch());
    T* dx = x.requires_grad() ? t.grad_buffer(x.id()).raw() : nullptr;
    T* dk = kernel.requires_grad() ? t.grad_buffer(kernel.id()).raw() : nullptr;
    detail::for_each_chunk(g, cl, [&](std::size_t l0, std::size_t l1) {
      const std::size_t rows = (l1 - l0) * row;
      detail::im2col_lines(dy.raw(), g, l0, l1, cols.data());
      if (dx) linalg::gemm_nn(cols.data(), kernel.value().raw(), dx + l0 * row * g.f, rows, g.patch(), g.f, true);
      if (dk) linalg::gemm_tn(cols.data(), x.value().raw() + l0 * row * g.f, dk, rows, g.patch(), g.f, true);
    });
  });
}

}  // namespace rvs

#endif  // RVS_CONV_HPP
