// SPDX-License-Identifier: Apache-2.0
//
// Raw 1-D convolution, gating and dense kernels over contiguous buffers,
// templated on the scalar type so the same code serves the float64 tape and
// the float32 inference path. Activations are laid out time-major: x[t * C + c].
// Backward kernels accumulate (+=) into whatever gradient buffers are non-null.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace swishnet::kernels {

/// Output length of a 1-D convolution. Causal convolutions left-pad with
/// K-1 zeros, so output t sees inputs up to stride * t.
inline std::size_t conv_out_len(std::size_t t_in, std::size_t k, std::size_t stride, bool causal) {
  if (causal) return (t_in + stride - 1) / stride;
  if (t_in < k) return 0;
  return (t_in - k) / stride + 1;
}

template <typename T>
void conv1d_forward(const T* x, std::size_t t_in, std::size_t c_in, const T* w, std::size_t k, std::size_t c_out,
                    const T* b, std::size_t stride, bool causal, T* y) {
  const std::size_t t_out = conv_out_len(t_in, k, stride, causal);
  const std::ptrdiff_t pad = causal ? static_cast<std::ptrdiff_t>(k) - 1 : 0;
  for (std::size_t t = 0; t < t_out; ++t) {
    T* yt = y + t * c_out;
    for (std::size_t o = 0; o < c_out; ++o) yt[o] = b ? b[o] : T(0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(stride * t + kk) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const T* xs = x + static_cast<std::size_t>(src) * c_in;
      const T* wk = w + kk * c_in * c_out;
      for (std::size_t c = 0; c < c_in; ++c) {
        const T xv = xs[c];
        const T* wkc = wk + c * c_out;
        for (std::size_t o = 0; o < c_out; ++o) yt[o] += xv * wkc[o];
      }
    }
  }
}

template <typename T>
void conv1d_backward(const T* x, std::size_t t_in, std::size_t c_in, const T* w, std::size_t k, std::size_t c_out,
                     std::size_t stride, bool causal, const T* dy, T* dx, T* dw, T* db) {
  const std::size_t t_out = conv_out_len(t_in, k, stride, causal);
  const std::ptrdiff_t pad = causal ? static_cast<std::ptrdiff_t>(k) - 1 : 0;
  for (std::size_t t = 0; t < t_out; ++t) {
    const T* dyt = dy + t * c_out;
    if (db) {
      for (std::size_t o = 0; o < c_out; ++o) db[o] += dyt[o];
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(stride * t + kk) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const std::size_t s = static_cast<std::size_t>(src);
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* wkc = w + (kk * c_in + c) * c_out;
        if (dx) {
          T acc = 0;
          for (std::size_t o = 0; o < c_out; ++o) acc += dyt[o] * wkc[o];
          dx[s * c_in + c] += acc;
        }
        if (dw) {
          const T xv = x[s * c_in + c];
          T* dwkc = dw + (kk * c_in + c) * c_out;
          for (std::size_t o = 0; o < c_out; ++o) dwkc[o] += xv * dyt[o];
        }
      }
    }
  }
}

/// Per-channel convolution with w[k * C + c]; no bias.
template <typename T>
void depthwise_forward(const T* x, std::size_t t_in, std::size_t ch, const T* w, std::size_t k, std::size_t stride,
                       bool causal, T* y) {
  const std::size_t t_out = conv_out_len(t_in, k, stride, causal);
  const std::ptrdiff_t pad = causal ? static_cast<std::ptrdiff_t>(k) - 1 : 0;
  for (std::size_t t = 0; t < t_out; ++t) {
    T* yt = y + t * ch;
    std::fill(yt, yt + ch, T(0));
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(stride * t + kk) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const T* xs = x + static_cast<std::size_t>(src) * ch;
      const T* wk = w + kk * ch;
      for (std::size_t c = 0; c < ch; ++c) yt[c] += xs[c] * wk[c];
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, std::size_t t_in, std::size_t ch, const T* w, std::size_t k, std::size_t stride,
                        bool causal, const T* dy, T* dx, T* dw) {
  const std::size_t t_out = conv_out_len(t_in, k, stride, causal);
  const std::ptrdiff_t pad = causal ? static_cast<std::ptrdiff_t>(k) - 1 : 0;
  for (std::size_t t = 0; t < t_out; ++t) {
    const T* dyt = dy + t * ch;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(stride * t + kk) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const std::size_t s = static_cast<std::size_t>(src);
      for (std::size_t c = 0; c < ch; ++c) {
        if (dx) dx[s * ch + c] += dyt[c] * w[kk * ch + c];
        if (dw) dw[kk * ch + c] += dyt[c] * x[s * ch + c];
      }
    }
  }
}

template <typename T>
T sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

/// y[t, c] = tanh(x[t, c]) * sigmoid(x[t, half + c]) for an input with 2*half channels.
template <typename T>
void gated_halves_forward(const T* x, std::size_t rows, std::size_t half, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* a = x + r * 2 * half;
    const T* g = a + half;
    T* yr = y + r * half;
    for (std::size_t c = 0; c < half; ++c) yr[c] = std::tanh(a[c]) * sigmoid(g[c]);
  }
}

template <typename T>
void gated_halves_backward(const T* x, std::size_t rows, std::size_t half, const T* dy, T* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* a = x + r * 2 * half;
    const T* g = a + half;
    T* da = dx + r * 2 * half;
    T* dg = da + half;
    const T* dyr = dy + r * half;
    for (std::size_t c = 0; c < half; ++c) {
      const T th = std::tanh(a[c]);
      const T sg = sigmoid(g[c]);
      da[c] += dyr[c] * (T(1) - th * th) * sg;
      dg[c] += dyr[c] * th * sg * (T(1) - sg);
    }
  }
}

/// y = x W + b for `rows` input rows; W is d_in x d_out.
template <typename T>
void dense_forward(const T* x, std::size_t rows, std::size_t d_in, const T* w, std::size_t d_out, const T* b, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y + r * d_out;
    for (std::size_t o = 0; o < d_out; ++o) yr[o] = b ? b[o] : T(0);
    const T* xr = x + r * d_in;
    for (std::size_t i = 0; i < d_in; ++i) {
      const T xv = xr[i];
      const T* wi = w + i * d_out;
      for (std::size_t o = 0; o < d_out; ++o) yr[o] += xv * wi[o];
    }
  }
}

template <typename T>
void dense_backward(const T* x, std::size_t rows, std::size_t d_in, const T* w, std::size_t d_out, const T* dy, T* dx,
                    T* dw, T* db) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * d_out;
    const T* xr = x + r * d_in;
    if (db) {
      for (std::size_t o = 0; o < d_out; ++o) db[o] += dyr[o];
    }
    for (std::size_t i = 0; i < d_in; ++i) {
      const T* wi = w + i * d_out;
      if (dx) {
        T acc = 0;
        for (std::size_t o = 0; o < d_out; ++o) acc += dyr[o] * wi[o];
        dx[r * d_in + i] += acc;
      }
      if (dw) {
        T* dwi = dw + i * d_out;
        for (std::size_t o = 0; o < d_out; ++o) dwi[o] += xr[i] * dyr[o];
      }
    }
  }
}

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

template <typename T>
T selu(T v) {
  return v > 0 ? T(kSeluLambda) * v : T(kSeluLambda * kSeluAlpha) * (std::exp(v) - T(1));
}

template <typename T>
T selu_grad(T v) {
  return v > 0 ? T(kSeluLambda) : T(kSeluLambda * kSeluAlpha) * std::exp(v);
}

/// Column means over `rows` rows: y[c] = mean_t x[t, c].
template <typename T>
void mean_rows(const T* x, std::size_t rows, std::size_t cols, T* y) {
  std::fill(y, y + cols, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[c] += x[r * cols + c];
  }
  for (std::size_t c = 0; c < cols; ++c) y[c] /= static_cast<T>(rows);
}

template <typename T>
void softmax(const T* x, std::size_t n, T* y) {
  const T m = *std::max_element(x, x + n);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (y[i] = std::exp(x[i] - m));
  for (std::size_t i = 0; i < n; ++i) y[i] /= s;
}

}  // namespace swishnet::kernels
