#include "kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <cblas.h>

namespace divdir::kernels {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    std::fill(c.begin(), c.end(), 0.0);
    return;
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a.data(), static_cast<int>(k), b.data(), static_cast<int>(n), 0.0, c.data(),
              static_cast<int>(n));
}

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
}

namespace {

// col[(c*K + i)*K + j, h*W + w] = x[c, h + i - pad, w + j - pad] (zero outside).
void im2col(const double* x, double* col, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.kernel;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t plane = H * W;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    const double* in = x + c * plane;
    for (std::size_t i = 0; i < K; ++i) {
      const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - pad;
      for (std::size_t j = 0; j < K; ++j) {
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, -dj);
        const std::ptrdiff_t w1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - dj);
        double* row = col + ((c * K + i) * K + j) * plane;
        for (std::size_t h = 0; h < H; ++h) {
          double* out = row + h * W;
          const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h) + di;
          if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* src = in + static_cast<std::size_t>(sh) * W;
          std::fill(out, out + w0, 0.0);
          std::copy(src + (w0 + dj), src + (w1 + dj), out + w0);
          std::fill(out + w1, out + W, 0.0);
        }
      }
    }
  }
}

}  // namespace

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const ConvDims& d) {
  const std::size_t plane = d.height * d.width;
  const std::size_t rows = d.in_channels * d.kernel * d.kernel;
  std::vector<double> col(rows * plane);
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(x.data() + n * d.in_channels * plane, col.data(), d);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(d.out_channels),
                static_cast<int>(plane), static_cast<int>(rows), 1.0, w.data(), static_cast<int>(rows), col.data(),
                static_cast<int>(plane), 0.0, y.data() + n * d.out_channels * plane, static_cast<int>(plane));
  }
}

void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                        const ConvDims& d) {
  const std::size_t plane = d.height * d.width;
  const std::size_t rows = d.in_channels * d.kernel * d.kernel;
  std::vector<double> col(rows * plane);
  std::fill(gw.begin(), gw.end(), 0.0);
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(x.data() + n * d.in_channels * plane, col.data(), d);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(d.out_channels), static_cast<int>(rows),
                static_cast<int>(plane), 1.0, gy.data() + n * d.out_channels * plane, static_cast<int>(plane),
                col.data(), static_cast<int>(plane), 1.0, gw.data(), static_cast<int>(rows));
  }
}

Shape broadcast_strides(const Shape& from, const Shape& to) {
  // Right-aligned; `from` may have fewer axes than `to`.
  if (from.size() > to.size()) throw std::invalid_argument("broadcast: source has more axes than target");
  Shape strides(to.size(), 0);
  const std::size_t offset = to.size() - from.size();
  std::size_t stride = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    if (from[i] == to[i + offset]) {
      strides[i + offset] = from[i] == 1 ? 0 : stride;
    } else if (from[i] != 1) {
      throw std::invalid_argument("broadcast: incompatible axis");
    }
    stride *= from[i];
  }
  return strides;
}

namespace {

// Calls f(big_index, small_offset) for every element of `big`, where small_offset
// walks `small` under broadcasting.
template <typename F>
void for_each_broadcast(const Shape& small, const Shape& big, F&& f) {
  const Shape strides = broadcast_strides(small, big);
  const std::size_t total = shape_numel(big);
  if (big.empty()) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t r = big.size();
  const std::size_t inner = big[r - 1];
  const std::size_t inner_stride = strides[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t t = 0; t < inner; ++t) f(base + t, off + t * inner_stride);
    // advance the outer odometer
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      off += strides[ax];
      if (idx[ax] < big[ax]) break;
      off -= strides[ax] * big[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

void expand(std::span<const double> x, const Shape& from, std::span<double> out, const Shape& to) {
  for_each_broadcast(from, to, [&](std::size_t i, std::size_t s) { out[i] = x[s]; });
}

void reduce(std::span<const double> x, const Shape& from, std::span<double> out, const Shape& to) {
  std::fill(out.begin(), out.end(), 0.0);
  for_each_broadcast(to, from, [&](std::size_t i, std::size_t s) { out[s] += x[i]; });
}

}  // namespace divdir::kernels
