#pragma once

// Raw numeric kernels behind the autodiff primitives. No tape involvement.

#include <cstddef>
#include <span>

#include "divdir/tensor.hpp"

namespace divdir::kernels {

// c[M,N] = a[M,K] * b[K,N]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols);

struct ConvDims {
  std::size_t batch, in_channels, out_channels, height, width, kernel;
};

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const ConvDims& d);
void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                        const ConvDims& d);

// Strided view used by broadcasting: stride 0 on broadcast axes.
Shape broadcast_strides(const Shape& from, const Shape& to);

// out = expand(x) from `from` to `to`.
void expand(std::span<const double> x, const Shape& from, std::span<double> out, const Shape& to);
// out = sum of x (shape `from`) onto broadcast-compatible `to`.
void reduce(std::span<const double> x, const Shape& from, std::span<double> out, const Shape& to);

}  // namespace divdir::kernels
