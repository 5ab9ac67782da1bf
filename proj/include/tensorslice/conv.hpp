#pragma once

#include <cstddef>
#include <optional>

#include "tensorslice/tensor.hpp"

namespace tslice {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Output spatial extent floor((in + 2p - k) / stride) + 1; throws ShapeError
// when the kernel does not fit the padded input.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

// Direct 2-d cross-correlation, NCHW input, kernel [out_ch, in_ch, kh, kw],
// zero padding.
Tensor conv2d_forward(const Tensor& kernel, const std::optional<Tensor>& bias, const Tensor& x,
                      const ConvGeometry& g);

// Adjoints of conv2d_forward with respect to the input and the kernel.
Tensor conv2d_grad_input(const Tensor& kernel, const Tensor& dy, const Shape& x_shape, const ConvGeometry& g);
Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& dy, const Shape& kernel_shape, const ConvGeometry& g);

}  // namespace tslice
