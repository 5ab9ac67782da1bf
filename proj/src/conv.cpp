#include "tensorslice/conv.hpp"

#include <string>

#include "tensorslice/error.hpp"

namespace tslice {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  if (g.stride < 1) throw InvalidArgument("conv stride must be >= 1");
  if (kernel > in + 2 * g.padding)
    throw ShapeError("kernel extent " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * g.padding));
  return (in + 2 * g.padding - kernel) / g.stride + 1;
}

namespace {

struct Dims4 {
  std::size_t batch, channels, height, width;
  std::size_t out_ch, kh, kw, oh, ow;
};

Dims4 geometry(const Shape& x, const Shape& k, const ConvGeometry& g) {
  if (x.size() != 4 || k.size() != 4) throw ShapeError("conv2d expects NCHW input and a rank-4 kernel");
  if (x[1] != k[1])
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) + " channels, kernel expects " + std::to_string(k[1]));
  return {x[0], x[1], x[2], x[3], k[0], k[2], k[3], conv_out_extent(x[2], k[2], g), conv_out_extent(x[3], k[3], g)};
}

// cols[(c, u, v), (oy, ox)] = x[b, c, oy*stride + u - pad, ox*stride + v - pad]
void im2col(const double* x, const Dims4& d, const ConvGeometry& g, double* cols) {
  const std::size_t spatial = d.oh * d.ow;
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t u = 0; u < d.kh; ++u)
      for (std::size_t v = 0; v < d.kw; ++v) {
        double* row = cols + ((c * d.kh + u) * d.kw + v) * spatial;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + u) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + v) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(d.height) &&
                                ix < static_cast<std::ptrdiff_t>(d.width);
            row[oy * d.ow + ox] = inside ? x[(c * d.height + static_cast<std::size_t>(iy)) * d.width +
                                             static_cast<std::size_t>(ix)]
                                         : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const Dims4& d, const ConvGeometry& g, double* x) {
  const std::size_t spatial = d.oh * d.ow;
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t u = 0; u < d.kh; ++u)
      for (std::size_t v = 0; v < d.kw; ++v) {
        const double* row = cols + ((c * d.kh + u) * d.kw + v) * spatial;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + u) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + v) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
            x[(c * d.height + static_cast<std::size_t>(iy)) * d.width + static_cast<std::size_t>(ix)] +=
                row[oy * d.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d_forward(const Tensor& kernel, const std::optional<Tensor>& bias, const Tensor& x,
                      const ConvGeometry& g) {
  const Dims4 d = geometry(x.shape(), kernel.shape(), g);
  if (bias && bias->size() != d.out_ch) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t patch = d.channels * d.kh * d.kw;
  const std::size_t spatial = d.oh * d.ow;
  Tensor y({d.batch, d.out_ch, d.oh, d.ow});
  std::vector<double> cols(patch * spatial);
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.out_ch * spatial;
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(x.data().data() + b * in_stride, d, g, cols.data());
    std::span<double> out = y.data().subspan(b * out_stride, out_stride);
    gemm(kernel.data(), cols, out, d.out_ch, patch, spatial);
    if (bias)
      for (std::size_t o = 0; o < d.out_ch; ++o)
        for (std::size_t s = 0; s < spatial; ++s) out[o * spatial + s] += (*bias)[o];
  }
  return y;
}

Tensor conv2d_grad_input(const Tensor& kernel, const Tensor& dy, const Shape& x_shape, const ConvGeometry& g) {
  const Dims4 d = geometry(x_shape, kernel.shape(), g);
  const std::size_t patch = d.channels * d.kh * d.kw;
  const std::size_t spatial = d.oh * d.ow;
  if (dy.shape() != Shape{d.batch, d.out_ch, d.oh, d.ow}) throw ShapeError("conv2d_grad_input: dy shape mismatch");
  const Tensor kt = transpose(reshape(kernel, {d.out_ch, patch}));
  Tensor dx(x_shape);
  std::vector<double> cols(patch * spatial);
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.out_ch * spatial;
  for (std::size_t b = 0; b < d.batch; ++b) {
    gemm(kt.data(), dy.data().subspan(b * out_stride, out_stride), cols, patch, d.out_ch, spatial);
    col2im(cols.data(), d, g, dx.data().data() + b * in_stride);
  }
  return dx;
}

Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& dy, const Shape& kernel_shape, const ConvGeometry& g) {
  const Dims4 d = geometry(x.shape(), kernel_shape, g);
  const std::size_t patch = d.channels * d.kh * d.kw;
  const std::size_t spatial = d.oh * d.ow;
  if (dy.shape() != Shape{d.batch, d.out_ch, d.oh, d.ow}) throw ShapeError("conv2d_grad_kernel: dy shape mismatch");
  Tensor dk(kernel_shape);
  std::vector<double> cols(patch * spatial);
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.out_ch * spatial;
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(x.data().data() + b * in_stride, d, g, cols.data());
    const double* dyb = dy.data().data() + b * out_stride;
    // dk[o, p] += sum_s dy[o, s] * cols[p, s]
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      double* dkrow = dk.data().data() + o * patch;
      const double* drow = dyb + o * spatial;
      for (std::size_t p = 0; p < patch; ++p) {
        const double* crow = cols.data() + p * spatial;
        double acc = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) acc += drow[s] * crow[s];
        dkrow[p] += acc;
      }
    }
  }
  return dk;
}

}  // namespace tslice
