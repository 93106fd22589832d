#pragma once

#include <cstdint>

#include "ear/tensor.hpp"

namespace ear::nn {

/// (temporal, height, width) extents.
struct Triple {
  std::int64_t t = 1, h = 1, w = 1;
  friend bool operator==(const Triple&, const Triple&) = default;
};

/// Cross-correlation (no kernel flip). x [N,Ci,T,H,W], weight [Co,Ci,kt,kh,kw],
/// bias [Co] or undefined. Output extents: floor((in + 2*pad - k) / stride) + 1.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, Triple stride = {1, 1, 1},
              Triple padding = {0, 0, 0});

Shape conv3d_output_shape(const Shape& input, std::int64_t out_channels, Triple kernel, Triple stride,
                          Triple padding);

/// Non-overlapping max pooling (stride == window). Extents must divide evenly.
/// Backward routes each window's gradient to its first maximum in row-major order.
Tensor max_pool3d(const Tensor& x, Triple window = {1, 2, 2});

/// Non-overlapping average pooling (stride == window).
Tensor avg_pool3d(const Tensor& x, Triple window);

/// Nearest-neighbour replication; backward sums each block.
Tensor upsample_nearest(const Tensor& x, Triple factor = {1, 2, 2});

/// Normalizes each (n, c, t) plane over H*W, then applies per-channel gamma/beta.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace ear::nn
