#pragma once

#include <span>

#include "dgattn/tensor.hpp"

// Dense primitives shared by every other module. All functions are pure and
// use a fixed accumulation order, so results do not depend on thread count.
namespace dgattn {

/// c[i,j] = sum_t a[i,t] * b[t,j], t ascending.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T with the same ascending-order contract.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T * b, summing over rows of a and b in ascending order.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax of p / scale with max subtraction.
Tensor softmax_rows(const Tensor& p, double scale);
/// Gradient w.r.t. the softmax input given the softmax output `probs` and
/// the upstream gradient; includes the 1/scale chain factor.
Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_probs, double scale);

struct LayerNormCache {
  Tensor normalized;  // pre-affine rows
  std::vector<double> inv_std;
};

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache = nullptr);

struct LayerNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma,
                                   const Tensor& dy);

/// v / ||v|| when ||v|| > 1e-12, otherwise v unchanged.
Tensor l2_normalize(const Tensor& v);
void l2_normalize_inplace(std::span<double> v);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Output spatial extent of a 3x3, padding-1 convolution.
constexpr std::size_t conv_out_extent(std::size_t n, std::size_t stride) {
  return (n + stride - 1) / stride;
}

/// Depthwise 3x3 cross-correlation, zero padding 1.
/// x: H x W x C, w: 3 x 3 x C.
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w, std::size_t stride);

struct DepthwiseConvGrads {
  Tensor dx;
  Tensor dw;
};
DepthwiseConvGrads depthwise_conv3x3_backward(const Tensor& x, const Tensor& w,
                                              std::size_t stride, const Tensor& dy);

/// Dense 3x3 cross-correlation with full channel mixing, zero padding 1.
/// x: H x W x Cin, w: 3 x 3 x Cin x Cout.
Tensor conv3x3(const Tensor& x, const Tensor& w, std::size_t stride);

/// x * w + b for x: N x Cin, w: Cin x Cout, b: Cout.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

/// Adds a per-channel bias along the last axis.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// Sums all leading axes, leaving one value per channel.
Tensor channel_sum(const Tensor& x);

/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

/// Column slice [begin, begin + count) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Writes `src` into columns [begin, begin + src.cols()) of `dst`.
void assign_cols(Tensor& dst, const Tensor& src, std::size_t begin);

}  // namespace dgattn
