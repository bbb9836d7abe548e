#include "dgattn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dgattn {

namespace {

using Index = std::ptrdiff_t;

void require_matrix(const Tensor& t, const char* name) {
  require_shape(t.rank() == 2, std::string(name) + " must be a matrix, got " +
                                   shape_string(t.shape()));
}

void require_hwc(const Tensor& t, const char* name) {
  require_shape(t.rank() == 3, std::string(name) + " must be H x W x C, got " +
                                   shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
  require_shape(b.rows() == n, "matmul inner extents differ: " + shape_string(a.shape()) +
                                   " x " + shape_string(b.shape()));
  Tensor c({m, p});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* out = c.data().data();
  // i-t-j order: each c[i,j] still accumulates in ascending t.
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* ci = out + i * p;
    for (std::size_t t = 0; t < n; ++t) {
      const double ait = A[i * n + t];
      const double* bt = B + t * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += ait * bt[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.rows(), n = a.cols(), p = b.rows();
  require_shape(b.cols() == n, "matmul_nt inner extents differ");
  Tensor c({m, p});
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i)
    for (std::size_t j = 0; j < p; ++j) c.at(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  require_shape(b.rows() == n, "matmul_tn row counts differ");
  Tensor c({m, p});
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    for (std::size_t t = 0; t < n; ++t) {
      const double ati = a.at(t, i);
      const auto bt = b.row(t);
      for (std::size_t j = 0; j < p; ++j) c.at(i, j) += ati * bt[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose input");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor softmax_rows(const Tensor& p, double scale) {
  require_matrix(p, "softmax input");
  if (!(scale > 0.0)) throw std::invalid_argument("softmax scale must be positive");
  const std::size_t m = p.rows(), n = p.cols();
  Tensor out({m, n});
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const auto in = p.row(i);
    auto o = out.row(i);
    double mx = in[0] / scale;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j] / scale);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] / scale - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  return out;
}

Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_probs, double scale) {
  require_shape(probs.shape() == grad_probs.shape(), "softmax backward shape mismatch");
  const std::size_t m = probs.rows(), n = probs.cols();
  Tensor dp({m, n});
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const auto s = probs.row(i);
    const auto g = grad_probs.row(i);
    const double inner = dot(s, g);
    auto d = dp.row(i);
    for (std::size_t j = 0; j < n; ++j) d[j] = s[j] * (g[j] - inner) / scale;
  }
  return dp;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache) {
  require_matrix(x, "layer_norm input");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm eps must be positive");
  const std::size_t L = x.rows(), C = x.cols();
  require_shape(gamma.size() == C && beta.size() == C, "layer_norm affine size mismatch");
  Tensor out({L, C});
  Tensor normalized({L, C});
  std::vector<double> inv_std(L);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(L); ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    auto n = normalized.row(i);
    auto o = out.row(i);
    for (std::size_t c = 0; c < C; ++c) {
      n[c] = (r[c] - mean) * is;
      o[c] = gamma[c] * n[c] + beta[c];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

LayerNormGrads layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma,
                                   const Tensor& dy) {
  const Tensor& xh = cache.normalized;
  require_shape(xh.shape() == dy.shape(), "layer_norm backward shape mismatch");
  const std::size_t L = xh.rows(), C = xh.cols();
  LayerNormGrads g{Tensor({L, C}), Tensor({C}), Tensor({C})};
  for (std::size_t i = 0; i < L; ++i) {
    const auto n = xh.row(i);
    const auto d = dy.row(i);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double gc = d[c] * gamma[c];
      mean_g += gc;
      mean_gx += gc * n[c];
      g.dgamma[c] += d[c] * n[c];
      g.dbeta[c] += d[c];
    }
    mean_g /= static_cast<double>(C);
    mean_gx /= static_cast<double>(C);
    auto dx = g.dx.row(i);
    for (std::size_t c = 0; c < C; ++c)
      dx[c] = cache.inv_std[i] * (d[c] * gamma[c] - mean_g - n[c] * mean_gx);
  }
  return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void l2_normalize_inplace(std::span<double> v) {
  const double n = l2_norm(v);
  if (n > 1e-12)
    for (auto& x : v) x /= n;
}

Tensor l2_normalize(const Tensor& v) {
  Tensor out = v;
  l2_normalize_inplace(out.data());
  return out;
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_hwc(x, "depthwise_conv3x3 input");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  require_shape(w.shape() == Shape{3, 3, C}, "depthwise kernel must be 3 x 3 x C");
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const std::size_t Ho = conv_out_extent(H, stride), Wo = conv_out_extent(W, stride);
  Tensor y({Ho, Wo, C});
#pragma omp parallel for schedule(static)
  for (Index oy = 0; oy < static_cast<Index>(Ho); ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const Index iy = oy * static_cast<Index>(stride) + static_cast<Index>(ky) - 1;
        if (iy < 0 || iy >= static_cast<Index>(H)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const Index ix = static_cast<Index>(ox * stride + kx) - 1;
          if (ix < 0 || ix >= static_cast<Index>(W)) continue;
          for (std::size_t c = 0; c < C; ++c) y.at(oy, ox, c) += x.at(iy, ix, c) * w.at(ky, kx, c);
        }
      }
  return y;
}

DepthwiseConvGrads depthwise_conv3x3_backward(const Tensor& x, const Tensor& w,
                                              std::size_t stride, const Tensor& dy) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Ho = conv_out_extent(H, stride), Wo = conv_out_extent(W, stride);
  require_shape(dy.shape() == Shape{Ho, Wo, C}, "depthwise backward grad shape mismatch");
  DepthwiseConvGrads g{Tensor(x.shape()), Tensor(w.shape())};
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const Index iy = static_cast<Index>(oy * stride + ky) - 1;
        if (iy < 0 || iy >= static_cast<Index>(H)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const Index ix = static_cast<Index>(ox * stride + kx) - 1;
          if (ix < 0 || ix >= static_cast<Index>(W)) continue;
          for (std::size_t c = 0; c < C; ++c) {
            const double d = dy.at(oy, ox, c);
            g.dx.at(iy, ix, c) += d * w.at(ky, kx, c);
            g.dw.at(ky, kx, c) += d * x.at(iy, ix, c);
          }
        }
      }
  return g;
}

Tensor conv3x3(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_hwc(x, "conv3x3 input");
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  require_shape(w.rank() == 4 && w.dim(0) == 3 && w.dim(1) == 3 && w.dim(2) == Cin,
                "conv3x3 kernel must be 3 x 3 x Cin x Cout");
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const std::size_t Cout = w.dim(3);
  const std::size_t Ho = conv_out_extent(H, stride), Wo = conv_out_extent(W, stride);
  Tensor y({Ho, Wo, Cout});
  const double* wp = w.data().data();
#pragma omp parallel for schedule(static)
  for (Index oy = 0; oy < static_cast<Index>(Ho); ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* out = &y.at(oy, ox, 0);
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const Index iy = oy * static_cast<Index>(stride) + static_cast<Index>(ky) - 1;
        if (iy < 0 || iy >= static_cast<Index>(H)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const Index ix = static_cast<Index>(ox * stride + kx) - 1;
          if (ix < 0 || ix >= static_cast<Index>(W)) continue;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double xv = x.at(iy, ix, ci);
            const double* wrow = wp + ((ky * 3 + kx) * Cin + ci) * Cout;
            for (std::size_t co = 0; co < Cout; ++co) out[co] += xv * wrow[co];
          }
        }
      }
    }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_shape(b.size() == w.cols(), "linear bias size mismatch");
  return add_channel_bias(matmul(x, w), b);
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  return {matmul_nt(dy, w), matmul_tn(x, dy), channel_sum(dy)};
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  const std::size_t C = x.shape().back();
  require_shape(b.size() == C, "bias size does not match channel count");
  Tensor out = x;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += b[i % C];
  return out;
}

Tensor channel_sum(const Tensor& x) {
  const std::size_t C = x.shape().back();
  Tensor out({C});
  const auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) out[i % C] += d[i];
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_shape(x.shape() == dy.shape(), "gelu backward shape mismatch");
  Tensor dx(x.shape());
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_shape(begin + count <= x.cols(), "column slice out of range");
  Tensor out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy_n(x.row(r).begin() + begin, count, out.row(r).begin());
  return out;
}

void assign_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  require_shape(dst.rows() == src.rows() && begin + src.cols() <= dst.cols(),
                "column assignment out of range");
  for (std::size_t r = 0; r < src.rows(); ++r)
    std::copy(src.row(r).begin(), src.row(r).end(), dst.row(r).begin() + begin);
}

}  // namespace dgattn
