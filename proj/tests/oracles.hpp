#pragma once

// Loop-level oracles written independently of the library kernels.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dgattn/tensor.hpp"

namespace oracle {

using dgattn::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

inline Tensor softmax(const Tensor& p, double scale) {
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double m = -INFINITY, z = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) m = std::max(m, p.at(i, j));
    for (std::size_t j = 0; j < p.cols(); ++j) z += std::exp((p.at(i, j) - m) / scale);
    for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, j) = std::exp((p.at(i, j) - m) / scale) / z;
  }
  return out;
}

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t C = q.cols();
  Tensor s({q.rows(), k.rows()});
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < C; ++c) d += q.at(i, c) * k.at(j, c);
      s.at(i, j) = d;
    }
  return oracle::matmul(oracle::softmax(s, std::sqrt(double(C))), v);
}

// Direct 3x3 cross-correlation with zero padding 1; depthwise when
// w is 3x3xC, dense when w is 3x3xCinxCout.
inline Tensor conv3x3(const Tensor& x, const Tensor& w, std::size_t stride) {
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const bool depthwise = w.rank() == 3;
  const std::size_t Cout = depthwise ? Cin : w.dim(3);
  const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  Tensor y({Ho, Wo, Cout});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long iy = long(oy * stride + ky) - 1, ix = long(ox * stride + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
            if (depthwise) {
              y.at(oy, ox, co) += x.at(iy, ix, co) * w.at(ky, kx, co);
            } else {
              for (std::size_t ci = 0; ci < Cin; ++ci)
                y.at(oy, ox, co) +=
                    x.at(iy, ix, ci) * w[((ky * 3 + kx) * Cin + ci) * Cout + co];
            }
          }
  return y;
}

inline std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 1e-12)
    for (double& x : v) x /= n;
  return v;
}

inline std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return {s.begin(), s.end()};
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Nearest centroid by cosine similarity, lowest index on ties.
inline std::vector<std::size_t> nearest(const Tensor& q, const Tensor& e) {
  std::vector<std::size_t> g(q.rows(), 0);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto u = unit(row(q, i));
    double best = -INFINITY;
    for (std::size_t j = 0; j < e.rows(); ++j) {
      const double s = dot(u, row(e, j));
      if (s > best) {
        best = s;
        g[i] = j;
      }
    }
  }
  return g;
}

// One spherical Lloyd step: assign, then replace each non-empty centroid by
// the normalized mean of its normalized members.
inline Tensor lloyd_step(const Tensor& q, const Tensor& e) {
  const auto g = nearest(q, e);
  Tensor out = e;
  for (std::size_t j = 0; j < e.rows(); ++j) {
    std::vector<double> m(e.cols(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < q.rows(); ++i)
      if (g[i] == j) {
        const auto u = unit(row(q, i));
        for (std::size_t c = 0; c < m.size(); ++c) m[c] += u[c];
        ++n;
      }
    if (n == 0) continue;
    for (double& x : m) x /= double(n);
    const auto u = unit(m);
    std::copy(u.begin(), u.end(), out.row(j).begin());
  }
  return out;
}

// Exhaustive top-k: sort all indices by (score desc, index asc).
inline std::vector<std::size_t> topk(const std::vector<double>& e, const Tensor& keys,
                                     std::size_t k) {
  std::vector<std::size_t> idx(keys.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> s(keys.rows());
  for (std::size_t i = 0; i < keys.rows(); ++i) s[i] = dot(e, row(keys, i));
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace oracle
