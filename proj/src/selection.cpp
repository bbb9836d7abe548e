#include "dgattn/selection.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dgattn/numerics.hpp"

namespace dgattn {

SelectionIndex select_topk(const Centroids& centroids, const Tensor& keys, std::size_t k) {
  require_shape(keys.rank() == 2 && keys.cols() == centroids.dim(),
                "key width does not match centroid dim");
  const std::size_t L = keys.rows(), G = centroids.groups();
  if (k == 0 || k > L)
    throw std::invalid_argument("top_k must satisfy 1 <= k <= L (k=" + std::to_string(k) +
                                ", L=" + std::to_string(L) + ")");

  SelectionIndex sel{G, k, std::vector<std::size_t>(G * k), std::vector<double>(G * k)};
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(G); ++j) {
    const auto e = centroids.e.row(j);
    std::vector<double> score(L);
    for (std::size_t i = 0; i < L; ++i) score[i] = dot(e, keys.row(i));
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Strict total order, so full and partial sorts agree element for element.
    auto before = [&](std::size_t a, std::size_t b) {
      return score[a] > score[b] || (score[a] == score[b] && a < b);
    };
    if (L <= kFullSortLimit)
      std::sort(order.begin(), order.end(), before);
    else
      std::partial_sort(order.begin(), order.begin() + k, order.end(), before);
    for (std::size_t t = 0; t < k; ++t) {
      sel.id[j * k + t] = order[t];
      sel.scores[j * k + t] = score[order[t]];
    }
  }
  return sel;
}

SelectionIndex make_selection(std::size_t groups, std::size_t k, std::vector<std::size_t> id) {
  if (id.size() != groups * k) throw DimensionError("selection id length must be G * k");
  return SelectionIndex{groups, k, std::move(id), std::vector<double>(groups * k, 0.0)};
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
  require_shape(src.rank() == 2, "gather_rows expects a matrix");
  Tensor out({idx.size(), src.cols()});
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= src.rows()) throw std::out_of_range("gather index out of range");
    const auto r = src.row(idx[t]);
    std::copy(r.begin(), r.end(), out.row(t).begin());
  }
  return out;
}

void scatter_add_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> idx) {
  require_shape(src.rows() == idx.size() && src.cols() == dst.cols(),
                "scatter_add_rows shape mismatch");
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= dst.rows()) throw std::out_of_range("scatter index out of range");
    auto d = dst.row(idx[t]);
    const auto s = src.row(t);
    for (std::size_t c = 0; c < d.size(); ++c) d[c] += s[c];
  }
}

}  // namespace dgattn
