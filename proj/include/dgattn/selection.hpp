#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dgattn/grouping.hpp"
#include "dgattn/tensor.hpp"

namespace dgattn {

/// Per-group top-k key indices, G x k, row-major. Each row is ordered by
/// score descending with ties in ascending key index.
struct SelectionIndex {
  std::size_t groups = 0;
  std::size_t k = 0;
  std::vector<std::size_t> id;  // G * k
  std::vector<double> scores;   // G * k

  std::span<const std::size_t> row(std::size_t j) const {
    return std::span<const std::size_t>(id).subspan(j * k, k);
  }
  double score(std::size_t j, std::size_t t) const { return scores[j * k + t]; }
};

/// Keys beyond this count are ranked with a partial sort instead of a full one.
inline constexpr std::size_t kFullSortLimit = 4096;

/// Top-k keys per centroid by raw dot product <e_j, key_i>.
/// Throws std::invalid_argument unless 1 <= k <= L.
SelectionIndex select_topk(const Centroids& centroids, const Tensor& keys, std::size_t k);

/// Builds an index from explicit rows (scores zero). Used when routing is
/// supplied externally, e.g. tests that force duplicate selections.
SelectionIndex make_selection(std::size_t groups, std::size_t k, std::vector<std::size_t> id);

/// out[t] = src[idx[t]]. Throws std::out_of_range on a bad index.
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx);

/// dst[idx[t]] += src[t], t ascending.
void scatter_add_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> idx);

}  // namespace dgattn
