#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dgattn/grouping.hpp"
#include "dgattn/selection.hpp"
#include "dgattn/tensor.hpp"

namespace dgattn {

struct VizOptions {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t dim = 8;
  std::size_t groups = 2;
  std::size_t top_k = 16;
  std::size_t bootstrap_iters = 10;
  std::uint64_t seed = 0;
};

struct VizResult {
  std::size_t height = 0, width = 0;
  std::vector<std::size_t> group_of;  // row-major over the grid
  SelectionIndex selection;
  Centroids centroids;
};

/// H x W x C grid: the left half of the columns clusters around a unit
/// direction u, the right half around -u.
Tensor two_blob_grid(std::size_t height, std::size_t width, std::size_t dim, Rng& rng);
/// 0 for the left blob, 1 for the right.
std::size_t blob_of(std::size_t col, std::size_t width);

/// Bootstraps centroids on the grid tokens, then runs one single-head
/// forward with queries = keys = values = tokens.
VizResult run_viz(const Tensor& grid, const VizOptions& opts);

/// Binary P5 image, one gray level per group spread over [0, 255].
std::string group_map_pgm(const std::vector<std::size_t>& group_of, std::size_t height,
                          std::size_t width, std::size_t groups);
std::string selection_to_json(const SelectionIndex& sel);

}  // namespace dgattn
