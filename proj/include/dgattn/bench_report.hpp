#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dgattn/grouped_matmul.hpp"

namespace dgattn {

struct BenchOptions {
  std::size_t tokens = 784;
  std::size_t dim = 32;
  std::size_t groups = 48;
  std::size_t top_k = 98;
  std::vector<std::size_t> tiles = {8, 16, 32};
  std::vector<TileMode> modes = {TileMode::Split, TileMode::Masked};
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  /// Explicit group sizes (must sum to tokens); random routing when empty.
  std::vector<std::size_t> group_sizes;
};

struct BenchRow {
  std::size_t tile = 0;
  TileMode mode = TileMode::Split;
  KernelCounters counters;  // one pass of forms 1-4
  std::uint64_t analytic_tiles = 0;
  double tiled_ms = 0.0;      // best of repeats
  double reference_ms = 0.0;  // best of repeats
};

/// Tiles forms 1-4 execute for this layout, counted from the group spans
/// alone.
std::uint64_t analytic_tile_count(const GroupedLayout& layout, std::size_t tile, TileMode mode,
                                  std::size_t top_k, std::size_t dim);

std::vector<BenchRow> run_bench(const BenchOptions& opts);

const char* tile_mode_name(TileMode mode);
TileMode parse_tile_mode(const std::string& name);

std::string bench_json(const std::vector<BenchRow>& rows);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace dgattn
