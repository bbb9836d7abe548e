#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dgattn/grouping.hpp"
#include "dgattn/selection.hpp"
#include "dgattn/tensor.hpp"

// Group-wise matrix products for attention where every query group attends to
// its own k selected keys. Queries are sorted so each group occupies a
// contiguous span of rows; work is cut into T x T tiles; key/value rows are
// gathered through the SelectionIndex while a tile is staged, so no per-group
// copy of K or V is ever materialized.
//
// The four products, per group j with sorted rows Q_j and selection id_j:
//   form1:  out_j = A_j * B[id_j]^T           (P = Q K^T,   dP^ = dY V^T)
//   form2:  out_j = A_j * B[id_j]             (Y = P V,     dQ = dP K)
//   form3:  dK[id_j] += dP_j^T * Q_j          (key gradient, scatter-add)
//   form4:  dV[id_j] += P_j^T * dY_j          (value gradient, scatter-add)
namespace dgattn {

/// GroupAssignment plus prefix offsets: group j owns sorted rows
/// [offset[j], offset[j + 1]).
struct GroupedLayout {
  GroupAssignment assign;
  std::vector<std::size_t> offset;  // G + 1 entries, offset[0] = 0, offset[G] = L

  GroupedLayout() = default;
  explicit GroupedLayout(GroupAssignment a);

  std::size_t tokens() const { return assign.tokens(); }
  std::size_t groups() const { return assign.groups(); }
  std::size_t span_begin(std::size_t j) const { return offset[j]; }
  std::size_t span_end(std::size_t j) const { return offset[j + 1]; }
};

enum class TileMode {
  /// Tiles start at each group's first row; a tile never crosses a group.
  Split,
  /// Tiles are aligned to multiples of T over the sorted rows; a tile that
  /// straddles groups is processed once per group with the other rows zeroed.
  Masked,
};

/// Rows [begin, end) of the sorted order, staged in a T-row buffer whose first
/// row is `origin`. Buffer rows outside [begin, end) are masked to zero.
struct RowSegment {
  std::size_t group;
  std::size_t origin;
  std::size_t begin;
  std::size_t end;

  std::size_t valid() const { return end - begin; }
};

/// Row segments for every non-empty group, in group order. Column tiles are
/// the output width cut into chunks of T at execution time.
struct TilePlan {
  std::size_t tile = 16;
  TileMode mode = TileMode::Split;
  std::vector<RowSegment> segments;
  std::vector<std::vector<std::size_t>> segments_of_group;  // indices into segments
};

/// One executed tile: output rows come from `segment`, columns start at
/// `col_start`.
struct TileDescriptor {
  std::size_t row_start;
  std::size_t col_start;
  std::size_t group;
};

inline constexpr std::size_t kDefaultTile = 16;

TilePlan make_tile_plan(const GroupedLayout& layout, std::size_t tile = kDefaultTile,
                        TileMode mode = TileMode::Split);

/// Expands a plan into the full tile list for a row-tiled product (forms 1/2)
/// with `out_cols` output columns.
std::vector<TileDescriptor> row_tile_descriptors(const TilePlan& plan, std::size_t out_cols);

/// Work counters. For forms 3/4 `gathered_bytes` counts the scatter writes.
struct KernelCounters {
  std::uint64_t tiles = 0;
  std::uint64_t row_slots = 0;    // staged buffer rows (tiles x T for forms 1/2)
  std::uint64_t masked_rows = 0;  // staged rows zeroed by the mask
  std::uint64_t gathered_bytes = 0;

  double masked_fraction() const {
    return row_slots ? static_cast<double>(masked_rows) / static_cast<double>(row_slots) : 0.0;
  }
  KernelCounters& operator+=(const KernelCounters& o);
  friend bool operator==(const KernelCounters&, const KernelCounters&) = default;
};

struct KernelOptions {
  /// Fill staging buffers with NaN before every load. Masking must overwrite
  /// every staged element, so outputs stay finite.
  bool poison_scratch = false;
  KernelCounters* counters = nullptr;
};

/// out[sorted_pos] = x[sort_perm[sorted_pos]].
Tensor sort_by_group(const Tensor& x, const GroupedLayout& layout);
/// Exact inverse of sort_by_group.
Tensor scatter_back(const Tensor& y_sorted, const GroupedLayout& layout);

/// out[r, t] = <a_sorted[r], b[id[j, t]]> for sorted row r in group j. L x k.
Tensor form1(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts = {});

/// out[r, :] = sum_t a_sorted[r, t] * b[id[j, t], :]. L x C.
Tensor form2(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts = {});

/// Key gradient: dK[id[j, t], :] += sum_{r in j} grad_p_sorted[r, t] * q_sorted[r, :].
/// Groups accumulate in ascending order. L x C (indexed like the keys).
Tensor form3(const Tensor& q_sorted, const Tensor& grad_p_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts = {});

/// Value gradient: dV[id[j, t], :] += sum_{r in j} p_sorted[r, t] * grad_y_sorted[r, :].
Tensor form4(const Tensor& p_sorted, const Tensor& grad_y_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts = {});

/// Serial per-group reference for the four forms. Each group's operands are
/// gathered explicitly and multiplied with the dense numerics routines, which
/// keeps it independent of the tiled kernels above.
namespace reference {
Tensor form1(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout);
Tensor form2(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout);
Tensor form3(const Tensor& q_sorted, const Tensor& grad_p_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout);
Tensor form4(const Tensor& p_sorted, const Tensor& grad_y_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout);
}  // namespace reference

}  // namespace dgattn
