#include "dgattn/grouped_matmul.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace dgattn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void check_operands(const char* form, const Tensor& a_sorted, std::size_t a_cols,
                    const Tensor& b, std::size_t b_cols, const SelectionIndex& sel,
                    const GroupedLayout& layout) {
  const std::string f(form);
  require_shape(a_sorted.rank() == 2 && a_sorted.rows() == layout.tokens(),
                f + ": sorted operand must have one row per token");
  require_shape(a_sorted.cols() == a_cols, f + ": sorted operand has the wrong width");
  require_shape(b.rank() == 2 && b.cols() == b_cols, f + ": indexed operand has the wrong width");
  require_shape(sel.groups == layout.groups(), f + ": selection group count differs from layout");
  for (auto i : sel.id)
    if (i >= b.rows()) throw std::out_of_range(f + ": selection index out of range");
}

// Stages rows [seg.begin, seg.end) of `src`, columns [c0, c0 + T), into a
// T x T buffer at rows seg.origin.. . Everything else becomes zero.
void stage_rows(std::vector<double>& buf, std::size_t T, const Tensor& src,
                const RowSegment& seg, std::size_t c0) {
  const std::size_t width = src.cols();
  const std::size_t n = std::min(T, width - c0);
  for (std::size_t lr = 0; lr < T; ++lr) {
    double* dst = buf.data() + lr * T;
    const std::size_t r = seg.origin + lr;
    if (r < seg.begin || r >= seg.end) {
      std::fill_n(dst, T, 0.0);
      continue;
    }
    const double* s = src.row(r).data() + c0;
    std::copy_n(s, n, dst);
    std::fill(dst + n, dst + T, 0.0);
  }
}

}  // namespace

GroupedLayout::GroupedLayout(GroupAssignment a) : assign(std::move(a)) {
  offset.assign(assign.groups() + 1, 0);
  for (std::size_t j = 0; j < assign.groups(); ++j) offset[j + 1] = offset[j] + assign.sizes[j];
}

KernelCounters& KernelCounters::operator+=(const KernelCounters& o) {
  tiles += o.tiles;
  row_slots += o.row_slots;
  masked_rows += o.masked_rows;
  gathered_bytes += o.gathered_bytes;
  return *this;
}

TilePlan make_tile_plan(const GroupedLayout& layout, std::size_t tile, TileMode mode) {
  if (tile == 0) throw std::invalid_argument("tile size must be positive");
  TilePlan plan;
  plan.tile = tile;
  plan.mode = mode;
  const std::size_t G = layout.groups();
  plan.segments_of_group.resize(G);
  for (std::size_t j = 0; j < G; ++j) {
    const std::size_t b = layout.span_begin(j), e = layout.span_end(j);
    if (b == e) continue;
    const std::size_t first = mode == TileMode::Split ? b : b - b % tile;
    for (std::size_t origin = first; origin < e; origin += tile) {
      plan.segments_of_group[j].push_back(plan.segments.size());
      plan.segments.push_back({j, origin, std::max(origin, b), std::min(origin + tile, e)});
    }
  }
  return plan;
}

std::vector<TileDescriptor> row_tile_descriptors(const TilePlan& plan, std::size_t out_cols) {
  std::vector<TileDescriptor> tiles;
  for (const auto& s : plan.segments)
    for (std::size_t c0 = 0; c0 < out_cols; c0 += plan.tile) tiles.push_back({s.begin, c0, s.group});
  return tiles;
}

Tensor sort_by_group(const Tensor& x, const GroupedLayout& layout) {
  require_shape(x.rank() == 2 && x.rows() == layout.tokens(), "sort_by_group row count mismatch");
  Tensor out(x.shape());
  for (std::size_t s = 0; s < layout.tokens(); ++s) {
    const auto src = x.row(layout.assign.sort_perm[s]);
    std::copy(src.begin(), src.end(), out.row(s).begin());
  }
  return out;
}

Tensor scatter_back(const Tensor& y_sorted, const GroupedLayout& layout) {
  require_shape(y_sorted.rank() == 2 && y_sorted.rows() == layout.tokens(),
                "scatter_back row count mismatch");
  Tensor out(y_sorted.shape());
  for (std::size_t s = 0; s < layout.tokens(); ++s) {
    const auto src = y_sorted.row(s);
    std::copy(src.begin(), src.end(), out.row(layout.assign.sort_perm[s]).begin());
  }
  return out;
}

Tensor form1(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts) {
  const std::size_t C = b.cols(), k = sel.k, T = plan.tile;
  check_operands("form1", a_sorted, C, b, C, sel, layout);
  Tensor out({layout.tokens(), k});
  const std::size_t col_tiles = ceil_div(k, T);
  const auto n_tiles = static_cast<std::ptrdiff_t>(plan.segments.size() * col_tiles);
  std::uint64_t tiles = 0, slots = 0, masked = 0, bytes = 0;

#pragma omp parallel reduction(+ : tiles, slots, masked, bytes)
  {
    std::vector<double> as(T * T), bs(T * T), acc(T * T);
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t w = 0; w < n_tiles; ++w) {
      const RowSegment& seg = plan.segments[w / col_tiles];
      const std::size_t t0 = (w % col_tiles) * T;
      const std::size_t nt = std::min(T, k - t0);
      const auto ids = sel.row(seg.group);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t c0 = 0; c0 < C; c0 += T) {
        const std::size_t nc = std::min(T, C - c0);
        if (opts.poison_scratch) {
          std::fill(as.begin(), as.end(), kNaN);
          std::fill(bs.begin(), bs.end(), kNaN);
        }
        stage_rows(as, T, a_sorted, seg, c0);
        // Gather the selected rows of b straight from the full matrix.
        for (std::size_t lt = 0; lt < T; ++lt) {
          double* dst = bs.data() + lt * T;
          if (lt >= nt) {
            std::fill_n(dst, T, 0.0);
            continue;
          }
          std::copy_n(b.row(ids[t0 + lt]).data() + c0, nc, dst);
          std::fill(dst + nc, dst + T, 0.0);
          bytes += nc * sizeof(double);
        }
        for (std::size_t lr = 0; lr < T; ++lr) {
          const double* ar = as.data() + lr * T;
          double* accr = acc.data() + lr * T;
          for (std::size_t lt = 0; lt < T; ++lt) {
            const double* br = bs.data() + lt * T;
            double s = accr[lt];
            for (std::size_t x = 0; x < T; ++x) s += ar[x] * br[x];
            accr[lt] = s;
          }
        }
      }
      for (std::size_t r = seg.begin; r < seg.end; ++r)
        std::copy_n(acc.data() + (r - seg.origin) * T, nt, out.row(r).data() + t0);
      ++tiles;
      slots += T;
      masked += T - seg.valid();
    }
  }
  if (opts.counters) *opts.counters += {tiles, slots, masked, bytes};
  return out;
}

Tensor form2(const Tensor& a_sorted, const Tensor& b, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts) {
  const std::size_t C = b.cols(), k = sel.k, T = plan.tile;
  check_operands("form2", a_sorted, k, b, C, sel, layout);
  Tensor out({layout.tokens(), C});
  const std::size_t col_tiles = ceil_div(C, T);
  const auto n_tiles = static_cast<std::ptrdiff_t>(plan.segments.size() * col_tiles);
  std::uint64_t tiles = 0, slots = 0, masked = 0, bytes = 0;

#pragma omp parallel reduction(+ : tiles, slots, masked, bytes)
  {
    std::vector<double> as(T * T), bs(T * T), acc(T * T);
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t w = 0; w < n_tiles; ++w) {
      const RowSegment& seg = plan.segments[w / col_tiles];
      const std::size_t c0 = (w % col_tiles) * T;
      const std::size_t nc = std::min(T, C - c0);
      const auto ids = sel.row(seg.group);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t0 = 0; t0 < k; t0 += T) {
        const std::size_t nt = std::min(T, k - t0);
        if (opts.poison_scratch) {
          std::fill(as.begin(), as.end(), kNaN);
          std::fill(bs.begin(), bs.end(), kNaN);
        }
        stage_rows(as, T, a_sorted, seg, t0);
        // Rows of b (not columns, as in form1) follow the selection.
        for (std::size_t x = 0; x < T; ++x) {
          double* dst = bs.data() + x * T;
          if (x >= nt) {
            std::fill_n(dst, T, 0.0);
            continue;
          }
          std::copy_n(b.row(ids[t0 + x]).data() + c0, nc, dst);
          std::fill(dst + nc, dst + T, 0.0);
          bytes += nc * sizeof(double);
        }
        for (std::size_t lr = 0; lr < T; ++lr) {
          const double* ar = as.data() + lr * T;
          double* accr = acc.data() + lr * T;
          for (std::size_t x = 0; x < T; ++x) {
            const double av = ar[x];
            const double* br = bs.data() + x * T;
            for (std::size_t lc = 0; lc < T; ++lc) accr[lc] += av * br[lc];
          }
        }
      }
      for (std::size_t r = seg.begin; r < seg.end; ++r)
        std::copy_n(acc.data() + (r - seg.origin) * T, nc, out.row(r).data() + c0);
      ++tiles;
      slots += T;
      masked += T - seg.valid();
    }
  }
  if (opts.counters) *opts.counters += {tiles, slots, masked, bytes};
  return out;
}

namespace {

// Shared body of forms 3 and 4: out[id[j, t], :] += sum_r a[r, t] * b[r, :]
// over the rows r of group j. Output tiles cover the per-group k x C block;
// the reduction walks the group's row segments in ascending order. Groups run
// one after another so colliding selections accumulate in group order; tiles
// inside a group write distinct rows and run in parallel.
Tensor transposed_scatter_product(const char* form, const Tensor& a_sorted, const Tensor& b_sorted,
                                  const SelectionIndex& sel, const GroupedLayout& layout,
                                  const TilePlan& plan, const KernelOptions& opts,
                                  std::size_t out_rows) {
  const std::size_t k = sel.k, T = plan.tile;
  const std::string f(form);
  require_shape(a_sorted.rank() == 2 && a_sorted.rows() == layout.tokens() && a_sorted.cols() == k,
                f + ": gradient/probability operand must be L x k");
  require_shape(b_sorted.rank() == 2 && b_sorted.rows() == layout.tokens(),
                f + ": sorted operand must have one row per token");
  require_shape(sel.groups == layout.groups(), f + ": selection group count differs from layout");
  for (auto i : sel.id)
    if (i >= out_rows) throw std::out_of_range(f + ": selection index out of range");
  const std::size_t C = b_sorted.cols();
  Tensor out({out_rows, C});
  const std::size_t t_tiles = ceil_div(k, T), c_tiles = ceil_div(C, T);
  const auto n_tiles = static_cast<std::ptrdiff_t>(t_tiles * c_tiles);
  std::uint64_t tiles = 0, slots = 0, masked = 0, bytes = 0;

  for (std::size_t j = 0; j < layout.groups(); ++j) {
    const auto& segs = plan.segments_of_group[j];
    if (segs.empty()) continue;
    const auto ids = sel.row(j);
#pragma omp parallel reduction(+ : tiles, slots, masked, bytes)
    {
      std::vector<double> as(T * T), bs(T * T), acc(T * T);
#pragma omp for schedule(static)
      for (std::ptrdiff_t w = 0; w < n_tiles; ++w) {
        const std::size_t t0 = (w / c_tiles) * T, c0 = (w % c_tiles) * T;
        const std::size_t nt = std::min(T, k - t0), nc = std::min(T, C - c0);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (auto si : segs) {
          const RowSegment& seg = plan.segments[si];
          if (opts.poison_scratch) {
            std::fill(as.begin(), as.end(), kNaN);
            std::fill(bs.begin(), bs.end(), kNaN);
          }
          stage_rows(as, T, a_sorted, seg, t0);
          stage_rows(bs, T, b_sorted, seg, c0);
          for (std::size_t x = 0; x < T; ++x) {
            const double* ar = as.data() + x * T;
            const double* br = bs.data() + x * T;
            for (std::size_t lt = 0; lt < T; ++lt) {
              const double av = ar[lt];
              double* accr = acc.data() + lt * T;
              for (std::size_t lc = 0; lc < T; ++lc) accr[lc] += av * br[lc];
            }
          }
          slots += T;
          masked += T - seg.valid();
        }
        // Written straight into the global rows named by the selection.
        for (std::size_t lt = 0; lt < nt; ++lt) {
          double* dst = out.row(ids[t0 + lt]).data() + c0;
          const double* src = acc.data() + lt * T;
          for (std::size_t lc = 0; lc < nc; ++lc) dst[lc] += src[lc];
          bytes += nc * sizeof(double);
        }
        ++tiles;
      }
    }
  }
  if (opts.counters) *opts.counters += {tiles, slots, masked, bytes};
  return out;
}

}  // namespace

Tensor form3(const Tensor& q_sorted, const Tensor& grad_p_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts) {
  return transposed_scatter_product("form3", grad_p_sorted, q_sorted, sel, layout, plan, opts,
                                    layout.tokens());
}

Tensor form4(const Tensor& p_sorted, const Tensor& grad_y_sorted, const SelectionIndex& sel,
             const GroupedLayout& layout, const TilePlan& plan, KernelOptions opts) {
  return transposed_scatter_product("form4", p_sorted, grad_y_sorted, sel, layout, plan, opts,
                                    layout.tokens());
}

}  // namespace dgattn
