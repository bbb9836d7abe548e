#include "dgattn/bench_report.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dgattn/verify.hpp"
#include "json.hpp"

namespace dgattn {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

template <class F>
double best_ms(std::size_t repeats, F&& f) {
  double best = 0.0;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
    if (r == 0 || dt.count() < best) best = dt.count();
  }
  return best;
}

GroupedInstance bench_instance(const BenchOptions& o) {
  Rng rng(o.seed);
  InstanceShape s;
  s.tokens = o.tokens;
  s.dim = o.dim;
  s.groups = o.groups;
  s.top_k = o.top_k;
  GroupedInstance in = random_grouped_instance(rng, s);
  if (!o.group_sizes.empty()) {
    if (o.group_sizes.size() != o.groups ||
        std::accumulate(o.group_sizes.begin(), o.group_sizes.end(), std::size_t{0}) != o.tokens)
      throw std::invalid_argument("group sizes must list G values summing to L");
    std::vector<std::size_t> group_of;
    for (std::size_t j = 0; j < o.groups; ++j) group_of.insert(group_of.end(), o.group_sizes[j], j);
    in.layout = GroupedLayout(make_assignment(std::move(group_of), o.groups));
  }
  return in;
}

}  // namespace

std::uint64_t analytic_tile_count(const GroupedLayout& layout, std::size_t T, TileMode mode,
                                  std::size_t k, std::size_t C) {
  std::uint64_t row_tiles = 0, live = 0;
  for (std::size_t j = 0; j < layout.groups(); ++j) {
    const std::size_t b = layout.span_begin(j), e = layout.span_end(j);
    if (b == e) continue;
    ++live;
    row_tiles += mode == TileMode::Split ? ceil_div(e - b, T) : (e - 1) / T - b / T + 1;
  }
  return row_tiles * ceil_div(k, T) + row_tiles * ceil_div(C, T) +
         2 * live * ceil_div(k, T) * ceil_div(C, T);
}

std::vector<BenchRow> run_bench(const BenchOptions& o) {
  const GroupedInstance in = bench_instance(o);
  std::vector<BenchRow> rows;
  for (auto T : o.tiles)
    for (auto mode : o.modes) {
      BenchRow row;
      row.tile = T;
      row.mode = mode;
      const TilePlan plan = make_tile_plan(in.layout, T, mode);
      row.analytic_tiles = analytic_tile_count(in.layout, T, mode, o.top_k, o.dim);
      auto tiled = [&](KernelCounters* c) {
        KernelOptions ko;
        ko.counters = c;
        form1(in.q_sorted, in.keys, in.selection, in.layout, plan, ko);
        form2(in.probs, in.values, in.selection, in.layout, plan, ko);
        form3(in.q_sorted, in.grad_p, in.selection, in.layout, plan, ko);
        form4(in.probs, in.grad_y, in.selection, in.layout, plan, ko);
      };
      tiled(&row.counters);
      row.tiled_ms = best_ms(o.repeats, [&] { tiled(nullptr); });
      row.reference_ms = best_ms(o.repeats, [&] {
        reference::form1(in.q_sorted, in.keys, in.selection, in.layout);
        reference::form2(in.probs, in.values, in.selection, in.layout);
        reference::form3(in.q_sorted, in.grad_p, in.selection, in.layout);
        reference::form4(in.probs, in.grad_y, in.selection, in.layout);
      });
      rows.push_back(row);
    }
  return rows;
}

const char* tile_mode_name(TileMode mode) { return mode == TileMode::Split ? "split" : "masked"; }

TileMode parse_tile_mode(const std::string& name) {
  if (name == "split") return TileMode::Split;
  if (name == "masked") return TileMode::Masked;
  throw std::invalid_argument("unknown tile mode '" + name + "' (expected split or masked)");
}

std::string bench_json(const std::vector<BenchRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"tile", r.tile},
                   {"mode", tile_mode_name(r.mode)},
                   {"tiles", r.counters.tiles},
                   {"analytic_tiles", r.analytic_tiles},
                   {"row_slots", r.counters.row_slots},
                   {"masked_rows", r.counters.masked_rows},
                   {"masked_fraction", r.counters.masked_fraction()},
                   {"gathered_bytes", r.counters.gathered_bytes},
                   {"tiled_ms", r.tiled_ms},
                   {"reference_ms", r.reference_ms}});
  return arr.dump(2);
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "tile,mode,tiles,analytic_tiles,row_slots,masked_rows,masked_fraction,gathered_bytes,"
        "tiled_ms,reference_ms\n";
  for (const auto& r : rows)
    os << r.tile << ',' << tile_mode_name(r.mode) << ',' << r.counters.tiles << ','
       << r.analytic_tiles << ',' << r.counters.row_slots << ',' << r.counters.masked_rows << ','
       << r.counters.masked_fraction() << ',' << r.counters.gathered_bytes << ',' << r.tiled_ms
       << ',' << r.reference_ms << '\n';
  return os.str();
}

}  // namespace dgattn
