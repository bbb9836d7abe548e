#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dgattn/numerics.hpp"
#include "dgattn/verify.hpp"

namespace dgattn {

GroupedInstance random_grouped_instance(Rng& rng, const InstanceShape& s) {
  const std::size_t L = s.tokens, C = s.dim, G = s.groups, k = s.top_k;
  if (k == 0 || k > L) throw std::invalid_argument("instance needs 1 <= k <= L");
  if ((s.force_empty_group || s.force_collision) && G < 2)
    throw std::invalid_argument("empty-group / collision instances need G >= 2");

  // With an empty group forced, the last group never receives tokens.
  const std::size_t live = s.force_empty_group ? G - 1 : G;
  std::vector<std::size_t> group_of(L);
  for (auto& g : group_of) g = rng.index(live);

  std::vector<std::size_t> id(G * k);
  std::vector<std::size_t> pool(L);
  for (std::size_t j = 0; j < G; ++j) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t t = 0; t < k; ++t) std::swap(pool[t], pool[t + rng.index(L - t)]);
    std::copy_n(pool.begin(), k, id.begin() + j * k);
  }
  if (s.force_collision) {
    // Make group 1 also select group 0's first key.
    const std::size_t shared = id[0];
    auto row1 = id.begin() + k;
    if (std::find(row1, row1 + k, shared) == row1 + k) row1[rng.index(k)] = shared;
  }

  GroupedInstance inst;
  inst.layout = GroupedLayout(make_assignment(std::move(group_of), G));
  inst.selection = make_selection(G, k, std::move(id));
  inst.q_sorted = rng.normal_tensor({L, C});
  inst.keys = rng.normal_tensor({L, C});
  inst.values = rng.normal_tensor({L, C});
  inst.probs = softmax_rows(rng.normal_tensor({L, k}), 1.0);
  inst.grad_p = rng.normal_tensor({L, k});
  inst.grad_y = rng.normal_tensor({L, C});
  return inst;
}

Sabotage parse_sabotage(const std::string& name) {
  if (name.empty() || name == "none") return Sabotage::None;
  if (name == "form1") return Sabotage::Form1;
  if (name == "form2") return Sabotage::Form2;
  if (name == "form3") return Sabotage::Form3;
  if (name == "form4") return Sabotage::Form4;
  throw std::invalid_argument("unknown sabotage target '" + name + "' (expected form1..form4)");
}

namespace {

constexpr double kEquivalenceTol = 1e-12;
constexpr double kDenseTol = 1e-10;

void corrupt(Tensor& t) { t[0] += 1e-3; }

Tensor run_form(int form, const GroupedInstance& in, const TilePlan& plan, Sabotage sabotage) {
  Tensor out;
  switch (form) {
    case 1:
      out = form1(in.q_sorted, in.keys, in.selection, in.layout, plan);
      break;
    case 2:
      out = form2(in.probs, in.values, in.selection, in.layout, plan);
      break;
    case 3:
      out = form3(in.q_sorted, in.grad_p, in.selection, in.layout, plan);
      break;
    default:
      out = form4(in.probs, in.grad_y, in.selection, in.layout, plan);
      break;
  }
  if (static_cast<int>(sabotage) == form) corrupt(out);
  return out;
}

Tensor run_reference(int form, const GroupedInstance& in) {
  switch (form) {
    case 1:
      return reference::form1(in.q_sorted, in.keys, in.selection, in.layout);
    case 2:
      return reference::form2(in.probs, in.values, in.selection, in.layout);
    case 3:
      return reference::form3(in.q_sorted, in.grad_p, in.selection, in.layout);
    default:
      return reference::form4(in.probs, in.grad_y, in.selection, in.layout);
  }
}

void note(SuiteResult& r, double err, const std::string& property) {
  if (std::isnan(err) || err > r.max_error) r.max_error = err;
  if ((std::isnan(err) || err > r.tolerance) && r.failing.empty()) r.failing = property;
}

SuiteResult dense_degenerate_suite(Rng& rng) {
  SuiteResult r{"dense-degenerate", 0.0, kDenseTol, 0, {}};
  for (int n = 0; n < 20; ++n) {
    DgAttentionConfig cfg;
    cfg.heads = 1 + rng.index(2);
    cfg.head_dim = 2 + rng.index(6);
    cfg.groups = 1;
    const std::size_t L = 4 + rng.index(29);
    cfg.top_k = L;
    const std::size_t width = cfg.width();
    const Tensor q = rng.normal_tensor({L, width}), k = rng.normal_tensor({L, width}),
                 v = rng.normal_tensor({L, width});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    const Tensor y = dg_attention_forward(q, k, v, cfg, cents).y;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t C = cfg.head_dim;
      const Tensor dense = dense_attention_oracle(slice_cols(q, h * C, C), slice_cols(k, h * C, C),
                                                  slice_cols(v, h * C, C));
      note(r, max_abs_diff(slice_cols(y, h * C, C), dense), "forward(G=1,k=L) vs dense oracle");
    }
    ++r.cases;
  }
  return r;
}

SuiteResult grouped_oracle_suite(Rng& rng) {
  SuiteResult r{"grouped-oracle", 0.0, kEquivalenceTol, 0, {}};
  for (int n = 0; n < 20; ++n) {
    DgAttentionConfig cfg;
    cfg.heads = 1 + rng.index(3);
    cfg.head_dim = 2 + rng.index(6);
    cfg.groups = 1 + rng.index(6);
    const std::size_t L = 4 + rng.index(45);
    cfg.top_k = 1 + rng.index(L);
    cfg.tile = 1 + rng.index(20);
    const std::size_t width = cfg.width();
    const Tensor q = rng.normal_tensor({L, width}), k = rng.normal_tensor({L, width}),
                 v = rng.normal_tensor({L, width});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    const auto out = dg_attention_forward(q, k, v, cfg, cents);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t C = cfg.head_dim;
      const auto& hc = out.cache.heads[h];
      const Tensor oracle =
          grouped_attention_oracle(slice_cols(q, h * C, C), slice_cols(k, h * C, C),
                                   slice_cols(v, h * C, C), hc.layout.assign, hc.selection);
      note(r, max_abs_diff(slice_cols(out.y, h * C, C), oracle), "forward vs grouped oracle");
    }
    ++r.cases;
  }
  return r;
}

SuiteResult tile_sweep_suite(Rng& rng, Sabotage sabotage) {
  SuiteResult r{"tile-sweep", 0.0, kEquivalenceTol, 0, {}};
  const std::size_t tiles[] = {1, 2, 3, 5, 16, 64};
  for (int n = 0; n < 12; ++n) {
    InstanceShape s;
    s.tokens = 6 + rng.index(40);
    s.dim = 1 + rng.index(9);
    s.groups = 2 + rng.index(5);
    s.top_k = 1 + rng.index(s.tokens);
    s.force_empty_group = n % 3 == 0;
    s.force_collision = n % 2 == 0;
    const GroupedInstance in = random_grouped_instance(rng, s);
    for (int form = 1; form <= 4; ++form) {
      const Tensor ref = run_reference(form, in);
      for (auto T : tiles)
        for (auto mode : {TileMode::Split, TileMode::Masked}) {
          const Tensor got = run_form(form, in, make_tile_plan(in.layout, T, mode), sabotage);
          note(r, max_abs_diff(got, ref), "form" + std::to_string(form) + " tile sweep");
        }
    }
    ++r.cases;
  }
  return r;
}

SuiteResult scatter_add_suite(Rng& rng, Sabotage sabotage) {
  SuiteResult r{"scatter-add", 0.0, kEquivalenceTol, 0, {}};
  for (int n = 0; n < 10; ++n) {
    InstanceShape s;
    s.tokens = 5 + rng.index(20);
    s.dim = 1 + rng.index(6);
    s.groups = 2 + rng.index(3);
    s.top_k = 1 + rng.index(s.tokens);
    s.force_collision = true;
    const GroupedInstance in = random_grouped_instance(rng, s);
    const TilePlan plan = make_tile_plan(in.layout, 1 + rng.index(8));
    // Each group's contribution on its own, summed by hand.
    for (int form = 3; form <= 4; ++form) {
      Tensor expected({s.tokens, s.dim});
      const Tensor& left = form == 3 ? in.grad_p : in.probs;
      const Tensor& right = form == 3 ? in.q_sorted : in.grad_y;
      for (std::size_t j = 0; j < s.groups; ++j)
        for (std::size_t r0 = in.layout.span_begin(j); r0 < in.layout.span_end(j); ++r0)
          for (std::size_t t = 0; t < s.top_k; ++t)
            for (std::size_t c = 0; c < s.dim; ++c)
              expected.at(in.selection.row(j)[t], c) += left.at(r0, t) * right.at(r0, c);
      const Tensor got = run_form(form, in, plan, sabotage);
      note(r, max_abs_diff(got, expected), "form" + std::to_string(form) + " scatter-add");
    }
    ++r.cases;
  }
  return r;
}

}  // namespace

std::vector<SuiteResult> run_check_suites(std::uint64_t seed, Sabotage sabotage) {
  Rng rng(seed);
  std::vector<SuiteResult> out;
  out.push_back(dense_degenerate_suite(rng));
  out.push_back(grouped_oracle_suite(rng));
  out.push_back(tile_sweep_suite(rng, sabotage));
  out.push_back(scatter_add_suite(rng, sabotage));
  return out;
}

}  // namespace dgattn
