// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <sys/wait.h>

#include "dgattn/attention.hpp"
#include "dgattn/complexity.hpp"
#include "dgattn/model.hpp"
#include "dgattn/numerics.hpp"
#include "dgattn/toy_train.hpp"
#include "dgattn/verify.hpp"
#include "oracles.hpp"

using namespace dgattn;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.ok = false;
    o.detail += " (over time limit)";
  }
  if (!o.ok) ++failures;
  std::printf("%s  %2d  %-44s %7.2fs  %s\n", o.ok ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
  std::fflush(stdout);
}

char buf[256];
template <class... A>
std::string fmt(const char* f, A... a) {
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

DgAttentionConfig config(std::size_t H, std::size_t C, std::size_t G, std::size_t k) {
  DgAttentionConfig cfg;
  cfg.heads = H;
  cfg.head_dim = C;
  cfg.groups = G;
  cfg.top_k = k;
  return cfg;
}

double max_row_sum_error(const ForwardCache& cache) {
  double worst = 0.0;
  for (const auto& hc : cache.heads)
    for (std::size_t r = 0; r < hc.probs.rows(); ++r) {
      double s = 0.0;
      for (double p : hc.probs.row(r)) s += p;
      worst = std::max(worst, std::abs(s - 1.0));
    }
  return worst;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(i, c) = x.at(perm[i], c);
  return out;
}

Outcome complexity_ratios() {
  const std::size_t L[] = {3136, 784, 196};
  const double want[] = {0.05, 0.19, 0.75};
  std::string d;
  for (int i = 0; i < 3; ++i)
    for (std::size_t C : {32, 64, 128, 256}) {
      const double r = complexity(L[i], C, 48, 98).ratio;
      if (std::round(r * 100.0) / 100.0 != want[i]) return {false, fmt("L=%zu C=%zu ratio %.4f", L[i], C, r)};
      if (C == 64 && i == 0) d += fmt("%.4f", r);
      if (i > 0 && C == (i == 1 ? 128u : 256u)) d += fmt(" %.4f", r);
    }
  return {true, "ratios " + d + " -> 0.05 0.19 0.75 for C in {32,64,128,256}"};
}

Outcome degenerate_dense() {
  Rng rng(101);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t L = 4 + rng.index(61), C = 1 + rng.index(8);
    const DgAttentionConfig cfg = config(1, C, 1, L);
    const Tensor q = rng.normal_tensor({L, C}), k = rng.normal_tensor({L, C}), v = rng.normal_tensor({L, C});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    worst = std::max(worst, max_abs_diff(dg_attention_forward(q, k, v, cfg, cents).y, oracle::attention(q, k, v)));
  }
  return {worst <= 1e-10, fmt("100 instances, max abs err %.2e", worst)};
}

// Each query attends over its group's selected keys, computed with plain loops.
Tensor loop_grouped(const Tensor& q, const Tensor& k, const Tensor& v, const GroupAssignment& a,
                    const SelectionIndex& sel) {
  Tensor y(q.shape());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto ids = sel.row(a.group_of[i]);
    Tensor qi({1, q.cols()}), ks({ids.size(), k.cols()}), vs({ids.size(), v.cols()});
    for (std::size_t c = 0; c < q.cols(); ++c) qi.at(0, c) = q.at(i, c);
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t c = 0; c < k.cols(); ++c) {
        ks.at(t, c) = k.at(ids[t], c);
        vs.at(t, c) = v.at(ids[t], c);
      }
    const Tensor yi = oracle::attention(qi, ks, vs);
    for (std::size_t c = 0; c < v.cols(); ++c) y.at(i, c) = yi.at(0, c);
  }
  return y;
}

Outcome grouped_oracle() {
  Rng rng(202);
  double worst = 0.0, loops = 0.0;
  for (int n = 0; n < 200; ++n) {
    const std::size_t L = 1 + rng.index(128);
    DgAttentionConfig cfg = config(1 + rng.index(4), 1 + rng.index(8), 1 + rng.index(8), 1 + rng.index(L));
    cfg.tile = 1 + rng.index(32);
    cfg.tile_mode = n % 2 ? TileMode::Masked : TileMode::Split;
    const std::size_t W = cfg.width(), C = cfg.head_dim;
    const Tensor q = rng.normal_tensor({L, W}), k = rng.normal_tensor({L, W}), v = rng.normal_tensor({L, W});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    const auto out = dg_attention_forward(q, k, v, cfg, cents);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto& hc = out.cache.heads[h];
      const Tensor g = grouped_attention_oracle(slice_cols(q, h * C, C), slice_cols(k, h * C, C),
                                                slice_cols(v, h * C, C), hc.layout.assign, hc.selection);
      worst = std::max(worst, max_abs_diff(slice_cols(out.y, h * C, C), g));
      const Tensor l = loop_grouped(slice_cols(q, h * C, C), slice_cols(k, h * C, C), slice_cols(v, h * C, C),
                                    hc.layout.assign, hc.selection);
      loops = std::max(loops, max_abs_diff(slice_cols(out.y, h * C, C), l));
    }
  }
  return {worst <= 1e-12 && loops <= 1e-12,
          fmt("200 instances, max abs err %.2e vs grouped oracle, %.2e vs loop oracle", worst, loops)};
}

Outcome tile_sweep() {
  Rng rng(303);
  double worst = 0.0;
  std::size_t empty = 0, collide = 0;
  for (int n = 0; n < 50; ++n) {
    InstanceShape s;
    s.tokens = 2 + rng.index(100);
    s.dim = 1 + rng.index(12);
    s.groups = 2 + rng.index(7);
    s.top_k = 1 + rng.index(s.tokens);
    s.force_empty_group = n % 3 == 0;
    s.force_collision = n % 2 == 0;
    empty += s.force_empty_group;
    collide += s.force_collision;
    const GroupedInstance in = random_grouped_instance(rng, s);
    for (int f = 1; f <= 4; ++f) {
      auto run = [&](std::size_t T, TileMode m) {
        const TilePlan p = make_tile_plan(in.layout, T, m);
        switch (f) {
          case 1: return form1(in.q_sorted, in.keys, in.selection, in.layout, p);
          case 2: return form2(in.probs, in.values, in.selection, in.layout, p);
          case 3: return form3(in.q_sorted, in.grad_p, in.selection, in.layout, p);
          default: return form4(in.probs, in.grad_y, in.selection, in.layout, p);
        }
      };
      const Tensor base = run(1, TileMode::Split);
      for (std::size_t T : {1, 2, 3, 5, 16, 64})
        for (auto m : {TileMode::Split, TileMode::Masked}) worst = std::max(worst, max_abs_diff(run(T, m), base));
    }
  }
  return {worst <= 1e-12,
          fmt("50 instances (%zu with empty groups, %zu with shared keys), max diff %.2e", empty, collide, worst)};
}

Outcome gradients() {
  Rng rng(404);
  double worst = 0.0;
  std::size_t collisions = 0;
  for (int n = 0; n < 50; ++n) {
    GradcheckOptions o;
    o.tokens = 6 + rng.index(11);
    o.head_dim = 2 + rng.index(4);
    o.groups = 1 + rng.index(4);
    o.top_k = 1 + rng.index(o.tokens);
    o.heads = 1 + rng.index(2);
    o.tile = 1 + rng.index(8);
    o.seed = 1000 * (n + 1);
    if (n % 2 == 0) {
      o.groups = std::max<std::size_t>(o.groups, 2);
      o.top_k = std::max<std::size_t>(o.top_k, o.tokens / 2 + 1);
      o.require_collision = true;
    }
    const GradcheckReport r = run_gradcheck(o);
    if (!r.screened) return {false, fmt("instance %d found no margin-passing draw", n)};
    collisions += r.collision;
    worst = std::max(worst, r.max_error());
  }
  return {worst <= 1e-5, fmt("50 screened instances (%zu with shared keys), max rel err %.2e", collisions, worst)};
}

Outcome stochastic_and_equivariant() {
  Rng rng(505);
  double row_err = 0.0;
  std::size_t forwards = 0;
  for (int n = 0; n < 20; ++n) {
    const std::size_t L = 5 + rng.index(60);
    const DgAttentionConfig cfg = config(1 + rng.index(3), 1 + rng.index(6), 1 + rng.index(6), 1 + rng.index(L));
    const std::size_t W = cfg.width();
    const Tensor q = rng.normal_tensor({L, W}), k = rng.normal_tensor({L, W}), v = rng.normal_tensor({L, W});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = L - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    const auto a = dg_attention_forward(q, k, v, cfg, cents);
    const auto b = dg_attention_forward(permute_rows(q, perm), permute_rows(k, perm), permute_rows(v, perm), cfg, cents);
    row_err = std::max({row_err, max_row_sum_error(a.cache), max_row_sum_error(b.cache)});
    forwards += 2;
    if (!bitwise_equal(b.y, permute_rows(a.y, perm))) return {false, fmt("instance %d not bitwise equivariant", n)};
  }
  return {row_err <= 1e-12, fmt("20 permuted instances bitwise equal; %zu forwards, max |rowsum-1| %.2e", forwards, row_err)};
}

Outcome centroid_contract() {
  Rng rng(606);
  double norm_err = 0.0, fixed_err = 0.0, mean_err = 0.0, lloyd_err = 0.0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t L = 2 + rng.index(31), C = 1 + rng.index(6), G = 1 + rng.index(6);
    const Tensor q = rng.normal_tensor({L, C}, 1.0 + 5.0 * rng.uniform());
    const double tau = rng.uniform();
    Centroids c = init_centroids(G, C, rng, tau);
    const Centroids up = update_centroids(c, q, assign_groups(q, c));
    for (std::size_t j = 0; j < G; ++j) norm_err = std::max(norm_err, std::abs(l2_norm(up.e.row(j)) - 1.0));

    c.tau = 1.0;
    fixed_err = std::max(fixed_err, max_abs_diff(update_centroids(c, q, assign_groups(q, c)).e, c.e));

    c.tau = 0.0;
    const GroupAssignment a = assign_groups(q, c);
    const Centroids z = update_centroids(c, q, a);
    for (std::size_t j = 0; j < G; ++j) {
      if (a.sizes[j] == 0) continue;
      std::vector<double> m(C, 0.0);
      for (std::size_t i = 0; i < L; ++i)
        if (a.group_of[i] == j) {
          const auto u = oracle::unit(oracle::row(q, i));
          for (std::size_t d = 0; d < C; ++d) m[d] += u[d] / double(a.sizes[j]);
        }
      m = oracle::unit(m);
      for (std::size_t d = 0; d < C; ++d) mean_err = std::max(mean_err, std::abs(z.e.at(j, d) - m[d]));
    }
    lloyd_err = std::max(lloyd_err, max_abs_diff(z.e, oracle::lloyd_step(q, c.e)));
  }
  const bool ok = norm_err <= 1e-10 && fixed_err <= 1e-14 && mean_err <= 1e-14 && lloyd_err <= 1e-14;
  return {ok, fmt("norm %.1e, tau=1 %.1e, tau=0 mean %.1e, Lloyd %.1e", norm_err, fixed_err, mean_err, lloyd_err)};
}

Outcome accounting() {
  const DgtVariantConfig t = DgtVariantConfig::named("T");
  const double params = double(count_params(t)), flops = double(count_flops(t).total());
  const auto shapes = stage_shapes(t, 224, 224);
  const std::size_t tokens[] = {3136, 784, 196, 49}, channels[] = {64, 128, 256, 512};
  bool shapes_ok = shapes.size() == 4;
  for (std::size_t i = 0; shapes_ok && i < 4; ++i)
    shapes_ok = shapes[i].tokens == tokens[i] && shapes[i].channels == channels[i];
  const bool ok = std::abs(params - 24.09e6) <= 0.05 * 24.09e6 && std::abs(flops - 4.35e9) <= 0.15 * 4.35e9 && shapes_ok;
  return {ok, fmt("params %.2fM (24.09M +/-5%%), flops %.2fG (4.35G +/-15%%), stages %s", params / 1e6, flops / 1e9,
                  shapes_ok ? "3136/784/196/49 x 64/128/256/512" : "MISMATCH")};
}

Outcome block_identities() {
  Rng rng(707);
  double ident = 0.0, gsa = 0.0;
  for (int n = 0; n < 5; ++n) {
    const std::size_t H = 2 + rng.index(4), W = 2 + rng.index(4), heads = 1 + rng.index(3), C = heads * (1 + rng.index(4));
    const Tensor x = rng.normal_tensor({H, W, C});
    BlockParams p = BlockParams::init(C, 4, rng);
    const DgAttentionConfig full = config(heads, C / heads, 1, H * W);
    HeadCentroids cents = init_head_centroids(full, rng);
    gsa = std::max(gsa, max_abs_diff(gsa_block_forward(x, p, heads), dgt_block_forward(x, p, full, cents)));
    for (Tensor* t : {&p.cpe_w, &p.cpe_b, &p.proj_w, &p.proj_b, &p.ffn_w2, &p.ffn_b2}) *t = Tensor(t->shape());
    const DgAttentionConfig routed = config(heads, C / heads, 3, 1 + rng.index(H * W));
    HeadCentroids rc = init_head_centroids(routed, rng);
    ident = std::max({ident, max_abs_diff(dgt_block_forward(x, p, routed, rc), x), max_abs_diff(gsa_block_forward(x, p, heads), x)});
  }
  return {ident <= 1e-14 && gsa <= 1e-10, fmt("zero-branch identity %.1e, GSA vs DGA(G=1,k=L) %.1e", ident, gsa)};
}

int cli_exit(const std::string& args) {
  const int status = std::system((std::string(DGATTN_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome smoke() {
  ToyTrainOptions o;
  o.steps = 50;
  o.seed = 0;
  const ToyTrainResult a = run_toy_train(o), b = run_toy_train(o);
  const bool decreased = !a.diverged && a.loss.size() == 51 && a.loss.back() < a.loss.front();
  const bool identical = a.loss == b.loss;
  const int rc = cli_exit("check");
  return {decreased && identical && rc == 0,
          fmt("loss %.4f -> %.4f, traces %s, check exit %d", a.loss.front(), a.loss.back(),
              identical ? "bit-identical" : "DIFFER", rc)};
}

}  // namespace

int main() {
  criterion(1, "complexity ratio reproduction", 1.0, complexity_ratios);
  criterion(2, "degenerate-dense equivalence", 10.0, degenerate_dense);
  criterion(3, "grouped-oracle equivalence", 30.0, grouped_oracle);
  criterion(4, "tile-sweep invariance", 30.0, tile_sweep);
  criterion(5, "gradient correctness", 60.0, gradients);
  criterion(6, "row-stochasticity and permutation equivariance", 0.0, stochastic_and_equivariant);
  criterion(7, "centroid contract", 0.0, centroid_contract);
  criterion(8, "architecture accounting", 0.0, accounting);
  criterion(9, "block identities", 0.0, block_identities);
  criterion(10, "end-to-end smoke", 120.0, smoke);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures ? 1 : 0;
}
