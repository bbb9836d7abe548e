#include "dgattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dgattn/numerics.hpp"

namespace dgattn {

void DgAttentionConfig::validate() const {
  if (heads == 0 || head_dim == 0 || groups == 0 || top_k == 0 || tile == 0)
    throw std::invalid_argument("attention config extents (H, C, G, k, T) must all be >= 1");
}

HeadCentroids init_head_centroids(const DgAttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  HeadCentroids c;
  c.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h)
    c.push_back(init_centroids(cfg.groups, cfg.head_dim, rng, cfg.tau));
  return c;
}

namespace {

void check_inputs(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                  const DgAttentionConfig& cfg, const HeadCentroids& centroids) {
  cfg.validate();
  const std::size_t width = cfg.width();
  for (const Tensor* t : {&xq, &xk, &xv})
    require_shape(t->rank() == 2 && t->cols() == width,
                  "attention inputs must be L x (H*C) = L x " + std::to_string(width) +
                      ", got " + shape_string(t->shape()));
  require_shape(xk.rows() == xq.rows() && xv.rows() == xq.rows(),
                "queries, keys and values must have the same token count");
  require_shape(centroids.size() == cfg.heads, "need one centroid set per head");
  for (const auto& c : centroids)
    require_shape(c.groups() == cfg.groups && c.dim() == cfg.head_dim,
                  "centroids do not match (G, C) of the config");
  if (cfg.top_k > xq.rows())
    throw std::invalid_argument("top_k (" + std::to_string(cfg.top_k) +
                                ") exceeds token count (" + std::to_string(xq.rows()) + ")");
}

}  // namespace

AttentionOutput dg_attention_forward(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                                     const DgAttentionConfig& cfg, HeadCentroids& centroids,
                                     KernelCounters* counters) {
  check_inputs(xq, xk, xv, cfg, centroids);
  const std::size_t L = xq.rows(), C = cfg.head_dim;
  const double scale = std::sqrt(static_cast<double>(C));
  const KernelOptions opts{false, counters};

  AttentionOutput out{Tensor({L, cfg.width()}), ForwardCache{cfg, L, {}}};
  out.cache.heads.resize(cfg.heads);
  std::vector<Tensor> head_queries(cfg.heads);

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    HeadCache& hc = out.cache.heads[h];
    Tensor q = slice_cols(xq, h * C, C);
    hc.keys = slice_cols(xk, h * C, C);
    hc.values = slice_cols(xv, h * C, C);

    hc.layout = GroupedLayout(assign_groups(q, centroids[h]));
    hc.selection = select_topk(centroids[h], hc.keys, cfg.top_k);
    hc.plan = make_tile_plan(hc.layout, cfg.tile, cfg.tile_mode);

    hc.q_sorted = sort_by_group(q, hc.layout);
    hc.logits = form1(hc.q_sorted, hc.keys, hc.selection, hc.layout, hc.plan, opts);
    if (cfg.literal_appendix_scaling) {
      hc.softmax = softmax_rows(hc.logits, 1.0);
      hc.probs = (1.0 / scale) * hc.softmax;
    } else {
      hc.softmax = softmax_rows(hc.logits, scale);
      hc.probs = hc.softmax;
    }
    const Tensor y_sorted = form2(hc.probs, hc.values, hc.selection, hc.layout, hc.plan, opts);
    assign_cols(out.y, scatter_back(y_sorted, hc.layout), h * C);
    head_queries[h] = std::move(q);
  }

  if (cfg.train_mode) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Centroids c = centroids[h];
      c.tau = cfg.tau;
      centroids[h] = update_centroids(c, head_queries[h], out.cache.heads[h].layout.assign);
    }
  }
  return out;
}

GradBundle dg_attention_backward(const ForwardCache& cache, const Tensor& dy,
                                 KernelCounters* counters) {
  const DgAttentionConfig& cfg = cache.cfg;
  if (cache.heads.size() != cfg.heads || cache.tokens == 0)
    throw ContractError("backward called with an empty or inconsistent forward cache");
  if (dy.rank() != 2 || dy.rows() != cache.tokens || dy.cols() != cfg.width())
    throw ContractError("output gradient " + shape_string(dy.shape()) +
                        " does not match the cached forward (" + std::to_string(cache.tokens) +
                        " x " + std::to_string(cfg.width()) + ")");
  const std::size_t L = cache.tokens, C = cfg.head_dim;
  const double scale = std::sqrt(static_cast<double>(C));
  const KernelOptions opts{false, counters};

  GradBundle g{Tensor({L, cfg.width()}), Tensor({L, cfg.width()}), Tensor({L, cfg.width()})};
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const HeadCache& hc = cache.heads[h];
    if (hc.q_sorted.rows() != L) throw ContractError("head cache token count is stale");
    const Tensor dy_sorted = sort_by_group(slice_cols(dy, h * C, C), hc.layout);

    const Tensor dprobs = form1(dy_sorted, hc.values, hc.selection, hc.layout, hc.plan, opts);
    const Tensor dv = form4(hc.probs, dy_sorted, hc.selection, hc.layout, hc.plan, opts);
    Tensor dlogits = cfg.literal_appendix_scaling
                         ? softmax_rows_backward(hc.softmax, (1.0 / scale) * dprobs, 1.0)
                         : softmax_rows_backward(hc.softmax, dprobs, scale);
    const Tensor dq_sorted = form2(dlogits, hc.keys, hc.selection, hc.layout, hc.plan, opts);
    const Tensor dk = form3(hc.q_sorted, dlogits, hc.selection, hc.layout, hc.plan, opts);

    assign_cols(g.dq, scatter_back(dq_sorted, hc.layout), h * C);
    assign_cols(g.dk, dk, h * C);
    assign_cols(g.dv, dv, h * C);
  }
  return g;
}

Tensor dense_attention_oracle(const Tensor& xq, const Tensor& xk, const Tensor& xv) {
  require_shape(xq.cols() == xk.cols() && xk.rows() == xv.rows(), "dense attention shape mismatch");
  const double scale = std::sqrt(static_cast<double>(xq.cols()));
  return matmul(softmax_rows(matmul_nt(xq, xk), scale), xv);
}

Tensor grouped_attention_oracle(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                                const GroupAssignment& assignment,
                                const SelectionIndex& selection) {
  require_shape(assignment.tokens() == xq.rows(), "assignment does not cover the queries");
  require_shape(selection.groups == assignment.groups(), "selection/assignment group mismatch");
  Tensor y({xq.rows(), xv.cols()});
  for (std::size_t j = 0; j < assignment.groups(); ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < assignment.tokens(); ++i)
      if (assignment.group_of[i] == j) members.push_back(i);
    if (members.empty()) continue;
    const Tensor yj = dense_attention_oracle(gather_rows(xq, members),
                                             gather_rows(xk, selection.row(j)),
                                             gather_rows(xv, selection.row(j)));
    for (std::size_t m = 0; m < members.size(); ++m)
      std::copy(yj.row(m).begin(), yj.row(m).end(), y.row(members[m]).begin());
  }
  return y;
}

double routing_margin(const Tensor& xq, const Tensor& xk, const DgAttentionConfig& cfg,
                      const HeadCentroids& centroids) {
  check_inputs(xq, xk, xk, cfg, centroids);
  const std::size_t L = xq.rows(), C = cfg.head_dim, k = cfg.top_k;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor q = slice_cols(xq, h * C, C);
    const Tensor keys = slice_cols(xk, h * C, C);
    if (cfg.groups > 1) {
      const Tensor sim = centroid_similarity(q, centroids[h]);
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(sim.row(i).begin(), sim.row(i).end());
        std::partial_sort(s.begin(), s.begin() + 2, s.end(), std::greater<>());
        margin = std::min(margin, s[0] - s[1]);
      }
    }
    if (k < L) {
      for (std::size_t j = 0; j < cfg.groups; ++j) {
        std::vector<double> s(L);
        for (std::size_t i = 0; i < L; ++i) s[i] = dot(centroids[h].e.row(j), keys.row(i));
        std::sort(s.begin(), s.end(), std::greater<>());
        margin = std::min(margin, s[k - 1] - s[k]);
      }
    }
  }
  return margin;
}

}  // namespace dgattn
