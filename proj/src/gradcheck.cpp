#include <algorithm>
#include <cmath>

#include "dgattn/numerics.hpp"
#include "dgattn/verify.hpp"

namespace dgattn {

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  require_shape(analytic.shape() == numeric.shape(), "relative error shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    if (std::isnan(err)) return err;
    worst = std::max(worst, err);
  }
  return worst;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double GradcheckReport::max_error() const {
  return std::max({rel_dq, rel_dk, rel_dv, dense_rel_dq, dense_rel_dk, dense_rel_dv});
}

namespace {

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

bool has_collision(const ForwardCache& cache) {
  for (const auto& hc : cache.heads) {
    std::vector<std::size_t> owners(cache.tokens, 0);
    for (std::size_t j = 0; j < hc.selection.groups; ++j) {
      if (hc.layout.assign.sizes[j] == 0) continue;
      for (auto id : hc.selection.row(j))
        if (++owners[id] > 1) return true;
    }
  }
  return false;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  DgAttentionConfig cfg;
  cfg.heads = o.heads;
  cfg.head_dim = o.head_dim;
  cfg.groups = o.groups;
  cfg.top_k = o.top_k;
  cfg.tile = o.tile;
  cfg.validate();
  const std::size_t L = o.tokens, width = cfg.width();

  GradcheckReport rep;
  for (std::size_t attempt = 0; attempt < o.max_retries; ++attempt) {
    const std::uint64_t seed = o.seed + attempt;
    Rng rng(seed);
    const Tensor xq = rng.normal_tensor({L, width});
    const Tensor xk = rng.normal_tensor({L, width});
    const Tensor xv = rng.normal_tensor({L, width});
    HeadCentroids cents = init_head_centroids(cfg, rng);
    const Tensor dy = o.zero_output_grad ? Tensor({L, width}) : rng.normal_tensor({L, width});

    rep.attempts = attempt + 1;
    rep.margin = routing_margin(xq, xk, cfg, cents);
    if (!(rep.margin > 10.0 * o.step)) continue;
    const auto fwd = dg_attention_forward(xq, xk, xv, cfg, cents);
    rep.collision = has_collision(fwd.cache);
    if (o.require_collision && !rep.collision) continue;

    rep.screened = true;
    rep.seed_used = seed;
    const GradBundle g = dg_attention_backward(fwd.cache, dy);

    auto loss = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
      HeadCentroids c = cents;
      return weighted_sum(dg_attention_forward(q, k, v, cfg, c).y, dy);
    };
    rep.rel_dq = max_relative_error(
        g.dq, numeric_gradient([&](const Tensor& t) { return loss(t, xk, xv); }, xq, o.step));
    rep.rel_dk = max_relative_error(
        g.dk, numeric_gradient([&](const Tensor& t) { return loss(xq, t, xv); }, xk, o.step));
    rep.rel_dv = max_relative_error(
        g.dv, numeric_gradient([&](const Tensor& t) { return loss(xq, xk, t); }, xv, o.step));

    if (o.compare_dense) {
      auto dense = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
        const std::size_t C = cfg.head_dim;
        double s = 0.0;
        for (std::size_t h = 0; h < cfg.heads; ++h)
          s += weighted_sum(dense_attention_oracle(slice_cols(q, h * C, C), slice_cols(k, h * C, C),
                                                   slice_cols(v, h * C, C)),
                            slice_cols(dy, h * C, C));
        return s;
      };
      rep.dense_rel_dq = max_relative_error(
          g.dq, numeric_gradient([&](const Tensor& t) { return dense(t, xk, xv); }, xq, o.step));
      rep.dense_rel_dk = max_relative_error(
          g.dk, numeric_gradient([&](const Tensor& t) { return dense(xq, t, xv); }, xk, o.step));
      rep.dense_rel_dv = max_relative_error(
          g.dv, numeric_gradient([&](const Tensor& t) { return dense(xq, xk, t); }, xv, o.step));
    }
    return rep;
  }
  return rep;
}

}  // namespace dgattn
