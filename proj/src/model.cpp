#include "dgattn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dgattn/complexity.hpp"

namespace dgattn {

DgtVariantConfig DgtVariantConfig::named(const std::string& variant) {
  std::string v = variant;
  if (v.rfind("DGT-", 0) == 0 || v.rfind("dgt-", 0) == 0) v = v.substr(4);
  struct Widths {
    std::size_t stem;
    std::size_t channels[4];
    std::size_t heads[4];
  };
  Widths w{};
  if (v == "T" || v == "t")
    w = {32, {64, 128, 256, 512}, {2, 4, 8, 16}};
  else if (v == "S" || v == "s")
    w = {48, {96, 192, 384, 768}, {3, 6, 12, 24}};
  else if (v == "B" || v == "b")
    w = {64, {128, 256, 512, 1024}, {4, 8, 16, 32}};
  else
    throw std::invalid_argument("unknown DGT variant '" + variant + "' (expected T, S or B)");

  DgtVariantConfig cfg;
  cfg.name = "DGT-" + std::string(1, static_cast<char>(std::toupper(v[0])));
  cfg.stem_channels = w.stem;
  const std::size_t depths[4] = {1, 2, 17, 2};
  for (std::size_t i = 0; i < 4; ++i)
    cfg.stages.push_back({w.channels[i], depths[i], w.heads[i], 48, 98, 4, i == 3});
  const bool larger = cfg.name != "DGT-T";
  cfg.post_norm = larger;
  cfg.cosine_attention = larger;
  return cfg;
}

void DgtVariantConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0 || fc_dim == 0 || num_classes == 0 || tile == 0)
    throw std::invalid_argument("variant extents must be >= 1");
  if (stages.empty()) throw std::invalid_argument("variant needs at least one stage");
  for (const auto& s : stages) {
    if (s.channels == 0 || s.heads == 0 || s.groups == 0 || s.top_k == 0 || s.expand_ratio == 0)
      throw std::invalid_argument("stage extents must be >= 1");
    if (s.channels % s.heads != 0)
      throw std::invalid_argument("stage channels must be divisible by the head count");
  }
}

namespace {

Tensor scaled_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  return rng.normal_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor flatten_grid(const Tensor& x) { return x.reshaped({x.dim(0) * x.dim(1), x.dim(2)}); }

Tensor to_grid(const Tensor& x, std::size_t h, std::size_t w) {
  return x.reshaped({h, w, x.cols()});
}

DgAttentionConfig stage_attention(const StageConfig& s, std::size_t tile) {
  DgAttentionConfig a;
  a.heads = s.heads;
  a.head_dim = s.channels / s.heads;
  a.groups = s.groups;
  a.top_k = s.top_k;
  a.tile = tile;
  return a;
}

}  // namespace

BlockParams BlockParams::init(std::size_t C, std::size_t R, Rng& rng) {
  const std::size_t hidden = R * C;
  BlockParams p;
  p.cpe_w = scaled_normal(rng, {3, 3, C}, 9);
  p.cpe_b = Tensor({C});
  p.ln1_g = Tensor({C}, 1.0);
  p.ln1_b = Tensor({C});
  p.qkv_w = scaled_normal(rng, {C, 3 * C}, C);
  p.qkv_b = Tensor({3 * C});
  p.proj_w = scaled_normal(rng, {C, C}, C);
  p.proj_b = Tensor({C});
  p.ln2_g = Tensor({C}, 1.0);
  p.ln2_b = Tensor({C});
  p.ffn_w1 = scaled_normal(rng, {C, hidden}, C);
  p.ffn_b1 = Tensor({hidden});
  p.ffn_dw = scaled_normal(rng, {3, 3, hidden}, 9);
  p.ffn_dw_b = Tensor({hidden});
  p.ffn_w2 = scaled_normal(rng, {hidden, C}, hidden);
  p.ffn_b2 = Tensor({C});
  return p;
}

BlockParams BlockParams::zeros_like(const BlockParams& p) {
  BlockParams z = p;
  z.visit([](const std::string&, Tensor& t) { std::fill(t.storage().begin(), t.storage().end(), 0.0); });
  return z;
}

void BlockParams::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  f("cpe_w", cpe_w);
  f("cpe_b", cpe_b);
  f("ln1_g", ln1_g);
  f("ln1_b", ln1_b);
  f("qkv_w", qkv_w);
  f("qkv_b", qkv_b);
  f("proj_w", proj_w);
  f("proj_b", proj_b);
  f("ln2_g", ln2_g);
  f("ln2_b", ln2_b);
  f("ffn_w1", ffn_w1);
  f("ffn_b1", ffn_b1);
  f("ffn_dw", ffn_dw);
  f("ffn_dw_b", ffn_dw_b);
  f("ffn_w2", ffn_w2);
  f("ffn_b2", ffn_b2);
}

void BlockParams::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  const_cast<BlockParams*>(this)->visit(
      [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
}

std::uint64_t BlockParams::param_count() const {
  std::uint64_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Tensor cpe(const Tensor& x, const Tensor& w, const Tensor& b) {
  return x + add_channel_bias(depthwise_conv3x3(x, w, 1), b);
}

namespace {

struct FfnTrace {
  Tensor h1, a1, d, a2, out;
};

FfnTrace irffn_trace(const Tensor& x, std::size_t height, std::size_t width, const BlockParams& p) {
  FfnTrace t;
  t.h1 = linear(x, p.ffn_w1, p.ffn_b1);
  t.a1 = gelu(t.h1);
  const Tensor grid = to_grid(t.a1, height, width);
  const Tensor conv = add_channel_bias(depthwise_conv3x3(grid, p.ffn_dw, 1), p.ffn_dw_b);
  t.d = flatten_grid(grid + conv);
  t.a2 = gelu(t.d);
  t.out = linear(t.a2, p.ffn_w2, p.ffn_b2);
  return t;
}

}  // namespace

Tensor irffn(const Tensor& x, std::size_t height, std::size_t width, const BlockParams& p) {
  require_shape(x.rank() == 2 && x.rows() == height * width, "irffn token count must equal H*W");
  return irffn_trace(x, height, width, p).out;
}

Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t C = q.cols() / heads;
  Tensor y({q.rows(), q.cols()});
  for (std::size_t h = 0; h < heads; ++h)
    assign_cols(y,
                dense_attention_oracle(slice_cols(q, h * C, C), slice_cols(k, h * C, C),
                                       slice_cols(v, h * C, C)),
                h * C);
  return y;
}

Tensor block_forward(const Tensor& x, const BlockParams& p, const BlockAttention& attn,
                     HeadCentroids* centroids, double ln_eps, BlockCache* cache) {
  require_shape(x.rank() == 3, "block input must be H x W x C");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  require_shape(p.channels() == C, "block params width differs from input channels");
  require_shape(attn.dg.width() == C, "attention heads * head_dim must equal channels");

  const Tensor x_tilde = flatten_grid(cpe(x, p.cpe_w, p.cpe_b));
  LayerNormCache ln1;
  const Tensor a = layer_norm(x_tilde, p.ln1_g, p.ln1_b, ln_eps, &ln1);
  const Tensor qkv = linear(a, p.qkv_w, p.qkv_b);
  const Tensor q = slice_cols(qkv, 0, C), k = slice_cols(qkv, C, C), v = slice_cols(qkv, 2 * C, C);

  Tensor attn_y;
  ForwardCache attn_cache;
  if (attn.global) {
    attn_y = global_attention(q, k, v, attn.dg.heads);
  } else {
    if (!centroids) throw std::invalid_argument("DG block needs centroids");
    auto r = dg_attention_forward(q, k, v, attn.dg, *centroids);
    attn_y = std::move(r.y);
    attn_cache = std::move(r.cache);
  }
  const Tensor x_hat = x_tilde + linear(attn_y, p.proj_w, p.proj_b);
  LayerNormCache ln2;
  const Tensor b = layer_norm(x_hat, p.ln2_g, p.ln2_b, ln_eps, &ln2);
  FfnTrace ffn = irffn_trace(b, H, W, p);
  Tensor out = to_grid(x_hat + ffn.out, H, W);

  if (cache) {
    cache->height = H;
    cache->width = W;
    cache->x = flatten_grid(x);
    cache->x_tilde = x_tilde;
    cache->ln1 = std::move(ln1);
    cache->a = a;
    cache->attn = std::move(attn_cache);
    cache->attn_y = std::move(attn_y);
    cache->ln2 = std::move(ln2);
    cache->b = b;
    cache->h1 = std::move(ffn.h1);
    cache->a1 = std::move(ffn.a1);
    cache->d = std::move(ffn.d);
    cache->a2 = std::move(ffn.a2);
  }
  return out;
}

Tensor dgt_block_forward(const Tensor& x, const BlockParams& p, const DgAttentionConfig& cfg,
                         HeadCentroids& centroids, double ln_eps) {
  return block_forward(x, p, BlockAttention{cfg, false}, &centroids, ln_eps);
}

Tensor gsa_block_forward(const Tensor& x, const BlockParams& p, std::size_t heads, double ln_eps) {
  DgAttentionConfig cfg;
  cfg.heads = heads;
  cfg.head_dim = x.dim(2) / heads;
  return block_forward(x, p, BlockAttention{cfg, true}, nullptr, ln_eps);
}

Tensor block_backward(const BlockCache& cache, const BlockParams& p, const Tensor& dy,
                      BlockParams& grads) {
  if (cache.attn.heads.empty())
    throw ContractError("block_backward needs a cache from a DG block forward");
  const std::size_t H = cache.height, W = cache.width, C = p.channels();
  const Tensor d_out = flatten_grid(dy);

  // out = x_hat + W2 * gelu(d) + b2
  Tensor d_xhat = d_out;
  const LinearGrads g2 = linear_backward(cache.a2, p.ffn_w2, d_out);
  grads.ffn_w2 += g2.dw;
  grads.ffn_b2 += g2.db;
  const Tensor d_d = gelu_backward(cache.d, g2.dx);
  // d = a1 + dwconv(a1) + b_dw
  const DepthwiseConvGrads gdw =
      depthwise_conv3x3_backward(to_grid(cache.a1, H, W), p.ffn_dw, 1, to_grid(d_d, H, W));
  grads.ffn_dw += gdw.dw;
  grads.ffn_dw_b += channel_sum(d_d);
  const Tensor d_a1 = d_d + flatten_grid(gdw.dx);
  const Tensor d_h1 = gelu_backward(cache.h1, d_a1);
  const LinearGrads g1 = linear_backward(cache.b, p.ffn_w1, d_h1);
  grads.ffn_w1 += g1.dw;
  grads.ffn_b1 += g1.db;
  const LayerNormGrads gln2 = layer_norm_backward(cache.ln2, p.ln2_g, g1.dx);
  grads.ln2_g += gln2.dgamma;
  grads.ln2_b += gln2.dbeta;
  d_xhat += gln2.dx;

  // x_hat = x_tilde + proj(attn(qkv(LN(x_tilde))))
  Tensor d_xtilde = d_xhat;
  const LinearGrads gp = linear_backward(cache.attn_y, p.proj_w, d_xhat);
  grads.proj_w += gp.dw;
  grads.proj_b += gp.db;
  const GradBundle ga = dg_attention_backward(cache.attn, gp.dx);
  Tensor d_qkv({d_xhat.rows(), 3 * C});
  assign_cols(d_qkv, ga.dq, 0);
  assign_cols(d_qkv, ga.dk, C);
  assign_cols(d_qkv, ga.dv, 2 * C);
  const LinearGrads gq = linear_backward(cache.a, p.qkv_w, d_qkv);
  grads.qkv_w += gq.dw;
  grads.qkv_b += gq.db;
  const LayerNormGrads gln1 = layer_norm_backward(cache.ln1, p.ln1_g, gq.dx);
  grads.ln1_g += gln1.dgamma;
  grads.ln1_b += gln1.dbeta;
  d_xtilde += gln1.dx;

  // x_tilde = x + dwconv(x) + b_cpe
  const DepthwiseConvGrads gc =
      depthwise_conv3x3_backward(to_grid(cache.x, H, W), p.cpe_w, 1, to_grid(d_xtilde, H, W));
  grads.cpe_w += gc.dw;
  grads.cpe_b += channel_sum(d_xtilde);
  return to_grid(d_xtilde + flatten_grid(gc.dx), H, W);
}

namespace {

ConvLayer make_conv(Rng& rng, std::size_t cin, std::size_t cout, std::size_t stride) {
  return {scaled_normal(rng, {3, 3, cin, cout}, 9 * cin), Tensor({cout}), stride};
}

Tensor apply_conv(const ConvLayer& c, const Tensor& x) {
  return add_channel_bias(conv3x3(x, c.w, c.stride), c.b);
}

}  // namespace

DgtModel build_model(const DgtVariantConfig& cfg, Rng& rng) {
  cfg.validate();
  DgtModel m;
  m.cfg = cfg;
  m.stem.push_back(make_conv(rng, cfg.in_channels, cfg.stem_channels, 2));
  m.stem.push_back(make_conv(rng, cfg.stem_channels, cfg.stem_channels, 1));
  m.stem.push_back(make_conv(rng, cfg.stem_channels, cfg.stem_channels, 1));
  std::size_t prev = cfg.stem_channels;
  for (const auto& s : cfg.stages) {
    StageParams sp;
    sp.merge = make_conv(rng, prev, s.channels, 2);
    sp.merge_ln_g = Tensor({s.channels}, 1.0);
    sp.merge_ln_b = Tensor({s.channels});
    for (std::size_t b = 0; b < s.depth; ++b) {
      sp.blocks.push_back(BlockParams::init(s.channels, s.expand_ratio, rng));
      if (!s.global_attention)
        sp.centroids.push_back(init_head_centroids(stage_attention(s, cfg.tile), rng));
    }
    m.stages.push_back(std::move(sp));
    prev = s.channels;
  }
  m.norm_g = Tensor({prev}, 1.0);
  m.norm_b = Tensor({prev});
  m.fc_w = scaled_normal(rng, {prev, cfg.fc_dim}, prev);
  m.fc_b = Tensor({cfg.fc_dim});
  m.cls_w = scaled_normal(rng, {cfg.fc_dim, cfg.num_classes}, cfg.fc_dim);
  m.cls_b = Tensor({cfg.num_classes});
  return m;
}

DgtModel build_model(const std::string& variant, Rng& rng) {
  return build_model(DgtVariantConfig::named(variant), rng);
}

void DgtModel::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  for (std::size_t i = 0; i < stem.size(); ++i) {
    f("stem." + std::to_string(i) + ".w", stem[i].w);
    f("stem." + std::to_string(i) + ".b", stem[i].b);
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = "stages." + std::to_string(s) + ".";
    f(sp + "merge.w", stages[s].merge.w);
    f(sp + "merge.b", stages[s].merge.b);
    f(sp + "merge_ln_g", stages[s].merge_ln_g);
    f(sp + "merge_ln_b", stages[s].merge_ln_b);
    for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) {
      const std::string bp = sp + "blocks." + std::to_string(b) + ".";
      stages[s].blocks[b].visit([&](const std::string& n, Tensor& t) { f(bp + n, t); });
    }
  }
  f("norm_g", norm_g);
  f("norm_b", norm_b);
  f("fc_w", fc_w);
  f("fc_b", fc_b);
  f("cls_w", cls_w);
  f("cls_b", cls_b);
}

void DgtModel::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  const_cast<DgtModel*>(this)->visit(
      [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
}

std::uint64_t DgtModel::param_count() const {
  std::uint64_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Tensor model_forward(const DgtModel& model, const Tensor& image, std::vector<Tensor>* stage_outputs) {
  const auto& cfg = model.cfg;
  require_shape(image.rank() == 3 && image.dim(2) == cfg.in_channels,
                "image must be H x W x " + std::to_string(cfg.in_channels));
  Tensor x = gelu(apply_conv(model.stem[0], image));
  x = gelu(apply_conv(model.stem[1], x));
  x = apply_conv(model.stem[2], x);

  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageConfig& sc = cfg.stages[s];
    const StageParams& sp = model.stages[s];
    x = apply_conv(sp.merge, x);
    const std::size_t H = x.dim(0), W = x.dim(1);
    x = to_grid(layer_norm(flatten_grid(x), sp.merge_ln_g, sp.merge_ln_b, cfg.ln_eps), H, W);
    const BlockAttention attn{stage_attention(sc, cfg.tile), sc.global_attention};
    for (std::size_t b = 0; b < sp.blocks.size(); ++b) {
      // Inference: routing only, the model's centroids are left as they are.
      HeadCentroids centroids = sc.global_attention ? HeadCentroids{} : sp.centroids[b];
      x = block_forward(x, sp.blocks[b], attn, sc.global_attention ? nullptr : &centroids,
                        cfg.ln_eps);
    }
    if (stage_outputs) stage_outputs->push_back(x);
  }

  const Tensor tokens = layer_norm(flatten_grid(x), model.norm_g, model.norm_b, cfg.ln_eps);
  Tensor pooled({1, tokens.cols()});
  for (std::size_t i = 0; i < tokens.rows(); ++i)
    for (std::size_t c = 0; c < tokens.cols(); ++c) pooled.at(0, c) += tokens.at(i, c);
  for (auto& v : pooled.storage()) v /= static_cast<double>(tokens.rows());
  const Tensor hidden = gelu(linear(pooled, model.fc_w, model.fc_b));
  return linear(hidden, model.cls_w, model.cls_b).reshaped({cfg.num_classes});
}

std::vector<StageShape> stage_shapes(const DgtVariantConfig& cfg, std::size_t height,
                                     std::size_t width) {
  std::size_t h = conv_out_extent(height, 2), w = conv_out_extent(width, 2), stride = 2;
  std::vector<StageShape> out;
  for (const auto& s : cfg.stages) {
    h = conv_out_extent(h, 2);
    w = conv_out_extent(w, 2);
    stride *= 2;
    out.push_back({h, w, s.channels, h * w, stride});
  }
  return out;
}

std::uint64_t count_params(const DgtVariantConfig& cfg) {
  cfg.validate();
  auto conv = [](std::uint64_t cin, std::uint64_t cout) { return 9 * cin * cout + cout; };
  std::uint64_t n = conv(cfg.in_channels, cfg.stem_channels) +
                    2 * conv(cfg.stem_channels, cfg.stem_channels);
  std::uint64_t prev = cfg.stem_channels;
  for (const auto& s : cfg.stages) {
    const std::uint64_t C = s.channels, hidden = s.expand_ratio * C;
    n += conv(prev, C) + 2 * C;
    const std::uint64_t block = (9 * C + C)                      // CPE
                                + 2 * C                           // LN1
                                + (3 * C * C + 3 * C)             // QKV
                                + (C * C + C)                     // projection
                                + 2 * C                           // LN2
                                + (C * hidden + hidden)           // expand
                                + (9 * hidden + hidden)           // depthwise
                                + (hidden * C + C);               // project
    n += s.depth * block;
    prev = C;
  }
  n += 2 * prev;
  n += prev * cfg.fc_dim + cfg.fc_dim;
  n += cfg.fc_dim * cfg.num_classes + cfg.num_classes;
  return n;
}

std::uint64_t count_params(const std::string& variant) {
  return count_params(DgtVariantConfig::named(variant));
}

FlopReport count_flops(const DgtVariantConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  FlopReport r;
  auto conv = [](std::uint64_t pixels, std::uint64_t cin, std::uint64_t cout) {
    return pixels * 9 * cin * cout;
  };
  const std::uint64_t h0 = conv_out_extent(height, 2), w0 = conv_out_extent(width, 2);
  r.stem = conv(h0 * w0, cfg.in_channels, cfg.stem_channels) +
           2 * conv(h0 * w0, cfg.stem_channels, cfg.stem_channels);
  const auto shapes = stage_shapes(cfg, height, width);
  std::uint64_t prev = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& s = cfg.stages[i];
    const std::uint64_t L = shapes[i].tokens, C = s.channels, hidden = s.expand_ratio * C;
    r.merges += conv(L, prev, C);
    const std::uint64_t dense = L * 9 * C + L * C * 3 * C + L * C * C + L * C * hidden +
                                L * 9 * hidden + L * hidden * C;
    const std::uint64_t attn =
        s.global_attention
            ? omega_global(L, C)
            : static_cast<std::uint64_t>(std::llround(complexity(L, C, s.groups, s.top_k).omega_dg));
    r.block_dense += s.depth * dense;
    r.attention += s.depth * attn;
    r.stage_attention.push_back(attn);
    prev = C;
  }
  r.head = prev * cfg.fc_dim + cfg.fc_dim * cfg.num_classes;
  return r;
}

}  // namespace dgattn
