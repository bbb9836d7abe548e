#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgattn/attention.hpp"
#include "dgattn/numerics.hpp"
#include "dgattn/tensor.hpp"

namespace dgattn {

struct StageConfig {
  std::size_t channels = 0;
  std::size_t depth = 0;
  std::size_t heads = 1;
  std::size_t groups = 1;
  std::size_t top_k = 1;
  std::size_t expand_ratio = 4;
  /// Dense self-attention (GSA block) instead of DG-Attention.
  bool global_attention = false;
};

/// Architecture hyperparameters. Named variants "T", "S", "B" follow the
/// published DGT-T/S/B table.
struct DgtVariantConfig {
  std::string name = "custom";
  std::size_t in_channels = 3;
  std::size_t stem_channels = 32;
  std::vector<StageConfig> stages;
  std::size_t fc_dim = 1280;
  std::size_t num_classes = 1000;
  double ln_eps = 1e-5;
  std::size_t tile = kDefaultTile;
  /// Declared for S/B; not implemented numerically.
  bool post_norm = false;
  bool cosine_attention = false;

  /// Throws std::invalid_argument for anything but T, S, B (or DGT-T etc.).
  static DgtVariantConfig named(const std::string& variant);
  void validate() const;
};

std::string variant_to_json(const DgtVariantConfig& cfg);
DgtVariantConfig variant_from_json(const std::string& text);
DgtVariantConfig load_variant_config(const std::string& path);

/// Weights of one transformer block (DGT or GSA) with width C.
struct BlockParams {
  Tensor cpe_w, cpe_b;  // 3x3xC depthwise, C
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;  // C x 3C, 3C
  Tensor proj_w, proj_b;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;      // C x RC
  Tensor ffn_dw, ffn_dw_b;    // 3x3xRC depthwise
  Tensor ffn_w2, ffn_b2;      // RC x C

  static BlockParams init(std::size_t channels, std::size_t expand_ratio, Rng& rng);
  /// Same shapes, all zeros.
  static BlockParams zeros_like(const BlockParams& p);

  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
  std::uint64_t param_count() const;
  std::size_t channels() const { return ln1_g.size(); }
};

/// Attention variant used inside a block.
struct BlockAttention {
  DgAttentionConfig dg;     // heads/head_dim used by both kinds
  bool global = false;
};

/// Intermediates kept for block_backward.
struct BlockCache {
  std::size_t height = 0, width = 0;
  Tensor x;          // L x C input
  Tensor x_tilde;    // after CPE
  LayerNormCache ln1;
  Tensor a;          // LN1 output
  ForwardCache attn;
  Tensor attn_y;     // attention output before projection
  LayerNormCache ln2;
  Tensor b;          // LN2 output
  Tensor h1, a1, d;  // FFN: expand pre-act, post-act, after depthwise residual
  Tensor a2;
};

/// x + depthwise_conv3x3(x, w) + bias. Residual positional encoding.
Tensor cpe(const Tensor& x, const Tensor& w, const Tensor& b);

/// Inverted-residual FFN on an L = H*W token grid:
/// expand 1x1 -> GELU -> (+ depthwise 3x3) -> GELU -> project 1x1.
Tensor irffn(const Tensor& x, std::size_t height, std::size_t width, const BlockParams& p);

/// Multi-head dense attention over fused QKV projections; `heads` splits C.
Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

/// One block on an H x W x C grid:
///   Xt = X + CPE(X); Xh = Xt + Attn(LN(Xt)); out = Xh + IRFFN(LN(Xh)).
/// DG blocks need `centroids` (updated when attn.dg.train_mode is set).
Tensor block_forward(const Tensor& x, const BlockParams& p, const BlockAttention& attn,
                     HeadCentroids* centroids, double ln_eps = 1e-5,
                     BlockCache* cache = nullptr);

Tensor dgt_block_forward(const Tensor& x, const BlockParams& p, const DgAttentionConfig& cfg,
                         HeadCentroids& centroids, double ln_eps = 1e-5);
Tensor gsa_block_forward(const Tensor& x, const BlockParams& p, std::size_t heads,
                         double ln_eps = 1e-5);

/// Gradient of a DG block w.r.t. its input; parameter gradients are added
/// into `grads`. Routing is treated as fixed.
Tensor block_backward(const BlockCache& cache, const BlockParams& p, const Tensor& dy,
                      BlockParams& grads);

struct ConvLayer {
  Tensor w;  // 3 x 3 x Cin x Cout
  Tensor b;
  std::size_t stride = 1;
};

struct StageParams {
  ConvLayer merge;
  Tensor merge_ln_g, merge_ln_b;
  std::vector<BlockParams> blocks;
  std::vector<HeadCentroids> centroids;  // per block; empty for GSA stages
};

struct DgtModel {
  DgtVariantConfig cfg;
  std::vector<ConvLayer> stem;  // s2, s1, s1
  std::vector<StageParams> stages;
  Tensor norm_g, norm_b;
  Tensor fc_w, fc_b;
  Tensor cls_w, cls_b;

  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
  /// Learnable parameters only (centroids are running state, not parameters).
  std::uint64_t param_count() const;
};

DgtModel build_model(const DgtVariantConfig& cfg, Rng& rng);
DgtModel build_model(const std::string& variant, Rng& rng);

/// Logits (num_classes) for an H x W x in_channels image. Stage outputs
/// (H_i x W_i x C_i) are appended to `stage_outputs` when given.
Tensor model_forward(const DgtModel& model, const Tensor& image,
                     std::vector<Tensor>* stage_outputs = nullptr);

struct StageShape {
  std::size_t height, width, channels, tokens, stride;
};
std::vector<StageShape> stage_shapes(const DgtVariantConfig& cfg, std::size_t height,
                                     std::size_t width);

std::uint64_t count_params(const DgtVariantConfig& cfg);
std::uint64_t count_params(const std::string& variant);

/// Multiply-add tally (one MAC = one op, the convention of the attention
/// complexity model). Normalization, activations and pooling are not counted.
struct FlopReport {
  std::uint64_t stem = 0;
  std::uint64_t merges = 0;
  std::uint64_t block_dense = 0;  // CPE, QKV, projection, FFN
  std::uint64_t attention = 0;
  std::uint64_t head = 0;
  std::vector<std::uint64_t> stage_attention;  // per block of each stage
  std::uint64_t total() const { return stem + merges + block_dense + attention + head; }
};
FlopReport count_flops(const DgtVariantConfig& cfg, std::size_t height = 224,
                       std::size_t width = 224);

/// Checkpoint directory: manifest.json plus one Tensor JSON file per tensor.
void save_checkpoint(const DgtModel& model, const std::string& dir);
DgtModel load_checkpoint(const std::string& dir);

}  // namespace dgattn
