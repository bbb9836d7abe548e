#pragma once

#include <cstddef>
#include <vector>

#include "dgattn/grouped_matmul.hpp"
#include "dgattn/grouping.hpp"
#include "dgattn/selection.hpp"
#include "dgattn/tensor.hpp"

namespace dgattn {

struct DgAttentionConfig {
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t groups = 1;
  std::size_t top_k = 1;
  std::size_t tile = kDefaultTile;
  TileMode tile_mode = TileMode::Split;
  double tau = 0.999;
  /// Run one EMA centroid update per forward pass.
  bool train_mode = false;
  /// Use softmax(P) / sqrt(C) instead of softmax(P / sqrt(C)).
  bool literal_appendix_scaling = false;

  std::size_t width() const { return heads * head_dim; }
  /// Throws std::invalid_argument when any extent is zero.
  void validate() const;
};

/// One Centroids value per head.
using HeadCentroids = std::vector<Centroids>;

HeadCentroids init_head_centroids(const DgAttentionConfig& cfg, Rng& rng);

/// Everything the backward pass needs for one head.
struct HeadCache {
  GroupedLayout layout;
  SelectionIndex selection;
  TilePlan plan;
  Tensor q_sorted;
  Tensor keys;     // this head's L x C slice of the keys
  Tensor values;   // this head's L x C slice of the values
  Tensor logits;   // P, sorted order, L x k
  Tensor softmax;  // softmax of P (sorted order)
  Tensor probs;    // P^ used to weight the values; equals softmax unless literal scaling
};

struct ForwardCache {
  DgAttentionConfig cfg;
  std::size_t tokens = 0;
  std::vector<HeadCache> heads;
};

struct GradBundle {
  Tensor dq;
  Tensor dk;
  Tensor dv;
};

struct AttentionOutput {
  Tensor y;
  ForwardCache cache;
};

/// Multi-head DG-Attention over L x (H*C) inputs. Head h uses columns
/// [h*C, (h+1)*C). With cfg.train_mode, `centroids` receive one EMA update
/// each (rate cfg.tau) after all heads have run.
AttentionOutput dg_attention_forward(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                                     const DgAttentionConfig& cfg, HeadCentroids& centroids,
                                     KernelCounters* counters = nullptr);

/// Gradients w.r.t. xq, xk, xv. Group assignment and key selection are held
/// fixed. Throws ContractError if `dy` does not match the cache.
GradBundle dg_attention_backward(const ForwardCache& cache, const Tensor& dy,
                                 KernelCounters* counters = nullptr);

/// softmax(Q K^T / sqrt(C)) V with dense ops, single head.
Tensor dense_attention_oracle(const Tensor& xq, const Tensor& xk, const Tensor& xv);

/// Single-head grouped attention by explicit per-group loops: gather each
/// group's queries and selected keys/values, run dense attention, write back.
Tensor grouped_attention_oracle(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                                const GroupAssignment& assignment,
                                const SelectionIndex& selection);

/// Smallest gap that keeps routing stable: the minimum over tokens of the
/// top-1 vs top-2 centroid similarity, and over groups of the k-th vs
/// (k+1)-th key score. Infinite when there is nothing to separate.
double routing_margin(const Tensor& xq, const Tensor& xk, const DgAttentionConfig& cfg,
                      const HeadCentroids& centroids);

}  // namespace dgattn
