#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dgattn/tensor.hpp"

namespace dgattn {

/// G unit-norm cluster centroids (one row each) tracked by an exponential
/// moving average with rate `tau`. tau = 1 freezes the centroids, tau = 0
/// replaces them with the current batch means.
struct Centroids {
  Tensor e;  // G x C
  double tau = 0.999;

  std::size_t groups() const { return e.rows(); }
  std::size_t dim() const { return e.cols(); }
};

/// How the EMA rate is derived when a learning rate is in play.
enum class TauRule {
  Fixed,       // use the configured tau as-is
  Literal,     // tau = 0.1 * lr
  Complement,  // tau = 1 - 0.1 * lr
};

double resolve_tau(TauRule rule, double fixed_tau, double learning_rate);

/// Token-to-group routing and the stable permutation that makes each group
/// contiguous.
struct GroupAssignment {
  std::vector<std::size_t> group_of;   // length L, values in [0, G)
  std::vector<std::size_t> sizes;      // length G, sum = L
  std::vector<std::size_t> sort_perm;  // sorted position -> original token
  std::vector<std::size_t> inv_perm;   // original token -> sorted position

  std::size_t tokens() const { return group_of.size(); }
  std::size_t groups() const { return sizes.size(); }
};

/// Builds sizes and the stable counting-sort permutations from raw group ids.
/// Throws std::out_of_range if an id is not below `groups`.
GroupAssignment make_assignment(std::vector<std::size_t> group_of, std::size_t groups);

/// Rows drawn from an isotropic Gaussian, then normalized.
Centroids init_centroids(std::size_t groups, std::size_t dim, Rng& rng, double tau = 0.999);

/// Nearest centroid by cosine similarity; ties go to the lowest group id.
GroupAssignment assign_groups(const Tensor& queries, const Centroids& centroids);

/// Cosine similarity of each (normalized) query against each centroid, L x G.
Tensor centroid_similarity(const Tensor& queries, const Centroids& centroids);

/// One EMA step: e_j <- normalize(tau * e_j + (1 - tau) * mean_j), where mean_j
/// is the mean of the group's normalized queries. Empty groups are untouched.
Centroids update_centroids(const Centroids& centroids, const Tensor& queries,
                           const GroupAssignment& assign);

/// init_centroids, then `iters` spherical Lloyd steps (assign, update with tau = 0).
Centroids kmeans_bootstrap(const Tensor& queries, std::size_t groups, std::size_t iters,
                           Rng& rng, double tau = 0.999);

std::string centroids_to_json(const Centroids& c);
Centroids centroids_from_json(const std::string& text);

}  // namespace dgattn
