#include "dgattn/viz.hpp"

#include <cmath>

#include "dgattn/attention.hpp"
#include "dgattn/numerics.hpp"
#include "json.hpp"

namespace dgattn {

Tensor two_blob_grid(std::size_t height, std::size_t width, std::size_t dim, Rng& rng) {
  const Tensor u = l2_normalize(rng.normal_tensor({dim}));
  Tensor g = rng.normal_tensor({height, width, dim}, 0.1);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double sign = blob_of(c, width) == 0 ? 1.0 : -1.0;
      for (std::size_t d = 0; d < dim; ++d) g.at(r, c, d) += sign * u[d];
    }
  return g;
}

std::size_t blob_of(std::size_t col, std::size_t width) { return 2 * col < width ? 0 : 1; }

VizResult run_viz(const Tensor& grid, const VizOptions& opts) {
  require_shape(grid.rank() == 3, "viz input must be an H x W x C grid");
  const std::size_t H = grid.dim(0), W = grid.dim(1), C = grid.dim(2);
  const Tensor tokens = grid.reshaped({H * W, C});

  DgAttentionConfig cfg;
  cfg.head_dim = C;
  cfg.groups = opts.groups;
  cfg.top_k = opts.top_k;
  cfg.validate();
  Rng rng(opts.seed);
  HeadCentroids cents{kmeans_bootstrap(tokens, opts.groups, opts.bootstrap_iters, rng)};
  const auto out = dg_attention_forward(tokens, tokens, tokens, cfg, cents);

  VizResult r;
  r.height = H;
  r.width = W;
  r.group_of = out.cache.heads[0].layout.assign.group_of;
  r.selection = out.cache.heads[0].selection;
  r.centroids = cents[0];
  return r;
}

std::string group_map_pgm(const std::vector<std::size_t>& group_of, std::size_t height,
                          std::size_t width, std::size_t groups) {
  require_shape(group_of.size() == height * width, "group map size differs from H x W");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (auto g : group_of) {
    const long level = groups > 1 ? std::lround(255.0 * double(g) / double(groups - 1)) : 255;
    out.push_back(static_cast<char>(static_cast<unsigned char>(level)));
  }
  return out;
}

std::string selection_to_json(const SelectionIndex& sel) {
  nlohmann::json j;
  j["groups"] = sel.groups;
  j["k"] = sel.k;
  auto ids = nlohmann::json::array(), scores = nlohmann::json::array();
  for (std::size_t g = 0; g < sel.groups; ++g) {
    const auto row = sel.row(g);
    ids.push_back(std::vector<std::size_t>(row.begin(), row.end()));
    if (!sel.scores.empty())
      scores.push_back(std::vector<double>(sel.scores.begin() + g * sel.k,
                                           sel.scores.begin() + (g + 1) * sel.k));
  }
  j["id"] = std::move(ids);
  j["scores"] = std::move(scores);
  return j.dump();
}

}  // namespace dgattn
