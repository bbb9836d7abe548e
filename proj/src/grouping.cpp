#include "dgattn/grouping.hpp"

#include <stdexcept>

#include "dgattn/numerics.hpp"
#include "json.hpp"

namespace dgattn {

double resolve_tau(TauRule rule, double fixed_tau, double learning_rate) {
  switch (rule) {
    case TauRule::Fixed:
      return fixed_tau;
    case TauRule::Literal:
      return 0.1 * learning_rate;
    case TauRule::Complement:
      return 1.0 - 0.1 * learning_rate;
  }
  return fixed_tau;
}

GroupAssignment make_assignment(std::vector<std::size_t> group_of, std::size_t groups) {
  if (groups == 0) throw std::invalid_argument("need at least one group");
  GroupAssignment a;
  a.group_of = std::move(group_of);
  a.sizes.assign(groups, 0);
  for (auto g : a.group_of) {
    if (g >= groups) throw std::out_of_range("group id out of range");
    ++a.sizes[g];
  }
  std::vector<std::size_t> cursor(groups, 0);
  for (std::size_t j = 1; j < groups; ++j) cursor[j] = cursor[j - 1] + a.sizes[j - 1];
  const std::size_t L = a.group_of.size();
  a.sort_perm.resize(L);
  a.inv_perm.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t pos = cursor[a.group_of[i]]++;
    a.sort_perm[pos] = i;
    a.inv_perm[i] = pos;
  }
  return a;
}

Centroids init_centroids(std::size_t groups, std::size_t dim, Rng& rng, double tau) {
  if (groups == 0 || dim == 0) throw std::invalid_argument("init_centroids needs G, C >= 1");
  Centroids c{rng.normal_tensor({groups, dim}), tau};
  for (std::size_t j = 0; j < groups; ++j) l2_normalize_inplace(c.e.row(j));
  return c;
}

Tensor centroid_similarity(const Tensor& queries, const Centroids& centroids) {
  require_shape(queries.rank() == 2 && queries.cols() == centroids.dim(),
                "query width " + shape_string(queries.shape()) +
                    " does not match centroid dim " + std::to_string(centroids.dim()));
  const std::size_t L = queries.rows(), G = centroids.groups();
  Tensor sim({L, G});
  std::vector<double> q(queries.cols());
#pragma omp parallel for schedule(static) firstprivate(q)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(L); ++i) {
    const auto src = queries.row(i);
    std::copy(src.begin(), src.end(), q.begin());
    l2_normalize_inplace(q);
    for (std::size_t j = 0; j < G; ++j) sim.at(i, j) = dot(q, centroids.e.row(j));
  }
  return sim;
}

GroupAssignment assign_groups(const Tensor& queries, const Centroids& centroids) {
  const Tensor sim = centroid_similarity(queries, centroids);
  const std::size_t L = sim.rows(), G = sim.cols();
  std::vector<std::size_t> group_of(L, 0);
  for (std::size_t i = 0; i < L; ++i) {
    const auto s = sim.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < G; ++j)
      if (s[j] > s[best]) best = j;
    group_of[i] = best;
  }
  return make_assignment(std::move(group_of), G);
}

Centroids update_centroids(const Centroids& centroids, const Tensor& queries,
                           const GroupAssignment& assign) {
  const std::size_t G = centroids.groups(), C = centroids.dim();
  require_shape(queries.rank() == 2 && queries.cols() == C && queries.rows() == assign.tokens(),
                "queries do not match assignment/centroids");
  require_shape(assign.groups() == G, "assignment group count differs from centroids");

  Tensor mean({G, C});
  std::vector<double> q(C);
  // Token order, so the sum for each group is independent of threading.
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto src = queries.row(i);
    std::copy(src.begin(), src.end(), q.begin());
    l2_normalize_inplace(q);
    auto m = mean.row(assign.group_of[i]);
    for (std::size_t c = 0; c < C; ++c) m[c] += q[c];
  }

  Centroids out = centroids;
  const double tau = centroids.tau;
  for (std::size_t j = 0; j < G; ++j) {
    if (assign.sizes[j] == 0) continue;
    const double n = static_cast<double>(assign.sizes[j]);
    auto e = out.e.row(j);
    const auto m = mean.row(j);
    for (std::size_t c = 0; c < C; ++c) e[c] = tau * e[c] + (1.0 - tau) * (m[c] / n);
    l2_normalize_inplace(e);
  }
  return out;
}

Centroids kmeans_bootstrap(const Tensor& queries, std::size_t groups, std::size_t iters,
                           Rng& rng, double tau) {
  require_shape(queries.rank() == 2, "kmeans_bootstrap expects an L x C matrix");
  Centroids c = init_centroids(groups, queries.cols(), rng, 0.0);
  for (std::size_t it = 0; it < iters; ++it) c = update_centroids(c, queries, assign_groups(queries, c));
  c.tau = tau;
  return c;
}

std::string centroids_to_json(const Centroids& c) {
  nlohmann::json j;
  j["G"] = c.groups();
  j["C"] = c.dim();
  j["tau"] = c.tau;
  auto rows = nlohmann::json::array();
  for (std::size_t g = 0; g < c.groups(); ++g) {
    const auto r = c.e.row(g);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["e"] = std::move(rows);
  return j.dump();
}

Centroids centroids_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto G = j.at("G").get<std::size_t>();
  const auto C = j.at("C").get<std::size_t>();
  const auto& rows = j.at("e");
  require_shape(rows.size() == G, "centroid checkpoint row count differs from G");
  std::vector<double> data;
  data.reserve(G * C);
  for (const auto& r : rows) {
    auto v = r.get<std::vector<double>>();
    require_shape(v.size() == C, "centroid checkpoint row width differs from C");
    data.insert(data.end(), v.begin(), v.end());
  }
  return Centroids{Tensor({G, C}, std::move(data)), j.at("tau").get<double>()};
}

}  // namespace dgattn
