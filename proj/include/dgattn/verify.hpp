#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgattn/attention.hpp"
#include "dgattn/grouped_matmul.hpp"

namespace dgattn {

/// A random grouped-matmul problem: routing plus every operand the four
/// forms consume.
struct GroupedInstance {
  GroupedLayout layout;
  SelectionIndex selection;
  Tensor q_sorted;  // L x C
  Tensor keys;      // L x C
  Tensor values;    // L x C
  Tensor probs;     // L x k
  Tensor grad_p;    // L x k
  Tensor grad_y;    // L x C
};

struct InstanceShape {
  std::size_t tokens = 8;
  std::size_t dim = 4;
  std::size_t groups = 2;
  std::size_t top_k = 3;
  bool force_empty_group = false;  // needs groups >= 2
  bool force_collision = false;    // group 0 and 1 share a key; needs groups >= 2
};

GroupedInstance random_grouped_instance(Rng& rng, const InstanceShape& shape);

/// Form whose tiled output the check harness corrupts on purpose.
enum class Sabotage { None, Form1, Form2, Form3, Form4 };
Sabotage parse_sabotage(const std::string& name);

struct SuiteResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  std::string failing;  // property that failed, empty on success

  bool passed() const { return failing.empty(); }
};

/// The oracle-equivalence suites behind `dgattn check`: dense-degenerate,
/// grouped-oracle, tile-sweep and scatter-add.
std::vector<SuiteResult> run_check_suites(std::uint64_t seed = 0, Sabotage sabotage = Sabotage::None);

/// Element-wise |a - n| / max(|a|, |n|, floor), maximized.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-3);

/// Central differences of a scalar function w.r.t. every element of x.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

struct GradcheckOptions {
  std::size_t tokens = 10;
  std::size_t head_dim = 4;
  std::size_t groups = 2;
  std::size_t top_k = 5;
  std::size_t heads = 1;
  std::size_t tile = kDefaultTile;
  std::uint64_t seed = 0;
  double step = 1e-6;
  std::size_t max_retries = 50;
  bool zero_output_grad = false;
  /// Two groups forced to share at least one selected key.
  bool require_collision = false;
  /// Additionally difference the dense oracle (only meaningful for G=1, k=L).
  bool compare_dense = false;
};

struct GradcheckReport {
  double rel_dq = 0.0, rel_dk = 0.0, rel_dv = 0.0;
  double dense_rel_dq = 0.0, dense_rel_dk = 0.0, dense_rel_dv = 0.0;
  double margin = 0.0;
  std::uint64_t seed_used = 0;
  std::size_t attempts = 0;
  bool screened = false;  // a margin-passing instance was found
  bool collision = false;

  double max_error() const;
};

/// Finite-difference check of dg_attention_backward on a random instance.
/// Instances whose routing margin is <= 10 * step are regenerated with the
/// next seed, up to max_retries times.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

}  // namespace dgattn
