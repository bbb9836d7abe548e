#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dgattn {

struct ToyTrainOptions {
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  double learning_rate = 0.05;
  std::size_t samples = 16;  // half per class
  std::size_t image_size = 16;
};

struct ToyTrainResult {
  std::vector<double> loss;  // steps + 1 entries; entry s is measured before update s
  bool diverged = false;

  std::string csv() const;
};

/// Full-batch gradient descent of a two-block DGT on a synthetic two-class
/// image task. Centroids take one EMA step per iteration with
/// tau = 1 - 0.1 * lr.
ToyTrainResult run_toy_train(const ToyTrainOptions& opts);

}  // namespace dgattn
