#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dgattn {

/// Base of the logarithm in the top-k sorting term kG log L.
enum class LogBase { E, Two, Ten };

/// Operation counts for attention maps plus weighted sums (one multiply-add
/// counts as one op). Global attention is 2 L^2 C; DG-Attention is
/// 2kLC (attend) + 2LGC (grouping) + kG log L (top-k sorting).
struct ComplexityReport {
  std::size_t L = 0, C = 0, G = 0, k = 0;
  std::uint64_t omega_global = 0;
  std::uint64_t attend_term = 0;
  std::uint64_t grouping_term = 0;
  double topk_term = 0.0;
  double omega_dg = 0.0;
  double ratio = 0.0;
};

std::uint64_t omega_global(std::size_t L, std::size_t C);

/// Throws std::invalid_argument if any argument is zero.
ComplexityReport complexity(std::size_t L, std::size_t C, std::size_t G, std::size_t k,
                            LogBase base = LogBase::E);

const char* log_base_name(LogBase base);
LogBase parse_log_base(const std::string& name);

}  // namespace dgattn
