#include "dgattn/complexity.hpp"

#include <cmath>
#include <stdexcept>

namespace dgattn {

std::uint64_t omega_global(std::size_t L, std::size_t C) {
  return 2ull * L * L * C;
}

ComplexityReport complexity(std::size_t L, std::size_t C, std::size_t G, std::size_t k,
                            LogBase base) {
  if (L == 0 || C == 0 || G == 0 || k == 0)
    throw std::invalid_argument("complexity arguments must all be >= 1");
  ComplexityReport r{L, C, G, k};
  r.omega_global = omega_global(L, C);
  r.attend_term = 2ull * k * L * C;
  r.grouping_term = 2ull * L * G * C;
  double log_l = 0.0;
  switch (base) {
    case LogBase::E:
      log_l = std::log(static_cast<double>(L));
      break;
    case LogBase::Two:
      log_l = std::log2(static_cast<double>(L));
      break;
    case LogBase::Ten:
      log_l = std::log10(static_cast<double>(L));
      break;
  }
  r.topk_term = static_cast<double>(k) * static_cast<double>(G) * log_l;
  r.omega_dg = static_cast<double>(r.attend_term) + static_cast<double>(r.grouping_term) + r.topk_term;
  r.ratio = r.omega_dg / static_cast<double>(r.omega_global);
  return r;
}

const char* log_base_name(LogBase base) {
  switch (base) {
    case LogBase::E:
      return "e";
    case LogBase::Two:
      return "2";
    case LogBase::Ten:
      return "10";
  }
  return "e";
}

LogBase parse_log_base(const std::string& name) {
  if (name == "e" || name == "ln") return LogBase::E;
  if (name == "2" || name == "log2") return LogBase::Two;
  if (name == "10" || name == "log10") return LogBase::Ten;
  throw std::invalid_argument("unknown log base '" + name + "' (expected e, 2 or 10)");
}

}  // namespace dgattn
