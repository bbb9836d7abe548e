#include "dgattn/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace dgattn::parallel {

int configure_from_env() {
  if (const char* env = std::getenv("DGATTN_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1 && cap < omp_get_max_threads()) omp_set_num_threads(cap);
    } catch (const std::exception&) {
      // Unparseable values leave the OpenMP default in place.
    }
  }
  return omp_get_max_threads();
}

int max_threads() { return omp_get_max_threads(); }

void set_threads(int n) {
  if (n >= 1) omp_set_num_threads(n);
}

}  // namespace dgattn::parallel
