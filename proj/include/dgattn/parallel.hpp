#pragma once

// Thread control for the OpenMP kernels. Every kernel in this library has a
// fixed reduction order, so these only change speed, never results.
namespace dgattn::parallel {

/// Applies the DGATTN_THREADS environment variable, if set, as an upper bound
/// on OpenMP threads. Returns the resulting thread count.
int configure_from_env();

int max_threads();
void set_threads(int n);

}  // namespace dgattn::parallel
