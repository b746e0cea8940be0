#pragma once

#include <atomic>
#include <cstdint>

#include <cblas.h>
#ifdef _OPENMP
#include <omp.h>
#endif

namespace gpcseg {

namespace detail {
inline std::atomic<bool>& deterministic_flag() {
  static std::atomic<bool> flag{true};
  return flag;
}
}  // namespace detail

// Deterministic mode pins reduction order to sequential index order. Every
// other kernel partitions work over disjoint outputs and is reproducible
// regardless of this flag.
inline void set_deterministic(bool on) { detail::deterministic_flag() = on; }
inline bool deterministic() { return detail::deterministic_flag(); }

inline void set_num_threads(int n) {
  if (n < 1) n = 1;
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  openblas_set_num_threads(n);
}

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Static partition over [0, n). Iterations must write disjoint outputs.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
#ifdef _OPENMP
  if (n > 1 && omp_get_max_threads() > 1 && !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace gpcseg
