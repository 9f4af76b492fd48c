#include "layerforge/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

#include <omp.h>

namespace layerforge {

namespace {
int default_threads = omp_get_max_threads();
}

void set_num_threads(int n) { omp_set_num_threads(n > 0 ? n : default_threads); }

int num_threads() { return omp_get_max_threads(); }

int threads_from_env() {
  const char* v = std::getenv("LAYERFORGE_THREADS");
  if (v == nullptr) return 0;
  int n = 0;
  auto [ptr, ec] = std::from_chars(v, v + std::strlen(v), n);
  if (ec != std::errc() || n < 0) return 0;
  return n;
}

}  // namespace layerforge
