#pragma once

namespace layerforge {

// Thread count used by the OpenMP kernels. 0 restores the runtime default.
void set_num_threads(int n);
int num_threads();

// Reads LAYERFORGE_THREADS; returns 0 when unset or unparsable.
int threads_from_env();

}  // namespace layerforge
