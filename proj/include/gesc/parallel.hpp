#pragma once

namespace gesc {

/// Caps OpenMP workers from GESC_THREADS (positive integer). Unset or
/// invalid values leave the runtime default.
void configure_threads_from_env();

int worker_count();

}  // namespace gesc
