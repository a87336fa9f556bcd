#include "gesc/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace gesc {

void configure_threads_from_env() {
    const char* env = std::getenv("GESC_THREADS");
    if (!env) return;
    try {
        const int n = std::stoi(env);
        if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
    }
}

int worker_count() { return omp_get_max_threads(); }

}  // namespace gesc
