#include "bdsvie/parallel.hpp"

#include <cmath>

#include <omp.h>

namespace bdsvie {

namespace {
int g_threads = 0;
}

void set_thread_count(int threads) {
    g_threads = threads;
    if (threads > 0) omp_set_num_threads(threads);
}

int thread_count() {
    return g_threads > 0 ? g_threads : omp_get_max_threads();
}

double pairwise_sum(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    const std::size_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
    std::vector<double> partial(blocks, 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t lo = b * kReductionBlock;
        const std::size_t hi = std::min(n, lo + kReductionBlock);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += values[i];
        partial[b] = s;
    }
    for (std::size_t stride = 1; stride < blocks; stride *= 2) {
        for (std::size_t b = 0; b + stride < blocks; b += 2 * stride) partial[b] += partial[b + stride];
    }
    return partial[0];
}

void tree_reduce(std::vector<std::vector<double>>& parts) {
    const std::size_t blocks = parts.size();
    for (std::size_t stride = 1; stride < blocks; stride *= 2) {
        for (std::size_t b = 0; b + stride < blocks; b += 2 * stride) {
            auto& dst = parts[b];
            const auto& src = parts[b + stride];
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

double mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return pairwise_sum(values) / static_cast<double>(values.size());
}

MeanStderr mean_stderr(std::span<const double> values) {
    MeanStderr out;
    const std::size_t n = values.size();
    if (n == 0) return out;
    out.mean = mean(values);
    if (n < 2) return out;
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = values[i] - out.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
    out.std_error = std::sqrt(var / static_cast<double>(n));
    return out;
}

}  // namespace bdsvie
