#pragma once

#include <cstddef>
#include <exception>
#include <limits>
#include <span>
#include <vector>

namespace bdsvie {

/// Paths are reduced in fixed blocks of this size, then pairwise across blocks.
inline constexpr std::size_t kReductionBlock = 1024;

/// Cap the worker count used by parallel loops (0 leaves the runtime default).
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n). The first exception by index is rethrown.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    std::vector<std::exception_ptr> errors;
    std::size_t first_error = std::numeric_limits<std::size_t>::max();
    bool any_error = false;
#pragma omp parallel for schedule(dynamic, 1)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        try {
            body(i);
        } catch (...) {
#pragma omp critical(bdsvie_parallel_error)
            {
                if (!any_error || i < first_error) {
                    if (errors.empty()) errors.resize(1);
                    errors[0] = std::current_exception();
                    first_error = i;
                    any_error = true;
                }
            }
        }
    }
    if (any_error) std::rethrow_exception(errors[0]);
}

/// Order-fixed sum: sequential within blocks, pairwise tree across blocks.
double pairwise_sum(std::span<const double> values);

/// Pairwise tree reduction of equally sized partial vectors, in place into parts[0].
void tree_reduce(std::vector<std::vector<double>>& parts);

double mean(std::span<const double> values);

/// Sample mean and standard error of the mean.
struct MeanStderr {
    double mean = 0.0;
    double std_error = 0.0;
};
MeanStderr mean_stderr(std::span<const double> values);

}  // namespace bdsvie
