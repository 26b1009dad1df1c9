#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bdsvie {

/// Partition 0 = t_0 < ... < t_N = T.
struct TimeGrid {
    double T = 1.0;
    std::size_t N = 1;
    std::vector<double> nodes;
    bool uniform = true;

    double t(std::size_t i) const { return nodes[i]; }
    double dt(std::size_t i) const { return nodes[i + 1] - nodes[i]; }
    std::size_t size() const { return nodes.size(); }
};

TimeGrid make_grid(double T, std::size_t N);

/// Global byte cap checked before large allocations (scenario batches, fields).
void set_memory_cap(std::size_t bytes);
std::size_t memory_cap();
void check_allocation(std::size_t bytes, const char* what);

enum class Noise : std::uint32_t { W = 0, B = 1 };

/// Paired increments of two independent Brownian motions on a grid.
///
/// Storage is step-major: dW[(j*M + path)*d + c], W[(i*M + path)*d + c].
class ScenarioBatch {
public:
    ScenarioBatch(TimeGrid grid, std::size_t M, std::size_t d, std::size_t l, std::uint64_t seed);

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return M_; }
    std::size_t steps() const { return grid_.N; }
    std::size_t dim_w() const { return d_; }
    std::size_t dim_b() const { return l_; }
    std::uint64_t seed() const { return seed_; }
    /// Fingerprint of (grid, M, d, l, seed); equal for regenerated batches.
    std::uint64_t id() const { return id_; }

    double dW(std::size_t step, std::size_t path, std::size_t c = 0) const {
        return dW_[(step * M_ + path) * d_ + c];
    }
    double dB(std::size_t step, std::size_t path, std::size_t c = 0) const {
        return dB_[(step * M_ + path) * l_ + c];
    }
    double W(std::size_t node, std::size_t path, std::size_t c = 0) const {
        return W_[(node * M_ + path) * d_ + c];
    }
    double B(std::size_t node, std::size_t path, std::size_t c = 0) const {
        return B_[(node * M_ + path) * l_ + c];
    }
    /// B(T) - B(t_node), the backward-measurable tail.
    double B_tail(std::size_t node, std::size_t path, std::size_t c = 0) const {
        return B(grid_.N, path, c) - B(node, path, c);
    }

    std::span<const double> dW_data() const { return dW_; }
    std::span<const double> dB_data() const { return dB_; }
    std::span<const double> W_data() const { return W_; }
    std::span<const double> B_data() const { return B_; }

private:
    TimeGrid grid_;
    std::size_t M_, d_, l_;
    std::uint64_t seed_;
    std::uint64_t id_;
    std::vector<double> dW_, dB_, W_, B_;
};

ScenarioBatch generate_scenarios(const TimeGrid& grid, std::size_t M, std::size_t d, std::size_t l,
                                 std::uint64_t seed);

/// Standard normal draw addressed by (seed, stream, path, step, component).
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t path, std::uint64_t step,
                      std::uint64_t component);

/// Left-endpoint sum over steps a..b-1 of field[j*M + path] * dW_j.
/// `field` is node-major with (N+1)*M entries.
std::vector<double> forward_ito_integral(std::span<const double> field, const ScenarioBatch& batch,
                                         std::size_t a, std::size_t b, std::size_t component = 0);

/// Right-endpoint sum over steps a..b-1 of field[(j+1)*M + path] * dB_j.
std::vector<double> backward_ito_integral(std::span<const double> field, const ScenarioBatch& batch,
                                          std::size_t a, std::size_t b, std::size_t component = 0);

}  // namespace bdsvie
