#include "bdsvie/grid.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "bdsvie/errors.hpp"
#include "bdsvie/parallel.hpp"

namespace bdsvie {

namespace {

std::size_t g_memory_cap = std::size_t{3} << 30;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix(h ^ splitmix(v)); }

double to_unit_open(std::uint64_t bits) {
    // 53 random bits mapped into (0, 1).
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

TimeGrid make_grid(double T, std::size_t N) {
    if (!(T > 0.0) || !std::isfinite(T)) fail(ErrorCode::invalid_argument, "horizon T must be positive");
    if (N == 0) fail(ErrorCode::invalid_argument, "number of steps N must be at least 1");
    TimeGrid g;
    g.T = T;
    g.N = N;
    g.uniform = true;
    g.nodes.resize(N + 1);
    for (std::size_t i = 0; i <= N; ++i) g.nodes[i] = T * static_cast<double>(i) / static_cast<double>(N);
    g.nodes[N] = T;
    return g;
}

void set_memory_cap(std::size_t bytes) { g_memory_cap = bytes; }
std::size_t memory_cap() { return g_memory_cap; }

void check_allocation(std::size_t bytes, const char* what) {
    if (bytes > g_memory_cap) {
        fail(ErrorCode::resource, std::string(what) + " needs " + std::to_string(bytes) +
                                      " bytes, above the configured cap of " + std::to_string(g_memory_cap));
    }
}

double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t path, std::uint64_t step,
                      std::uint64_t component) {
    std::uint64_t h = mix(splitmix(seed), stream);
    h = mix(h, path);
    h = mix(h, step);
    h = mix(h, component);
    const double u1 = to_unit_open(splitmix(h ^ 0x1ULL));
    const double u2 = to_unit_open(splitmix(h ^ 0x2ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ScenarioBatch::ScenarioBatch(TimeGrid grid, std::size_t M, std::size_t d, std::size_t l, std::uint64_t seed)
    : grid_(std::move(grid)), M_(M), d_(d), l_(l), seed_(seed) {
    if (M == 0) fail(ErrorCode::invalid_argument, "number of paths M must be at least 1");
    if (d == 0 || l == 0) fail(ErrorCode::invalid_argument, "Brownian dimensions d, l must be at least 1");
    const std::size_t N = grid_.N;
    const double bytes = 8.0 * static_cast<double>(M) * static_cast<double>(2 * N + 1) *
                         static_cast<double>(d + l);
    check_allocation(bytes > 1e19 ? std::size_t(-1) : static_cast<std::size_t>(bytes), "scenario batch");

    std::uint64_t h = mix(splitmix(seed), M);
    h = mix(h, N);
    h = mix(h, d);
    h = mix(h, l);
    for (double t : grid_.nodes) h = mix(h, std::bit_cast<std::uint64_t>(t));
    id_ = h;

    dW_.assign(N * M * d, 0.0);
    dB_.assign(N * M * l, 0.0);
    W_.assign((N + 1) * M * d, 0.0);
    B_.assign((N + 1) * M * l, 0.0);

    parallel_for(N, [&](std::size_t j) {
        const double sd = std::sqrt(grid_.dt(j));
        for (std::size_t p = 0; p < M; ++p) {
            for (std::size_t c = 0; c < d; ++c)
                dW_[(j * M + p) * d + c] = sd * counter_normal(seed, 0, p, j, c);
            for (std::size_t c = 0; c < l; ++c)
                dB_[(j * M + p) * l + c] = sd * counter_normal(seed, 1, p, j, c);
        }
    });
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t k = 0; k < M * d; ++k) W_[(j + 1) * M * d + k] = W_[j * M * d + k] + dW_[j * M * d + k];
        for (std::size_t k = 0; k < M * l; ++k) B_[(j + 1) * M * l + k] = B_[j * M * l + k] + dB_[j * M * l + k];
    }
}

ScenarioBatch generate_scenarios(const TimeGrid& grid, std::size_t M, std::size_t d, std::size_t l,
                                 std::uint64_t seed) {
    return ScenarioBatch(grid, M, d, l, seed);
}

namespace {

void check_integral_args(std::span<const double> field, const ScenarioBatch& batch, std::size_t a,
                         std::size_t b, std::size_t component, std::size_t dim) {
    const std::size_t N = batch.steps();
    if (a > b || b > N) {
        fail(ErrorCode::invalid_argument, "integral range [" + std::to_string(a) + ", " + std::to_string(b) +
                                              "] outside grid with N = " + std::to_string(N));
    }
    if (field.size() != (N + 1) * batch.paths())
        fail(ErrorCode::invalid_argument, "integrand must hold (N+1)*M node-major values");
    if (component >= dim) fail(ErrorCode::invalid_argument, "Brownian component out of range");
}

}  // namespace

std::vector<double> forward_ito_integral(std::span<const double> field, const ScenarioBatch& batch,
                                         std::size_t a, std::size_t b, std::size_t component) {
    check_integral_args(field, batch, a, b, component, batch.dim_w());
    const std::size_t M = batch.paths();
    std::vector<double> out(M, 0.0);
    for (std::size_t p = 0; p < M; ++p) {
        double s = 0.0;
        for (std::size_t j = a; j < b; ++j) s += field[j * M + p] * batch.dW(j, p, component);
        out[p] = s;
    }
    return out;
}

std::vector<double> backward_ito_integral(std::span<const double> field, const ScenarioBatch& batch,
                                          std::size_t a, std::size_t b, std::size_t component) {
    check_integral_args(field, batch, a, b, component, batch.dim_b());
    const std::size_t M = batch.paths();
    std::vector<double> out(M, 0.0);
    for (std::size_t p = 0; p < M; ++p) {
        double s = 0.0;
        for (std::size_t j = a; j < b; ++j) s += field[(j + 1) * M + p] * batch.dB(j, p, component);
        out[p] = s;
    }
    return out;
}

}  // namespace bdsvie
