#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bdsvie/order.hpp"
#include "bdsvie/parallel.hpp"

using namespace bdsvie;

namespace {

double brute_1d(const std::function<double(double)>& f, unsigned n, double R, double h, double x) {
    const std::size_t K = static_cast<std::size_t>(std::ceil(2.0 * R / h - 1e-9)) + 1;
    const double step = 2.0 * R / static_cast<double>(K - 1);
    double best = INFINITY;
    for (std::size_t m = 0; m < K; ++m) {
        const double y = -R + m * step;
        best = std::min(best, f(y) + n * std::abs(x - y));
    }
    return best;
}

std::vector<double> probe_grid(double lo, double hi, std::size_t count) {
    std::vector<double> xs(count);
    for (std::size_t k = 0; k < count; ++k) xs[k] = lo + (hi - lo) * k / (count - 1);
    return xs;
}

}  // namespace

TEST(InfConvolution, ConstantSource) {
    auto a = inf_convolution([](double) { return 3.0; }, 3, 3.0, 20.0, 0.01, 0.0);
    for (double x : probe_grid(-5, 5, 41)) EXPECT_NEAR(a(x), 3.0, 1e-12);
}

TEST(InfConvolution, AbsoluteValue) {
    const double h = 0.01;
    auto a = inf_convolution([](double x) { return std::abs(x); }, 2, 1.0, 20.0, h, 0.0);
    for (double x : probe_grid(-5, 5, 201)) EXPECT_NEAR(a(x), std::abs(x), 2 * h);
}

TEST(InfConvolution, TwiceAbsoluteValue) {
    const double h = 0.01;
    auto f = [](double x) { return 2.0 * std::abs(x); };
    EXPECT_THROW(inf_convolution(f, 1, 2.0, 20.0, h, 0.0), Error);
    auto a = inf_convolution(f, 2, 2.0, 20.0, h, 0.0);
    for (double x : probe_grid(-5, 5, 201)) EXPECT_NEAR(a(x), 2.0 * std::abs(x), 2 * h);
    EXPECT_NEAR(a(1.0), 2.0, 2 * h);
    // Default L = M = n leaves no containment radius.
    EXPECT_THROW(inf_convolution(f, 2, 2.0, 20.0, h), Error);
}

TEST(InfConvolution, MatchesBruteForceOffGrid) {
    auto f = [](double x) { return std::sin(3.0 * x) + std::abs(x); };
    const double R = 12.0, h = 0.037;
    auto a = inf_convolution(f, 3, 2.0, R, h, 1.0);
    for (double x : probe_grid(-2.3, 2.9, 97)) EXPECT_NEAR(a(x), brute_1d(f, 3, R, h, x), 1e-12) << x;
}

TEST(InfConvolution, TwoDimensionalMatchesBruteForce) {
    auto f = [](double y, double z) { return 0.5 * std::abs(y) + 0.3 * std::sin(2.0 * z) - 0.2 * std::abs(z); };
    const double R = 3.0, h = 0.1;
    auto a = inf_convolution(LipschitzApprox::Fn2(f), 4, 1.0, R, h, 1.0);
    ASSERT_NEAR(a.safe_extent(), 1.4, 1e-12);
    const std::size_t K = 61;
    for (double y : {-0.71, -0.2, 0.0, 0.33, 0.9})
        for (double z : {-0.45, 0.05, 0.37}) {
            double best = INFINITY;
            for (std::size_t p = 0; p < K; ++p)
                for (std::size_t q = 0; q < K; ++q) {
                    const double gy = -R + p * (2 * R / (K - 1)), gz = -R + q * (2 * R / (K - 1));
                    best = std::min(best, f(gy, gz) + 4 * (std::abs(y - gy) + std::abs(z - gz)));
                }
            EXPECT_NEAR(a(y, z), best, 1e-12);
        }
}

TEST(InfConvolution, PropertiesOnProbeGrid) {
    const double h = 0.01;
    auto f = [](double x) { return 2.0 * std::abs(x); };
    std::vector<LipschitzApprox> fs;
    for (unsigned n : {2u, 3u, 4u, 5u}) fs.push_back(inf_convolution(f, n, 2.0, 30.0, h, 0.0));
    const auto xs = probe_grid(-5, 5, 201);
    for (std::size_t k = 0; k + 1 < fs.size(); ++k) {
        const double n = fs[k].n();
        for (double x : xs) {
            EXPECT_LE(fs[k](x), fs[k + 1](x));
            EXPECT_LE(std::abs(fs[k](x)), 2.0 * (1.0 + std::abs(x)));
            EXPECT_LE(fs[k](x), f(x) + n * h);
        }
        for (std::size_t p = 0; p + 1 < xs.size(); ++p)
            EXPECT_LE(std::abs(fs[k](xs[p]) - fs[k](xs[p + 1])), n * (xs[p + 1] - xs[p]) + 2 * n * h);
    }
}

TEST(InfConvolution, StrongConvergence) {
    auto f = [](double x) { return std::abs(x); };
    const double x = 0.7;
    double prev = INFINITY;
    for (unsigned n : {2u, 4u, 8u, 16u, 32u}) {
        auto a = inf_convolution(f, n, 1.0, 20.0, 1e-3, 0.0);
        const double err = std::abs(a(x + 1.0 / n) - f(x));
        // Off-grid evaluation adds at most n h.
        EXPECT_LE(err, 1.0 / n + n * 1e-3);
        EXPECT_LE(err, prev + 1e-12);
        prev = err;
    }
}

TEST(InfConvolution, TruncationGuard) {
    auto a = inf_convolution([](double x) { return std::abs(x); }, 2, 1.0, 5.0, 0.01, 0.0);
    EXPECT_NEAR(a.safe_extent(), 3.0, 1e-12);
    EXPECT_NO_THROW(a(2.9));
    try {
        a(3.5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::truncation);
    }
}

TEST(InfConvolution, CsvExport) {
    auto a = inf_convolution([](double x) { return std::abs(x); }, 2, 1.0, 10.0, 0.5, 0.0);
    const std::string path = ::testing::TempDir() + "fn.csv";
    write_csv(a, {-1.0, 0.25, 1.0}, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    EXPECT_EQ(header, "x,f,f_n");
    std::getline(in, row);
    EXPECT_EQ(row.substr(0, 3), "-1,");
    std::remove(path.c_str());
}

namespace {

struct Order : ::testing::Test {
    static constexpr std::size_t M = 2000;
    static constexpr std::size_t N = 8;
    TimeGrid grid = make_grid(1.0, N);
    ScenarioBatch batch = generate_scenarios(grid, M, 1, 1, 404);
    Projector proj{batch, RegressionBasis{}};
    const double noise = 5.0 / std::sqrt(double(M));
};

BdsvieDriver const_driver(double v) {
    return BdsvieDriver::scalar([v](double, double, double, double, double) { return v; }, {}, 0.0, 0.0, 1.0);
}

}  // namespace

TEST_F(Order, IdenticalInputs) {
    auto r = compare_solutions(FreeTerm::terminal_w(), const_driver(0.5), FreeTerm::terminal_w(), const_driver(0.5),
                               proj, 0.0);
    EXPECT_EQ(r.report.violation_fraction, 0.0);
    EXPECT_EQ(r.report.worst_violation, 0.0);
}

TEST_F(Order, ShiftedDrift) {
    auto r = compare_solutions(FreeTerm::constant(0.0), const_driver(1.0), FreeTerm::constant(0.0), const_driver(0.0),
                               proj, noise);
    EXPECT_EQ(r.report.violation_fraction, 0.0);
    for (std::size_t i = 0; i <= N; ++i)
        EXPECT_NEAR(r.first.Y.at(i, 17) - r.second.Y.at(i, 17), 1.0 - grid.t(i), 1e-10);
    ASSERT_EQ(r.report.profile.size(), N + 1);
}

TEST_F(Order, AbsoluteTerminal) {
    FreeTerm abs_w = FreeTerm::scalar([](const ScenarioBatch& b, std::size_t p, std::size_t) {
        return std::abs(b.W(b.steps(), p));
    });
    auto r = compare_solutions(abs_w, BdsvieDriver::zero(1.0), FreeTerm::constant(0.0), BdsvieDriver::zero(1.0), proj,
                               noise);
    EXPECT_LE(r.report.violation_fraction, 0.01);
}

TEST_F(Order, HypothesisViolations) {
    try {
        compare_solutions(FreeTerm::constant(0.0), const_driver(0.0), FreeTerm::constant(1.0), const_driver(0.0), proj,
                          noise);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::hypothesis_violation);
    }
    try {
        compare_solutions(FreeTerm::constant(0.0), const_driver(0.0), FreeTerm::constant(0.0), const_driver(1.0), proj,
                          noise);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::hypothesis_violation);
    }
    auto zeta = BdsvieDriver::scalar([](double, double, double, double, double z) { return 0.1 * z; }, {}, 0.01, 0.0,
                                     1.0, true);
    try {
        compare_solutions(FreeTerm::constant(0.0), zeta, FreeTerm::constant(0.0), zeta, proj, noise);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::hypothesis_violation);
    }
}

TEST_F(Order, AbsoluteDriversWithCosineNoise) {
    BdsvieDriver::ScalarFn g = [](double, double, double, double z, double) { return std::cos(z); };
    auto d1 = BdsvieDriver::scalar([](double, double, double y, double z, double) { return std::abs(y) + std::abs(z); },
                                   g, 2.0, 0.3, 1.0);
    auto d2 = BdsvieDriver::scalar(
        [](double, double, double y, double z, double) { return -(std::abs(y) + std::abs(z)); }, g, 2.0, 0.3, 1.0);
    ComparisonOptions opt;
    opt.f_bar = [](const DriverPoint& p, std::span<double> out) { out[0] = p.y[0] + p.z[0]; };
    opt.picard.certificate = CertificatePolicy::warn;
    auto r = compare_solutions(FreeTerm::terminal_w(), d1, FreeTerm::terminal_w(), d2, proj, noise, opt);
    EXPECT_LE(r.report.violation_fraction, 0.01);
    EXPECT_FALSE(r.report.notes.empty());
}

TEST_F(Order, MinimalSqrtCase) {
    ContinuousDriver d;
    d.f = [](double y, double) { return std::min(std::sqrt(std::abs(y)), 1.0 + std::abs(y)); };
    d.M_growth = 1.0;
    d.L_growth = 0.0;
    d.depends_on_z = false;
    MinimalOptions opt;
    opt.n_max = 4;
    auto r = solve_continuous_minimal(FreeTerm::constant(0.0), d, proj, opt);
    ASSERT_EQ(r.indices.front(), 1u);
    ASSERT_EQ(r.Y.size(), 4u);
    for (const auto& Y : r.Y)
        for (double v : Y.data()) EXPECT_LE(std::abs(v), 0.02);
    EXPECT_LE(r.worst_monotone_gap, r.noise_tol);
    EXPECT_LE(r.worst_barrier_gap, r.noise_tol);
    // U(t) = e^{T-t} - 1 up to the implicit left sum.
    EXPECT_NEAR(r.U.at(0, 0), std::pow(1.0 - 1.0 / N, -double(N)) - 1.0, 1e-8);
}

TEST_F(Order, MinimalLipschitzSourceMatchesOde) {
    ContinuousDriver d;
    d.f = [](double y, double) { return y; };
    d.depends_on_z = false;
    MinimalOptions opt;
    opt.n_max = 3;
    opt.state_bound = 4.0;
    opt.h = 1e-3;
    auto r = solve_continuous_minimal(FreeTerm::constant(1.0), d, proj, opt);
    EXPECT_EQ(r.indices.front(), 2u);
    // Off-grid arguments see f_n(y) - y in [0, (n-1) h].
    EXPECT_NEAR(r.minimal().at(0, 0), std::pow(1.0 - 1.0 / N, -double(N)), 3 * 2 * opt.h);
    EXPECT_LE(r.cauchy_tail, 2 * 3 * opt.h);
}

TEST_F(Order, MinimalZeroCase) {
    ContinuousDriver d;
    d.f = [](double, double) { return 0.0; };
    d.L_growth = 0.0;
    MinimalOptions opt;
    opt.n_max = 2;
    opt.h = 0.05;
    opt.state_bound = 2.0;
    auto r = solve_continuous_minimal(FreeTerm::constant(0.0), d, proj, opt);
    for (const auto& Y : r.Y)
        for (double v : Y.data()) EXPECT_EQ(v, 0.0);
}
