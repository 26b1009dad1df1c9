#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bdsvie/errors.hpp"
#include "bdsvie/parallel.hpp"
#include "bdsvie/regression.hpp"

using namespace bdsvie;

namespace {

struct Fixture : ::testing::Test {
    static constexpr std::size_t M = 20000;
    TimeGrid grid = make_grid(1.0, 16);
    ScenarioBatch batch = generate_scenarios(grid, M, 1, 1, 2024);

    std::vector<double> per_path(auto fn) const {
        std::vector<double> v(M);
        for (std::size_t p = 0; p < M; ++p) v[p] = fn(p);
        return v;
    }
    static double rms(std::span<const double> a, std::span<const double> b) {
        std::vector<double> d(a.size());
        for (std::size_t p = 0; p < a.size(); ++p) d[p] = (a[p] - b[p]) * (a[p] - b[p]);
        return std::sqrt(mean(d));
    }
};

using Condexp = Fixture;

// Reconstruction noise for in-span targets: about sqrt(2p/M) with p = 10.
constexpr double kSpanNoise = 3.0 * 0.0317;
using Represent = Fixture;

}  // namespace

TEST(Basis, Dimensions) {
    RegressionBasis b;
    EXPECT_EQ(b.dimension(), 10u);
    b.degree = 1;
    EXPECT_EQ(b.dimension(), 4u);
    b.kind = BasisKind::piecewise_constant;
    b.degree = 3;
    EXPECT_EQ(b.dimension(), 64u);
}

TEST(Basis, RejectsBLevelUnderF) {
    RegressionBasis b;
    b.features.push_back({FeatureKind::b_level});
    EXPECT_THROW(b.validate(SigmaField::F), Error);
    EXPECT_NO_THROW(b.validate(SigmaField::G));
}

TEST_F(Condexp, ConstantReproduced) {
    std::vector<double> c(M, 3.25);
    auto [out, est] = condexp(c, batch, 7, SigmaField::F, RegressionBasis{});
    for (double v : out) EXPECT_NEAR(v, 3.25, 1e-12);
    EXPECT_NEAR(est.coefficients[0], 3.25, 1e-12);
}

TEST_F(Condexp, MartingaleTarget) {
    RegressionBasis b;
    b.degree = 1;
    b.features = {{FeatureKind::w_level}};
    auto target = per_path([&](std::size_t p) { return batch.W(16, p); });
    for (std::size_t j : {4u, 8u, 12u}) {
        auto [out, est] = condexp(target, batch, j, SigmaField::F, b);
        auto exact = per_path([&](std::size_t p) { return batch.W(j, p); });
        // Var(W(T) | F_j) = T - t_j; two fitted parameters.
        EXPECT_LE(rms(out, exact), 5.0 * std::sqrt(2.0 * (1.0 - grid.t(j)) / M));
        EXPECT_NEAR(est.residual_rms, std::sqrt(1.0 - grid.t(j)), 0.02);
    }
}

TEST_F(Condexp, MeasurableTargetExact) {
    auto target = per_path([&](std::size_t p) { return batch.B_tail(5, p); });
    auto [out, est] = condexp(target, batch, 5, SigmaField::F, RegressionBasis{});
    EXPECT_LE(rms(out, target), 1e-6);
}

TEST_F(Condexp, IdempotentAndContracting) {
    RegressionBasis b;
    b.ridge = 0.0;
    auto target = per_path([&](std::size_t p) { return std::sin(batch.W(16, p)) + batch.B(16, p) * batch.W(9, p); });
    auto [once, e1] = condexp(target, batch, 9, SigmaField::F, b);
    auto [twice, e2] = condexp(once, batch, 9, SigmaField::F, b);
    EXPECT_LE(rms(once, twice), 1e-10);
    std::vector<double> a(M), c(M);
    for (std::size_t p = 0; p < M; ++p) {
        a[p] = once[p] * once[p];
        c[p] = target[p] * target[p];
    }
    EXPECT_LE(mean(a), mean(c));
    auto [g, eg] = condexp(target, batch, 9, SigmaField::G, b);
    EXPECT_EQ(eg.field, SigmaField::G);
}

TEST_F(Condexp, PiecewiseConstant) {
    RegressionBasis b;
    b.kind = BasisKind::piecewise_constant;
    b.degree = 3;
    std::vector<double> c(M, -1.5);
    auto [out, est] = condexp(c, batch, 8, SigmaField::F, b);
    for (double v : out) EXPECT_NEAR(v, -1.5, 1e-12);
    // Two bins split at the sample mean: the indicator of the upper bin lies in the span.
    b.degree = 1;
    b.features = {{FeatureKind::w_level}};
    auto w = per_path([&](std::size_t p) { return batch.W(8, p); });
    const double m = mean(w);
    auto target = per_path([&](std::size_t p) { return w[p] > m ? 1.0 : 0.0; });
    auto [fit, e2] = condexp(target, batch, 8, SigmaField::F, b);
    EXPECT_LE(rms(fit, target), 1e-6);
}

TEST_F(Condexp, Errors) {
    RegressionBasis b;
    b.ridge = 0.0;
    std::vector<double> x(M, 1.0);
    try {
        condexp(x, batch, 0, SigmaField::F, b);  // W(t_0) = 0 columns
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate_design);
    }
    x[17] = std::numeric_limits<double>::quiet_NaN();
    try {
        condexp(x, batch, 3, SigmaField::F, RegressionBasis{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    }
}

TEST_F(Represent, ConstantHasNullIntegrand) {
    Projector proj(batch, RegressionBasis{});
    std::vector<double> c(M, 2.0);
    auto r = represent_forward(c, 12, 0, proj);
    for (double z : r.integrand) EXPECT_LE(std::abs(z), 5.0 / std::sqrt(M));
    auto q = represent_backward(c, 3, 3, 16, proj);
    for (double z : q.integrand) EXPECT_LE(std::abs(z), 5.0 / std::sqrt(M));
}

TEST_F(Represent, ForwardBrownianLevel) {
    Projector proj(batch, RegressionBasis{});
    const std::size_t i = 12;
    auto target = per_path([&](std::size_t p) { return batch.W(i, p); });
    auto r = represent_forward(target, i, 0, proj);
    for (std::size_t j = 0; j < i; ++j) {
        std::vector<double> z(M);
        for (std::size_t p = 0; p < M; ++p) z[p] = r.at(j, p, M);
        EXPECT_NEAR(mean(z), 1.0, 5.0 / std::sqrt(M) + grid.dt(j));
    }
    EXPECT_LE(r.residual, kSpanNoise);
}

TEST_F(Represent, ForwardItoSquare) {
    Projector proj(batch, RegressionBasis{});
    const std::size_t i = 16;
    auto target = per_path([&](std::size_t p) { return batch.W(i, p) * batch.W(i, p); });
    auto r = represent_forward(target, i, 0, proj);
    std::vector<double> err;
    for (std::size_t j = 0; j < i; ++j)
        for (std::size_t p = 0; p < M; ++p) {
            const double d = r.at(j, p, M) - 2.0 * batch.W(j, p);
            err.push_back(d * d);
        }
    EXPECT_LE(std::sqrt(mean(err)), 0.1);
    // E[W_T^2] = 1 is the anchor at S = 0.
    EXPECT_NEAR(mean(r.anchor), 1.0, 0.05);
}

TEST_F(Represent, BackwardTail) {
    Projector proj(batch, RegressionBasis{});
    const std::size_t i = 4;
    auto target = per_path([&](std::size_t p) { return batch.B_tail(i, p); });
    auto r = represent_backward(target, i, i, 16, proj);
    for (std::size_t j = i; j < 16; ++j) {
        std::vector<double> q(M);
        for (std::size_t p = 0; p < M; ++p) q[p] = r.at(j, p, M);
        EXPECT_NEAR(mean(q), 1.0, 5.0 / std::sqrt(M) + grid.dt(j));
    }
    EXPECT_LE(r.residual, kSpanNoise);
}

TEST_F(Represent, BackwardItoSquare) {
    Projector proj(batch, RegressionBasis{});
    const std::size_t i = 0;
    auto target = per_path([&](std::size_t p) { return batch.B_tail(i, p) * batch.B_tail(i, p); });
    auto r = represent_backward(target, i, i, 16, proj);
    std::vector<double> err;
    for (std::size_t j = i; j < 16; ++j)
        for (std::size_t p = 0; p < M; ++p) {
            const double d = r.at(j, p, M) - 2.0 * batch.B_tail(j + 1, p);
            err.push_back(d * d);
        }
    // Direct estimator: noise about sqrt(Var * p / (M dt)) ~ 0.09.
    EXPECT_LE(std::sqrt(mean(err)), 0.15);
}

TEST_F(Represent, ProjectorThreadSafeAndDeterministic) {
    Projector p1(batch, RegressionBasis{});
    auto target = per_path([&](std::size_t p) { return std::cos(batch.W(16, p)) * batch.B(16, p); });
    std::vector<std::vector<double>> outs(16);
    parallel_for(16, [&](std::size_t j) { outs[j] = p1.project(target, {j, j}); });
    Projector p2(batch, RegressionBasis{});
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(outs[j], p2.project(target, {j, j}));
}
