#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bdsvie/errors.hpp"
#include "bdsvie/fields.hpp"
#include "bdsvie/grid.hpp"
#include "bdsvie/parallel.hpp"

using namespace bdsvie;

namespace {

std::vector<double> node_major(const ScenarioBatch& b, auto fn) {
    const std::size_t M = b.paths(), N = b.steps();
    std::vector<double> f((N + 1) * M);
    for (std::size_t j = 0; j <= N; ++j)
        for (std::size_t p = 0; p < M; ++p) f[j * M + p] = fn(j, p);
    return f;
}

}  // namespace

TEST(TimeGrid, UniformNodes) {
    auto g = make_grid(1.0, 4);
    ASSERT_EQ(g.nodes.size(), 5u);
    const double expect[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g.nodes[i], expect[i]);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(std::abs(g.dt(i) - 0.25), 1e-12);
}

TEST(TimeGrid, SingleStep) {
    auto g = make_grid(2.0, 1);
    ASSERT_EQ(g.nodes.size(), 2u);
    EXPECT_EQ(g.nodes[0], 0.0);
    EXPECT_EQ(g.nodes[1], 2.0);
}

TEST(TimeGrid, RejectsBadInput) {
    try {
        make_grid(0.0, 4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    }
    EXPECT_THROW(make_grid(1.0, 0), Error);
}

TEST(Scenarios, BitIdenticalRegeneration) {
    auto g = make_grid(1.0, 16);
    auto a = generate_scenarios(g, 10000, 1, 1, 42);
    auto b = generate_scenarios(g, 10000, 1, 1, 42);
    EXPECT_EQ(a.id(), b.id());
    EXPECT_TRUE(std::equal(a.dW_data().begin(), a.dW_data().end(), b.dW_data().begin()));
    EXPECT_TRUE(std::equal(a.dB_data().begin(), a.dB_data().end(), b.dB_data().begin()));
    auto c = generate_scenarios(g, 10000, 1, 1, 43);
    EXPECT_NE(a.dW(3, 7), c.dW(3, 7));
}

TEST(Scenarios, ThreadCountIndependent) {
    auto g = make_grid(1.0, 8);
    set_thread_count(1);
    auto a = generate_scenarios(g, 3000, 2, 1, 5);
    set_thread_count(4);
    auto b = generate_scenarios(g, 3000, 2, 1, 5);
    set_thread_count(0);
    EXPECT_TRUE(std::equal(a.dW_data().begin(), a.dW_data().end(), b.dW_data().begin()));
}

TEST(Scenarios, PrefixSumsExact) {
    auto g = make_grid(1.0, 8);
    auto b = generate_scenarios(g, 500, 2, 3, 1);
    for (std::size_t p = 0; p < 500; p += 37)
        for (std::size_t c = 0; c < 2; ++c) {
            double w = 0.0;
            EXPECT_EQ(b.W(0, p, c), 0.0);
            for (std::size_t j = 0; j < 8; ++j) {
                w += b.dW(j, p, c);
                EXPECT_EQ(b.W(j + 1, p, c), w);
            }
        }
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            s += b.dB(j, 11, c);
            EXPECT_EQ(b.B(j + 1, 11, c), s);
        }
    }
}

TEST(Scenarios, MomentsAndIndependence) {
    auto g = make_grid(1.0, 16);
    const std::size_t M = 10000;
    auto b = generate_scenarios(g, M, 1, 1, 42);
    std::vector<double> wT(M), bT(M), prod(M);
    for (std::size_t p = 0; p < M; ++p) {
        wT[p] = b.W(16, p);
        bT[p] = b.B(16, p);
    }
    const double mw = mean(wT), mb = mean(bT);
    EXPECT_LE(std::abs(mw), 5.0 * std::sqrt(1.0 / M));
    double sww = 0, sbb = 0, swb = 0;
    for (std::size_t p = 0; p < M; ++p) {
        sww += (wT[p] - mw) * (wT[p] - mw);
        sbb += (bT[p] - mb) * (bT[p] - mb);
        swb += (wT[p] - mw) * (bT[p] - mb);
    }
    EXPECT_LE(std::abs(swb / std::sqrt(sww * sbb)), 5.0 / std::sqrt(M));
    for (std::size_t j = 0; j < 16; ++j) {
        std::vector<double> x(M), y(M);
        for (std::size_t p = 0; p < M; ++p) {
            x[p] = b.dW(j, p);
            y[p] = b.dB(j, p);
        }
        for (auto* v : {&x, &y}) {
            const double m = mean(*v);
            double s = 0.0;
            for (double e : *v) s += (e - m) * (e - m);
            const double var = s / (M - 1);
            EXPECT_LE(std::abs(var - g.dt(j)), 5.0 * g.dt(j) / std::sqrt(M));
        }
    }
}

TEST(Scenarios, MemoryCap) {
    const auto old = memory_cap();
    set_memory_cap(1000);
    try {
        generate_scenarios(make_grid(1.0, 16), 10000, 1, 1, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::resource);
    }
    set_memory_cap(old);
}

TEST(Integrals, ZeroAndTelescoping) {
    auto g = make_grid(1.0, 8);
    auto b = generate_scenarios(g, 200, 1, 1, 9);
    std::vector<double> zero(9 * 200, 0.0), one(9 * 200, 1.0);
    for (double v : forward_ito_integral(zero, b, 0, 8)) EXPECT_EQ(v, 0.0);
    for (double v : backward_ito_integral(zero, b, 0, 8)) EXPECT_EQ(v, 0.0);
    auto fw = forward_ito_integral(one, b, 0, 8);
    auto bw = backward_ito_integral(one, b, 3, 8);
    for (std::size_t p = 0; p < 200; ++p) {
        EXPECT_NEAR(fw[p], b.W(8, p), 1e-14);
        EXPECT_NEAR(bw[p], b.B_tail(3, p), 1e-14);
    }
}

TEST(Integrals, RangeErrors) {
    auto g = make_grid(1.0, 4);
    auto b = generate_scenarios(g, 10, 1, 1, 9);
    std::vector<double> one(5 * 10, 1.0);
    EXPECT_THROW(forward_ito_integral(one, b, 3, 2), Error);
    EXPECT_THROW(backward_ito_integral(one, b, 0, 5), Error);
}

TEST(Integrals, MartingaleMeans) {
    auto g = make_grid(1.0, 16);
    const std::size_t M = 10000;
    auto b = generate_scenarios(g, M, 1, 1, 42);
    auto wf = node_major(b, [&](std::size_t j, std::size_t p) { return b.W(j, p); });
    auto fi = forward_ito_integral(wf, b, 0, 16);
    // E int_0^1 W^2 dt = 1/2.
    EXPECT_LE(std::abs(mean(fi)), 5.0 * std::sqrt(0.5 / M));
    auto bf = node_major(b, [&](std::size_t j, std::size_t p) { return b.B_tail(j, p); });
    auto bi = backward_ito_integral(bf, b, 0, 16);
    EXPECT_LE(std::abs(mean(bi)), 5.0 * std::sqrt(0.5 / M));
}

TEST(Integrals, LinearityAndAdjacency) {
    auto g = make_grid(1.0, 10);
    auto b = generate_scenarios(g, 300, 1, 1, 3);
    auto f1 = node_major(b, [&](std::size_t j, std::size_t p) { return b.W(j, p); });
    auto f2 = node_major(b, [&](std::size_t j, std::size_t) { return 0.5 * j; });
    std::vector<double> sum(f1.size());
    for (std::size_t k = 0; k < f1.size(); ++k) sum[k] = f1[k] + f2[k];
    auto a = forward_ito_integral(f1, b, 0, 10), c = forward_ito_integral(f2, b, 0, 10);
    auto s = forward_ito_integral(sum, b, 0, 10);
    for (std::size_t p = 0; p < 300; ++p) EXPECT_NEAR(s[p], a[p] + c[p], 1e-13);
    auto left = backward_ito_integral(f1, b, 0, 4), right = backward_ito_integral(f1, b, 4, 10);
    auto all = backward_ito_integral(f1, b, 0, 10);
    for (std::size_t p = 0; p < 300; ++p) EXPECT_NEAR(left[p] + right[p], all[p], 10 * 4e-16 * (1 + std::abs(all[p])));
}

TEST(Fields, WeightedNormOracles) {
    auto g = make_grid(1.0, 64);
    auto b = generate_scenarios(g, 16, 1, 1, 1);
    DiagonalProcess Y(b, 1);
    TwoParameterField Z(b, 1, Region::upper);
    EXPECT_EQ(weighted_norm(Y, Z, 1.0, g), 0.0);
    for (auto& v : Y.data()) v = 1.0;
    const double dt = 1.0 / 64;
    EXPECT_NEAR(weighted_norm(Y, Z, 0.0, g), 1.0, dt);
    const double e1 = std::exp(1.0) - 1.0;
    EXPECT_LE(std::abs(weighted_norm(Y, Z, 1.0, g) - e1), e1 * dt);
    // Z == 1 on Delta: int_0^1 (1 - t) dt = 1/2.
    for (auto& v : Z.data()) v = 1.0;
    EXPECT_NEAR(weighted_norm(Y, Z, 0.0, g) - 1.0, 0.5, 2 * dt);
    EXPECT_NEAR(weighted_norm(Y, Z, 0.0, g, NormRegion::lower) - 1.0, 0.5, 2 * dt);
}

TEST(Fields, BinaryRoundTrip) {
    auto g = make_grid(1.0, 3);
    auto b = generate_scenarios(g, 4, 1, 1, 1);
    TwoParameterField Z(b, 2, Region::full);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t p = 0; p < 4; ++p)
                for (std::size_t c = 0; c < 2; ++c) Z.at(i, j, p, c) = 1000 * p + 100 * i + 10 * j + c;
    const std::string path = ::testing::TempDir() + "z.bin";
    write_binary(Z, path);
    auto a = read_binary(path);
    ASSERT_EQ(a.dims, (std::vector<std::uint64_t>{4, 4, 4, 2}));
    EXPECT_EQ(a.values[((2 * 4 + 1) * 4 + 3) * 2 + 1], 2000 + 100 + 30 + 1);
    std::ifstream raw(path, std::ios::binary);
    char magic[5];
    raw.read(magic, 5);
    EXPECT_EQ(std::string(magic, 5), "BDSV1");
    std::remove(path.c_str());
}

TEST(Reductions, PairwiseOrderFixed) {
    std::vector<double> v(5000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + i);
    EXPECT_EQ(pairwise_sum(v), pairwise_sum(v));
    EXPECT_NEAR(pairwise_sum(v), std::accumulate(v.begin(), v.end(), 0.0), 1e-12);
}
