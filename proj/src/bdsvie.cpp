#include "bdsvie/bdsvie.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "bdsvie/parallel.hpp"

namespace bdsvie {

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

double sq_norm(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

CertificateResult certify_pair(const DriverFn& a, const DriverFn& b, double c, double alpha, Dims dims,
                               std::size_t a_size, std::size_t b_size, std::size_t z_size, const TimeGrid& grid,
                               std::size_t paths, bool lower_triangle, std::uint64_t seed) {
    CertificateResult r;
    constexpr std::size_t kProbes = 100;
    const std::size_t N = grid.N;
    const std::size_t k = dims.k;
    std::vector<double> y1(k), y2(k), z1(z_size), z2(z_size), w1(z_size), w2(z_size);
    std::vector<double> a1(a_size), a2(a_size), b1(b_size), b2(b_size);
    std::uint64_t counter = 0;
    auto draw = [&]() { return counter_normal(seed, kProbeStream, 0, counter++, 0); };
    auto pick = [&](std::size_t n) {
        const double u = 0.5 * (1.0 + std::erf(draw() / std::sqrt(2.0)));
        return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
    };
    for (std::size_t probe = 0; probe < kProbes; ++probe) {
        std::size_t i = pick(N + 1), j = pick(N + 1);
        if (lower_triangle) {
            if (i == j) i = std::min(N, i + 1), j = i - 1;
            if (j > i) std::swap(i, j);
        } else if (j < i) {
            std::swap(i, j);
        }
        const std::size_t path = paths > 0 ? pick(paths) : 0;
        const double scale = probe % 3 == 0 ? 1.0 : (probe % 3 == 1 ? 0.1 : 0.01);
        for (auto* v : {&y1, &z1, &w1})
            for (auto& x : *v) x = 2.0 * draw();
        for (std::size_t q = 0; q < k; ++q) y2[q] = y1[q] + scale * draw();
        for (std::size_t q = 0; q < z_size; ++q) {
            z2[q] = z1[q] + scale * draw();
            w2[q] = w1[q] + scale * draw();
        }
        DriverPoint p1{path, i, j, grid.t(i), grid.t(j), y1, z1, w1};
        DriverPoint p2{path, i, j, grid.t(i), grid.t(j), y2, z2, w2};
        const double dx = sq_norm(y1, y2) + sq_norm(z1, z2) + sq_norm(w1, w2);
        if (a) {
            a(p1, a1);
            a(p2, a2);
            const double ratio = sq_norm(a1, a2) / dx;
            r.worst_f_ratio = std::max(r.worst_f_ratio, ratio);
            if (sq_norm(a1, a2) > c * dx * (1.0 + 1e-9) + 1e-12) r.passed = false;
        }
        if (b) {
            b(p1, b1);
            b(p2, b2);
            const double ratio = sq_norm(b1, b2) / dx;
            r.worst_g_ratio = std::max(r.worst_g_ratio, ratio);
            if (sq_norm(b1, b2) > alpha * dx * (1.0 + 1e-9) + 1e-12) r.passed = false;
        }
        ++r.probes;
    }
    std::ostringstream msg;
    msg << "Lipschitz probe: worst drift ratio " << r.worst_f_ratio << " (declared " << c << "), worst noise ratio "
        << r.worst_g_ratio << " (declared " << alpha << ")";
    r.message = msg.str();
    return r;
}

BdsvieDriver::BdsvieDriver(DriverFn f, DriverFn g, double c, double alpha, double T, Dims dims,
                           bool depends_on_zeta, bool depends_on_y)
    : f_(std::move(f)),
      g_(std::move(g)),
      c_(c),
      alpha_(alpha),
      T_(T),
      dims_(dims),
      depends_on_zeta_(depends_on_zeta),
      depends_on_y_(depends_on_y) {
    if (!(T > 0.0)) fail(ErrorCode::invalid_argument, "driver horizon must be positive");
    if (!(c >= 0.0) || !std::isfinite(c)) fail(ErrorCode::invalid_argument, "Lipschitz constant c must be nonnegative");
    if (!(alpha >= 0.0) || !(alpha < 1.0 / (T + 2.0))) {
        std::ostringstream msg;
        msg << "noise Lipschitz constant alpha = " << alpha << " violates alpha < 1/(T+2) = " << 1.0 / (T + 2.0);
        fail(ErrorCode::invalid_argument, msg.str());
    }
    if (dims.k == 0 || dims.d == 0 || dims.l == 0) fail(ErrorCode::invalid_argument, "driver dimensions must be positive");
}

CertificateResult BdsvieDriver::certify(const TimeGrid& grid, std::size_t paths, std::uint64_t seed) const {
    const std::size_t k = dims_.k;
    return certify_pair(f_, g_, c_, alpha_, dims_, k, k * dims_.l, k * dims_.d, grid, paths, false, seed);
}

BdsvieDriver BdsvieDriver::scalar(ScalarFn f, ScalarFn g, double c, double alpha, double T, bool depends_on_zeta) {
    DriverFn ff, gg;
    if (f) ff = [f](const DriverPoint& p, std::span<double> out) { out[0] = f(p.t, p.s, p.y[0], p.z[0], p.zeta[0]); };
    if (g) gg = [g](const DriverPoint& p, std::span<double> out) { out[0] = g(p.t, p.s, p.y[0], p.z[0], p.zeta[0]); };
    return BdsvieDriver(std::move(ff), std::move(gg), c, alpha, T, Dims{}, depends_on_zeta);
}

BdsvieDriver BdsvieDriver::zero(double T, Dims dims) { return BdsvieDriver({}, {}, 0.0, 0.0, T, dims, false, false); }

FreeTerm FreeTerm::constant(double value) {
    return {1, [value](const ScenarioBatch&, std::size_t, std::size_t, std::span<double> out) { out[0] = value; }};
}

FreeTerm FreeTerm::terminal_w() {
    return {1, [](const ScenarioBatch& b, std::size_t p, std::size_t, std::span<double> out) {
                out[0] = b.W(b.steps(), p);
            }};
}

FreeTerm FreeTerm::b_tail() {
    return {1, [](const ScenarioBatch& b, std::size_t p, std::size_t i, std::span<double> out) {
                out[0] = b.B_tail(i, p);
            }};
}

FreeTerm FreeTerm::scalar(std::function<double(const ScenarioBatch&, std::size_t, std::size_t)> fn) {
    return {1, [fn = std::move(fn)](const ScenarioBatch& b, std::size_t p, std::size_t i, std::span<double> out) {
                out[0] = fn(b, p, i);
            }};
}

ContractionConstants contraction_constants(double c, double alpha, double T, double beta) {
    if (!(T > 0.0)) fail(ErrorCode::invalid_argument, "T must be positive");
    if (!(c >= 0.0)) fail(ErrorCode::invalid_argument, "c must be nonnegative");
    if (!(beta > 0.0)) fail(ErrorCode::invalid_argument, "beta must be positive");
    if (!(alpha >= 0.0) || !(alpha < 1.0 / (T + 2.0))) {
        std::ostringstream msg;
        msg << "alpha = " << alpha << " violates alpha < 1/(T+2) = " << 1.0 / (T + 2.0);
        fail(ErrorCode::invalid_argument, msg.str());
    }
    ContractionConstants k;
    k.K = 10.0 * c * (T + 1.0) + alpha;
    k.delta = k.K / beta + alpha * (T + 2.0);
    k.epsilon = (1.0 + 2.0 * alpha * (T + 2.0)) / 4.0;
    k.beta_star = 4.0 * k.K / (1.0 - 2.0 * alpha * (T + 2.0));
    return k;
}

SimpleSolution solve_simple(const FreeTerm& psi, const CellFn& f0, const CellFn& g0, const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps(), d = b.dim_w(), l = b.dim_b();
    const std::size_t k = psi.k;
    if (!psi.eval) fail(ErrorCode::invalid_argument, "free term has no evaluator");
    SimpleSolution sol{DiagonalProcess(b, k, "Y"), TwoParameterField(b, k * d, Region::upper, "Z")};

    parallel_for(N + 1, [&](std::size_t i) {
        std::vector<double> lambda(M * k), target(M * k), fbuf(M * k), gbuf(M * k * l);
        std::vector<double> comp(M), fitted(M), tmp(M);
        for (std::size_t p = 0; p < M; ++p) psi.eval(b, p, i, std::span<double>(lambda).subspan(p * k, k));
        if (!all_finite(lambda))
            fail(ErrorCode::driver_evaluation, "non-finite free term at node " + std::to_string(i));
        for (std::size_t j = N; j-- > i;) {
            const double dt = b.grid().dt(j);
            std::fill(fbuf.begin(), fbuf.end(), 0.0);
            std::fill(gbuf.begin(), gbuf.end(), 0.0);
            if (f0) f0(i, j, fbuf);
            if (g0) g0(i, j + 1, gbuf);
            for (std::size_t p = 0; p < M; ++p)
                for (std::size_t c = 0; c < k; ++c) {
                    double v = lambda[p * k + c] + fbuf[p * k + c] * dt;
                    for (std::size_t q = 0; q < l; ++q) v += gbuf[(p * k + c) * l + q] * b.dB(j, p, q);
                    target[p * k + c] = v;
                }
            if (!all_finite(target)) {
                fail(ErrorCode::driver_evaluation,
                     "non-finite driver value at (i, j) = (" + std::to_string(i) + ", " + std::to_string(j) + ")");
            }
            const FeatureNodes key{j, j};
            auto zcell = sol.Z.cell(i, j);
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t p = 0; p < M; ++p) comp[p] = target[p * k + c];
                projector.project(comp, key, fitted);
                for (std::size_t q = 0; q < d; ++q) {
                    for (std::size_t p = 0; p < M; ++p) tmp[p] = (comp[p] - fitted[p]) * b.dW(j, p, q);
                    projector.project(tmp, key, tmp);
                    for (std::size_t p = 0; p < M; ++p) zcell[p * k * d + c * d + q] = tmp[p] / dt;
                }
                for (std::size_t p = 0; p < M; ++p) lambda[p * k + c] = fitted[p];
            }
        }
        std::copy(lambda.begin(), lambda.end(), sol.Y.node(i).begin());
        if (i < N) {
            auto last = sol.Z.cell(i, N - 1);
            std::copy(last.begin(), last.end(), sol.Z.cell(i, N).begin());
        }
    });
    return sol;
}

double extend_m_solution(const DiagonalProcess& Y, TwoParameterField& Z, std::size_t S, const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps(), d = b.dim_w();
    const std::size_t k = Y.components();
    if (Y.batch_id() != b.id() || Z.batch_id() != b.id())
        fail(ErrorCode::invalid_argument, "fields and projector use different scenario batches");
    if (Z.components() != k * d) fail(ErrorCode::invalid_argument, "Z must have k*d components");
    if (S > N) fail(ErrorCode::invalid_argument, "anchor index beyond the grid");
    std::vector<double> residuals(N + 1, 0.0);
    parallel_for(N + 1, [&](std::size_t i) {
        for (std::size_t j = 0; j < std::min(i, S); ++j) {
            auto c = Z.cell(i, j);
            std::fill(c.begin(), c.end(), 0.0);
        }
        if (i <= S) return;
        double res = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            auto target = Y.component(i, c);
            auto rep = represent_forward(target, i, S, projector, i);
            res += rep.residual;
            for (std::size_t j = S; j < i; ++j) {
                auto cell = Z.cell(i, j);
                for (std::size_t p = 0; p < M; ++p)
                    for (std::size_t q = 0; q < d; ++q) cell[p * k * d + c * d + q] = rep.at(j, p, M, q);
            }
        }
        residuals[i] = res / static_cast<double>(k);
    });
    Z.set_region(Region::full);
    double total = 0.0;
    for (double r : residuals) total += r;
    return N + 1 > S + 1 ? total / static_cast<double>(N - S) : 0.0;
}

double check_m_relation(const DiagonalProcess& Y, const TwoParameterField& Z, std::size_t S,
                        const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps(), d = b.dim_w();
    const std::size_t k = Y.components();
    if (Y.batch_id() != b.id() || Z.batch_id() != b.id())
        fail(ErrorCode::invalid_argument, "fields and projector use different scenario batches");
    if (Z.components() != k * d) fail(ErrorCode::invalid_argument, "Z must have k*d components");
    if (S > N) fail(ErrorCode::invalid_argument, "anchor index beyond the grid");
    std::vector<double> num(N + 1, 0.0), den(N + 1, 0.0);
    parallel_for(N + 1 - S, [&](std::size_t r) {
        const std::size_t i = S + r;
        std::vector<double> err(M), mag(M), anchor(M);
        for (std::size_t c = 0; c < k; ++c) {
            auto y = Y.component(i, c);
            projector.project(y, {S, i}, anchor);
            for (std::size_t p = 0; p < M; ++p) {
                double rec = anchor[p];
                for (std::size_t j = S; j < i; ++j)
                    for (std::size_t q = 0; q < d; ++q) rec += Z.at(i, j, p, c * d + q) * b.dW(j, p, q);
                err[p] = (y[p] - rec) * (y[p] - rec);
                mag[p] = y[p] * y[p];
            }
            num[i] += pairwise_sum(err);
            den[i] += pairwise_sum(mag);
        }
    });
    double n = 0.0, dd = 0.0;
    for (std::size_t i = S; i <= N; ++i) {
        n += num[i];
        dd += den[i];
    }
    if (dd == 0.0) return n == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return n / dd;
}

double measured_contraction_ratio(const std::vector<double>& residuals, double scale) {
    const double floor = std::pow(1e3 * std::numeric_limits<double>::epsilon(), 2) * scale;
    double ratio = 0.0;
    for (std::size_t n = 1; n < residuals.size(); ++n) {
        if (residuals[n - 1] <= floor || residuals[n] <= floor) continue;
        ratio = std::max(ratio, residuals[n] / residuals[n - 1]);
    }
    return ratio;
}

BdsvieSolution picard_solve(const FreeTerm& psi, const BdsvieDriver& driver, const Projector& projector,
                            const PicardOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const ScenarioBatch& b = projector.batch();
    const TimeGrid& grid = b.grid();
    const std::size_t M = b.paths(), N = b.steps();
    const Dims dims = driver.dims();
    const std::size_t k = dims.k, d = dims.d, l = dims.l;
    if (psi.k != k) fail(ErrorCode::invalid_argument, "free term and driver disagree on k");
    if (d != b.dim_w() || l != b.dim_b()) fail(ErrorCode::invalid_argument, "driver dims do not match the batch");
    if (!(options.tol > 0.0)) fail(ErrorCode::invalid_argument, "tolerance must be positive");
    if (options.max_iter == 0) fail(ErrorCode::invalid_argument, "max_iter must be positive");
    if (std::abs(driver.horizon() - grid.T) > 1e-12 * grid.T)
        fail(ErrorCode::invalid_argument, "driver horizon differs from the grid horizon");

    SolveReport report;
    if (options.certificate != CertificatePolicy::skip) {
        report.certificate = driver.certify(grid, M);
        if (!report.certificate.passed) {
            if (options.certificate == CertificatePolicy::enforce)
                fail(ErrorCode::certificate, report.certificate.message);
            report.warnings.push_back("certificate violated: " + report.certificate.message);
        }
    }
    const auto kbase = contraction_constants(driver.c(), driver.alpha(), grid.T, 1.0);
    double beta = options.beta.value_or(kbase.beta_star);
    if (!(beta > 0.0)) beta = 1.0;
    report.beta = beta;
    report.theoretical_delta = contraction_constants(driver.c(), driver.alpha(), grid.T, beta).delta;
    if (N == 1) report.warnings.push_back("single-step grid: quadrature bias is O(T)");

    DiagonalProcess y = options.warm_y ? *options.warm_y : DiagonalProcess(b, k, "Y");
    TwoParameterField z = options.warm_z ? *options.warm_z : TwoParameterField(b, k * d, Region::upper, "Z");
    const bool zeta = driver.depends_on_zeta();
    if (zeta && z.region() != Region::full) extend_m_solution(y, z, options.S, projector);

    auto point = [&](std::size_t i, std::size_t j, std::size_t p) {
        return DriverPoint{p,
                           i,
                           j,
                           grid.t(i),
                           grid.t(j),
                           std::span<const double>(&y.at(j, p, 0), k),
                           std::span<const double>(&z.at(i, j, p, 0), k * d),
                           std::span<const double>(&z.at(j, i, p, 0), k * d)};
    };
    CellFn f0, g0;
    if (driver.f()) {
        f0 = [&](std::size_t i, std::size_t j, std::span<double> out) {
            for (std::size_t p = 0; p < M; ++p) driver.f()(point(i, j, p), out.subspan(p * k, k));
        };
    }
    if (driver.has_g()) {
        g0 = [&](std::size_t i, std::size_t j, std::span<double> out) {
            for (std::size_t p = 0; p < M; ++p) driver.g()(point(i, j, p), out.subspan(p * k * l, k * l));
        };
    }

    bool extended = z.region() == Region::full;
    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        SimpleSolution next = solve_simple(psi, f0, g0, projector);
        if (zeta) extend_m_solution(next.Y, next.Z, options.S, projector);
        const double diff_b = weighted_norm_diff(next.Y, next.Z, y, z, beta, grid, NormRegion::upper, grid.T);
        const double diff_0 = weighted_norm_diff(next.Y, next.Z, y, z, 0.0, grid);
        const double norm_b = weighted_norm(next.Y, next.Z, beta, grid, NormRegion::upper, grid.T);
        const double norm_0 = weighted_norm(next.Y, next.Z, 0.0, grid);
        report.residuals.push_back(diff_b);
        report.residuals_unweighted.push_back(diff_0);
        report.iterations = it;
        y = std::move(next.Y);
        z = std::move(next.Z);
        extended = zeta;
        const double tol2 = options.tol * options.tol;
        if (diff_b <= tol2 * norm_b && diff_0 <= tol2 * norm_0) {
            report.converged = true;
            report.measured_ratio = measured_contraction_ratio(report.residuals, norm_b);
            break;
        }
        report.measured_ratio = measured_contraction_ratio(report.residuals, norm_b);
    }
    report.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!report.converged) {
        std::ostringstream msg;
        msg << "Picard iteration did not reach tol " << options.tol << " in " << options.max_iter
            << " iterations (last squared residual " << report.residuals.back() << ")";
        throw NonConvergence(msg.str(), std::move(report));
    }
    if (options.extend && !extended) extend_m_solution(y, z, options.S, projector);
    if (!options.extend && z.region() == Region::full && !zeta) z.clear_lower();
    report.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(y), std::move(z), std::move(report)};
}

}  // namespace bdsvie
