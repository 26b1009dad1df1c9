#include "bdsvie/fdsvie.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "bdsvie/parallel.hpp"

namespace bdsvie {

FdsvieDriver::FdsvieDriver(DriverFn b, DriverFn sigma, double c, double alpha, double T, Dims dims,
                           bool depends_on_q, bool depends_on_theta)
    : b_(std::move(b)),
      sigma_(std::move(sigma)),
      c_(c),
      alpha_(alpha),
      T_(T),
      dims_(dims),
      depends_on_q_(depends_on_q),
      depends_on_theta_(depends_on_theta) {
    // Same admissibility rules as the backward driver.
    BdsvieDriver check({}, {}, c, alpha, T, dims);
}

CertificateResult FdsvieDriver::certify(const TimeGrid& grid, std::size_t paths, std::uint64_t seed) const {
    const std::size_t k = dims_.k;
    return certify_pair(b_, sigma_, c_, alpha_, dims_, k, k * dims_.d, k * dims_.l, grid, paths, true, seed);
}

FdsvieDriver FdsvieDriver::zero(double T, Dims dims) { return FdsvieDriver({}, {}, 0.0, 0.0, T, dims); }

InitialTerm InitialTerm::constant(double value) {
    return {1, [value](const ScenarioBatch&, std::size_t, std::size_t, std::span<double> out) { out[0] = value; }};
}

InitialTerm InitialTerm::b_tail() {
    return {1, [](const ScenarioBatch& b, std::size_t p, std::size_t i, std::span<double> out) {
                out[0] = b.B_tail(i, p);
            }};
}

InitialTerm InitialTerm::scalar(std::function<double(const ScenarioBatch&, std::size_t, std::size_t)> fn) {
    return {1, [fn = std::move(fn)](const ScenarioBatch& b, std::size_t p, std::size_t i, std::span<double> out) {
                out[0] = fn(b, p, i);
            }};
}

namespace {

void check_fields(const DiagonalProcess& P, const TwoParameterField& Q, const ScenarioBatch& b) {
    if (P.batch_id() != b.id() || Q.batch_id() != b.id())
        fail(ErrorCode::invalid_argument, "fields and projector use different scenario batches");
    if (Q.components() != P.components() * b.dim_b()) fail(ErrorCode::invalid_argument, "Q must have k*l components");
}

}  // namespace

double fill_backward_m_relation(const DiagonalProcess& P, TwoParameterField& Q, std::size_t S,
                                const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps(), l = b.dim_b();
    const std::size_t k = P.components();
    check_fields(P, Q, b);
    if (S > N) fail(ErrorCode::invalid_argument, "anchor index beyond the grid");
    std::vector<double> residuals(N + 1, 0.0);
    parallel_for(N + 1, [&](std::size_t i) {
        for (std::size_t j = std::max(i, S); j <= N; ++j) {
            auto cell = Q.cell(i, j);
            std::fill(cell.begin(), cell.end(), 0.0);
        }
        if (i >= S) return;
        double res = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            auto target = P.component(i, c);
            auto rep = represent_backward(target, i, i, S, projector);
            res += rep.residual;
            for (std::size_t j = i; j < S; ++j) {
                auto cell = Q.cell(i, j);
                for (std::size_t p = 0; p < M; ++p)
                    for (std::size_t q = 0; q < l; ++q) cell[p * k * l + c * l + q] = rep.at(j, p, M, q);
            }
        }
        // The right endpoint carries the last interior value, matching the backward solver.
        if (S == N) {
            auto last = Q.cell(i, N - 1);
            std::copy(last.begin(), last.end(), Q.cell(i, N).begin());
        }
        residuals[i] = res / static_cast<double>(k);
    });
    Q.set_region(Region::full);
    double total = 0.0;
    for (double r : residuals) total += r;
    return S > 0 ? total / static_cast<double>(S) : 0.0;
}

double check_backward_m_relation(const DiagonalProcess& P, const TwoParameterField& Q, std::size_t S,
                                 const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps(), l = b.dim_b();
    const std::size_t k = P.components();
    check_fields(P, Q, b);
    if (S > N) fail(ErrorCode::invalid_argument, "anchor index beyond the grid");
    std::vector<double> num(S + 1, 0.0), den(S + 1, 0.0);
    parallel_for(S + 1, [&](std::size_t i) {
        std::vector<double> err(M), mag(M), anchor(M);
        for (std::size_t c = 0; c < k; ++c) {
            auto x = P.component(i, c);
            projector.project(x, {i, S}, anchor);
            for (std::size_t p = 0; p < M; ++p) {
                double rec = anchor[p];
                for (std::size_t j = i; j < S; ++j)
                    for (std::size_t q = 0; q < l; ++q) rec += Q.at(i, j, p, c * l + q) * b.dB(j, p, q);
                err[p] = (x[p] - rec) * (x[p] - rec);
                mag[p] = x[p] * x[p];
            }
            num[i] += pairwise_sum(err);
            den[i] += pairwise_sum(mag);
        }
    });
    double n = 0.0, d = 0.0;
    for (std::size_t i = 0; i <= S; ++i) {
        n += num[i];
        d += den[i];
    }
    if (d == 0.0) return n == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return n / d;
}

FdsvieSolution solve_fdsvie(const InitialTerm& phi, const FdsvieDriver& driver, const Projector& projector,
                            const FdsvieOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const ScenarioBatch& bt = projector.batch();
    const TimeGrid& grid = bt.grid();
    const std::size_t M = bt.paths(), N = bt.steps();
    const Dims dims = driver.dims();
    const std::size_t k = dims.k, d = dims.d, l = dims.l;
    if (!phi.eval) fail(ErrorCode::invalid_argument, "initial term has no evaluator");
    if (phi.k != k) fail(ErrorCode::invalid_argument, "initial term and driver disagree on k");
    if (d != bt.dim_w() || l != bt.dim_b()) fail(ErrorCode::invalid_argument, "driver dims do not match the batch");
    if (!(options.tol > 0.0)) fail(ErrorCode::invalid_argument, "tolerance must be positive");
    if (options.max_iter == 0) fail(ErrorCode::invalid_argument, "max_iter must be positive");
    if (std::abs(driver.horizon() - grid.T) > 1e-12 * grid.T)
        fail(ErrorCode::invalid_argument, "driver horizon differs from the grid horizon");
    const std::size_t S = options.S.value_or(N);
    if (S > N) fail(ErrorCode::invalid_argument, "anchor index beyond the grid");

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

    DiagonalProcess p(bt, k, "P");
    TwoParameterField q(bt, k * l, Region::full, "Q");
    const double qsign = options.sign == BackwardSign::minus ? 1.0 : -1.0;
    const bool theta = driver.depends_on_theta();

    auto point = [&](std::size_t i, std::size_t j, std::size_t path) {
        return DriverPoint{path,
                           i,
                           j,
                           grid.t(i),
                           grid.t(j),
                           std::span<const double>(&p.at(j, path, 0), k),
                           std::span<const double>(&q.at(i, j, path, 0), k * l),
                           std::span<const double>(&q.at(j, i, path, 0), k * l)};
    };

    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        DiagonalProcess np(bt, k, "P");
        TwoParameterField nq(bt, k * l, Region::full, "Q");
        parallel_for(N + 1, [&](std::size_t i) {
            std::vector<double> x(M * k), bbuf(k), sbuf(k * d), comp(M);
            for (std::size_t path = 0; path < M; ++path) {
                auto xs = std::span<double>(x).subspan(path * k, k);
                phi.eval(bt, path, i, xs);
                for (std::size_t j = 0; j < i; ++j) {
                    const DriverPoint pt = point(i, j, path);
                    const double dt = grid.dt(j);
                    if (driver.b()) {
                        driver.b()(pt, bbuf);
                        for (std::size_t c = 0; c < k; ++c) xs[c] += bbuf[c] * dt;
                    }
                    if (driver.sigma()) {
                        driver.sigma()(pt, sbuf);
                        for (std::size_t c = 0; c < k; ++c)
                            for (std::size_t r = 0; r < d; ++r) xs[c] += sbuf[c * d + r] * bt.dW(j, path, r);
                    }
                }
            }
            if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); }))
                fail(ErrorCode::driver_evaluation, "non-finite forward value at node " + std::to_string(i));
            auto pnode = np.node(i);
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t path = 0; path < M; ++path) comp[path] = x[path * k + c];
                std::vector<double> fitted = projector.project(comp, {i, i});
                for (std::size_t path = 0; path < M; ++path) pnode[path * k + c] = fitted[path];
                if (i == 0) continue;
                auto rep = represent_backward(comp, i, 0, i, projector);
                for (std::size_t j = 0; j < i; ++j) {
                    auto cell = nq.cell(i, j);
                    for (std::size_t path = 0; path < M; ++path)
                        for (std::size_t r = 0; r < l; ++r)
                            cell[path * k * l + c * l + r] = qsign * rep.at(j, path, M, r);
                }
            }
        });
        if (theta) fill_backward_m_relation(np, nq, S, projector);
        const double diff_b = weighted_norm_diff(np, nq, p, q, beta, grid, NormRegion::lower);
        const double diff_0 = weighted_norm_diff(np, nq, p, q, 0.0, grid, NormRegion::lower);
        const double norm_b = weighted_norm(np, nq, beta, grid, NormRegion::lower);
        const double norm_0 = weighted_norm(np, nq, 0.0, grid, NormRegion::lower);
        report.residuals.push_back(diff_b);
        report.residuals_unweighted.push_back(diff_0);
        report.iterations = it;
        p = std::move(np);
        q = std::move(nq);
        report.measured_ratio = measured_contraction_ratio(report.residuals, norm_b);
        const double tol2 = options.tol * options.tol;
        if (diff_b <= tol2 * norm_b && diff_0 <= tol2 * norm_0) {
            report.converged = true;
            break;
        }
    }
    report.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!report.converged) {
        std::ostringstream msg;
        msg << "forward Picard iteration did not reach tol " << options.tol << " in " << options.max_iter
            << " iterations (last squared residual " << report.residuals.back() << ")";
        throw NonConvergence(msg.str(), std::move(report));
    }
    if (!theta) fill_backward_m_relation(p, q, S, projector);
    report.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(p), std::move(q), std::move(report)};
}

}  // namespace bdsvie
