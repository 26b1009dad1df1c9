#include "bdsvie/order.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "bdsvie/parallel.hpp"

namespace bdsvie {

namespace {

void validate_approx(unsigned n, double M, double L, double R, double h) {
    if (!(M >= 0.0) || !(L >= 0.0)) fail(ErrorCode::invalid_argument, "growth constants must be nonnegative");
    if (static_cast<double>(n) < M) {
        std::ostringstream msg;
        msg << "inf-convolution index n = " << n << " is below the growth constant M = " << M;
        fail(ErrorCode::invalid_argument, msg.str());
    }
    if (!(static_cast<double>(n) > L)) {
        std::ostringstream msg;
        msg << "inf-convolution index n = " << n << " must exceed the lower growth constant L = " << L;
        fail(ErrorCode::invalid_argument, msg.str());
    }
    if (!(R > 0.0) || !(h > 0.0) || h > R) fail(ErrorCode::invalid_argument, "need 0 < h <= R");
}

std::size_t axis_points(double R, double h) {
    return static_cast<std::size_t>(std::ceil(2.0 * R / h - 1e-9)) + 1;
}

/// Two-pass l1 distance transform along one strided line.
void transform_line(double* v, std::size_t count, std::size_t stride, double step) {
    for (std::size_t m = 1; m < count; ++m) v[m * stride] = std::min(v[m * stride], v[(m - 1) * stride] + step);
    for (std::size_t m = count - 1; m-- > 0;) v[m * stride] = std::min(v[m * stride], v[(m + 1) * stride] + step);
}

}  // namespace

LipschitzApprox::LipschitzApprox(Fn1 f, unsigned n, double M_growth, double L_growth, double R, double h)
    : dim_(1), n_(n), M_(M_growth), L_(L_growth), R_(R), f1_(std::move(f)) {
    validate_approx(n, M_growth, L_growth, R, h);
    K_ = axis_points(R, h);
    h_ = 2.0 * R / static_cast<double>(K_ - 1);
    check_allocation(K_ * sizeof(double), "inf-convolution table");
    table_.resize(K_);
    for (std::size_t m = 0; m < K_; ++m) {
        table_[m] = f1_(-R_ + static_cast<double>(m) * h_);
        if (!std::isfinite(table_[m])) fail(ErrorCode::driver_evaluation, "non-finite source value in inf-convolution");
    }
    transform_line(table_.data(), K_, 1, n_ * h_);
}

LipschitzApprox::LipschitzApprox(Fn2 f, unsigned n, double M_growth, double L_growth, double R, double h)
    : dim_(2), n_(n), M_(M_growth), L_(L_growth), R_(R), f2_(std::move(f)) {
    validate_approx(n, M_growth, L_growth, R, h);
    K_ = axis_points(R, h);
    h_ = 2.0 * R / static_cast<double>(K_ - 1);
    check_allocation(K_ * K_ * sizeof(double), "inf-convolution table");
    table_.resize(K_ * K_);
    parallel_for(K_, [&](std::size_t a) {
        const double y = -R_ + static_cast<double>(a) * h_;
        for (std::size_t b = 0; b < K_; ++b) {
            const double v = f2_(y, -R_ + static_cast<double>(b) * h_);
            if (!std::isfinite(v)) fail(ErrorCode::driver_evaluation, "non-finite source value in inf-convolution");
            table_[a * K_ + b] = v;
        }
    });
    const double step = n_ * h_;
    parallel_for(K_, [&](std::size_t b) { transform_line(table_.data() + b, K_, K_, step); });
    parallel_for(K_, [&](std::size_t a) { transform_line(table_.data() + a * K_, K_, 1, step); });
}

double LipschitzApprox::containment(double x_norm) const {
    return (M_ + L_) * (1.0 + x_norm) / (static_cast<double>(n_) - L_);
}

double LipschitzApprox::safe_extent() const {
    const double gap = static_cast<double>(n_) - L_;
    return std::max(0.0, (R_ * gap - (M_ + L_)) / (gap + M_ + L_));
}

void LipschitzApprox::check(double x_norm) const {
    if (x_norm + containment(x_norm) > R_ * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "inf-convolution argument of size " << x_norm << " needs truncation radius "
            << x_norm + containment(x_norm) << " but the grid radius is " << R_;
        fail(ErrorCode::truncation, msg.str());
    }
}

double LipschitzApprox::operator()(double x) const {
    if (dim_ != 1) fail(ErrorCode::invalid_argument, "two-dimensional table evaluated with one argument");
    check(std::abs(x));
    const double n = static_cast<double>(n_);
    const std::size_t k = std::min(K_ - 2, static_cast<std::size_t>(std::max(0.0, std::floor((x + R_) / h_))));
    const double yk = -R_ + static_cast<double>(k) * h_;
    const double yk1 = -R_ + static_cast<double>(k + 1) * h_;
    return std::min(table_[k] + n * std::abs(x - yk), table_[k + 1] + n * std::abs(yk1 - x));
}

double LipschitzApprox::operator()(double y, double z) const {
    if (dim_ != 2) fail(ErrorCode::invalid_argument, "one-dimensional table evaluated with two arguments");
    check(std::abs(y) + std::abs(z));
    const double n = static_cast<double>(n_);
    auto cell = [&](double x) {
        return std::min(K_ - 2, static_cast<std::size_t>(std::max(0.0, std::floor((x + R_) / h_))));
    };
    const std::size_t a = cell(y), b = cell(z);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t da = 0; da < 2; ++da)
        for (std::size_t db = 0; db < 2; ++db) {
            const double gy = -R_ + static_cast<double>(a + da) * h_;
            const double gz = -R_ + static_cast<double>(b + db) * h_;
            best = std::min(best, table_[(a + da) * K_ + b + db] + n * (std::abs(y - gy) + std::abs(z - gz)));
        }
    return best;
}

LipschitzApprox inf_convolution(LipschitzApprox::Fn1 f, unsigned n, double M_growth, double R, double h,
                                std::optional<double> L_growth) {
    return LipschitzApprox(std::move(f), n, M_growth, L_growth.value_or(M_growth), R, h);
}

LipschitzApprox inf_convolution(LipschitzApprox::Fn2 f, unsigned n, double M_growth, double R, double h,
                                std::optional<double> L_growth) {
    return LipschitzApprox(std::move(f), n, M_growth, L_growth.value_or(M_growth), R, h);
}

void write_csv(const LipschitzApprox& approx, const std::vector<double>& xs, const std::string& path) {
    if (approx.dim() != 1) fail(ErrorCode::invalid_argument, "CSV export supports one-dimensional tables");
    std::ofstream out(path);
    if (!out) fail(ErrorCode::resource, "cannot open " + path);
    out.precision(17);
    out << "x,f,f_n\n";
    for (double x : xs) out << x << ',' << approx.source(x) << ',' << approx(x) << '\n';
    if (!out) fail(ErrorCode::resource, "failed writing " + path);
}

namespace {

constexpr std::uint64_t kComparisonStream = 0x636f6d70ULL;

void require_scalar(const BdsvieDriver& d, const ScenarioBatch& b, const char* which) {
    const Dims dims = d.dims();
    if (dims.k != 1 || dims.d != 1 || dims.l != 1 || b.dim_w() != 1 || b.dim_b() != 1)
        fail(ErrorCode::invalid_argument, std::string(which) + ": comparison is one-dimensional");
    if (d.depends_on_zeta())
        fail(ErrorCode::hypothesis_violation, std::string(which) + ": comparison needs drivers independent of Z(s,t)");
}

double eval_scalar(const DriverFn& fn, const DriverPoint& p) {
    if (!fn) return 0.0;
    double out = 0.0;
    fn(p, std::span<double>(&out, 1));
    return out;
}

void probe_hypotheses(const BdsvieDriver& d1, const BdsvieDriver& d2, const DriverFn& fbar, const TimeGrid& grid,
                      std::size_t paths, std::size_t probes) {
    const std::size_t N = grid.N;
    std::uint64_t counter = 0;
    auto draw = [&]() { return counter_normal(11, kComparisonStream, 0, counter++, 0); };
    auto pick = [&](std::size_t n) {
        const double u = 0.5 * (1.0 + std::erf(draw() / std::sqrt(2.0)));
        return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
    };
    for (std::size_t k = 0; k < probes; ++k) {
        std::size_t i = pick(N + 1), j = pick(N + 1);
        if (j < i) std::swap(i, j);
        const std::size_t path = pick(paths);
        double y = 2.0 * draw(), z = 2.0 * draw(), zeta = 0.0;
        const double y_up = y + std::abs(draw()) + 1e-3;
        DriverPoint p{path, i, j, grid.t(i), grid.t(j), {&y, 1}, {&z, 1}, {&zeta, 1}};
        DriverPoint q{path, i, j, grid.t(i), grid.t(j), {&y_up, 1}, {&z, 1}, {&zeta, 1}};
        const double f1 = eval_scalar(d1.f(), p), f2 = eval_scalar(d2.f(), p), fb = eval_scalar(fbar, p);
        const double slack = 1e-12 * (1.0 + std::abs(f1) + std::abs(f2) + std::abs(fb));
        std::ostringstream where;
        where << " at (t, s, y, z) = (" << p.t << ", " << p.s << ", " << y << ", " << z << ")";
        if (f1 < fb - slack) fail(ErrorCode::hypothesis_violation, "f1 < f_bar" + where.str());
        if (fb < f2 - slack) fail(ErrorCode::hypothesis_violation, "f_bar < f2" + where.str());
        if (eval_scalar(fbar, q) < fb - slack)
            fail(ErrorCode::hypothesis_violation, "f_bar is not increasing in y" + where.str());
        const double g1 = eval_scalar(d1.g(), p), g2 = eval_scalar(d2.g(), p);
        if (std::abs(g1 - g2) > 1e-12 * (1.0 + std::abs(g1)))
            fail(ErrorCode::hypothesis_violation, "the two equations must share g" + where.str());
    }
}

}  // namespace

ComparisonResult compare_solutions(const FreeTerm& psi1, const BdsvieDriver& driver1, const FreeTerm& psi2,
                                   const BdsvieDriver& driver2, const Projector& projector, double tolerance,
                                   const ComparisonOptions& options) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps();
    if (!(tolerance >= 0.0)) fail(ErrorCode::invalid_argument, "tolerance must be nonnegative");
    require_scalar(driver1, b, "first driver");
    require_scalar(driver2, b, "second driver");
    if (psi1.k != 1 || psi2.k != 1) fail(ErrorCode::invalid_argument, "comparison is one-dimensional");

    for (std::size_t i = 0; i <= N; ++i)
        for (std::size_t p = 0; p < M; ++p) {
            double a = 0.0, c = 0.0;
            psi1.eval(b, p, i, {&a, 1});
            psi2.eval(b, p, i, {&c, 1});
            if (a < c - 1e-12 * (1.0 + std::abs(c))) {
                std::ostringstream msg;
                msg << "psi1 < psi2 at node " << i << ", path " << p << " (" << a << " < " << c << ")";
                fail(ErrorCode::hypothesis_violation, msg.str());
            }
        }
    const DriverFn fbar = options.f_bar ? options.f_bar : driver2.f();
    probe_hypotheses(driver1, driver2, fbar, b.grid(), M, options.probes);

    PicardOptions opt = options.picard;
    opt.extend = false;
    ComparisonResult result{{}, picard_solve(psi1, driver1, projector, opt), picard_solve(psi2, driver2, projector, opt)};
    ComparisonReport& r = result.report;
    r.tolerance = tolerance;
    r.profile.assign(N + 1, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i <= N; ++i) {
        std::size_t node_count = 0;
        for (std::size_t p = 0; p < M; ++p) {
            const double gap = result.second.Y.at(i, p) - result.first.Y.at(i, p);
            r.worst_violation = std::max(r.worst_violation, gap);
            if (gap > tolerance) ++node_count;
        }
        r.profile[i] = static_cast<double>(node_count) / static_cast<double>(M);
        count += node_count;
    }
    r.violation_fraction = static_cast<double>(count) / static_cast<double>(M * (N + 1));
    for (const auto* rep : {&result.first.report, &result.second.report})
        for (const auto& w : rep->warnings) r.notes.push_back(w);
    return result;
}

namespace {

BdsvieDriver make_scalar_driver(std::function<double(double, double)> f, bool depends_on_z,
                                const BdsvieDriver::ScalarFn& g, double c, double alpha, double T) {
    BdsvieDriver::ScalarFn ff = [f = std::move(f), depends_on_z](double, double, double y, double z, double) {
        return f(y, depends_on_z ? z : 0.0);
    };
    return BdsvieDriver::scalar(std::move(ff), g, c, alpha, T);
}

}  // namespace

MinimalResult solve_continuous_minimal(const FreeTerm& psi, const ContinuousDriver& driver,
                                       const Projector& projector, const MinimalOptions& options) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths(), N = b.steps();
    const double T = b.grid().T;
    if (!driver.f) fail(ErrorCode::invalid_argument, "continuous driver has no f");
    if (b.dim_w() != 1 || b.dim_b() != 1 || psi.k != 1)
        fail(ErrorCode::invalid_argument, "minimal-solution scheme is one-dimensional");
    const double Mg = driver.M_growth;
    const double Lg = driver.L_growth.value_or(Mg);
    if (!(Mg > 0.0)) fail(ErrorCode::invalid_argument, "growth constant M must be positive");
    if (!(options.state_bound > 0.0)) fail(ErrorCode::invalid_argument, "state bound must be positive");
    const unsigned n0 = std::max(static_cast<unsigned>(std::ceil(Mg)), static_cast<unsigned>(std::floor(Lg)) + 1u);
    if (options.n_max < n0) {
        std::ostringstream msg;
        msg << "n_max = " << options.n_max << " is below the first admissible index " << n0;
        fail(ErrorCode::invalid_argument, msg.str());
    }

    MinimalResult r;
    r.noise_tol = options.noise_tol.value_or(3.0 * 5.0 / std::sqrt(static_cast<double>(M)));
    r.notes.push_back("free term continuity in t is declared by the caller, not verified");
    PicardOptions opt = options.picard;
    opt.extend = false;
    // f_n is n-Lipschitz by construction; only g needs the probe certificate, and the
    // probes must not leave the certified range of the tables.
    if (opt.certificate != CertificatePolicy::skip && driver.g) {
        DriverFn g = [gs = driver.g](const DriverPoint& p, std::span<double> out) {
            out[0] = gs(p.t, p.s, p.y[0], p.z[0], p.zeta[0]);
        };
        auto cert = certify_pair({}, g, 0.0, driver.alpha, Dims{}, 1, 1, 1, b.grid(), M, false);
        if (!cert.passed) {
            if (opt.certificate == CertificatePolicy::enforce) fail(ErrorCode::certificate, cert.message);
            r.notes.push_back("certificate violated: " + cert.message);
        }
    }
    opt.certificate = CertificatePolicy::skip;
    std::optional<TwoParameterField> warm_z;
    for (unsigned n = n0; n <= options.n_max; ++n) {
        const double X = options.state_bound;
        const double R = X + (Mg + Lg) * (1.0 + X) / (static_cast<double>(n) - Lg);
        std::shared_ptr<const LipschitzApprox> approx;
        if (driver.depends_on_z) {
            approx = std::make_shared<LipschitzApprox>(
                inf_convolution(LipschitzApprox::Fn2(driver.f), n, Mg, R, options.h, Lg));
        } else {
            approx = std::make_shared<LipschitzApprox>(inf_convolution(
                LipschitzApprox::Fn1([f = driver.f](double y) { return f(y, 0.0); }), n, Mg, R, options.h, Lg));
        }
        const double nn = static_cast<double>(n);
        std::function<double(double, double)> fn;
        if (driver.depends_on_z)
            fn = [approx](double y, double z) { return (*approx)(y, z); };
        else
            fn = [approx](double y, double) { return (*approx)(y); };
        const double c = driver.depends_on_z ? 2.0 * nn * nn : nn * nn;
        auto d = make_scalar_driver(std::move(fn), driver.depends_on_z, driver.g, c, driver.alpha, T);
        PicardOptions o = opt;
        if (!r.Y.empty()) {
            o.warm_y = &r.Y.back();
            o.warm_z = &*warm_z;
        }
        auto sol = picard_solve(psi, d, projector, o);
        r.indices.push_back(n);
        r.Y.push_back(std::move(sol.Y));
        warm_z = std::move(sol.Z);
        r.reports.push_back(std::move(sol.report));
    }

    // Upper barrier F(y, z) = M(1 + |y| + |z|) with the same g.
    std::function<double(double, double)> F = [Mg, z = driver.depends_on_z](double y, double zz) {
        return Mg * (1.0 + std::abs(y) + (z ? std::abs(zz) : 0.0));
    };
    const double cU = driver.depends_on_z ? 2.0 * Mg * Mg : Mg * Mg;
    auto dU = make_scalar_driver(F, driver.depends_on_z, driver.g, cU, driver.alpha, T);
    r.U = picard_solve(psi, dU, projector, opt).Y;

    for (std::size_t k = 0; k < r.Y.size(); ++k)
        for (std::size_t i = 0; i <= N; ++i)
            for (std::size_t p = 0; p < M; ++p) {
                const double y = r.Y[k].at(i, p);
                r.worst_barrier_gap = std::max(r.worst_barrier_gap, y - r.U.at(i, p));
                if (k + 1 < r.Y.size()) r.worst_monotone_gap = std::max(r.worst_monotone_gap, y - r.Y[k + 1].at(i, p));
            }
    if (r.Y.size() >= 2) {
        std::vector<double> d;
        d.reserve((N + 1) * M);
        const auto& a = r.Y[r.Y.size() - 1];
        const auto& c = r.Y[r.Y.size() - 2];
        for (std::size_t k = 0; k < a.data().size(); ++k) d.push_back(std::pow(a.data()[k] - c.data()[k], 2));
        r.cauchy_tail = std::sqrt(mean(d));
    }
    if (r.worst_monotone_gap > r.noise_tol || r.worst_barrier_gap > r.noise_tol) {
        std::ostringstream msg;
        msg << "monotone approximation broken: max(Y^n - Y^{n+1}) = " << r.worst_monotone_gap
            << ", max(Y^n - U) = " << r.worst_barrier_gap << ", tolerance " << r.noise_tol;
        fail(ErrorCode::scheme_failure, msg.str());
    }
    return r;
}

}  // namespace bdsvie
