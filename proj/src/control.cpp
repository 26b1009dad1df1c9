#include "bdsvie/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace bdsvie {

namespace {

constexpr std::uint64_t kDerivativeStream = 0x64657269;

double kernel(const Kernel& a, double t, double s) { return a ? a(t, s) : 0.0; }

std::size_t nodes_of(const ScenarioBatch& b) { return b.steps() + 1; }

void require_scalar_batch(const ScenarioBatch& b, const char* what) {
    if (b.dim_w() != 1 || b.dim_b() != 1)
        fail(ErrorCode::invalid_argument, std::string(what) + " requires one-dimensional W and B");
}

void check_process(const DiagonalProcess& u, const ScenarioBatch& b, const char* what) {
    if (u.batch_id() != b.id()) fail(ErrorCode::invalid_argument, std::string(what) + " uses a different batch");
    if (u.components() != 1) fail(ErrorCode::invalid_argument, std::string(what) + " must be scalar");
}

/// Left sum over i < N of dt_i * integrand(i, path), one sample per path.
template <typename F>
std::vector<double> path_integrals(const ScenarioBatch& b, F&& integrand) {
    const std::size_t M = b.paths(), N = b.steps();
    std::vector<double> out(M, 0.0);
    parallel_for(M, [&](std::size_t p) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += b.grid().dt(i) * integrand(i, p);
        out[p] = s;
    });
    return out;
}

double central(const std::function<double(double)>& f, double x, double rel) {
    const double h = rel * (1.0 + std::abs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

enum class Arg { p, q, u };

double coef_derivative(const ControlProblem::Coef& supplied, const ControlProblem::Coef& f, Arg arg, double rel,
                       double t, double s, double p, double q, double u) {
    if (supplied) return supplied(t, s, p, q, u);
    if (!f) return 0.0;
    switch (arg) {
        case Arg::p: return central([&](double x) { return f(t, s, x, q, u); }, p, rel);
        case Arg::q: return central([&](double x) { return f(t, s, p, x, u); }, q, rel);
        case Arg::u: return central([&](double x) { return f(t, s, p, q, x); }, u, rel);
    }
    return 0.0;
}

double cost_derivative(const ControlProblem::Cost& supplied, const ControlProblem::Cost& h, Arg arg, double rel,
                       double t, double p, double u) {
    if (supplied) return supplied(t, p, u);
    if (!h) return 0.0;
    if (arg == Arg::p) return central([&](double x) { return h(t, x, u); }, p, rel);
    return central([&](double x) { return h(t, p, x); }, u, rel);
}

bool agrees(double supplied, double fd) { return std::abs(supplied - fd) <= 1e-4 * std::max(1.0, std::abs(fd)); }

std::string format_point(double t, double s, double p, double q, double u) {
    std::ostringstream o;
    o << "(t, s, p, q, u) = (" << t << ", " << s << ", " << p << ", " << q << ", " << u << ")";
    return o.str();
}

}  // namespace

DualityResult duality_gap(const LinearDualData& data, const Projector& projector, const DualityOptions& options) {
    const ScenarioBatch& bt = projector.batch();
    require_scalar_batch(bt, "duality_gap");
    const TimeGrid& grid = bt.grid();
    const std::size_t N = grid.N;
    if (!data.phi.eval || !data.psi.eval) fail(ErrorCode::invalid_argument, "phi and psi must be provided");
    if (data.phi.k != 1 || data.psi.k != 1) fail(ErrorCode::invalid_argument, "duality_gap is scalar");

    // Lipschitz constants by Cauchy-Schwarz over the grid.
    double c_fwd = 0.0, a_fwd = 0.0, c_bwd = 0.0, a_bwd = 0.0;
    bool fwd_theta = false, bwd_zeta = false;
    for (std::size_t i = 0; i <= N; ++i)
        for (std::size_t j = 0; j <= N; ++j) {
            const double t = grid.t(i), s = grid.t(j);
            const double a1 = kernel(data.A1, t, s), a2 = kernel(data.A2, t, s);
            const double a3 = kernel(data.A3, t, s), a4 = kernel(data.A4, t, s);
            if (!std::isfinite(a1) || !std::isfinite(a2) || !std::isfinite(a3) || !std::isfinite(a4))
                fail(ErrorCode::driver_evaluation, "non-finite kernel value");
            if (j < i) {
                c_fwd = std::max(c_fwd, a1 * a1 + a2 * a2);
                a_fwd = std::max(a_fwd, a3 * a3 + a4 * a4);
                fwd_theta = fwd_theta || a2 != 0.0 || a4 != 0.0;
            } else {
                // backward coefficients are read at (s, t) with s >= t
                const double b1 = kernel(data.A1, s, t), b2 = kernel(data.A2, s, t);
                const double b3 = kernel(data.A3, s, t), b4 = kernel(data.A4, s, t);
                c_bwd = std::max(c_bwd, b1 * b1 + b3 * b3);
                a_bwd = std::max(a_bwd, b2 * b2 + b4 * b4);
                bwd_zeta = bwd_zeta || b3 != 0.0 || b4 != 0.0;
            }
        }
    const double bound = 1.0 / (grid.T + 2.0);
    if (a_fwd >= bound || a_bwd >= bound) {
        std::ostringstream o;
        o << "noise coefficients A3, A4 (forward) or A2, A4 (backward) give alpha = " << std::max(a_fwd, a_bwd)
          << ", outside [0, 1/(T+2))";
        fail(ErrorCode::hypothesis_violation, o.str());
    }

    const Kernel A1 = data.A1, A2 = data.A2, A3 = data.A3, A4 = data.A4;
    DriverFn b = [A1, A2](const DriverPoint& pt, std::span<double> out) {
        out[0] = kernel(A1, pt.t, pt.s) * pt.y[0] + kernel(A2, pt.t, pt.s) * pt.zeta[0];
    };
    DriverFn sigma = [A3, A4](const DriverPoint& pt, std::span<double> out) {
        out[0] = kernel(A3, pt.t, pt.s) * pt.y[0] + kernel(A4, pt.t, pt.s) * pt.zeta[0];
    };
    FdsvieDriver fwd(b, sigma, c_fwd, a_fwd, grid.T, Dims{}, false, fwd_theta);
    const InitialTerm phi = data.phi;
    InitialTerm neg_phi{1, [phi](const ScenarioBatch& s, std::size_t p, std::size_t i, std::span<double> out) {
                            phi.eval(s, p, i, out);
                            out[0] = -out[0];
                        }};
    FdsvieOptions fo;
    fo.tol = options.tol;
    fo.max_iter = options.max_iter;
    fo.sign = BackwardSign::plus;
    FdsvieSolution forward = solve_fdsvie(neg_phi, fwd, projector, fo);

    DriverFn f = [A1, A3](const DriverPoint& pt, std::span<double> out) {
        out[0] = kernel(A1, pt.s, pt.t) * pt.y[0] + kernel(A3, pt.s, pt.t) * pt.zeta[0];
    };
    DriverFn g = [A2, A4](const DriverPoint& pt, std::span<double> out) {
        out[0] = kernel(A2, pt.s, pt.t) * pt.y[0] + kernel(A4, pt.s, pt.t) * pt.zeta[0];
    };
    BdsvieDriver bwd(f, g, c_bwd, a_bwd, grid.T, Dims{}, bwd_zeta);
    const FreeTerm psi = data.psi;
    FreeTerm neg_psi{1, [psi](const ScenarioBatch& s, std::size_t p, std::size_t i, std::span<double> out) {
                         psi.eval(s, p, i, out);
                         out[0] = -out[0];
                     }};
    PicardOptions po;
    po.tol = options.tol;
    po.max_iter = options.max_iter;
    BdsvieSolution backward = picard_solve(neg_psi, bwd, projector, po);

    auto lhs_samples = path_integrals(bt, [&](std::size_t i, std::size_t p) {
        double v = 0.0;
        psi.eval(bt, p, i, std::span<double>(&v, 1));
        return v * forward.P.at(i, p);
    });
    auto rhs_samples = path_integrals(bt, [&](std::size_t i, std::size_t p) {
        double v = 0.0;
        phi.eval(bt, p, i, std::span<double>(&v, 1));
        return v * backward.Y.at(i, p);
    });
    const MeanStderr l = mean_stderr(lhs_samples), r = mean_stderr(rhs_samples);
    DualityResult out;
    out.lhs = l.mean;
    out.rhs = r.mean;
    out.gap = std::abs(l.mean - r.mean);
    out.stderr_lhs = l.std_error;
    out.stderr_rhs = r.std_error;
    out.forward = std::move(forward.report);
    out.backward = std::move(backward.report);
    out.P = std::move(forward.P);
    out.Y = std::move(backward.Y);
    return out;
}

double ControlProblem::db_p(double t, double s, double p, double q, double u) const {
    return coef_derivative(b_p, b, Arg::p, fd_step, t, s, p, q, u);
}
double ControlProblem::db_q(double t, double s, double p, double q, double u) const {
    return coef_derivative(b_q, b, Arg::q, fd_step, t, s, p, q, u);
}
double ControlProblem::db_u(double t, double s, double p, double q, double u) const {
    return coef_derivative(b_u, b, Arg::u, fd_step, t, s, p, q, u);
}
double ControlProblem::dsigma_p(double t, double s, double p, double q, double u) const {
    return coef_derivative(sigma_p, sigma, Arg::p, fd_step, t, s, p, q, u);
}
double ControlProblem::dsigma_q(double t, double s, double p, double q, double u) const {
    return coef_derivative(sigma_q, sigma, Arg::q, fd_step, t, s, p, q, u);
}
double ControlProblem::dsigma_u(double t, double s, double p, double q, double u) const {
    return coef_derivative(sigma_u, sigma, Arg::u, fd_step, t, s, p, q, u);
}
double ControlProblem::dh_p(double t, double p, double u) const {
    return cost_derivative(h_p, h, Arg::p, fd_step, t, p, u);
}
double ControlProblem::dh_u(double t, double p, double u) const {
    return cost_derivative(h_u, h, Arg::u, fd_step, t, p, u);
}

void ControlProblem::validate(const TimeGrid& grid) const {
    if (!(std::isfinite(u_lo) && std::isfinite(u_hi) && u_lo < u_hi))
        fail(ErrorCode::invalid_argument, "control set needs u_lo < u_hi");
    if (!h) fail(ErrorCode::invalid_argument, "running cost h is required");
    if (!phi.eval || phi.k != 1) fail(ErrorCode::invalid_argument, "phi must be a scalar initial term");
    if (!(fd_step > 0.0)) fail(ErrorCode::invalid_argument, "fd_step must be positive");
    if (c < 0.0 || alpha < 0.0) fail(ErrorCode::invalid_argument, "Lipschitz constants must be non-negative");

    struct CoefCheck {
        const char* name;
        const Coef& supplied;
        const Coef& fn;
        Arg arg;
    };
    const CoefCheck coefs[] = {{"b_p", b_p, b, Arg::p},         {"b_q", b_q, b, Arg::q},
                               {"b_u", b_u, b, Arg::u},         {"sigma_p", sigma_p, sigma, Arg::p},
                               {"sigma_q", sigma_q, sigma, Arg::q}, {"sigma_u", sigma_u, sigma, Arg::u}};
    std::uint64_t counter = 0;
    auto draw = [&]() { return counter_normal(11, kDerivativeStream, 0, counter++, 0); };
    auto unit = [&]() { return 0.5 * (1.0 + std::erf(draw() / std::sqrt(2.0))); };
    for (int probe = 0; probe < 100; ++probe) {
        double t = grid.T * unit(), s = grid.T * unit();
        if (s > t) std::swap(s, t);
        const double p = 2.0 * draw(), q = 2.0 * draw();
        const double u = u_lo + (u_hi - u_lo) * unit();
        for (const auto& cc : coefs) {
            if (!cc.supplied) continue;
            const double fd = coef_derivative({}, cc.fn, cc.arg, fd_step, t, s, p, q, u);
            const double sv = cc.supplied(t, s, p, q, u);
            if (!agrees(sv, fd)) {
                std::ostringstream o;
                o << "supplied " << cc.name << " = " << sv << " disagrees with finite differences (" << fd << ") at "
                  << format_point(t, s, p, q, u);
                fail(ErrorCode::invalid_argument, o.str());
            }
        }
        const std::pair<const char*, const Cost*> costs[] = {{"h_p", &h_p}, {"h_u", &h_u}};
        for (const auto& [name, fn] : costs) {
            if (!*fn) continue;
            const Arg arg = fn == &h_p ? Arg::p : Arg::u;
            const double fd = cost_derivative({}, h, arg, fd_step, t, p, u);
            const double sv = (*fn)(t, p, u);
            if (!agrees(sv, fd)) {
                std::ostringstream o;
                o << "supplied " << name << " = " << sv << " disagrees with finite differences (" << fd
                  << ") at (t, p, u) = (" << t << ", " << p << ", " << u << ")";
                fail(ErrorCode::invalid_argument, o.str());
            }
        }
    }
}

void check_admissible(const ControlProblem& problem, const DiagonalProcess& u) {
    for (std::size_t p = 0; p < u.paths(); ++p)
        for (std::size_t i = 0; i < u.nodes(); ++i) {
            const double v = u.at(i, p);
            if (!(v >= problem.u_lo && v <= problem.u_hi)) {
                std::ostringstream o;
                o << "control value " << v << " outside [" << problem.u_lo << ", " << problem.u_hi
                  << "] at (path, node) = (" << p << ", " << i << ")";
                fail(ErrorCode::invalid_argument, o.str());
            }
        }
}

FdsvieSolution solve_state(const ControlProblem& problem, const DiagonalProcess& u, const Projector& projector,
                           const FdsvieOptions& options) {
    const ScenarioBatch& bt = projector.batch();
    require_scalar_batch(bt, "solve_state");
    check_process(u, bt, "control");
    check_admissible(problem, u);
    const DiagonalProcess* up = &u;
    const ControlProblem* pr = &problem;
    const bool uses_q = problem.depends_on_q;
    DriverFn b, sigma;
    if (problem.b)
        b = [pr, up, uses_q](const DriverPoint& pt, std::span<double> out) {
            out[0] = pr->b(pt.t, pt.s, pt.y[0], uses_q ? pt.zeta[0] : 0.0, up->at(pt.s_index, pt.path));
        };
    if (problem.sigma)
        sigma = [pr, up, uses_q](const DriverPoint& pt, std::span<double> out) {
            out[0] = pr->sigma(pt.t, pt.s, pt.y[0], uses_q ? pt.zeta[0] : 0.0, up->at(pt.s_index, pt.path));
        };
    FdsvieDriver driver(b, sigma, problem.c, problem.alpha, bt.grid().T, Dims{}, false, uses_q);
    FdsvieOptions fo = options;
    fo.sign = BackwardSign::plus;
    return solve_fdsvie(problem.phi, driver, projector, fo);
}

CostEstimate cost_functional(const ControlProblem& problem, const DiagonalProcess& u, const DiagonalProcess& P,
                             const TimeGrid& grid) {
    if (!problem.h) fail(ErrorCode::invalid_argument, "running cost h is required");
    check_admissible(problem, u);
    if (P.paths() != u.paths() || P.nodes() != grid.size() || u.nodes() != grid.size())
        fail(ErrorCode::invalid_argument, "state and control shapes differ");
    const std::size_t M = u.paths(), N = grid.N;
    std::vector<double> samples(M, 0.0);
    parallel_for(M, [&](std::size_t p) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += grid.dt(i) * problem.h(grid.t(i), P.at(i, p), u.at(i, p));
        if (!std::isfinite(s))
            fail(ErrorCode::driver_evaluation, "non-finite running cost on path " + std::to_string(p));
        samples[p] = s;
    });
    const MeanStderr m = mean_stderr(samples);
    return {m.mean, m.std_error};
}

CostEstimate cost_functional(const ControlProblem& problem, const DiagonalProcess& u, const Projector& projector) {
    FdsvieSolution state = solve_state(problem, u, projector);
    return cost_functional(problem, u, state.P, projector.batch().grid());
}

namespace {

/// State along the reference control, shared by the adjoint closures.
struct Reference {
    ControlProblem problem;
    DiagonalProcess u, P;
    TwoParameterField Q;
    TimeGrid grid;

    // Coefficients at adjoint cell (t_i, s_j), j >= i: the original functions read at (s, t).
    double at(double (ControlProblem::*fn)(double, double, double, double, double) const, std::size_t i,
              std::size_t j, std::size_t path) const {
        return (problem.*fn)(grid.t(j), grid.t(i), P.at(i, path), Q.at(i, j, path), u.at(i, path));
    }
};

}  // namespace

AdjointSpec build_adjoint(const ControlProblem& problem, const DiagonalProcess& u_bar, const DiagonalProcess& P_bar,
                          const TwoParameterField& Q_bar, const TimeGrid& grid) {
    if (u_bar.components() != 1 || P_bar.components() != 1 || Q_bar.components() != 1)
        fail(ErrorCode::invalid_argument, "adjoint construction is scalar");
    if (u_bar.batch_id() != P_bar.batch_id() || P_bar.batch_id() != Q_bar.batch_id())
        fail(ErrorCode::invalid_argument, "reference processes come from different batches");
    if (P_bar.nodes() != grid.size()) fail(ErrorCode::invalid_argument, "grid does not match the state");
    if (Q_bar.region() != Region::full) fail(ErrorCode::invalid_argument, "state Q must cover the full square");
    auto ref = std::make_shared<Reference>(Reference{problem, u_bar, P_bar, Q_bar, grid});
    const std::size_t M = u_bar.paths(), N = grid.N;

    std::vector<double> cmax(N + 1, 0.0), amax(N + 1, 0.0);
    std::vector<char> zeta(N + 1, 0);
    parallel_for(N + 1, [&](std::size_t i) {
        for (std::size_t j = i; j <= N; ++j)
            for (std::size_t p = 0; p < M; ++p) {
                const double bp = ref->at(&ControlProblem::db_p, i, j, p);
                const double sp = ref->at(&ControlProblem::dsigma_p, i, j, p);
                const double bq = ref->at(&ControlProblem::db_q, i, j, p);
                const double sq = ref->at(&ControlProblem::dsigma_q, i, j, p);
                if (!std::isfinite(bp + sp + bq + sq))
                    fail(ErrorCode::driver_evaluation, "non-finite coefficient derivative in the adjoint");
                cmax[i] = std::max(cmax[i], bp * bp + sp * sp);
                amax[i] = std::max(amax[i], bq * bq + sq * sq);
                if (sp != 0.0 || sq != 0.0) zeta[i] = 1;
            }
    });
    const double c = *std::max_element(cmax.begin(), cmax.end());
    const double alpha = *std::max_element(amax.begin(), amax.end());
    const bool depends_on_zeta = std::any_of(zeta.begin(), zeta.end(), [](char z) { return z != 0; });
    if (alpha >= 1.0 / (grid.T + 2.0)) {
        std::ostringstream o;
        o << "adjoint noise coefficient b_q, sigma_q gives alpha = " << alpha << ", outside [0, 1/(T+2))";
        fail(ErrorCode::hypothesis_violation, o.str());
    }

    DriverFn f = [ref](const DriverPoint& pt, std::span<double> out) {
        const std::size_t i = pt.t_index, j = pt.s_index, p = pt.path;
        out[0] = ref->at(&ControlProblem::db_p, i, j, p) * pt.y[0] +
                 ref->at(&ControlProblem::dsigma_p, i, j, p) * pt.zeta[0];
    };
    DriverFn g = [ref](const DriverPoint& pt, std::span<double> out) {
        const std::size_t i = pt.t_index, j = pt.s_index, p = pt.path;
        out[0] = ref->at(&ControlProblem::db_q, i, j, p) * pt.y[0] +
                 ref->at(&ControlProblem::dsigma_q, i, j, p) * pt.zeta[0];
    };
    FreeTerm free_term{1, [ref](const ScenarioBatch&, std::size_t p, std::size_t i, std::span<double> out) {
                           out[0] = ref->problem.dh_p(ref->grid.t(i), ref->P.at(i, p), ref->u.at(i, p));
                       }};
    auto drift = [ref](const DiagonalProcess& Y, const TwoParameterField& Z, std::size_t i, std::size_t j,
                       std::span<double> out) {
        for (std::size_t p = 0; p < out.size(); ++p)
            out[p] = ref->at(&ControlProblem::db_u, i, j, p) * Y.at(j, p) +
                     ref->at(&ControlProblem::dsigma_u, i, j, p) * Z.at(j, i, p);
    };
    return {std::move(free_term), BdsvieDriver(f, g, c, alpha, grid.T, Dims{}, depends_on_zeta), std::move(drift)};
}

AdjointSolution solve_adjoint(const AdjointSpec& spec, const Projector& projector, const PicardOptions& options) {
    PicardOptions po = options;
    po.extend = true;
    po.S = 0;
    BdsvieSolution y = picard_solve(spec.free_term, spec.driver, projector, po);
    const DiagonalProcess& Y = y.Y;
    const TwoParameterField& Z = y.Z;
    CellFn f0 = [&](std::size_t i, std::size_t j, std::span<double> out) { spec.y0_drift(Y, Z, i, j, out); };
    SimpleSolution y0 = solve_simple(FreeTerm::constant(0.0), f0, {}, projector);
    extend_m_solution(y0.Y, y0.Z, 0, projector);
    y0.Y.set_label("Y0");
    y0.Z.set_label("Z0");
    return {std::move(y), std::move(y0.Y), std::move(y0.Z)};
}

double hamiltonian(double y0, double h_u, double u) { return -(y0 + h_u) * u; }

DiagonalProcess constant_control(const ScenarioBatch& batch, double value) {
    DiagonalProcess u(batch, 1, "u");
    std::fill(u.data().begin(), u.data().end(), value);
    return u;
}

DiagonalProcess deterministic_control(const ScenarioBatch& batch, const std::function<double(double)>& fn) {
    DiagonalProcess u(batch, 1, "u");
    for (std::size_t i = 0; i < nodes_of(batch); ++i) {
        const double v = fn(batch.grid().t(i));
        auto node = u.node(i);
        std::fill(node.begin(), node.end(), v);
    }
    return u;
}

namespace {

struct AdjointAlong {
    FdsvieSolution state;
    AdjointSolution adjoint;
};

AdjointAlong adjoint_along(const ControlProblem& problem, const DiagonalProcess& u, const Projector& projector,
                           const PicardOptions& options) {
    FdsvieSolution state = solve_state(problem, u, projector);
    AdjointSpec spec = build_adjoint(problem, u, state.P, state.Q, projector.batch().grid());
    AdjointSolution adj = solve_adjoint(spec, projector, options);
    return {std::move(state), std::move(adj)};
}

/// min over v in U of c (v - ubar); V is linear in v so the minimum is at a vertex.
double min_variation(double c, double ubar, double lo, double hi) {
    return std::min({0.0, c * (lo - ubar), c * (hi - ubar)});
}

}  // namespace

MaxPrincipleReport check_max_principle(const ControlProblem& problem, const DiagonalProcess& u_bar,
                                       const Projector& projector, const MaxPrincipleOptions& options) {
    const ScenarioBatch& bt = projector.batch();
    const TimeGrid& grid = bt.grid();
    const std::size_t M = bt.paths(), N = grid.N;
    problem.validate(grid);
    check_process(u_bar, bt, "control");
    check_admissible(problem, u_bar);
    if (options.v_grid_size < 2) fail(ErrorCode::invalid_argument, "v-grid needs at least two points");
    if (!(options.epsilon > 0.0 && options.epsilon <= 1.0))
        fail(ErrorCode::invalid_argument, "epsilon must lie in (0, 1]");

    AdjointAlong base = adjoint_along(problem, u_bar, projector, options.adjoint);
    const DiagonalProcess& P = base.state.P;
    MaxPrincipleReport report;
    report.cost = cost_functional(problem, u_bar, P, grid);
    report.Y0 = std::move(base.adjoint.Y0);
    report.multiplier = std::move(base.adjoint.Y);

    double max_dt = 0.0;
    for (std::size_t i = 0; i < N; ++i) max_dt = std::max(max_dt, grid.dt(i));
    report.tolerance = options.tolerance.value_or(5.0 / std::sqrt(static_cast<double>(M)) + max_dt);
    report.v_grid.resize(options.v_grid_size);
    for (std::size_t k = 0; k < options.v_grid_size; ++k)
        report.v_grid[k] = problem.u_lo + (problem.u_hi - problem.u_lo) * static_cast<double>(k) /
                                              static_cast<double>(options.v_grid_size - 1);

    // Raw Y0 + h_u, then its F-conditional expectation.
    DiagonalProcess raw(bt, 1, "Y0+h_u");
    report.coefficient = DiagonalProcess(bt, 1, "coefficient");
    std::vector<std::size_t> violations(N, 0);
    std::vector<double> worst(N, 0.0);
    parallel_for(N + 1, [&](std::size_t i) {
        std::vector<double> target(M);
        for (std::size_t p = 0; p < M; ++p)
            target[p] = report.Y0.at(i, p) + problem.dh_u(grid.t(i), P.at(i, p), u_bar.at(i, p));
        std::copy(target.begin(), target.end(), raw.node(i).begin());
        projector.project(target, {i, i}, report.coefficient.node(i));
        if (i == N) return;  // the left sum never weights the terminal node
        for (std::size_t p = 0; p < M; ++p) {
            const double c = report.coefficient.at(i, p);
            double v_min = 0.0;
            for (double v : report.v_grid) v_min = std::min(v_min, c * (v - u_bar.at(i, p)));
            v_min = std::min(v_min, min_variation(c, u_bar.at(i, p), problem.u_lo, problem.u_hi));
            worst[i] = std::min(worst[i], v_min);
            if (v_min < -report.tolerance) ++violations[i];
        }
    });
    std::size_t total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        total += violations[i];
        report.worst_violation = std::min(report.worst_violation, worst[i]);
    }
    report.violation_fraction = static_cast<double>(total) / static_cast<double>(M * N);

    if (!options.gateaux) return report;
    const double eps = options.epsilon;
    const double T = grid.T;
    const std::pair<std::string, std::function<double(double)>> directions[] = {
        {"u_lo", [&](double) { return problem.u_lo; }},
        {"u_hi", [&](double) { return problem.u_hi; }},
        {"linear", [&](double t) { return problem.u_lo + (problem.u_hi - problem.u_lo) * t / T; }}};
    for (const auto& [name, fn] : directions) {
        DiagonalProcess dir = deterministic_control(bt, fn);
        DiagonalProcess u_eps(bt, 1, "u_eps");
        for (std::size_t k = 0; k < u_eps.data().size(); ++k) {
            const double ub = u_bar.data()[k];
            u_eps.data()[k] = std::clamp(ub + eps * (dir.data()[k] - ub), problem.u_lo, problem.u_hi);
        }
        const CostEstimate j_eps = cost_functional(problem, u_eps, projector);
        GateauxProbe g;
        g.direction = name;
        g.lhs = (j_eps.value - report.cost.value) / eps;
        auto pair = path_integrals(bt, [&](std::size_t i, std::size_t p) {
            return raw.at(i, p) * (dir.at(i, p) - u_bar.at(i, p));
        });
        auto mag = path_integrals(bt, [&](std::size_t i, std::size_t p) {
            const double hu = raw.at(i, p) - report.Y0.at(i, p);
            return (std::abs(report.Y0.at(i, p)) + std::abs(hu)) * std::abs(dir.at(i, p) - u_bar.at(i, p));
        });
        g.rhs = mean(pair);
        g.scale = mean(mag);
        const double denom = std::max({std::abs(g.lhs) + std::abs(g.rhs), g.scale, 1e-12});
        g.relative_gap = std::abs(g.lhs - g.rhs) / denom;
        report.gateaux.push_back(std::move(g));
    }
    return report;
}

std::string to_string(FbdsvieStatus s) {
    switch (s) {
        case FbdsvieStatus::converged: return "converged";
        case FbdsvieStatus::stalled: return "stalled";
        case FbdsvieStatus::max_iter: return "max_iter";
    }
    return "unknown";
}

FbdsvieSystem assemble_fbdsvie(const ControlProblem& problem) { return FbdsvieSystem{problem}; }

namespace {

struct Minimizer {
    bool affine = true;
    double value = 0.0;
};

/// argmin over [lo, hi] of y0 v + h(t, p, v).
Minimizer minimize_pointwise(const ControlProblem& pr, double t, double p, double y0, double current,
                             std::size_t scan_points) {
    const double lo = pr.u_lo, hi = pr.u_hi;
    const double a0 = pr.dh_u(t, p, lo), a1 = pr.dh_u(t, p, hi);
    const double a_third = pr.dh_u(t, p, lo + (hi - lo) / 3.0), a_mid = pr.dh_u(t, p, 0.5 * (lo + hi));
    const double scale = 1.0 + std::abs(a0) + std::abs(a1);
    Minimizer m;
    // Two interior probes: a single midpoint misses odd nonlinearities.
    if (std::abs(a_mid - 0.5 * (a0 + a1)) <= 1e-8 * scale &&
        std::abs(a_third - (2.0 * a0 + a1) / 3.0) <= 1e-8 * scale) {
        const double slope = (a1 - a0) / (hi - lo);
        const double intercept = a0 - slope * lo;
        if (slope > 1e-12 * scale) {
            m.value = std::clamp(-(y0 + intercept) / slope, lo, hi);
        } else if (slope < -1e-12 * scale) {
            // concave objective: best vertex
            m.value = y0 * lo + pr.h(t, p, lo) <= y0 * hi + pr.h(t, p, hi) ? lo : hi;
        } else {
            const double coef = y0 + intercept;
            m.value = coef > 0.0 ? lo : (coef < 0.0 ? hi : current);
        }
        return m;
    }
    m.affine = false;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < scan_points; ++k) {
        const double v = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(scan_points - 1);
        const double obj = y0 * v + pr.h(t, p, v);
        if (obj < best) {
            best = obj;
            m.value = v;
        }
    }
    return m;
}

double rms_change(const DiagonalProcess& a, const DiagonalProcess& b) {
    std::vector<double> sq(a.data().size());
    for (std::size_t k = 0; k < sq.size(); ++k) {
        const double d = a.data()[k] - b.data()[k];
        sq[k] = d * d;
    }
    return std::sqrt(mean(sq));
}

}  // namespace

DiagonalProcess FbdsvieSystem::update(const DiagonalProcess& u, const Projector& projector,
                                      const FbdsvieOptions& options, DiagonalProcess* P_out,
                                      DiagonalProcess* Y0_out) const {
    const ScenarioBatch& bt = projector.batch();
    const TimeGrid& grid = bt.grid();
    const std::size_t M = bt.paths();
    if (options.scan_points < 2) fail(ErrorCode::invalid_argument, "scan_points must be at least 2");
    AdjointAlong along = adjoint_along(problem, u, projector, options.adjoint);
    DiagonalProcess next(bt, 1, "u");
    std::vector<char> affine(grid.size(), 1);
    parallel_for(grid.size(), [&](std::size_t i) {
        for (std::size_t p = 0; p < M; ++p) {
            const Minimizer m = minimize_pointwise(problem, grid.t(i), along.state.P.at(i, p),
                                                   along.adjoint.Y0.at(i, p), u.at(i, p), options.scan_points);
            next.at(i, p) = m.value;
            if (!m.affine) affine[i] = 0;
        }
    });
    next.set_label(std::all_of(affine.begin(), affine.end(), [](char a) { return a != 0; }) ? "u:closed-form"
                                                                                              : "u:scan");
    if (P_out) *P_out = std::move(along.state.P);
    if (Y0_out) *Y0_out = std::move(along.adjoint.Y0);
    return next;
}

double FbdsvieSystem::residual(const DiagonalProcess& u, const Projector& projector, std::size_t v_grid_size) const {
    MaxPrincipleOptions o;
    o.v_grid_size = v_grid_size;
    o.gateaux = false;
    MaxPrincipleReport r = check_max_principle(problem, u, projector, o);
    const std::size_t M = u.paths(), N = projector.batch().steps();
    std::vector<double> gaps(M * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t p = 0; p < M; ++p)
            gaps[i * M + p] =
                -min_variation(r.coefficient.at(i, p), u.at(i, p), problem.u_lo, problem.u_hi);
    return mean(gaps);
}

FbdsvieReport FbdsvieSystem::run(const DiagonalProcess& u0, const Projector& projector,
                                 const FbdsvieOptions& options) const {
    const ScenarioBatch& bt = projector.batch();
    problem.validate(bt.grid());
    check_process(u0, bt, "initial control");
    check_admissible(problem, u0);
    if (options.max_iter == 0) fail(ErrorCode::invalid_argument, "max_iter must be positive");
    if (options.stall_window == 0) fail(ErrorCode::invalid_argument, "stall_window must be positive");

    FbdsvieReport rep;
    rep.u = u0;
    rep.closed_form = true;
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        DiagonalProcess P, Y0, next;
        try {
            next = update(rep.u, projector, options, &P, &Y0);
        } catch (const NonConvergence& e) {
            rep.status = FbdsvieStatus::stalled;
            rep.notes.push_back(std::string("inner solve failed: ") + e.what());
            return rep;
        }
        if (next.label() != "u:closed-form") rep.closed_form = false;
        rep.costs.push_back(cost_functional(problem, rep.u, P, bt.grid()).value);
        const double change = rms_change(next, rep.u);
        rep.residuals.push_back(change);
        rep.iterations = it;
        rep.P = std::move(P);
        rep.Y0 = std::move(Y0);
        rep.u = std::move(next);
        rep.u.set_label("u");
        if (change <= options.tol) {
            rep.status = FbdsvieStatus::converged;
            return rep;
        }
        if (change < best) {
            best = change;
            since_best = 0;
        } else if (++since_best >= options.stall_window) {
            rep.status = FbdsvieStatus::stalled;
            rep.notes.push_back("no decrease of the control change over " + std::to_string(options.stall_window) +
                                " iterations");
            return rep;
        }
    }
    rep.status = FbdsvieStatus::max_iter;
    return rep;
}

}  // namespace bdsvie
