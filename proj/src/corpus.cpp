#include "bdsvie/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bdsvie/control.hpp"
#include "bdsvie/fdsvie.hpp"
#include "bdsvie/order.hpp"
#include "bdsvie/parallel.hpp"

namespace bdsvie {

using nlohmann::json;

Check make_check(std::string name, double value, std::string relation, double bound) {
    Check c{std::move(name), value, bound, std::move(relation), false};
    if (c.relation == "<=")
        c.passed = value <= bound;
    else if (c.relation == ">=")
        c.passed = value >= bound;
    else
        fail(ErrorCode::invalid_argument, "unknown relation " + c.relation);
    return c;
}

bool CorpusOutput::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

SeriesRow node_summary(const DiagonalProcess& Y, std::size_t node, double t, std::optional<double> analytic) {
    const MeanStderr m = mean_stderr(Y.component(node, 0));
    return {t, m.mean, m.std_error, analytic};
}

namespace {

json to_json(const SolveReport& r) {
    return {{"iterations", r.iterations},
            {"residuals", r.residuals},
            {"residuals_unweighted", r.residuals_unweighted},
            {"measured_ratio", r.measured_ratio},
            {"theoretical_delta", r.theoretical_delta},
            {"beta", r.beta},
            {"converged", r.converged},
            {"wallclock_seconds", r.wallclock_seconds},
            {"certificate",
             {{"passed", r.certificate.passed},
              {"probes", r.certificate.probes},
              {"worst_f_ratio", r.certificate.worst_f_ratio},
              {"worst_g_ratio", r.certificate.worst_g_ratio},
              {"message", r.certificate.message}}},
            {"warnings", r.warnings}};
}

double param(const Params& p, const std::string& key) {
    auto it = p.find(key);
    if (it == p.end()) fail(ErrorCode::config, "missing parameter " + key);
    return it->second;
}

PicardOptions picard_options(const RunSettings& s) {
    PicardOptions o;
    o.tol = s.picard_tol;
    o.max_iter = s.max_iter;
    return o;
}

FdsvieOptions fdsvie_options(const RunSettings& s) {
    FdsvieOptions o;
    o.tol = s.picard_tol;
    o.max_iter = s.max_iter;
    return o;
}

const TimeGrid& grid_of(const Projector& proj) { return proj.batch().grid(); }

/// Max over nodes of the ensemble RMS of Y(t_i) - exact(i, path).
template <typename F>
double max_node_rms(const DiagonalProcess& Y, F&& exact) {
    double worst = 0.0;
    std::vector<double> sq(Y.paths());
    for (std::size_t i = 0; i < Y.nodes(); ++i) {
        for (std::size_t p = 0; p < Y.paths(); ++p) sq[p] = std::pow(Y.at(i, p) - exact(i, p), 2);
        worst = std::max(worst, std::sqrt(mean(sq)));
    }
    return worst;
}

template <typename F>
std::vector<SeriesRow> series_of(const DiagonalProcess& Y, const TimeGrid& g, F&& analytic) {
    std::vector<SeriesRow> rows;
    for (std::size_t i = 0; i < Y.nodes(); ++i) rows.push_back(node_summary(Y, i, g.t(i), analytic(g.t(i))));
    return rows;
}

/// Average of Z over the upper triangle t_i <= t_j < T, all paths.
double mean_upper(const TwoParameterField& Z, std::size_t N) {
    std::vector<double> cells;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i; j < N; ++j) {
            auto c = Z.cell(i, j);
            cells.push_back(mean(std::vector<double>(c.begin(), c.end())));
        }
    return mean(cells);
}

// ---- simple / picard -------------------------------------------------------

CorpusOutput martingale_free_term(const Projector& proj, const Params&, const RunSettings&) {
    const ScenarioBatch& b = proj.batch();
    const TimeGrid& g = grid_of(proj);
    SimpleSolution sol = solve_simple(FreeTerm::terminal_w(), {}, {}, proj);
    extend_m_solution(sol.Y, sol.Z, 0, proj);
    const double rms = max_node_rms(sol.Y, [&](std::size_t i, std::size_t p) { return b.W(i, p); });
    const double zbar = mean_upper(sol.Z, g.N);
    const double mrel = check_m_relation(sol.Y, sol.Z, 0, proj);
    TwoParameterField zero = sol.Z;
    std::fill(zero.data().begin(), zero.data().end(), 0.0);
    const double mrel_neg = check_m_relation(sol.Y, zero, 0, proj);
    CorpusOutput out;
    out.report = {{"max_rms_error", rms}, {"mean_Z", zbar}, {"m_relation", mrel}, {"m_relation_zeroed", mrel_neg}};
    out.checks = {make_check("max_rms_error", rms, "<=", 0.05 * std::sqrt(g.T)),
                  make_check("mean_Z_low", zbar, ">=", 0.9), make_check("mean_Z_high", zbar, "<=", 1.1),
                  make_check("m_relation", mrel, "<=", 0.05), make_check("m_relation_zeroed", mrel_neg, ">=", 0.5)};
    out.series = series_of(sol.Y, g, [](double) { return std::optional<double>(0.0); });
    out.field = std::move(sol.Z);
    return out;
}

CorpusOutput backward_noise_free_term(const Projector& proj, const Params& prm, const RunSettings&) {
    const ScenarioBatch& b = proj.batch();
    const TimeGrid& g = grid_of(proj);
    const double a = param(prm, "noise");
    CellFn g0 = [a](std::size_t, std::size_t, std::span<double> out) { std::fill(out.begin(), out.end(), a); };
    SimpleSolution sol = solve_simple(FreeTerm::constant(0.0), {}, g0, proj);
    const double rms = max_node_rms(sol.Y, [&](std::size_t i, std::size_t p) { return a * b.B_tail(i, p); });
    CorpusOutput out;
    out.report = {{"max_rms_error", rms}};
    out.checks = {make_check("max_rms_error", rms, "<=", 0.05 * std::max(1.0, std::abs(a)))};
    out.series = series_of(sol.Y, g, [](double) { return std::optional<double>(0.0); });
    return out;
}

CorpusOutput deterministic_drift(const Projector& proj, const Params& prm, const RunSettings&) {
    const TimeGrid& g = grid_of(proj);
    const double v = param(prm, "value");
    CellFn f0 = [v](std::size_t, std::size_t, std::span<double> out) { std::fill(out.begin(), out.end(), v); };
    SimpleSolution sol = solve_simple(FreeTerm::constant(0.0), f0, {}, proj);
    const double err = max_node_rms(sol.Y, [&](std::size_t i, std::size_t) { return v * (g.T - g.t(i)); });
    CorpusOutput out;
    out.report = {{"max_rms_error", err}};
    out.checks = {make_check("max_rms_error", err, "<=", 1e-8 * (1.0 + std::abs(v)))};
    out.series = series_of(sol.Y, g, [&](double t) { return std::optional<double>(v * (g.T - t)); });
    return out;
}

CorpusOutput exp_ode(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double rate = param(prm, "rate"), psi = param(prm, "psi"), alpha = param(prm, "alpha");
    auto drv = BdsvieDriver::scalar([rate](double, double, double y, double, double) { return rate * y; }, {},
                                    rate * rate, alpha, g.T);
    BdsvieSolution sol = picard_solve(FreeTerm::constant(psi), drv, proj, picard_options(s));
    const double exact = psi * std::exp(rate * g.T);
    const double y0 = mean(sol.Y.component(0, 0));
    CorpusOutput out;
    out.report = {{"Y0", y0}, {"exact_Y0", exact}, {"solve", to_json(sol.report)}};
    out.checks = {make_check("Y0_relative_error", std::abs(y0 - exact) / std::abs(exact), "<=", 0.05),
                  make_check("measured_ratio", sol.report.measured_ratio, "<=", sol.report.theoretical_delta + 0.1)};
    out.series = series_of(sol.Y, g, [&](double t) { return std::optional<double>(psi * std::exp(rate * (g.T - t))); });
    out.field = std::move(sol.Z);
    return out;
}

// ---- fdsvie ---------------------------------------------------------------

CorpusOutput fdsvie_backward_noise(const Projector& proj, const Params&, const RunSettings& s) {
    const ScenarioBatch& b = proj.batch();
    const TimeGrid& g = grid_of(proj);
    FdsvieSolution sol = solve_fdsvie(InitialTerm::b_tail(), FdsvieDriver::zero(g.T), proj, fdsvie_options(s));
    const double rms = max_node_rms(sol.P, [&](std::size_t i, std::size_t p) { return b.B_tail(i, p); });
    const double mrel = check_backward_m_relation(sol.P, sol.Q, g.N, proj);
    CorpusOutput out;
    out.report = {{"max_rms_error", rms}, {"backward_m_relation", mrel}, {"solve", to_json(sol.report)}};
    out.checks = {make_check("max_rms_error", rms, "<=", 0.05), make_check("backward_m_relation", mrel, "<=", 0.05)};
    out.series = series_of(sol.P, g, [](double) { return std::optional<double>(0.0); });
    out.field = std::move(sol.Q);
    return out;
}

CorpusOutput fdsvie_drift(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double rate = param(prm, "rate"), phi = param(prm, "phi");
    DriverFn bfn = [rate](const DriverPoint& pt, std::span<double> out) { out[0] = rate * pt.y[0]; };
    FdsvieDriver drv(bfn, {}, rate * rate, 0.0, g.T);
    FdsvieSolution sol = solve_fdsvie(InitialTerm::constant(phi), drv, proj, fdsvie_options(s));
    const double exact = phi * std::exp(rate * g.T);
    const double pT = mean(sol.P.component(g.N, 0));
    CorpusOutput out;
    out.report = {{"P_T", pT}, {"exact_P_T", exact}, {"solve", to_json(sol.report)}};
    out.checks = {make_check("P_T_relative_error", std::abs(pT - exact) / std::max(std::abs(exact), 1e-12), "<=",
                             0.05)};
    out.series = series_of(sol.P, g, [&](double t) { return std::optional<double>(phi * std::exp(rate * t)); });
    return out;
}

// ---- comparison -----------------------------------------------------------

CorpusOutput comparison_output(ComparisonResult r, const TimeGrid& g, std::optional<double> bound,
                               const std::function<std::optional<double>(double)>& analytic) {
    CorpusOutput out;
    out.report = {{"violation_fraction", r.report.violation_fraction},
                  {"worst_violation", r.report.worst_violation},
                  {"tolerance", r.report.tolerance},
                  {"profile", r.report.profile},
                  {"notes", r.report.notes},
                  {"first", to_json(r.first.report)},
                  {"second", to_json(r.second.report)}};
    if (bound)
        out.checks = {make_check("violation_fraction", r.report.violation_fraction, "<=", *bound)};
    DiagonalProcess diff = r.first.Y;
    for (std::size_t k = 0; k < diff.data().size(); ++k) diff.data()[k] -= r.second.Y.data()[k];
    out.series = series_of(diff, g, analytic);
    return out;
}

CorpusOutput comparison_shift(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double shift = param(prm, "shift");
    if (shift < 0.0) fail(ErrorCode::config, "shift must be non-negative");
    auto d2 = BdsvieDriver::scalar([](double, double, double y, double, double) { return 0.5 * y; }, {}, 0.25, 0.0,
                                   g.T);
    auto d1 = BdsvieDriver::scalar(
        [shift](double, double, double y, double, double) { return 0.5 * y + shift; }, {}, 0.25, 0.0, g.T);
    ComparisonOptions o;
    o.picard = picard_options(s);
    const double tol = 5.0 / std::sqrt(static_cast<double>(proj.batch().paths()));
    auto r = compare_solutions(FreeTerm::terminal_w(), d1, FreeTerm::terminal_w(), d2, proj, tol, o);
    return comparison_output(std::move(r), g, 0.0, [&](double t) {
        return std::optional<double>(2.0 * shift * (std::exp(0.5 * (g.T - t)) - 1.0));
    });
}

CorpusOutput comparison_example(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double alpha = param(prm, "alpha");
    BdsvieDriver::ScalarFn noise = [](double, double, double, double z, double) { return std::cos(z); };
    auto d1 = BdsvieDriver::scalar(
        [](double, double, double y, double z, double) { return std::abs(y) + std::abs(z); }, noise, 2.0, alpha, g.T);
    auto d2 = BdsvieDriver::scalar(
        [](double, double, double y, double z, double) { return -(std::abs(y) + std::abs(z)); }, noise, 2.0, alpha,
        g.T);
    ComparisonOptions o;
    o.picard = picard_options(s);
    o.picard.certificate = CertificatePolicy::warn;
    o.f_bar = [](const DriverPoint& p, std::span<double> out) { out[0] = p.y[0] + p.z[0]; };
    const double tol = 5.0 / std::sqrt(static_cast<double>(proj.batch().paths()));
    auto r = compare_solutions(FreeTerm::terminal_w(), d1, FreeTerm::terminal_w(), d2, proj, tol, o);
    return comparison_output(std::move(r), g, 0.01, [](double) { return std::optional<double>{}; });
}

CorpusOutput comparison_abs_terminal(const Projector& proj, const Params&, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    FreeTerm abs_w = FreeTerm::scalar([](const ScenarioBatch& b, std::size_t p, std::size_t) {
        return std::abs(b.W(b.steps(), p));
    });
    ComparisonOptions o;
    o.picard = picard_options(s);
    const double tol = 5.0 / std::sqrt(static_cast<double>(proj.batch().paths()));
    auto r = compare_solutions(abs_w, BdsvieDriver::zero(g.T), FreeTerm::constant(0.0), BdsvieDriver::zero(g.T), proj,
                               tol, o);
    // E|W(T)| = sqrt(2T/pi)
    return comparison_output(std::move(r), g, 0.01,
                             [&](double) { return std::optional<double>(std::sqrt(2.0 * g.T / M_PI)); });
}

// ---- continuous driver ----------------------------------------------------

CorpusOutput minimal_output(const MinimalResult& r, const TimeGrid& g,
                            const std::function<std::optional<double>(double)>& analytic) {
    CorpusOutput out;
    std::vector<json> reports;
    for (const auto& rep : r.reports) reports.push_back(to_json(rep));
    out.report = {{"indices", r.indices},
                  {"worst_monotone_gap", r.worst_monotone_gap},
                  {"worst_barrier_gap", r.worst_barrier_gap},
                  {"cauchy_tail", r.cauchy_tail},
                  {"noise_tol", r.noise_tol},
                  {"notes", r.notes},
                  {"solves", reports}};
    out.checks = {make_check("worst_monotone_gap", r.worst_monotone_gap, "<=", r.noise_tol),
                  make_check("worst_barrier_gap", r.worst_barrier_gap, "<=", r.noise_tol)};
    out.series = series_of(r.minimal(), g, analytic);
    return out;
}

MinimalOptions minimal_options(const Params& prm, const RunSettings& s) {
    MinimalOptions o;
    const double n_max = param(prm, "n_max");
    if (!(n_max >= 1.0 && n_max <= 64.0 && n_max == std::floor(n_max)))
        fail(ErrorCode::config, "n_max must be an integer in [1, 64]");
    o.n_max = static_cast<unsigned>(n_max);
    o.h = param(prm, "h");
    o.state_bound = param(prm, "state_bound");
    if (!(o.h > 0.0) || !(o.state_bound > 0.0)) fail(ErrorCode::config, "h and state_bound must be positive");
    o.picard = picard_options(s);
    return o;
}

CorpusOutput sqrt_minimal(const Projector& proj, const Params& prm, const RunSettings& s) {
    ContinuousDriver d;
    d.f = [](double y, double) { return std::sqrt(std::abs(y)); };
    d.M_growth = 1.0;
    d.L_growth = 0.0;
    d.depends_on_z = false;
    MinimalResult r = solve_continuous_minimal(FreeTerm::constant(0.0), d, proj, minimal_options(prm, s));
    double worst = 0.0;
    for (const auto& Y : r.Y)
        for (double v : Y.data()) worst = std::max(worst, std::abs(v));
    CorpusOutput out = minimal_output(r, grid_of(proj), [](double) { return std::optional<double>(0.0); });
    out.report["max_abs_Y"] = worst;
    out.checks.insert(out.checks.begin(), make_check("max_abs_Y", worst, "<=", 0.02));
    return out;
}

CorpusOutput lipschitz_linear_minimal(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double psi = param(prm, "psi");
    ContinuousDriver d;
    d.f = [](double y, double) { return y; };
    d.depends_on_z = false;
    MinimalResult r = solve_continuous_minimal(FreeTerm::constant(psi), d, proj, minimal_options(prm, s));
    const double exact = psi * std::exp(g.T);
    const double y0 = mean(r.minimal().component(0, 0));
    CorpusOutput out = minimal_output(r, g, [&](double t) { return std::optional<double>(psi * std::exp(g.T - t)); });
    out.report["Y0"] = y0;
    out.checks.insert(out.checks.begin(),
                      make_check("Y0_relative_error", std::abs(y0 - exact) / std::max(std::abs(exact), 1e-12), "<=",
                                 0.05));
    return out;
}

// ---- duality --------------------------------------------------------------

CorpusOutput duality_output(const DualityResult& r, const TimeGrid& g, double a1, double bound) {
    CorpusOutput out;
    out.report = {{"lhs", r.lhs},
                  {"rhs", r.rhs},
                  {"gap", r.gap},
                  {"stderr_lhs", r.stderr_lhs},
                  {"stderr_rhs", r.stderr_rhs},
                  {"forward", to_json(r.forward)},
                  {"backward", to_json(r.backward)}};
    out.checks = {make_check("gap", r.gap, "<=", bound)};
    out.series = series_of(r.Y, g, [&](double t) { return std::optional<double>(-std::exp(a1 * (g.T - t))); });
    return out;
}

double max_step(const TimeGrid& g) {
    double m = 0.0;
    for (std::size_t i = 0; i < g.N; ++i) m = std::max(m, g.dt(i));
    return m;
}

CorpusOutput duality_zero(const Projector& proj, const Params&, const RunSettings& s) {
    LinearDualData data;
    data.phi = InitialTerm::constant(1.0);
    data.psi = FreeTerm::constant(1.0);
    DualityOptions o{s.picard_tol, s.max_iter};
    auto r = duality_gap(data, proj, o);
    return duality_output(r, grid_of(proj), 0.0, 1e-8 + 2.0 * max_step(grid_of(proj)));
}

CorpusOutput duality_a1(const Projector& proj, const Params& prm, const RunSettings& s) {
    const double a1 = param(prm, "a1");
    LinearDualData data;
    data.A1 = [a1](double, double) { return a1; };
    // psi must be F_T-measurable, which excludes B dependence.
    data.phi = InitialTerm::scalar([](const ScenarioBatch& b, std::size_t p, std::size_t i) { return 1.0 + b.W(i, p); });
    data.psi = FreeTerm::scalar([](const ScenarioBatch& b, std::size_t p, std::size_t) { return 1.0 + b.W(b.steps(), p); });
    DualityOptions o{s.picard_tol, s.max_iter};
    auto r = duality_gap(data, proj, o);
    return duality_output(r, grid_of(proj), a1, 3.0 * (r.stderr_lhs + r.stderr_rhs) + 0.02);
}

// ---- control --------------------------------------------------------------

ControlProblem lq_problem() {
    ControlProblem pr;
    pr.b = [](double, double, double, double, double u) { return u; };
    pr.b_u = [](double, double, double, double, double) { return 1.0; };
    pr.h = [](double, double p, double u) { return 0.5 * u * u + p; };
    pr.h_u = [](double, double, double u) { return u; };
    pr.h_p = [](double, double, double) { return 1.0; };
    return pr;
}

json to_json(const MaxPrincipleReport& r) {
    json probes = json::array();
    for (const auto& g : r.gateaux)
        probes.push_back({{"direction", g.direction},
                          {"lhs", g.lhs},
                          {"rhs", g.rhs},
                          {"scale", g.scale},
                          {"relative_gap", g.relative_gap}});
    return {{"cost", r.cost.value},
            {"cost_stderr", r.cost.std_error},
            {"violation_fraction", r.violation_fraction},
            {"worst_violation", r.worst_violation},
            {"tolerance", r.tolerance},
            {"v_grid_size", r.v_grid.size()},
            {"gateaux", probes},
            {"adjoint", to_json(r.multiplier.report)}};
}

CorpusOutput lq_control(const Projector& proj, const Params&, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    ControlProblem pr = lq_problem();
    auto u = deterministic_control(proj.batch(), [&](double t) { return -(g.T - t); });
    MaxPrincipleOptions o;
    o.adjoint = picard_options(s);
    MaxPrincipleReport r = check_max_principle(pr, u, proj, o);
    CorpusOutput out;
    out.report = to_json(r);
    out.checks = {make_check("cost_error", std::abs(r.cost.value + 1.0 / 6.0), "<=", 0.02),
                  make_check("violation_fraction", r.violation_fraction, "<=", 0.01)};
    for (const auto& p : r.gateaux)
        out.checks.push_back(make_check("gateaux_" + p.direction, p.relative_gap, "<=", 0.10));
    out.series = series_of(r.Y0, g, [&](double t) { return std::optional<double>(g.T - t); });
    return out;
}

CorpusOutput lq_control_zero(const Projector& proj, const Params&, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    ControlProblem pr = lq_problem();
    MaxPrincipleOptions o;
    o.adjoint = picard_options(s);
    o.gateaux = false;
    MaxPrincipleReport r = check_max_principle(pr, constant_control(proj.batch(), 0.0), proj, o);
    CorpusOutput out;
    out.report = to_json(r);
    out.checks = {make_check("violation_fraction", r.violation_fraction, ">=", 0.5)};
    out.series = series_of(r.Y0, g, [&](double t) { return std::optional<double>(g.T - t); });
    return out;
}

json to_json(const FbdsvieReport& r) {
    return {{"status", to_string(r.status)}, {"iterations", r.iterations}, {"residuals", r.residuals},
            {"costs", r.costs},             {"closed_form", r.closed_form}, {"notes", r.notes}};
}

CorpusOutput lq_fbdsvie(const Projector& proj, const Params&, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    FbdsvieOptions o;
    o.adjoint = picard_options(s);
    FbdsvieReport r = assemble_fbdsvie(lq_problem()).run(constant_control(proj.batch(), 0.0), proj, o);
    const std::size_t M = proj.batch().paths();
    std::vector<double> err(M);
    for (std::size_t p = 0; p < M; ++p) {
        double e = 0.0;
        for (std::size_t i = 0; i < g.N; ++i) e += g.dt(i) * std::pow(r.u.at(i, p) + (g.T - g.t(i)), 2);
        err[p] = e;
    }
    const double l2 = std::sqrt(mean(err));
    CorpusOutput out;
    out.report = to_json(r);
    out.report["l2_error"] = l2;
    out.checks = {make_check("converged", r.status == FbdsvieStatus::converged ? 1.0 : 0.0, ">=", 1.0),
                  make_check("l2_error", l2, "<=", 0.05)};
    out.series = series_of(r.u, g, [&](double t) { return std::optional<double>(-(g.T - t)); });
    return out;
}

CorpusOutput fbdsvie_boundary(const Projector& proj, const Params& prm, const RunSettings& s) {
    const TimeGrid& g = grid_of(proj);
    const double slope = param(prm, "slope");
    ControlProblem pr;
    pr.h = [slope](double, double p, double u) { return slope * u + p; };
    pr.u_lo = param(prm, "u_lo");
    pr.u_hi = param(prm, "u_hi");
    if (!(pr.u_lo < pr.u_hi)) fail(ErrorCode::config, "u_lo must be below u_hi");
    FbdsvieOptions o;
    o.adjoint = picard_options(s);
    const double expected = slope > 0.0 ? pr.u_lo : (slope < 0.0 ? pr.u_hi : 0.5 * (pr.u_lo + pr.u_hi));
    FbdsvieReport r = assemble_fbdsvie(pr).run(constant_control(proj.batch(), 0.5 * (pr.u_lo + pr.u_hi)), proj, o);
    double worst = 0.0;
    for (double v : r.u.data()) worst = std::max(worst, std::abs(v - expected));
    CorpusOutput out;
    out.report = to_json(r);
    out.report["max_distance_to_vertex"] = worst;
    out.checks = {make_check("finished", r.status != FbdsvieStatus::max_iter ? 1.0 : 0.0, ">=", 1.0),
                  make_check("max_distance_to_vertex", worst, "<=", 1e-12)};
    out.series = series_of(r.u, g, [&](double) { return std::optional<double>(expected); });
    return out;
}

std::vector<CorpusEntry> build_corpus() {
    return {
        {"martingale-free-term", "simple", "simple BDSVIE via BDSDE family, martingale representation",
         "Y(t) = W(t), Z = 1 on the upper triangle", {}, martingale_free_term},
        {"backward-noise-free-term", "simple", "simple BDSVIE with backward noise only",
         "Y(t) = noise * (B(T) - B(t))", {{"noise", 1.0}}, backward_noise_free_term},
        {"deterministic-drift", "simple", "simple BDSVIE with a constant drift", "Y(t) = value * (T - t)",
         {{"value", 1.0}}, deterministic_drift},
        {"exp-ode", "picard", "Picard contraction, linear drift", "Y(t) = psi * exp(rate (T - t))",
         {{"rate", 1.0}, {"psi", 1.0}, {"alpha", 0.0}}, exp_ode},
        {"fdsvie-backward-noise", "fdsvie", "forward equation, backward M-relation", "P(t) = B(T) - B(t)", {},
         fdsvie_backward_noise},
        {"fdsvie-drift", "fdsvie", "forward equation with linear drift", "P(t) = phi * exp(rate t)",
         {{"rate", 1.0}, {"phi", 1.0}}, fdsvie_drift},
        {"comparison-shift", "compare", "comparison theorem, shifted drift",
         "Y1 - Y2 = 2 shift (exp((T - t)/2) - 1) >= 0", {{"shift", 1.0}}, comparison_shift},
        {"comparison-example", "compare", "comparison theorem, |y|+|z| drivers with cos z noise",
         "Y1 >= Y2 on every path", {{"alpha", 0.3}}, comparison_example},
        {"comparison-abs-terminal", "compare", "comparison theorem, ordered free terms",
         "Y1 = E[|W(T)| | F_t] >= 0 = Y2, mean sqrt(2T/pi)", {}, comparison_abs_terminal},
        {"sqrt-minimal", "continuous", "minimal solution for a continuous driver, inf-convolution scheme",
         "minimal solution of y' = -sqrt|y|, y(T) = 0 is 0", {{"n_max", 4}, {"h", 0.01}, {"state_bound", 10.0}},
         sqrt_minimal},
        {"lipschitz-linear-minimal", "continuous", "inf-convolution scheme on a Lipschitz driver",
         "Y(t) = psi * exp(T - t)", {{"n_max", 3}, {"h", 1e-3}, {"state_bound", 4.0}, {"psi", 1.0}},
         lipschitz_linear_minimal},
        {"duality-zero", "duality", "duality identity, zero kernels", "lhs = rhs = -T", {}, duality_zero},
        {"duality-a1", "duality", "duality identity, constant A1 with phi = 1 + W(t), psi = 1 + W(T)",
         "E int psi P = E int phi Y; E Y(t) = -exp(a1 (T - t))", {{"a1", 0.2}}, duality_a1},
        {"lq-control", "control", "state equation and adjoint pair, maximum condition (LQ)",
         "u = -(T - t), J = -1/6 at T = 1, Y = 1, Y0 = T - t", {}, lq_control},
        {"lq-control-zero", "control", "maximum condition, negative control u = 0",
         "violation fraction >= 50%", {}, lq_control_zero},
        {"lq-fbdsvie", "fbdsvie", "coupled forward-backward system (LQ), fixed-point iteration",
         "u -> -(T - t) from u = 0", {}, lq_fbdsvie},
        {"fbdsvie-boundary", "fbdsvie", "coupled system with a linear cost in u",
         "u = u_lo when slope > 0 (bang-bang)", {{"slope", 0.5}, {"u_lo", -0.5}, {"u_hi", 2.0}}, fbdsvie_boundary},
    };
}

}  // namespace

const std::vector<CorpusEntry>& corpus() {
    static const std::vector<CorpusEntry> entries = build_corpus();
    return entries;
}

const CorpusEntry* find_problem(const std::string& name) {
    for (const auto& e : corpus())
        if (e.name == name) return &e;
    return nullptr;
}

std::string list_corpus_text(const std::vector<CorpusEntry>& entries) {
    std::ostringstream o;
    for (const auto& e : entries) {
        o << e.name << "  [" << e.kind << "]  " << e.anchor << "; oracle: " << e.oracle;
        if (!e.defaults.empty()) {
            o << "; params:";
            for (const auto& [k, v] : e.defaults) o << ' ' << k << '=' << v;
        }
        o << '\n';
    }
    return o.str();
}

json list_corpus_json(const std::vector<CorpusEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back({{"name", e.name}, {"kind", e.kind}, {"anchor", e.anchor}, {"oracle", e.oracle},
                       {"params", e.defaults}});
    return arr;
}

}  // namespace bdsvie
