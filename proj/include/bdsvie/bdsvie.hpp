#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdsvie/errors.hpp"
#include "bdsvie/fields.hpp"
#include "bdsvie/grid.hpp"
#include "bdsvie/regression.hpp"

namespace bdsvie {

/// Arguments of a driver evaluation at (t_i, s_j) on one path.
/// For backward equations y = y(s), z = z(t,s), zeta = z(s,t).
/// For forward equations y = p(s), z = q(t,s), zeta = q(s,t).
struct DriverPoint {
    std::size_t path = 0;
    std::size_t t_index = 0;
    std::size_t s_index = 0;
    double t = 0.0;
    double s = 0.0;
    std::span<const double> y;
    std::span<const double> z;
    std::span<const double> zeta;
};

using DriverFn = std::function<void(const DriverPoint&, std::span<double> out)>;

struct Dims {
    std::size_t k = 1;  // state components
    std::size_t d = 1;  // W components
    std::size_t l = 1;  // B components
};

enum class CertificatePolicy { enforce, warn, skip };

/// Outcome of the probe-set Lipschitz check.
struct CertificateResult {
    bool passed = true;
    std::size_t probes = 0;
    double worst_f_ratio = 0.0;  // max |df|^2 / |dx|^2 over probes
    double worst_g_ratio = 0.0;  // max |dg|^2 / |dx|^2 over probes
    std::string message;
};

/// Probe-set check of |da|^2 <= c|dx|^2 and |db|^2 <= alpha|dx|^2 on 100 argument pairs.
CertificateResult certify_pair(const DriverFn& a, const DriverFn& b, double c, double alpha, Dims dims,
                               std::size_t a_size, std::size_t b_size, std::size_t z_size, const TimeGrid& grid,
                               std::size_t paths, bool lower_triangle, std::uint64_t seed = 7);

/// Coefficients (f, g) with Lipschitz metadata. f maps to R^k, g to R^{k x l}
/// (row-major). An empty g means zero.
class BdsvieDriver {
public:
    BdsvieDriver(DriverFn f, DriverFn g, double c, double alpha, double T, Dims dims = {},
                 bool depends_on_zeta = false, bool depends_on_y = true);

    const DriverFn& f() const { return f_; }
    const DriverFn& g() const { return g_; }
    double c() const { return c_; }
    double alpha() const { return alpha_; }
    double horizon() const { return T_; }
    Dims dims() const { return dims_; }
    bool depends_on_zeta() const { return depends_on_zeta_; }
    bool depends_on_y() const { return depends_on_y_; }
    bool has_g() const { return static_cast<bool>(g_); }

    CertificateResult certify(const TimeGrid& grid, std::size_t paths, std::uint64_t seed = 7) const;

    /// Scalar convenience: f(t, s, y, z, zeta) and g(t, s, y, z, zeta).
    using ScalarFn = std::function<double(double t, double s, double y, double z, double zeta)>;
    static BdsvieDriver scalar(ScalarFn f, ScalarFn g, double c, double alpha, double T,
                               bool depends_on_zeta = false);
    static BdsvieDriver zero(double T, Dims dims = {});

private:
    DriverFn f_, g_;
    double c_, alpha_, T_;
    Dims dims_;
    bool depends_on_zeta_, depends_on_y_;
};

/// psi(t) per path; evaluation may use the whole scenario path (F_T-measurable).
struct FreeTerm {
    std::size_t k = 1;
    std::function<void(const ScenarioBatch&, std::size_t path, std::size_t node, std::span<double> out)> eval;

    static FreeTerm constant(double value);
    static FreeTerm terminal_w();   // W(T)
    static FreeTerm b_tail();       // B(T) - B(t)
    static FreeTerm scalar(std::function<double(const ScenarioBatch&, std::size_t path, std::size_t node)> fn);
};

/// Fills out[M*k] (f0) or out[M*k*l] (g0) for cell (i, j), all paths.
using CellFn = std::function<void(std::size_t i, std::size_t j, std::span<double> out)>;

struct SimpleSolution {
    DiagonalProcess Y;
    TwoParameterField Z;  // upper triangle
};

struct ContractionConstants {
    double K = 0.0;
    double delta = 0.0;
    double epsilon = 0.0;
    double beta_star = 0.0;
};

ContractionConstants contraction_constants(double c, double alpha, double T, double beta);

/// Simple BDSVIE through the per-t family of discrete BDSDEs. An empty f0 or g0 is zero.
SimpleSolution solve_simple(const FreeTerm& psi, const CellFn& f0, const CellFn& g0, const Projector& projector);

/// Fill Z(t_i, t_j), j < i, from the forward M-relation anchored at S. Returns the
/// mean reconstruction residual over rows.
double extend_m_solution(const DiagonalProcess& Y, TwoParameterField& Z, std::size_t S, const Projector& projector);

/// Relative residual of Y(t_i) = E[Y(t_i)|F_S] + sum_{S<=j<i} Z(t_i,t_j) dW_j over i >= S.
double check_m_relation(const DiagonalProcess& Y, const TwoParameterField& Z, std::size_t S,
                        const Projector& projector);

struct SolveReport {
    std::size_t iterations = 0;
    std::vector<double> residuals;             // squared beta-weighted successive differences
    std::vector<double> residuals_unweighted;  // same with beta = 0
    double measured_ratio = 0.0;
    double theoretical_delta = 0.0;
    double beta = 0.0;
    double wallclock_seconds = 0.0;
    bool converged = false;
    CertificateResult certificate;
    std::vector<std::string> warnings;
};

class NonConvergence : public Error {
public:
    NonConvergence(const std::string& message, SolveReport report)
        : Error(ErrorCode::non_convergence, message), report_(std::move(report)) {}
    const SolveReport& report() const { return report_; }

private:
    SolveReport report_;
};

struct PicardOptions {
    std::optional<double> beta;  // default beta_star
    double tol = 1e-10;          // relative, on both beta-weighted and unweighted norms
    std::size_t max_iter = 60;
    bool extend = true;          // extend Z to the full square after convergence
    std::size_t S = 0;           // anchor of the M-relation
    CertificatePolicy certificate = CertificatePolicy::enforce;
    const DiagonalProcess* warm_y = nullptr;
    const TwoParameterField* warm_z = nullptr;
};

struct BdsvieSolution {
    DiagonalProcess Y;
    TwoParameterField Z;
    SolveReport report;
};

BdsvieSolution picard_solve(const FreeTerm& psi, const BdsvieDriver& driver, const Projector& projector,
                            const PicardOptions& options = {});

/// Ratios of successive residuals after the first iteration, skipping rounding-level entries.
double measured_contraction_ratio(const std::vector<double>& residuals, double scale);

}  // namespace bdsvie
