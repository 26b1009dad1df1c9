#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdsvie/bdsvie.hpp"

namespace bdsvie {

/// Inf-convolution f_n(x) = min over a uniform grid on [-R, R]^dim of f(y) + n |x - y|_1.
///
/// Requires f(x) <= M (1 + |x|) and f(x) >= -L (1 + |x|) with n > L. The minimizer then
/// lies within r(x) = (M + L)(1 + |x|_1) / (n - L) of x, so evaluation is exact for the
/// grid problem whenever the ball of radius r(x) fits inside the box.
class LipschitzApprox {
public:
    using Fn1 = std::function<double(double)>;
    using Fn2 = std::function<double(double, double)>;

    LipschitzApprox() = default;
    LipschitzApprox(Fn1 f, unsigned n, double M_growth, double L_growth, double R, double h);
    LipschitzApprox(Fn2 f, unsigned n, double M_growth, double L_growth, double R, double h);

    std::size_t dim() const { return dim_; }
    unsigned n() const { return n_; }
    double radius() const { return R_; }
    double spacing() const { return h_; }
    double growth() const { return M_; }
    double lower_growth() const { return L_; }

    /// Minimizer-containment radius around x (l1 norm of the argument).
    double containment(double x_norm) const;
    /// Largest |x|_1 at which evaluation is certified.
    double safe_extent() const;

    /// Throws truncation when the containment ball leaves the grid.
    double operator()(double x) const;
    double operator()(double y, double z) const;

    double source(double x) const { return f1_(x); }
    double source(double y, double z) const { return f2_(y, z); }

private:
    void check(double x_norm) const;

    std::size_t dim_ = 1;
    unsigned n_ = 0;
    double M_ = 0.0, L_ = 0.0, R_ = 0.0, h_ = 0.0;
    std::size_t K_ = 0;  // grid points per axis
    Fn1 f1_;
    Fn2 f2_;
    std::vector<double> table_;  // distance-transformed grid values
};

/// L defaults to M. Errors: n < M invalid-argument; n <= L or R, h <= 0 invalid-argument.
LipschitzApprox inf_convolution(LipschitzApprox::Fn1 f, unsigned n, double M_growth, double R, double h,
                                std::optional<double> L_growth = std::nullopt);
LipschitzApprox inf_convolution(LipschitzApprox::Fn2 f, unsigned n, double M_growth, double R, double h,
                                std::optional<double> L_growth = std::nullopt);

/// CSV `x,f,f_n` over the given probe points (one-dimensional tables only).
void write_csv(const LipschitzApprox& approx, const std::vector<double>& xs, const std::string& path);

struct ComparisonReport {
    double violation_fraction = 0.0;
    double worst_violation = 0.0;
    std::vector<double> profile;  // violation fraction per node
    double tolerance = 0.0;
    std::vector<std::string> notes;
};

struct ComparisonOptions {
    /// Lipschitz f_bar with f1 >= f_bar >= f2 and y -> f_bar increasing. Empty means f2.
    DriverFn f_bar;
    PicardOptions picard;
    std::size_t probes = 100;
};

struct ComparisonResult {
    ComparisonReport report;
    BdsvieSolution first;
    BdsvieSolution second;
};

/// Solves both one-dimensional equations on the same batch and counts Y1 < Y2 - tolerance.
/// Hypotheses are probed first; failure is a hypothesis-violation error.
ComparisonResult compare_solutions(const FreeTerm& psi1, const BdsvieDriver& driver1, const FreeTerm& psi2,
                                   const BdsvieDriver& driver2, const Projector& projector, double tolerance,
                                   const ComparisonOptions& options = {});

/// Driver with continuous f (linear growth M, lower growth L) and Lipschitz g.
struct ContinuousDriver {
    std::function<double(double y, double z)> f;
    double M_growth = 1.0;
    std::optional<double> L_growth;  // default M
    bool depends_on_z = true;
    BdsvieDriver::ScalarFn g;
    double alpha = 0.0;
};

struct MinimalOptions {
    unsigned n_max = 6;
    double h = 0.01;
    double state_bound = 10.0;           // certified |y| + |z| range
    std::optional<double> noise_tol;     // default 3 * 5 / sqrt(M)
    PicardOptions picard;
};

struct MinimalResult {
    std::vector<unsigned> indices;
    std::vector<DiagonalProcess> Y;  // one per index
    std::vector<SolveReport> reports;
    DiagonalProcess U;               // upper barrier with F = M(1 + |y| + |z|)
    double worst_monotone_gap = 0.0; // max of Y^n - Y^{n+1}
    double worst_barrier_gap = 0.0;  // max of Y^n - U
    double cauchy_tail = 0.0;        // RMS of Y^{n_max} - Y^{n_max - 1}
    double noise_tol = 0.0;
    std::vector<std::string> notes;

    const DiagonalProcess& minimal() const { return Y.back(); }
};

/// Monotone approximation from below. Errors: monotonicity or barrier broken beyond the
/// noise tolerance gives scheme-failure.
MinimalResult solve_continuous_minimal(const FreeTerm& psi, const ContinuousDriver& driver,
                                       const Projector& projector, const MinimalOptions& options = {});

}  // namespace bdsvie
