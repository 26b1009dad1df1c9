#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

#include "bdsvie/bdsvie.hpp"

namespace bdsvie {

/// Forward equation solved here:
///   P(t) = phi(t) + int_0^t b ds + int_0^t sigma dW(s) -/+ int_0^t Q(t,s) dB(s)  (backward integral)
/// with b, sigma evaluated at (t, s, P(s), Q(t,s), Q(s,t)).
///
/// Correspondence with the backward solver under time reversal:
///   backward solver        forward solver
///   W-integrand Z          B-integrand Q
///   upper triangle t <= s  lower triangle s < t
///   F-conditioning by W    F-conditioning by the B tail
///   forward M-relation     backward M-relation P(t) = E[P(t)|F_S] + int_t^S Q dB
class FdsvieDriver {
public:
    /// b maps to R^k, sigma to R^{k x d} (row-major). Empty means zero.
    FdsvieDriver(DriverFn b, DriverFn sigma, double c, double alpha, double T, Dims dims = {},
                 bool depends_on_q = false, bool depends_on_theta = false);

    const DriverFn& b() const { return b_; }
    const DriverFn& sigma() const { return sigma_; }
    double c() const { return c_; }
    double alpha() const { return alpha_; }
    double horizon() const { return T_; }
    Dims dims() const { return dims_; }
    bool depends_on_q() const { return depends_on_q_; }
    bool depends_on_theta() const { return depends_on_theta_; }

    CertificateResult certify(const TimeGrid& grid, std::size_t paths, std::uint64_t seed = 7) const;

    static FdsvieDriver zero(double T, Dims dims = {});

private:
    DriverFn b_, sigma_;
    double c_, alpha_, T_;
    Dims dims_;
    bool depends_on_q_, depends_on_theta_;
};

/// phi(t_i) per path; may read W up to t_i and B(T) - B(.) from t_i on.
struct InitialTerm {
    std::size_t k = 1;
    std::function<void(const ScenarioBatch&, std::size_t path, std::size_t node, std::span<double> out)> eval;

    static InitialTerm constant(double value);
    static InitialTerm b_tail();  // B(T) - B(t)
    static InitialTerm scalar(std::function<double(const ScenarioBatch&, std::size_t path, std::size_t node)> fn);
};

/// Sign in front of the backward integral in the equation.
enum class BackwardSign { minus, plus };

struct FdsvieOptions {
    std::optional<double> beta;  // default beta_star
    double tol = 1e-10;
    std::size_t max_iter = 60;
    BackwardSign sign = BackwardSign::minus;
    std::optional<std::size_t> S;  // anchor of the backward M-relation, default N
    CertificatePolicy certificate = CertificatePolicy::enforce;
};

struct FdsvieSolution {
    DiagonalProcess P;
    TwoParameterField Q;  // full square, k*l components
    SolveReport report;
};

FdsvieSolution solve_fdsvie(const InitialTerm& phi, const FdsvieDriver& driver, const Projector& projector,
                            const FdsvieOptions& options = {});

/// Fill Q(t_i, t_j), i <= j < S, from the backward M-relation. Returns the mean residual.
double fill_backward_m_relation(const DiagonalProcess& P, TwoParameterField& Q, std::size_t S,
                                const Projector& projector);

/// Relative residual of P(t_i) = E[P(t_i)|F_S] + sum_{i<=j<S} Q(t_i,t_j) dB_j over i <= S.
double check_backward_m_relation(const DiagonalProcess& P, const TwoParameterField& Q, std::size_t S,
                                 const Projector& projector);

}  // namespace bdsvie
