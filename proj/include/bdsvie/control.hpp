#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdsvie/bdsvie.hpp"
#include "bdsvie/fdsvie.hpp"
#include "bdsvie/parallel.hpp"

namespace bdsvie {

/// Deterministic kernel A(t, s).
using Kernel = std::function<double(double t, double s)>;

/// Coefficients of the linear forward/backward pair. Empty kernels are zero.
struct LinearDualData {
    Kernel A1, A2, A3, A4;
    InitialTerm phi;
    FreeTerm psi;
};

struct DualityOptions {
    double tol = 1e-10;
    std::size_t max_iter = 60;
};

struct DualityResult {
    double lhs = 0.0;  // E int psi P dt
    double rhs = 0.0;  // E int phi Y dt
    double gap = 0.0;
    double stderr_lhs = 0.0;
    double stderr_rhs = 0.0;
    SolveReport forward;
    SolveReport backward;
    DiagonalProcess P;
    DiagonalProcess Y;
};

/// Solves P = -phi + int [A1 P(s) + A2 Q(s,t)] ds + int [A3 P(s) + A4 Q(s,t)] dW + int Q dB and
/// Y = -psi + int [A1(s,t) Y(s) + A3(s,t) Z(s,t)] ds + int [A2(s,t) Y(s) + A4(s,t) Z(s,t)] dB - int Z dW
/// on one batch and compares E int psi P dt with E int phi Y dt (left sums).
DualityResult duality_gap(const LinearDualData& data, const Projector& projector, const DualityOptions& options = {});

/// Scalar control problem: state P(t) = phi(t) + int_0^t b(t,s,P(s),Q(s,t),u(s)) ds
///   + int_0^t sigma(...) dW(s) + int_0^t Q(t,s) dB(s), cost J(u) = E int_0^T h(t,P(t),u(t)) dt.
struct ControlProblem {
    using Coef = std::function<double(double t, double s, double p, double q, double u)>;
    using Cost = std::function<double(double t, double p, double u)>;

    Coef b, sigma;  // empty means zero
    Cost h;
    /// Derivatives; empty means central finite differences.
    Coef b_p, b_q, b_u, sigma_p, sigma_q, sigma_u;
    Cost h_p, h_u;
    double fd_step = 1e-5;  // relative: step = fd_step * (1 + |arg|)
    double u_lo = -1.0, u_hi = 1.0;
    InitialTerm phi = InitialTerm::constant(0.0);
    double c = 0.0;      // Lipschitz constant of b in (p, q)
    double alpha = 0.0;  // Lipschitz constant of sigma in (p, q)
    bool depends_on_q = false;

    /// Interval check and supplied-versus-finite-difference derivative probes (100 points).
    void validate(const TimeGrid& grid) const;

    double db_p(double t, double s, double p, double q, double u) const;
    double db_q(double t, double s, double p, double q, double u) const;
    double db_u(double t, double s, double p, double q, double u) const;
    double dsigma_p(double t, double s, double p, double q, double u) const;
    double dsigma_q(double t, double s, double p, double q, double u) const;
    double dsigma_u(double t, double s, double p, double q, double u) const;
    double dh_p(double t, double p, double u) const;
    double dh_u(double t, double p, double u) const;
};

/// Control values per (node, path); errors name the first value outside U.
void check_admissible(const ControlProblem& problem, const DiagonalProcess& u);

FdsvieSolution solve_state(const ControlProblem& problem, const DiagonalProcess& u, const Projector& projector,
                           const FdsvieOptions& options = {});

struct CostEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

CostEstimate cost_functional(const ControlProblem& problem, const DiagonalProcess& u, const Projector& projector);
CostEstimate cost_functional(const ControlProblem& problem, const DiagonalProcess& u, const DiagonalProcess& P,
                             const TimeGrid& grid);

/// The adjoint pair along (Pbar, Qbar, ubar): the Y equation as a driver plus free term,
/// and the Y0 drift b_u(s,t) Y(s) + sigma_u(s,t) Z(s,t).
struct AdjointSpec {
    FreeTerm free_term;
    BdsvieDriver driver;
    /// Fills out[M] with the Y0 drift at (t_i, s_j) given the solved (Y, Z).
    std::function<void(const DiagonalProcess& Y, const TwoParameterField& Z, std::size_t i, std::size_t j,
                       std::span<double> out)>
        y0_drift;
};

AdjointSpec build_adjoint(const ControlProblem& problem, const DiagonalProcess& u_bar, const DiagonalProcess& P_bar,
                          const TwoParameterField& Q_bar, const TimeGrid& grid);

struct AdjointSolution {
    BdsvieSolution Y;        // (Y, Z) on the full square
    DiagonalProcess Y0;
    TwoParameterField Z0;    // extended by the forward M-relation
};

AdjointSolution solve_adjoint(const AdjointSpec& spec, const Projector& projector, const PicardOptions& options = {});

double hamiltonian(double y0, double h_u, double u);

struct GateauxProbe {
    std::string direction;
    double lhs = 0.0;  // (J(ubar + eps (u - ubar)) - J(ubar)) / eps
    double rhs = 0.0;  // E int [Y0 + h_u](u - ubar) dt
    double scale = 0.0;
    double relative_gap = 0.0;
};

struct MaxPrincipleOptions {
    std::size_t v_grid_size = 41;
    std::optional<double> tolerance;  // default 5/sqrt(M) + dt
    double epsilon = 1e-3;
    bool gateaux = true;
    PicardOptions adjoint;
};

struct MaxPrincipleReport {
    DiagonalProcess Y0;
    DiagonalProcess coefficient;  // E[Y0 + h_u | F_t]
    BdsvieSolution multiplier;    // (Y, Z)
    std::vector<double> v_grid;
    double violation_fraction = 0.0;
    double worst_violation = 0.0;  // most negative min_v V
    double tolerance = 0.0;
    CostEstimate cost;
    std::vector<GateauxProbe> gateaux;
};

MaxPrincipleReport check_max_principle(const ControlProblem& problem, const DiagonalProcess& u_bar,
                                       const Projector& projector, const MaxPrincipleOptions& options = {});

enum class FbdsvieStatus { converged, stalled, max_iter };
std::string to_string(FbdsvieStatus s);

struct FbdsvieOptions {
    std::size_t max_iter = 30;
    double tol = 1e-6;           // RMS change of u
    std::size_t stall_window = 5;
    std::size_t scan_points = 201;  // v-grid when h_u is not affine in u
    PicardOptions adjoint;
};

struct FbdsvieReport {
    FbdsvieStatus status = FbdsvieStatus::max_iter;
    std::size_t iterations = 0;
    std::vector<double> residuals;  // RMS change of u per iteration
    std::vector<double> costs;
    DiagonalProcess u;
    DiagonalProcess P;
    DiagonalProcess Y0;
    bool closed_form = false;
    std::vector<std::string> notes;
};

/// Forward state, adjoint pair, and the u-update of the coupled system.
struct FbdsvieSystem {
    ControlProblem problem;

    /// One fixed-point map: u -> argmin_v Y0(t) v + h(t, P(t), v) over U.
    DiagonalProcess update(const DiagonalProcess& u, const Projector& projector, const FbdsvieOptions& options,
                           DiagonalProcess* P_out = nullptr, DiagonalProcess* Y0_out = nullptr) const;
    /// Variational-inequality residual: mean of max(0, -min_v V) over (path, node).
    double residual(const DiagonalProcess& u, const Projector& projector, std::size_t v_grid_size = 41) const;
    FbdsvieReport run(const DiagonalProcess& u0, const Projector& projector, const FbdsvieOptions& options = {}) const;
};

FbdsvieSystem assemble_fbdsvie(const ControlProblem& problem);

/// Constant and per-node deterministic controls.
DiagonalProcess constant_control(const ScenarioBatch& batch, double value);
DiagonalProcess deterministic_control(const ScenarioBatch& batch, const std::function<double(double t)>& fn);

}  // namespace bdsvie
