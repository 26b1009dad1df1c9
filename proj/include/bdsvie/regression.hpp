#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsvie/grid.hpp"

namespace bdsvie {

enum class BasisKind { polynomial, piecewise_constant };

/// Feature selectors. W(t) and B(t) are read at the conditioning node,
/// B(T)-B(t) at the backward node of the key, b_tail_next one node later.
enum class FeatureKind { w_level, b_tail, b_tail_next, b_level, user };

using PathFunctional = std::function<double(const ScenarioBatch&, std::size_t path, std::size_t node)>;

struct Feature {
    FeatureKind kind = FeatureKind::w_level;
    std::size_t component = 0;
    PathFunctional fn;  // only for FeatureKind::user
    std::string name;
};

enum class SigmaField { F, G };

struct RegressionBasis {
    BasisKind kind = BasisKind::polynomial;
    unsigned degree = 2;
    std::vector<Feature> features{Feature{FeatureKind::w_level, 0, {}, "W"}, Feature{FeatureKind::b_tail, 0, {}, "B_tail"},
                                  Feature{FeatureKind::b_tail_next, 0, {}, "B_tail_next"}};
    double ridge = 1e-8;

    /// Columns including the constant.
    std::size_t dimension() const;
    /// Rejects B(t) level features for F-conditioning and malformed selectors.
    void validate(SigmaField field) const;
};

/// Nodes at which the forward (W) and backward (B tail) features are read.
struct FeatureNodes {
    std::size_t w_node = 0;
    std::size_t b_node = 0;
};

struct ConditionalEstimator {
    RegressionBasis basis;
    Eigen::VectorXd coefficients;  // intercept first, then raw design columns
    std::size_t node = 0;
    SigmaField field = SigmaField::F;
    double residual_rms = 0.0;
};

/// Least-squares projector over one batch. Normal equations are factored lazily
/// per feature key and cached; safe for concurrent use.
class Projector {
public:
    Projector(const ScenarioBatch& batch, RegressionBasis basis);
    ~Projector();
    Projector(const Projector&) = delete;
    Projector& operator=(const Projector&) = delete;

    const ScenarioBatch& batch() const { return batch_; }
    const RegressionBasis& basis() const { return basis_; }

    /// out = fitted projection of target; `coefficients` receives intercept + slopes.
    void project(std::span<const double> target, FeatureNodes key, std::span<double> out,
                 Eigen::VectorXd* coefficients = nullptr) const;
    std::vector<double> project(std::span<const double> target, FeatureNodes key) const;

    /// Raw design row (without the constant) for one path.
    void design_row(FeatureNodes key, std::size_t path, std::span<double> row) const;

private:
    struct Slot;
    const Slot& slot(FeatureNodes key) const;
    void build(Slot& s, FeatureNodes key) const;

    const ScenarioBatch& batch_;
    RegressionBasis basis_;
    std::vector<std::vector<unsigned>> exponents_;
    std::size_t q_ = 0;  // non-constant columns
    std::vector<std::unique_ptr<Slot>> slots_;
};

/// Conditional expectation of target given F_{t_j} or G_{t_j}.
std::pair<std::vector<double>, ConditionalEstimator> condexp(std::span<const double> target,
                                                              const ScenarioBatch& batch, std::size_t j,
                                                              SigmaField field, const RegressionBasis& basis);
std::vector<double> condexp(std::span<const double> target, std::size_t j, SigmaField field,
                            const Projector& projector);

/// Discrete martingale-representation integrand.
struct Representation {
    std::size_t first = 0;  // integrand covers steps first..last-1
    std::size_t last = 0;
    std::size_t components = 1;
    std::vector<double> integrand;  // [(j-first)*M + path]*components + c
    std::vector<double> anchor;     // conditional expectation proxy at the anchor node
    double residual = 0.0;          // relative ensemble L2 reconstruction residual

    double at(std::size_t j, std::size_t path, std::size_t M, std::size_t c = 0) const {
        return integrand[((j - first) * M + path) * components + c];
    }
};

/// target(t_i) = anchor(S) + sum_{S<=j<i} Z_j dW_j. Keys {w = j, b = b_node};
/// b_node defaults to i (the target's own backward information).
Representation represent_forward(std::span<const double> target, std::size_t i, std::size_t S,
                                 const Projector& projector, std::size_t b_node = static_cast<std::size_t>(-1));

/// target = anchor(to) + sum_{from<=j<to} Q_j dB_j, with W features frozen at w_node
/// and keys {w = w_node, b = j+1}.
Representation represent_backward(std::span<const double> target, std::size_t w_node, std::size_t from,
                                  std::size_t to, const Projector& projector);

}  // namespace bdsvie
