#include "bdsvie/regression.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "bdsvie/errors.hpp"
#include "bdsvie/parallel.hpp"

namespace bdsvie {

namespace {

void enumerate_exponents(std::size_t nf, unsigned degree, std::vector<unsigned>& cur, std::size_t pos,
                         unsigned used, std::vector<std::vector<unsigned>>& out) {
    if (pos == nf) {
        if (used > 0) out.push_back(cur);
        return;
    }
    for (unsigned e = 0; e + used <= degree; ++e) {
        cur[pos] = e;
        enumerate_exponents(nf, degree, cur, pos + 1, used + e, out);
    }
    cur[pos] = 0;
}

std::size_t ipow(std::size_t b, unsigned e) {
    std::size_t r = 1;
    for (unsigned i = 0; i < e; ++i) r *= b;
    return r;
}

}  // namespace

std::size_t RegressionBasis::dimension() const {
    const std::size_t nf = features.size();
    if (kind == BasisKind::piecewise_constant) return ipow(degree + 1, static_cast<unsigned>(nf));
    // Monomials of total degree <= degree in nf variables.
    std::size_t num = 1;
    for (std::size_t i = 1; i <= nf; ++i) num = num * (degree + i) / i;
    return num;
}

void RegressionBasis::validate(SigmaField field) const {
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) fail(ErrorCode::invalid_argument, "ridge must be nonnegative");
    if (features.size() > 6) fail(ErrorCode::invalid_argument, "at most 6 regression features are supported");
    if (kind == BasisKind::piecewise_constant && dimension() > 4096)
        fail(ErrorCode::invalid_argument, "piecewise-constant basis has too many cells");
    for (const auto& f : features) {
        if (f.kind == FeatureKind::user && !f.fn)
            fail(ErrorCode::invalid_argument, "user feature '" + f.name + "' has no functional");
        if (f.kind == FeatureKind::b_level && field == SigmaField::F)
            fail(ErrorCode::invalid_argument, "B(t) level feature is not F_t-measurable");
    }
}

struct Projector::Slot {
    std::once_flag once;
    std::vector<double> lo_thresholds;  // piecewise: per feature, degree thresholds
    Eigen::VectorXd mean;
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
};

Projector::Projector(const ScenarioBatch& batch, RegressionBasis basis) : batch_(batch), basis_(std::move(basis)) {
    for (const auto& f : basis_.features) {
        if (f.kind == FeatureKind::w_level && f.component >= batch_.dim_w())
            fail(ErrorCode::invalid_argument, "W feature component out of range");
        if ((f.kind == FeatureKind::b_tail || f.kind == FeatureKind::b_tail_next || f.kind == FeatureKind::b_level) && f.component >= batch_.dim_b())
            fail(ErrorCode::invalid_argument, "B feature component out of range");
    }
    if (basis_.kind == BasisKind::polynomial) {
        std::vector<unsigned> cur(basis_.features.size(), 0);
        enumerate_exponents(basis_.features.size(), basis_.degree, cur, 0, 0, exponents_);
    }
    q_ = basis_.dimension() - 1;
    const std::size_t n = batch_.steps() + 1;
    slots_.resize(n * n);
    for (auto& s : slots_) s = std::make_unique<Slot>();
}

Projector::~Projector() = default;

namespace {

double raw_feature(const ScenarioBatch& b, const Feature& f, FeatureNodes key, std::size_t path) {
    switch (f.kind) {
        case FeatureKind::w_level: return b.W(key.w_node, path, f.component);
        case FeatureKind::b_tail: return b.B_tail(key.b_node, path, f.component);
        case FeatureKind::b_tail_next:
            return b.B_tail(std::min(key.b_node + 1, b.steps()), path, f.component);
        case FeatureKind::b_level: return b.B(key.w_node, path, f.component);
        case FeatureKind::user: return f.fn(b, path, key.w_node);
    }
    return 0.0;
}

}  // namespace

void Projector::design_row(FeatureNodes key, std::size_t path, std::span<double> row) const {
    const auto& feats = basis_.features;
    const std::size_t nf = feats.size();
    double x[8];
    for (std::size_t f = 0; f < nf; ++f) x[f] = raw_feature(batch_, feats[f], key, path);
    if (basis_.kind == BasisKind::polynomial) {
        for (std::size_t c = 0; c < q_; ++c) {
            double v = 1.0;
            const auto& e = exponents_[c];
            for (std::size_t f = 0; f < nf; ++f)
                for (unsigned k = 0; k < e[f]; ++k) v *= x[f];
            row[c] = v;
        }
        return;
    }
    const Slot& s = slot(key);
    const unsigned D = basis_.degree;
    std::size_t cell = 0;
    for (std::size_t f = 0; f < nf; ++f) {
        std::size_t bin = 0;
        while (bin < D && x[f] > s.lo_thresholds[f * D + bin]) ++bin;
        cell = cell * (D + 1) + bin;
    }
    std::fill(row.begin(), row.end(), 0.0);
    if (cell > 0) row[cell - 1] = 1.0;
}

const Projector::Slot& Projector::slot(FeatureNodes key) const {
    const std::size_t n = batch_.steps() + 1;
    if (key.w_node >= n || key.b_node >= n) fail(ErrorCode::invalid_argument, "feature node out of range");
    Slot& s = *slots_[key.w_node * n + key.b_node];
    std::call_once(s.once, [&] { build(s, key); });
    return s;
}

void Projector::build(Slot& s, FeatureNodes key) const {
    const std::size_t M = batch_.paths();
    const std::size_t blocks = (M + kReductionBlock - 1) / kReductionBlock;
    const std::size_t q = q_;

    if (basis_.kind == BasisKind::piecewise_constant) {
        const std::size_t nf = basis_.features.size();
        const unsigned D = basis_.degree;
        s.lo_thresholds.assign(nf * D, 0.0);
        boost::math::normal_distribution<double> nd;
        std::vector<double> vals(M);
        for (std::size_t f = 0; f < nf; ++f) {
            for (std::size_t p = 0; p < M; ++p) vals[p] = raw_feature(batch_, basis_.features[f], key, p);
            const double m = mean(vals);
            for (auto& v : vals) v = (v - m) * (v - m);
            const double sd = std::sqrt(mean(vals));
            for (unsigned k = 1; k <= D; ++k)
                s.lo_thresholds[f * D + k - 1] =
                    m + sd * boost::math::quantile(nd, static_cast<double>(k) / static_cast<double>(D + 1));
        }
    }

    std::vector<std::vector<double>> parts(blocks, std::vector<double>(q + q * q, 0.0));
    std::vector<double> row(std::max<std::size_t>(q, 1));
    for (std::size_t b = 0; b < blocks; ++b) {
        auto& acc = parts[b];
        const std::size_t hi = std::min(M, (b + 1) * kReductionBlock);
        for (std::size_t p = b * kReductionBlock; p < hi; ++p) {
            if (basis_.kind == BasisKind::polynomial)
                design_row(key, p, row);
            else {
                // Thresholds are set; avoid re-entering call_once.
                const auto& feats = basis_.features;
                const unsigned D = basis_.degree;
                std::size_t cell = 0;
                for (std::size_t f = 0; f < feats.size(); ++f) {
                    const double x = raw_feature(batch_, feats[f], key, p);
                    std::size_t bin = 0;
                    while (bin < D && x > s.lo_thresholds[f * D + bin]) ++bin;
                    cell = cell * (D + 1) + bin;
                }
                std::fill(row.begin(), row.end(), 0.0);
                if (cell > 0) row[cell - 1] = 1.0;
            }
            for (std::size_t c = 0; c < q; ++c) {
                acc[c] += row[c];
                for (std::size_t r = c; r < q; ++r) acc[q + c * q + r] += row[c] * row[r];
            }
        }
    }
    tree_reduce(parts);
    const auto& tot = parts[0];
    const double inv = 1.0 / static_cast<double>(M);
    s.mean.resize(static_cast<Eigen::Index>(q));
    Eigen::MatrixXd G(q, q);
    for (std::size_t c = 0; c < q; ++c) s.mean[c] = tot[c] * inv;
    for (std::size_t c = 0; c < q; ++c)
        for (std::size_t r = c; r < q; ++r) {
            const double v = tot[q + c * q + r] * inv - s.mean[c] * s.mean[r];
            G(c, r) = v;
            G(r, c) = v;
        }
    if (q == 0) return;
    const double trace = G.trace();
    if (basis_.ridge > 0.0) {
        const double lambda = basis_.ridge * (trace > 0.0 ? trace / static_cast<double>(q) : 1.0);
        G.diagonal().array() += lambda;
    }
    s.ldlt.compute(G);
    if (basis_.ridge == 0.0) {
        const auto D = s.ldlt.vectorD();
        const double dmax = D.cwiseAbs().maxCoeff();
        if (s.ldlt.info() != Eigen::Success || !(dmax > 0.0) || D.minCoeff() <= 1e-12 * dmax) {
            fail(ErrorCode::degenerate_design, "singular normal equations at feature nodes (" +
                                                   std::to_string(key.w_node) + ", " + std::to_string(key.b_node) +
                                                   ") with zero ridge");
        }
    }
}

void Projector::project(std::span<const double> target, FeatureNodes key, std::span<double> out,
                        Eigen::VectorXd* coefficients) const {
    const std::size_t M = batch_.paths();
    if (target.size() != M || out.size() != M)
        fail(ErrorCode::invalid_argument, "projection target must hold one value per path");
    for (std::size_t p = 0; p < M; ++p)
        if (std::isnan(target[p]))
            fail(ErrorCode::invalid_argument, "NaN regression target at path " + std::to_string(p));
    const Slot& s = slot(key);
    const std::size_t q = q_;
    const std::size_t blocks = (M + kReductionBlock - 1) / kReductionBlock;

    std::vector<std::vector<double>> parts(blocks, std::vector<double>(q + 1, 0.0));
    std::vector<double> row(std::max<std::size_t>(q, 1));
    for (std::size_t b = 0; b < blocks; ++b) {
        auto& acc = parts[b];
        const std::size_t hi = std::min(M, (b + 1) * kReductionBlock);
        for (std::size_t p = b * kReductionBlock; p < hi; ++p) {
            const double y = target[p];
            acc[q] += y;
            if (q == 0) continue;
            design_row(key, p, row);
            for (std::size_t c = 0; c < q; ++c) acc[c] += row[c] * y;
        }
    }
    tree_reduce(parts);
    const double inv = 1.0 / static_cast<double>(M);
    const double ybar = parts[0][q] * inv;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
    if (q > 0) {
        Eigen::VectorXd rhs(q);
        for (std::size_t c = 0; c < q; ++c) rhs[c] = parts[0][c] * inv - s.mean[c] * ybar;
        beta = s.ldlt.solve(rhs);
    }
    const double intercept = ybar - (q > 0 ? s.mean.dot(beta) : 0.0);
    for (std::size_t p = 0; p < M; ++p) {
        double v = intercept;
        if (q > 0) {
            design_row(key, p, row);
            for (std::size_t c = 0; c < q; ++c) v += row[c] * beta[c];
        }
        out[p] = v;
    }
    if (coefficients) {
        coefficients->resize(static_cast<Eigen::Index>(q + 1));
        (*coefficients)[0] = intercept;
        for (std::size_t c = 0; c < q; ++c) (*coefficients)[c + 1] = beta[c];
    }
}

std::vector<double> Projector::project(std::span<const double> target, FeatureNodes key) const {
    std::vector<double> out(batch_.paths());
    project(target, key, out);
    return out;
}

namespace {

FeatureNodes condexp_key(std::size_t j, SigmaField field) {
    // G_t carries all of B: the full B(T) serves as the backward feature.
    return field == SigmaField::F ? FeatureNodes{j, j} : FeatureNodes{j, 0};
}

}  // namespace

std::pair<std::vector<double>, ConditionalEstimator> condexp(std::span<const double> target,
                                                              const ScenarioBatch& batch, std::size_t j,
                                                              SigmaField field, const RegressionBasis& basis) {
    basis.validate(field);
    if (j > batch.steps()) fail(ErrorCode::invalid_argument, "conditioning node out of range");
    Projector proj(batch, basis);
    ConditionalEstimator est;
    est.basis = basis;
    est.node = j;
    est.field = field;
    std::vector<double> out(batch.paths());
    proj.project(target, condexp_key(j, field), out, &est.coefficients);
    std::vector<double> sq(out.size());
    for (std::size_t p = 0; p < out.size(); ++p) sq[p] = (target[p] - out[p]) * (target[p] - out[p]);
    est.residual_rms = std::sqrt(mean(sq));
    return {std::move(out), std::move(est)};
}

std::vector<double> condexp(std::span<const double> target, std::size_t j, SigmaField field,
                            const Projector& projector) {
    projector.basis().validate(field);
    if (j > projector.batch().steps()) fail(ErrorCode::invalid_argument, "conditioning node out of range");
    return projector.project(target, condexp_key(j, field));
}

namespace {

double relative_residual(std::span<const double> target, std::span<const double> recon) {
    std::vector<double> num(target.size()), den(target.size());
    for (std::size_t p = 0; p < target.size(); ++p) {
        num[p] = (target[p] - recon[p]) * (target[p] - recon[p]);
        den[p] = target[p] * target[p];
    }
    const double n = pairwise_sum(num), d = pairwise_sum(den);
    if (d == 0.0) return n == 0.0 ? 0.0 : std::sqrt(n);
    return std::sqrt(n / d);
}

}  // namespace

Representation represent_forward(std::span<const double> target, std::size_t i, std::size_t S,
                                 const Projector& projector, std::size_t b_node) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths();
    const std::size_t d = b.dim_w();
    if (i > b.steps() || S > i) fail(ErrorCode::invalid_argument, "represent_forward needs S <= i <= N");
    if (target.size() != M) fail(ErrorCode::invalid_argument, "target must hold one value per path");
    if (b_node == static_cast<std::size_t>(-1)) b_node = i;

    Representation r;
    r.first = S;
    r.last = i;
    r.components = d;
    r.integrand.assign((i - S) * M * d, 0.0);
    std::vector<double> next(target.begin(), target.end()), cur(M), tmp(M), fitted(M);
    std::vector<double> recon(M, 0.0);
    for (std::size_t j = i; j-- > S;) {
        const FeatureNodes key{j, b_node};
        projector.project(next, key, cur);
        const double dt = b.grid().dt(j);
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t p = 0; p < M; ++p) tmp[p] = (next[p] - cur[p]) * b.dW(j, p, c);
            projector.project(tmp, key, fitted);
            for (std::size_t p = 0; p < M; ++p) {
                const double z = fitted[p] / dt;
                r.integrand[((j - S) * M + p) * d + c] = z;
                recon[p] += z * b.dW(j, p, c);
            }
        }
        next.swap(cur);
    }
    r.anchor = next;
    for (std::size_t p = 0; p < M; ++p) recon[p] += r.anchor[p];
    r.residual = relative_residual(target, recon);
    return r;
}

Representation represent_backward(std::span<const double> target, std::size_t w_node, std::size_t from,
                                  std::size_t to, const Projector& projector) {
    const ScenarioBatch& b = projector.batch();
    const std::size_t M = b.paths();
    const std::size_t l = b.dim_b();
    if (to > b.steps() || from > to || w_node > b.steps())
        fail(ErrorCode::invalid_argument, "represent_backward needs from <= to <= N");
    if (target.size() != M) fail(ErrorCode::invalid_argument, "target must hold one value per path");

    Representation r;
    r.first = from;
    r.last = to;
    r.components = l;
    r.integrand.assign((to - from) * M * l, 0.0);
    // Each integrand is estimated directly from the target: a sum of B tails at many
    // nodes is not spanned by the key features, so successive projections would lose it.
    std::vector<double> cur(M), tmp(M), fitted(M);
    std::vector<double> recon(M, 0.0);
    for (std::size_t j = from; j < to; ++j) {
        const FeatureNodes key{w_node, j + 1};
        projector.project(target, key, cur);
        const double dt = b.grid().dt(j);
        for (std::size_t c = 0; c < l; ++c) {
            for (std::size_t p = 0; p < M; ++p) tmp[p] = (target[p] - cur[p]) * b.dB(j, p, c);
            projector.project(tmp, key, fitted);
            for (std::size_t p = 0; p < M; ++p) {
                const double q = fitted[p] / dt;
                r.integrand[((j - from) * M + p) * l + c] = q;
                recon[p] += q * b.dB(j, p, c);
            }
        }
    }
    std::vector<double> prev(target.begin(), target.end());
    if (to > from) projector.project(target, {w_node, to}, prev);
    r.anchor = prev;
    for (std::size_t p = 0; p < M; ++p) recon[p] += r.anchor[p];
    r.residual = relative_residual(target, recon);
    return r;
}

}  // namespace bdsvie
