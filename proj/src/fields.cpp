#include "bdsvie/fields.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>

#include "bdsvie/errors.hpp"
#include "bdsvie/parallel.hpp"

namespace bdsvie {

DiagonalProcess::DiagonalProcess(const ScenarioBatch& batch, std::size_t k, std::string label)
    : M_(batch.paths()), nodes_(batch.steps() + 1), k_(k), batch_id_(batch.id()), label_(std::move(label)) {
    require(k >= 1, "process needs at least one component");
    check_allocation(8 * M_ * nodes_ * k_, "diagonal process");
    v_.assign(M_ * nodes_ * k_, 0.0);
}

std::vector<double> DiagonalProcess::component(std::size_t i, std::size_t c) const {
    std::vector<double> out(M_);
    for (std::size_t p = 0; p < M_; ++p) out[p] = at(i, p, c);
    return out;
}

TwoParameterField::TwoParameterField(const ScenarioBatch& batch, std::size_t components, Region region,
                                     std::string label)
    : M_(batch.paths()),
      nodes_(batch.steps() + 1),
      C_(components),
      batch_id_(batch.id()),
      region_(region),
      label_(std::move(label)) {
    require(components >= 1, "field needs at least one component");
    const double bytes = 8.0 * static_cast<double>(M_) * static_cast<double>(nodes_ * nodes_) * C_;
    check_allocation(bytes > 1e19 ? std::size_t(-1) : static_cast<std::size_t>(bytes), "two-parameter field");
    v_.assign(M_ * nodes_ * nodes_ * C_, 0.0);
}

void TwoParameterField::clear_lower() {
    for (std::size_t i = 0; i < nodes_; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            auto c = cell(i, j);
            std::fill(c.begin(), c.end(), 0.0);
        }
    region_ = Region::upper;
}

namespace {

double cell_mean_sq(std::span<const double> a, std::span<const double> b, std::size_t M, std::size_t C,
                    std::vector<double>& scratch) {
    scratch.resize(M);
    for (std::size_t p = 0; p < M; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = a[p * C + c] - (b.empty() ? 0.0 : b[p * C + c]);
            s += d * d;
        }
        scratch[p] = s;
    }
    return pairwise_sum(scratch) / static_cast<double>(M);
}

double norm_impl(const DiagonalProcess& Y1, const TwoParameterField& Z1, const DiagonalProcess* Y2,
                 const TwoParameterField* Z2, double beta, const TimeGrid& grid, NormRegion region,
                 double offset) {
    if (Y1.batch_id() != Z1.batch_id() || (Y2 && Y2->batch_id() != Y1.batch_id()) ||
        (Z2 && Z2->batch_id() != Y1.batch_id()))
        fail(ErrorCode::invalid_argument, "weighted norm operands live on different scenario batches");
    if (Y1.nodes() != grid.N + 1 || Z1.nodes() != grid.N + 1)
        fail(ErrorCode::invalid_argument, "weighted norm operands do not match the grid");
    if ((Y2 && Y2->components() != Y1.components()) || (Z2 && Z2->components() != Z1.components()))
        fail(ErrorCode::invalid_argument, "weighted norm operands have different component counts");
    const std::size_t N = grid.N;
    const std::size_t M = Y1.paths();
    const double sign = region == NormRegion::upper ? 1.0 : -1.0;
    auto weight = [&](double t) { return std::exp(sign * beta * t - beta * offset); };

    std::vector<double> rows(N, 0.0);
    parallel_for(N, [&](std::size_t i) {
        std::vector<double> scratch;
        const double y = cell_mean_sq(Y1.node(i), Y2 ? Y2->node(i) : std::span<const double>{}, M,
                                      Y1.components(), scratch);
        double zsum = 0.0;
        const std::size_t j0 = region == NormRegion::upper ? i : 0;
        const std::size_t j1 = region == NormRegion::upper ? N : i;
        for (std::size_t j = j0; j < j1; ++j) {
            const double z = cell_mean_sq(Z1.cell(i, j), Z2 ? Z2->cell(i, j) : std::span<const double>{}, M,
                                          Z1.components(), scratch);
            zsum += grid.dt(j) * weight(grid.t(j)) * z;
        }
        rows[i] = grid.dt(i) * (weight(grid.t(i)) * y + zsum);
    });
    double total = 0.0;
    for (double r : rows) total += r;
    return total;
}

void write_header(std::ofstream& out, const std::vector<std::uint64_t>& dims) {
    out.write("BDSV1", 5);
    const std::uint64_t nd = dims.size();
    out.write(reinterpret_cast<const char*>(&nd), sizeof nd);
    for (auto d : dims) out.write(reinterpret_cast<const char*>(&d), sizeof d);
}

std::ofstream open_out(const std::string& path) {
    static_assert(std::endian::native == std::endian::little, "binary layout assumes a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::invalid_argument, "cannot open " + path + " for writing");
    return out;
}

}  // namespace

double weighted_norm(const DiagonalProcess& Y, const TwoParameterField& Z, double beta, const TimeGrid& grid,
                     NormRegion region, double offset) {
    return norm_impl(Y, Z, nullptr, nullptr, beta, grid, region, offset);
}

double weighted_norm_diff(const DiagonalProcess& Y1, const TwoParameterField& Z1, const DiagonalProcess& Y2,
                          const TwoParameterField& Z2, double beta, const TimeGrid& grid, NormRegion region,
                          double offset) {
    return norm_impl(Y1, Z1, &Y2, &Z2, beta, grid, region, offset);
}

void write_binary(const DiagonalProcess& Y, const std::string& path) {
    auto out = open_out(path);
    const std::size_t M = Y.paths(), n = Y.nodes(), k = Y.components();
    write_header(out, {M, n, k});
    std::vector<double> row(n * k);
    for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c) row[i * k + c] = Y.at(i, p, c);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 8));
    }
}

void write_binary(const TwoParameterField& Z, const std::string& path) {
    auto out = open_out(path);
    const std::size_t M = Z.paths(), n = Z.nodes(), C = Z.components();
    write_header(out, {M, n, n, C});
    std::vector<double> row(n * n * C);
    for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < C; ++c) row[(i * n + j) * C + c] = Z.at(i, j, p, c);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 8));
    }
}

BinaryArray read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::invalid_argument, "cannot open " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "BDSV1", 5) != 0) fail(ErrorCode::invalid_argument, path + ": bad magic");
    std::uint64_t nd = 0;
    in.read(reinterpret_cast<char*>(&nd), sizeof nd);
    if (!in || nd == 0 || nd > 8) fail(ErrorCode::invalid_argument, path + ": bad rank");
    BinaryArray a;
    a.dims.resize(nd);
    std::uint64_t count = 1;
    for (auto& d : a.dims) {
        in.read(reinterpret_cast<char*>(&d), sizeof d);
        count *= d;
    }
    a.values.resize(count);
    in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * 8));
    if (!in) fail(ErrorCode::invalid_argument, path + ": truncated payload");
    return a;
}

void write_csv(const DiagonalProcess& Y, const TimeGrid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::invalid_argument, "cannot open " + path + " for writing");
    out << "path,node,t";
    for (std::size_t c = 0; c < Y.components(); ++c) out << ",c" << c;
    out << '\n' << std::setprecision(17);
    for (std::size_t p = 0; p < Y.paths(); ++p)
        for (std::size_t i = 0; i < Y.nodes(); ++i) {
            out << p << ',' << i << ',' << grid.t(i);
            for (std::size_t c = 0; c < Y.components(); ++c) out << ',' << Y.at(i, p, c);
            out << '\n';
        }
}

}  // namespace bdsvie
