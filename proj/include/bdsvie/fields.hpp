#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdsvie/grid.hpp"

namespace bdsvie {

/// Y(t_i) per path with k components. Layout [node][path][comp].
class DiagonalProcess {
public:
    DiagonalProcess() = default;
    DiagonalProcess(const ScenarioBatch& batch, std::size_t k, std::string label = {});

    std::size_t paths() const { return M_; }
    std::size_t nodes() const { return nodes_; }
    std::size_t components() const { return k_; }
    std::uint64_t batch_id() const { return batch_id_; }
    const std::string& label() const { return label_; }
    void set_label(std::string label) { label_ = std::move(label); }

    double& at(std::size_t node, std::size_t path, std::size_t c = 0) { return v_[(node * M_ + path) * k_ + c]; }
    double at(std::size_t node, std::size_t path, std::size_t c = 0) const {
        return v_[(node * M_ + path) * k_ + c];
    }
    /// All paths and components at one node.
    std::span<double> node(std::size_t i) { return {v_.data() + i * M_ * k_, M_ * k_}; }
    std::span<const double> node(std::size_t i) const { return {v_.data() + i * M_ * k_, M_ * k_}; }
    std::span<double> data() { return v_; }
    std::span<const double> data() const { return v_; }

    /// Component c at node i, copied out per path.
    std::vector<double> component(std::size_t i, std::size_t c) const;

private:
    std::size_t M_ = 0, nodes_ = 0, k_ = 1;
    std::uint64_t batch_id_ = 0;
    std::string label_;
    std::vector<double> v_;
};

enum class Region { upper, full };

/// Z(t_i, t_j) per path with C components. Layout [(i*(N+1)+j)][path][comp].
class TwoParameterField {
public:
    TwoParameterField() = default;
    TwoParameterField(const ScenarioBatch& batch, std::size_t components, Region region, std::string label = {});

    std::size_t paths() const { return M_; }
    std::size_t nodes() const { return nodes_; }
    std::size_t components() const { return C_; }
    std::uint64_t batch_id() const { return batch_id_; }
    Region region() const { return region_; }
    void set_region(Region r) { region_ = r; }
    const std::string& label() const { return label_; }
    void set_label(std::string label) { label_ = std::move(label); }

    double& at(std::size_t i, std::size_t j, std::size_t path, std::size_t c = 0) {
        return v_[((i * nodes_ + j) * M_ + path) * C_ + c];
    }
    double at(std::size_t i, std::size_t j, std::size_t path, std::size_t c = 0) const {
        return v_[((i * nodes_ + j) * M_ + path) * C_ + c];
    }
    std::span<double> cell(std::size_t i, std::size_t j) {
        return {v_.data() + (i * nodes_ + j) * M_ * C_, M_ * C_};
    }
    std::span<const double> cell(std::size_t i, std::size_t j) const {
        return {v_.data() + (i * nodes_ + j) * M_ * C_, M_ * C_};
    }
    std::span<double> data() { return v_; }
    std::span<const double> data() const { return v_; }

    /// Zero the strict lower triangle and mark the field upper.
    void clear_lower();

private:
    std::size_t M_ = 0, nodes_ = 0, C_ = 1;
    std::uint64_t batch_id_ = 0;
    Region region_ = Region::upper;
    std::string label_;
    std::vector<double> v_;
};

/// Which triangle of the Z-part enters a weighted norm.
enum class NormRegion { upper, lower };

/// Left-Riemann E int e^{beta t}|Y|^2 dt + E int int e^{beta s}|Z(t,s)|^2 ds dt.
///
/// The upper variant sums over t_i <= t_j (the backward norm). The lower
/// variant sums over t_j < t_i with weights e^{-beta t}, used for forward equations.
/// `offset` multiplies every weight by e^{-beta*offset} to avoid overflow.
double weighted_norm(const DiagonalProcess& Y, const TwoParameterField& Z, double beta,
                     const TimeGrid& grid, NormRegion region = NormRegion::upper, double offset = 0.0);

/// Weighted norm of (Y1 - Y2, Z1 - Z2).
double weighted_norm_diff(const DiagonalProcess& Y1, const TwoParameterField& Z1, const DiagonalProcess& Y2,
                          const TwoParameterField& Z2, double beta, const TimeGrid& grid,
                          NormRegion region = NormRegion::upper, double offset = 0.0);

/// Binary layout: "BDSV1", uint64 ndims, uint64 dims..., then little-endian f64 values
/// row-major over (path, i[, j], comp).
void write_binary(const DiagonalProcess& Y, const std::string& path);
void write_binary(const TwoParameterField& Z, const std::string& path);
/// Returns dims and values in file order.
struct BinaryArray {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};
BinaryArray read_binary(const std::string& path);

/// CSV with header `path,node,t,c0[,c1...]`.
void write_csv(const DiagonalProcess& Y, const TimeGrid& grid, const std::string& path);

}  // namespace bdsvie
