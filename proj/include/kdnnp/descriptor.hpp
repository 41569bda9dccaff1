#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "kdnnp/error.hpp"
#include "kdnnp/neighbor.hpp"

namespace kdnnp {

struct RadialTerm {
    double eta{}; // Å^-2
    double r_s{}; // Å
};

/// Radial symmetry functions, one channel per (grid point, neighbour species).
struct DescriptorSpec {
    double cutoff{6.0};
    std::vector<RadialTerm> radial;
    std::size_t n_species{1};

    std::size_t feature_dim() const noexcept { return radial.size() * n_species; }
    std::size_t channel(std::size_t neighbour_species, std::size_t k) const noexcept {
        return neighbour_species * radial.size() + k;
    }
};

/// `count` centres uniform on [r_min, cutoff] with eta = 4 / spacing².
inline std::vector<RadialTerm> default_radial_grid(double cutoff, std::size_t count = 8, double r_min = 0.5) {
    if (count < 2) throw Error(ErrorKind::InvalidArgument, "radial grid needs at least two centres");
    std::vector<RadialTerm> grid(count);
    const double spacing = (cutoff - r_min) / static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) {
        grid[k].r_s = r_min + spacing * static_cast<double>(k);
        grid[k].eta = 4.0 / (spacing * spacing);
    }
    return grid;
}

inline DescriptorSpec make_descriptor_spec(double cutoff, std::size_t n_species, std::size_t count = 8,
                                           double r_min = 0.5) {
    return {cutoff, default_radial_grid(cutoff, count, r_min), n_species};
}

inline double cutoff_function(double r, double rc) {
    if (r >= rc) return 0.0;
    return 0.5 * (std::cos(std::numbers::pi * r / rc) + 1.0);
}

inline double cutoff_derivative(double r, double rc) {
    if (r >= rc) return 0.0;
    return -0.5 * std::numbers::pi / rc * std::sin(std::numbers::pi * r / rc);
}

/// Radial term value and its r-derivative.
inline std::pair<double, double> radial_term(const RadialTerm& t, double r, double rc) {
    const double fc = cutoff_function(r, rc);
    if (fc == 0.0) return {0.0, 0.0};
    const double dr = r - t.r_s;
    const double g = std::exp(-t.eta * dr * dr);
    return {g * fc, g * (-2.0 * t.eta * dr * fc + cutoff_derivative(r, rc))};
}

/// Descriptor of one atom. Neighbour species are taken verbatim from the system.
inline std::vector<double> compute_descriptor(const AtomicSystem& system, std::size_t atom,
                                              const NeighborList& neighbors, const DescriptorSpec& spec) {
    std::vector<double> out(spec.feature_dim(), 0.0);
    for (const auto& p : neighbors.pairs) {
        if (p.i != atom && p.j != atom) continue;
        const std::size_t other = p.i == atom ? p.j : p.i;
        const auto t = static_cast<std::size_t>(system.species[other]);
        if (t >= spec.n_species) throw Error(ErrorKind::UnknownSpecies, "neighbour species outside descriptor");
        for (std::size_t k = 0; k < spec.radial.size(); ++k) {
            out[spec.channel(t, k)] += radial_term(spec.radial[k], p.distance, spec.cutoff).first;
        }
    }
    return out;
}

/// Descriptors for every atom plus per-pair radial derivatives, as needed
/// for forces and tangent propagation.
struct DescriptorBatch {
    Eigen::MatrixXd features;  // feature_dim x n_atoms
    Eigen::MatrixXd pair_grad; // n_radial x n_pairs, d g_k / d r
    NeighborList neighbors;
    std::vector<int> species; // model species id per atom
};

inline DescriptorBatch compute_descriptor_batch(const AtomicSystem& system, std::span<const int> model_species,
                                                const DescriptorSpec& spec) {
    DescriptorBatch b;
    b.neighbors = build_neighbor_list(system, spec.cutoff);
    b.species.assign(model_species.begin(), model_species.end());
    const std::size_t n = system.size();
    const std::size_t nr = spec.radial.size();
    b.features.setZero(static_cast<Eigen::Index>(spec.feature_dim()), static_cast<Eigen::Index>(n));
    b.pair_grad.resize(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(b.neighbors.pairs.size()));
    for (std::size_t p = 0; p < b.neighbors.pairs.size(); ++p) {
        const auto& pr = b.neighbors.pairs[p];
        const auto ti = static_cast<std::size_t>(model_species[pr.i]);
        const auto tj = static_cast<std::size_t>(model_species[pr.j]);
        for (std::size_t k = 0; k < nr; ++k) {
            const auto [g, dg] = radial_term(spec.radial[k], pr.distance, spec.cutoff);
            b.features(static_cast<Eigen::Index>(spec.channel(tj, k)), static_cast<Eigen::Index>(pr.i)) += g;
            b.features(static_cast<Eigen::Index>(spec.channel(ti, k)), static_cast<Eigen::Index>(pr.j)) += g;
            b.pair_grad(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p)) = dg;
        }
    }
    return b;
}

} // namespace kdnnp
