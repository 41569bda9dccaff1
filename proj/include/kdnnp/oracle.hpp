#pragma once

// Analytic reference potentials. The ground truth is a shifted Lennard-Jones
// pair potential with an extra -d*C6/r^6 dispersion tail. The teacher truth
// drops the tail and compresses the configuration energy above a reference
// minimum by a factor s, modelling a pretrained potential that underestimates
// high-energy regions.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdnnp/dataset.hpp"
#include "kdnnp/error.hpp"
#include "kdnnp/neighbor.hpp"
#include "kdnnp/parallel.hpp"

namespace kdnnp {

struct PairParams {
    double epsilon{}; // eV
    double sigma{};   // Å
    double c6{};      // eV·Å⁶
};

struct Softening {
    double threshold{};     // U0, eV above the reference minimum
    double factor{1.0};     // s in (0, 1]
    double umin_per_atom{}; // reference minimum energy per atom, eV
};

struct OracleSpec {
    std::size_t n_species{1};
    std::vector<PairParams> pairs; // n_species x n_species, symmetric
    double cutoff{6.0};
    bool shift_at_cutoff{true};
    double dispersion_scale{1.0};
    std::optional<Softening> softening;

    const PairParams& pair(int a, int b) const {
        return pairs[static_cast<std::size_t>(a) * n_species + static_cast<std::size_t>(b)];
    }
};

/// Lorentz-Berthelot mixing from per-species parameters; C6 = 4 eps sigma^6.
inline OracleSpec make_oracle_spec(std::span<const double> epsilon, std::span<const double> sigma, double cutoff,
                                   bool shift_at_cutoff, double dispersion_scale) {
    if (epsilon.size() != sigma.size() || epsilon.empty())
        throw Error(ErrorKind::InvalidArgument, "epsilon and sigma need one entry per species");
    OracleSpec spec;
    spec.n_species = epsilon.size();
    spec.cutoff = cutoff;
    spec.shift_at_cutoff = shift_at_cutoff;
    spec.dispersion_scale = dispersion_scale;
    spec.pairs.resize(spec.n_species * spec.n_species);
    for (std::size_t a = 0; a < spec.n_species; ++a) {
        for (std::size_t b = 0; b < spec.n_species; ++b) {
            if (!(epsilon[a] > 0.0) || !(sigma[a] > 0.0))
                throw Error(ErrorKind::UnitRangeError, "epsilon and sigma must be positive");
            PairParams p;
            p.epsilon = std::sqrt(epsilon[a] * epsilon[b]);
            p.sigma = 0.5 * (sigma[a] + sigma[b]);
            p.c6 = 4.0 * p.epsilon * std::pow(p.sigma, 6);
            spec.pairs[a * spec.n_species + b] = p;
        }
    }
    return spec;
}

namespace detail {

struct PairTerm {
    double energy;
    double dudr;
};

inline PairTerm pair_unshifted(const PairParams& p, double dispersion_scale, double r) {
    const double inv_r2 = 1.0 / (r * r);
    const double sr2 = p.sigma * p.sigma * inv_r2;
    const double sr6 = sr2 * sr2 * sr2;
    const double sr12 = sr6 * sr6;
    const double inv_r6 = inv_r2 * inv_r2 * inv_r2;
    const double disp = dispersion_scale * p.c6 * inv_r6;
    const double energy = 4.0 * p.epsilon * (sr12 - sr6) - disp;
    const double dudr = (4.0 * p.epsilon * (-12.0 * sr12 + 6.0 * sr6) + 6.0 * disp) / r;
    return {energy, dudr};
}

} // namespace detail

/// Pair energy including the cutoff shift; zero beyond the cutoff.
inline double oracle_pair_energy(const OracleSpec& spec, int a, int b, double r) {
    if (r > spec.cutoff) return 0.0;
    const auto& p = spec.pair(a, b);
    double e = detail::pair_unshifted(p, spec.dispersion_scale, r).energy;
    if (spec.shift_at_cutoff) e -= detail::pair_unshifted(p, spec.dispersion_scale, spec.cutoff).energy;
    return e;
}

/// Raw (unsoftened) pair-sum energy and forces.
inline EnergyForces oracle_raw_energy_forces(const AtomicSystem& system, const OracleSpec& spec) {
    const auto nl = build_neighbor_list(system, spec.cutoff);
    EnergyForces out;
    out.forces.assign(system.size(), Vec3{});
    for (const auto& pr : nl.pairs) {
        const int a = system.species[pr.i];
        const int b = system.species[pr.j];
        const auto& p = spec.pair(a, b);
        if (pr.distance < 0.1 * p.sigma) {
            throw Error(ErrorKind::OverlappingAtoms, "atoms " + std::to_string(pr.i) + " and " + std::to_string(pr.j) +
                                                         " closer than 0.1 sigma");
        }
        const auto term = detail::pair_unshifted(p, spec.dispersion_scale, pr.distance);
        double e = term.energy;
        if (spec.shift_at_cutoff) e -= detail::pair_unshifted(p, spec.dispersion_scale, spec.cutoff).energy;
        out.energy += e;
        // displacement points i -> j; dU/dx_j = dudr * d/r.
        const Vec3 g = pr.displacement * (term.dudr / pr.distance);
        out.forces[pr.i] += g;
        out.forces[pr.j] -= g;
    }
    return out;
}

/// Piecewise compression factor applied to raw energy; returns the softened
/// energy and the multiplier to apply to the raw forces.
inline std::pair<double, double> soften(double raw_energy, std::size_t n_atoms, const Softening& s) {
    const double umin = s.umin_per_atom * static_cast<double>(n_atoms);
    const double excess = raw_energy - umin;
    if (excess <= s.threshold) return {raw_energy, 1.0};
    return {umin + s.threshold + s.factor * (excess - s.threshold), s.factor};
}

inline EnergyForces oracle_energy_forces(const AtomicSystem& system, const OracleSpec& spec) {
    auto out = oracle_raw_energy_forces(system, spec);
    if (spec.softening) {
        const auto [energy, scale] = soften(out.energy, system.size(), *spec.softening);
        out.energy = energy;
        if (scale != 1.0)
            for (auto& f : out.forces) f *= scale;
    }
    return out;
}

/// Per-atom energy of the relaxed face-centred-cubic crystal of species 0,
/// from an exact lattice sum minimised over the lattice constant.
inline double reference_energy_per_atom(const OracleSpec& spec) {
    const double sigma = spec.pair(0, 0).sigma;
    auto energy_at = [&](double a) {
        const int n = static_cast<int>(std::ceil(spec.cutoff / a)) + 1;
        const Vec3 basis[4] = {{0, 0, 0}, {0.5, 0.5, 0}, {0.5, 0, 0.5}, {0, 0.5, 0.5}};
        double e = 0.0;
        for (int i = -n; i <= n; ++i)
            for (int j = -n; j <= n; ++j)
                for (int k = -n; k <= n; ++k)
                    for (const auto& b : basis) {
                        const Vec3 r{(i + b.x) * a, (j + b.y) * a, (k + b.z) * a};
                        const double d = norm(r);
                        if (d > 0.0 && d <= spec.cutoff) e += 0.5 * oracle_pair_energy(spec, 0, 0, d);
                    }
        return e;
    };
    // Golden-section search over the lattice constant.
    double lo = 1.2 * sigma, hi = 2.2 * sigma;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = energy_at(x1), f2 = energy_at(x2);
    for (int it = 0; it < 100; ++it) {
        if (f1 < f2) {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - g * (hi - lo); f1 = energy_at(x1);
        } else {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + g * (hi - lo); f2 = energy_at(x2);
        }
    }
    return std::min(f1, f2);
}

/// Adds softening with the reference minimum computed from `spec` itself.
inline OracleSpec with_softening(OracleSpec spec, double threshold, double factor) {
    if (!(factor > 0.0 && factor <= 1.0)) throw Error(ErrorKind::UnitRangeError, "softening factor must lie in (0, 1]");
    Softening s;
    s.threshold = threshold;
    s.factor = factor;
    spec.softening.reset();
    s.umin_per_atom = reference_energy_per_atom(spec);
    spec.softening = s;
    return spec;
}

/// Labels every frame with the oracle, preserving order.
inline std::vector<LabeledFrame> label_frames(std::span<const AtomicSystem> frames, const OracleSpec& spec,
                                              Provenance provenance, double temperature_tag = 0.0,
                                              unsigned threads = 1) {
    if (frames.empty()) throw Error(ErrorKind::EmptyDataset, "no frames to label");
    std::vector<LabeledFrame> out(frames.size());
    parallel_for(frames.size(), threads, [&](std::size_t i) {
        try {
            out[i] = make_frame(frames[i], oracle_energy_forces(frames[i], spec), provenance, temperature_tag);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::OverlappingAtoms)
                throw Error(e.kind(), e.message() + " in frame " + std::to_string(i),
                            static_cast<std::int64_t>(i));
            throw;
        }
    });
    return out;
}

/// Replaces the labels of existing frames; positions and tags are untouched.
inline std::vector<LabeledFrame> relabel_frames(std::span<const LabeledFrame> frames, const OracleSpec& spec,
                                                Provenance provenance, unsigned threads = 1) {
    if (frames.empty()) throw Error(ErrorKind::EmptyDataset, "no frames to label");
    std::vector<LabeledFrame> out(frames.begin(), frames.end());
    parallel_for(frames.size(), threads, [&](std::size_t i) {
        try {
            auto ef = oracle_energy_forces(frames[i].system, spec);
            out[i].energy = ef.energy;
            out[i].forces = std::move(ef.forces);
            out[i].provenance = provenance;
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::OverlappingAtoms)
                throw Error(e.kind(), e.message() + " in frame " + std::to_string(i),
                            static_cast<std::int64_t>(i));
            throw;
        }
    });
    return out;
}

} // namespace kdnnp
