#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdnnp/error.hpp"
#include "kdnnp/units.hpp"
#include "kdnnp/vec3.hpp"

namespace kdnnp {

struct SpeciesInfo {
    std::string symbol;
    double mass{}; // amu
};

/// Built-in mass table. "A" and "B" are synthetic species for binary tests.
inline const std::vector<SpeciesInfo>& builtin_species() {
    static const std::vector<SpeciesInfo> table = {
        {"Ar", 39.948},
        {"A", 20.0},
        {"B", 40.0},
    };
    return table;
}

inline SpeciesInfo lookup_species(std::string_view symbol) {
    for (const auto& s : builtin_species()) {
        if (s.symbol == symbol) return s;
    }
    throw Error(ErrorKind::UnknownSpecies, "no mass known for species '" + std::string(symbol) + "'");
}

inline std::vector<SpeciesInfo> make_species_table(std::span<const std::string> symbols) {
    std::vector<SpeciesInfo> out;
    out.reserve(symbols.size());
    for (const auto& s : symbols) out.push_back(lookup_species(s));
    return out;
}

using ImageFlags = std::array<std::int64_t, 3>;

/// Simulation state in an orthorhombic periodic cell. Positions are kept
/// wrapped into [0, cell_k); `images` counts the wraps so unwrapped
/// coordinates stay recoverable.
struct AtomicSystem {
    std::vector<int> species;
    std::vector<Vec3> positions;
    std::vector<Vec3> velocities;
    std::vector<ImageFlags> images;
    Vec3 cell{};
    std::vector<SpeciesInfo> kinds;

    std::size_t size() const noexcept { return positions.size(); }
    double mass(std::size_t atom) const { return kinds[static_cast<std::size_t>(species[atom])].mass; }

    Vec3 unwrapped(std::size_t atom) const {
        const auto& img = images[atom];
        return {positions[atom].x + static_cast<double>(img[0]) * cell.x,
                positions[atom].y + static_cast<double>(img[1]) * cell.y,
                positions[atom].z + static_cast<double>(img[2]) * cell.z};
    }

    double total_mass() const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i) m += mass(i);
        return m;
    }

    double volume() const noexcept { return cell.x * cell.y * cell.z; }
};

inline void validate(const AtomicSystem& s) {
    if (s.size() == 0) throw Error(ErrorKind::InvalidArgument, "system has no atoms");
    if (!(s.cell.x > 0.0 && s.cell.y > 0.0 && s.cell.z > 0.0))
        throw Error(ErrorKind::InvalidArgument, "cell edges must be strictly positive");
    if (s.species.size() != s.size() || s.velocities.size() != s.size() || s.images.size() != s.size())
        throw Error(ErrorKind::InvalidArgument, "per-atom arrays have inconsistent lengths");
    for (int sp : s.species) {
        if (sp < 0 || static_cast<std::size_t>(sp) >= s.kinds.size())
            throw Error(ErrorKind::UnknownSpecies, "species id " + std::to_string(sp) + " outside mass table");
    }
}

/// Wraps one coordinate into [0, length), returning the image shift applied.
inline std::int64_t wrap_coordinate(double& x, double length) {
    if (x >= 0.0 && x < length) return 0;
    auto n = static_cast<std::int64_t>(std::floor(x / length));
    double y = x - static_cast<double>(n) * length;
    if (y >= length) {
        y -= length;
        ++n;
    }
    if (y < 0.0) {
        y += length;
        --n;
        if (y >= length) y = 0.0;
    }
    x = y;
    return n;
}

inline void wrap_positions(AtomicSystem& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            s.images[i][k] += wrap_coordinate(s.positions[i][k], s.cell[k]);
        }
    }
}

/// b - a under the minimum image convention; each component in [-L/2, L/2).
inline Vec3 minimum_image_displacement(const Vec3& a, const Vec3& b, const Vec3& cell) {
    Vec3 d = b - a;
    for (std::size_t k = 0; k < 3; ++k) {
        d[k] -= cell[k] * std::floor(d[k] / cell[k] + 0.5);
    }
    return d;
}

inline double min_edge(const Vec3& cell) { return std::min({cell.x, cell.y, cell.z}); }

/// Builds a system from positions; velocities start at zero and positions are wrapped.
inline AtomicSystem make_system(std::vector<int> species, std::vector<Vec3> positions, Vec3 cell,
                                std::vector<SpeciesInfo> kinds) {
    AtomicSystem s;
    s.species = std::move(species);
    s.positions = std::move(positions);
    s.velocities.assign(s.positions.size(), Vec3{});
    s.images.assign(s.positions.size(), ImageFlags{0, 0, 0});
    s.cell = cell;
    s.kinds = std::move(kinds);
    validate(s);
    wrap_positions(s);
    s.images.assign(s.positions.size(), ImageFlags{0, 0, 0});
    return s;
}

/// Mass density in g/cm³.
inline double density(const AtomicSystem& s) {
    return s.total_mass() * units::amu_gram / (s.volume() * units::cubic_angstrom_cm3);
}

/// Isotropic rescale of cell and positions to the requested density (g/cm³).
inline AtomicSystem scale_to_density(const AtomicSystem& s, double target_density) {
    if (!(target_density > 0.0)) throw Error(ErrorKind::UnitRangeError, "target density must be positive");
    AtomicSystem out = s;
    const double current = density(s);
    if (current == target_density) return out;
    // Edge from the target directly, so the resulting density is exact to rounding.
    const double target_volume = s.total_mass() * units::amu_gram / (target_density * units::cubic_angstrom_cm3);
    const double factor = std::cbrt(target_volume / s.volume());
    for (std::size_t k = 0; k < 3; ++k) out.cell[k] = s.cell[k] * factor;
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            out.positions[i][k] = (s.positions[i][k] / s.cell[k]) * out.cell[k];
        }
    }
    wrap_positions(out);
    return out;
}

enum class LatticeKind { SimpleCubic, FaceCentredCubic };

/// Cubic lattice of `cells`³ unit cells of a single species at the given density.
inline AtomicSystem make_lattice(LatticeKind kind, int cells, int species_id, std::vector<SpeciesInfo> kinds,
                                 double target_density) {
    if (cells < 1) throw Error(ErrorKind::InvalidArgument, "lattice needs at least one cell per edge");
    std::vector<Vec3> basis;
    if (kind == LatticeKind::SimpleCubic) {
        basis = {{0.0, 0.0, 0.0}};
    } else {
        basis = {{0.0, 0.0, 0.0}, {0.5, 0.5, 0.0}, {0.5, 0.0, 0.5}, {0.0, 0.5, 0.5}};
    }
    std::vector<Vec3> positions;
    for (int a = 0; a < cells; ++a)
        for (int b = 0; b < cells; ++b)
            for (int c = 0; c < cells; ++c)
                for (const auto& o : basis)
                    positions.push_back({(a + o.x + 0.25) / cells, (b + o.y + 0.25) / cells, (c + o.z + 0.25) / cells});
    std::vector<int> species(positions.size(), species_id);
    AtomicSystem unit = make_system(std::move(species), std::move(positions), {1.0, 1.0, 1.0}, std::move(kinds));
    return scale_to_density(unit, target_density);
}

} // namespace kdnnp
