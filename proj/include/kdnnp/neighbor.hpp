#pragma once

#include <cstddef>
#include <vector>

#include "kdnnp/error.hpp"
#include "kdnnp/system.hpp"

namespace kdnnp {

struct NeighborPair {
    std::size_t i{};
    std::size_t j{};
    Vec3 displacement{}; // minimum image of r_j - r_i
    double distance{};
};

struct NeighborList {
    std::vector<NeighborPair> pairs;
    double cutoff{};
};

/// All pairs with minimum-image distance <= cutoff, ordered by i then j.
/// Requires cutoff <= min(cell)/2 so that a single image is sufficient.
inline NeighborList build_neighbor_list(const AtomicSystem& system, double cutoff) {
    if (cutoff > 0.5 * min_edge(system.cell)) {
        throw Error(ErrorKind::CutoffTooLarge, "cutoff " + std::to_string(cutoff) +
                                                   " exceeds half the smallest cell edge " +
                                                   std::to_string(0.5 * min_edge(system.cell)));
    }
    NeighborList list;
    list.cutoff = cutoff;
    const double cutoff_sq = cutoff * cutoff;
    const std::size_t n = system.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const Vec3 d = minimum_image_displacement(system.positions[i], system.positions[j], system.cell);
            const double r2 = dot(d, d);
            if (r2 <= cutoff_sq) list.pairs.push_back({i, j, d, std::sqrt(r2)});
        }
    }
    return list;
}

} // namespace kdnnp
