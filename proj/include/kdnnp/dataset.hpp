#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "kdnnp/error.hpp"
#include "kdnnp/system.hpp"

namespace kdnnp {

/// Where a frame's energy and forces came from. TeacherTruth marks labels
/// from the softened reference used to pretrain the teacher.
enum class Provenance { SoftTeacher, HardOracle, TeacherTruth };

constexpr std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::SoftTeacher: return "SoftTeacher";
    case Provenance::HardOracle: return "HardOracle";
    case Provenance::TeacherTruth: return "TeacherTruth";
    }
    return "?";
}

inline Provenance parse_provenance(std::string_view s) {
    if (s == "SoftTeacher") return Provenance::SoftTeacher;
    if (s == "HardOracle") return Provenance::HardOracle;
    if (s == "TeacherTruth") return Provenance::TeacherTruth;
    throw Error(ErrorKind::Format, "unknown provenance '" + std::string(s) + "'");
}

struct EnergyForces {
    double energy{};
    std::vector<Vec3> forces;
};

struct LabeledFrame {
    AtomicSystem system;
    double energy{}; // eV
    std::vector<Vec3> forces;
    Provenance provenance{Provenance::SoftTeacher};
    double temperature_tag{}; // K
    double time{};            // fs, for frames sampled from a trajectory

    double energy_per_atom() const { return energy / static_cast<double>(system.size()); }
};

inline LabeledFrame make_frame(AtomicSystem system, EnergyForces labels, Provenance provenance,
                               double temperature_tag) {
    if (labels.forces.size() != system.size())
        throw Error(ErrorKind::InvalidArgument, "force array length differs from atom count");
    LabeledFrame f;
    f.system = std::move(system);
    f.energy = labels.energy;
    f.forces = std::move(labels.forces);
    f.provenance = provenance;
    f.temperature_tag = temperature_tag;
    return f;
}

struct Dataset {
    std::vector<LabeledFrame> frames;
    std::uint64_t split_seed{};

    std::size_t size() const noexcept { return frames.size(); }
    bool empty() const noexcept { return frames.empty(); }
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(idx[i - 1], idx[pick(rng)]);
    }
    return idx;
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
    Dataset out;
    out.split_seed = d.split_seed;
    out.frames.reserve(indices.size());
    for (auto i : indices) out.frames.push_back(d.frames.at(i));
    return out;
}

/// Deterministic shuffle then cut: |train| = round(ratio * N).
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorKind::InvalidArgument, "split ratio must lie in (0, 1)");
    const std::size_t n = dataset.size();
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n)
        throw Error(ErrorKind::EmptySplit, "splitting " + std::to_string(n) + " frames leaves one side empty");
    const auto perm = seeded_permutation(n, seed);
    std::span<const std::size_t> all(perm);
    Dataset train = subset(dataset, all.first(n_train));
    Dataset val = subset(dataset, all.subspan(n_train));
    train.split_seed = seed;
    val.split_seed = seed;
    return {std::move(train), std::move(val)};
}

} // namespace kdnnp
