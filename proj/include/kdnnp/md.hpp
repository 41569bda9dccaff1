#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "kdnnp/checkpoint.hpp"
#include "kdnnp/dataset.hpp"
#include "kdnnp/error.hpp"
#include "kdnnp/model.hpp"
#include "kdnnp/oracle.hpp"
#include "kdnnp/units.hpp"

namespace kdnnp {

template <class P>
concept Potential = requires(const P& p, const AtomicSystem& s) {
    { p(s) } -> std::convertible_to<EnergyForces>;
};

struct OraclePotential {
    OracleSpec spec;
    EnergyForces operator()(const AtomicSystem& s) const { return oracle_energy_forces(s, spec); }
};

struct ModelPotential {
    const PotentialModel* model;
    EnergyForces operator()(const AtomicSystem& s) const { return model_energy_forces(*model, s); }
};

enum class Thermostat { None, Langevin };

struct MDConfig {
    double timestep{0.5}; // fs
    std::size_t n_steps{300000};
    double temperature{300.0}; // K
    Thermostat thermostat{Thermostat::Langevin};
    double friction{0.1}; // 1/fs
    std::size_t sample_interval{100};
    std::size_t equilibration{100000};
    std::uint64_t seed{0};
    double min_pair_distance{0.0}; // Angstrom; a sampled frame with a closer pair ends the run, 0 disables
};

inline void validate(const MDConfig& c) {
    if (!(c.timestep > 0.0)) throw Error(ErrorKind::UnitRangeError, "timestep must be positive");
    if (c.sample_interval < 1) throw Error(ErrorKind::UnitRangeError, "sample_interval must be at least 1");
    if (c.equilibration > c.n_steps) throw Error(ErrorKind::UnitRangeError, "equilibration exceeds n_steps");
    if (c.temperature < 0.0) throw Error(ErrorKind::UnitRangeError, "temperature must be non-negative");
    if (c.friction < 0.0) throw Error(ErrorKind::UnitRangeError, "friction must be non-negative");
    if (!(c.min_pair_distance >= 0.0)) throw Error(ErrorKind::UnitRangeError, "min_pair_distance must be non-negative");
}

/// Smallest minimum-image pair distance, O(N^2).
inline double min_pair_distance(const AtomicSystem& s) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
            best = std::min(best, norm(minimum_image_displacement(s.positions[i], s.positions[j], s.cell)));
    return best;
}

struct Trajectory {
    std::vector<LabeledFrame> frames; // positions, velocities, images, potential energy, forces
    MDConfig config;
    std::optional<std::size_t> failed_step; // set by run_md_partial when the run diverged

    std::size_t size() const noexcept { return frames.size(); }
};

/// Kinetic energy in eV.
inline double kinetic_energy(const AtomicSystem& s) {
    double ke = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) ke += 0.5 * s.mass(i) * dot(s.velocities[i], s.velocities[i]);
    return ke / units::force_to_acceleration;
}

inline double kinetic_temperature(const AtomicSystem& s, std::size_t dof) {
    return 2.0 * kinetic_energy(s) / (static_cast<double>(dof) * units::boltzmann);
}

/// Gaussian velocities, zero total momentum, kinetic energy rescaled to (3N-3) kT / 2.
inline AtomicSystem maxwell_boltzmann_init(AtomicSystem s, double temperature, std::uint64_t seed) {
    if (temperature < 0.0) throw Error(ErrorKind::UnitRangeError, "temperature must be non-negative");
    const std::size_t n = s.size();
    for (auto& v : s.velocities) v = Vec3{};
    if (temperature == 0.0 || n < 2) return s;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double kT = units::boltzmann * temperature;
    Vec3 momentum{};
    for (std::size_t i = 0; i < n; ++i) {
        const double sd = std::sqrt(kT / s.mass(i) * units::force_to_acceleration);
        s.velocities[i] = {sd * gauss(rng), sd * gauss(rng), sd * gauss(rng)};
        momentum += s.velocities[i] * s.mass(i);
    }
    const Vec3 v_cm = momentum * (1.0 / s.total_mass());
    for (auto& v : s.velocities) v -= v_cm;
    const double target = 0.5 * static_cast<double>(3 * n - 3) * kT;
    const double scale = std::sqrt(target / kinetic_energy(s));
    for (auto& v : s.velocities) v *= scale;
    return s;
}

/// Integrator state: the system plus the forces at its current positions.
struct MDState {
    AtomicSystem system;
    EnergyForces current;
    std::size_t step{};
};

template <Potential P>
MDState start_md(AtomicSystem s, const P& potential) {
    MDState st;
    st.current = potential(s);
    st.system = std::move(s);
    return st;
}

inline bool finite_state(const AtomicSystem& s, const EnergyForces& ef) {
    if (!std::isfinite(ef.energy)) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            if (!std::isfinite(s.positions[i][k]) || !std::isfinite(s.velocities[i][k]) ||
                !std::isfinite(ef.forces[i][k]))
                return false;
        }
    }
    return true;
}

/// One velocity-Verlet step. Langevin with positive friction uses the BAOAB
/// splitting; zero friction takes the plain NVE path.
template <Potential P>
void velocity_verlet_step(MDState& st, const P& potential, double dt, Thermostat thermostat, double friction,
                          double temperature, std::mt19937_64& rng) {
    auto& s = st.system;
    const std::size_t n = s.size();
    const double half = 0.5 * dt * units::force_to_acceleration;
    for (std::size_t i = 0; i < n; ++i) s.velocities[i] += st.current.forces[i] * (half / s.mass(i));
    if (thermostat == Thermostat::Langevin && friction > 0.0) {
        const double c1 = std::exp(-friction * dt);
        const double kT = units::boltzmann * temperature;
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) s.positions[i] += s.velocities[i] * (0.5 * dt);
        for (std::size_t i = 0; i < n; ++i) {
            const double sd = std::sqrt((1.0 - c1 * c1) * kT / s.mass(i) * units::force_to_acceleration);
            auto& v = s.velocities[i];
            v.x = c1 * v.x + sd * gauss(rng);
            v.y = c1 * v.y + sd * gauss(rng);
            v.z = c1 * v.z + sd * gauss(rng);
        }
        for (std::size_t i = 0; i < n; ++i) s.positions[i] += s.velocities[i] * (0.5 * dt);
    } else {
        for (std::size_t i = 0; i < n; ++i) s.positions[i] += s.velocities[i] * dt;
    }
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            if (!std::isfinite(s.positions[i][k])) ok = false;
    if (ok) {
        wrap_positions(s);
        try {
            st.current = potential(s);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::OverlappingAtoms) throw;
            ok = false;
        }
    }
    if (ok) {
        for (std::size_t i = 0; i < n; ++i) s.velocities[i] += st.current.forces[i] * (half / s.mass(i));
        ok = finite_state(s, st.current);
    }
    ++st.step;
    if (!ok)
        throw Error(ErrorKind::NonFiniteState, "non-finite state at MD step " + std::to_string(st.step),
                    static_cast<std::int64_t>(st.step));
}

namespace detail {

template <Potential P>
void integrate(Trajectory& traj, const AtomicSystem& initial, const P& potential, const MDConfig& config,
               Provenance provenance) {
    validate(config);
    traj.config = config;
    std::mt19937_64 rng(config.seed);
    MDState st = start_md(initial, potential);
    if (!finite_state(st.system, st.current))
        throw Error(ErrorKind::NonFiniteState, "non-finite initial state", 0);
    for (std::size_t step = 1; step <= config.n_steps; ++step) {
        velocity_verlet_step(st, potential, config.timestep, config.thermostat, config.friction, config.temperature,
                             rng);
        if (step > config.equilibration && (step - config.equilibration) % config.sample_interval == 0) {
            // A collapsed pair means the driving potential has lost its repulsive core.
            if (config.min_pair_distance > 0.0 && min_pair_distance(st.system) < config.min_pair_distance)
                throw Error(ErrorKind::NonFiniteState, "pair collapse at MD step " + std::to_string(step),
                            static_cast<std::int64_t>(step));
            LabeledFrame f;
            f.system = st.system;
            f.energy = st.current.energy;
            f.forces = st.current.forces;
            f.provenance = provenance;
            f.temperature_tag = config.temperature;
            f.time = static_cast<double>(step) * config.timestep;
            traj.frames.push_back(std::move(f));
        }
    }
}

} // namespace detail

/// Runs n_steps and samples every sample_interval steps after equilibration.
/// Sampled frames carry the driving potential's energy and forces.
template <Potential P>
Trajectory run_md(const AtomicSystem& initial, const P& potential, const MDConfig& config,
                  Provenance provenance = Provenance::SoftTeacher) {
    Trajectory traj;
    detail::integrate(traj, initial, potential, config, provenance);
    return traj;
}

/// Like run_md, but a diverging run keeps the frames sampled so far and
/// records the failing step instead of throwing.
template <Potential P>
Trajectory run_md_partial(const AtomicSystem& initial, const P& potential, const MDConfig& config,
                          Provenance provenance = Provenance::SoftTeacher) {
    Trajectory traj;
    try {
        detail::integrate(traj, initial, potential, config, provenance);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteState) throw;
        traj.failed_step = static_cast<std::size_t>(e.index().value_or(0));
    }
    return traj;
}

} // namespace kdnnp
