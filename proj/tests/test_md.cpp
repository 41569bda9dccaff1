#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kdnnp/analysis.hpp"
#include "kdnnp/md.hpp"
#include "test_util.hpp"

using namespace kdnnp;
using kdnnp::testing::argon_spec;

namespace {

const std::vector<std::string> argon{"Ar"};

struct ZeroPotential {
    EnergyForces operator()(const AtomicSystem& s) const { return {0.0, std::vector<Vec3>(s.size())}; }
};

/// Spring of stiffness k (eV/Å²) and rest length r0 between atoms 0 and 1 along z.
struct HarmonicDimer {
    double k, r0;
    EnergyForces operator()(const AtomicSystem& s) const {
        const Vec3 d = minimum_image_displacement(s.positions[0], s.positions[1], s.cell);
        const double r = norm(d);
        EnergyForces ef;
        ef.energy = 0.5 * k * (r - r0) * (r - r0);
        const Vec3 f = d * (k * (r - r0) / r);
        ef.forces = {f, f * -1.0};
        return ef;
    }
};

AtomicSystem argon32(double temperature, std::uint64_t seed) {
    auto s = make_lattice(LatticeKind::FaceCentredCubic, 2, 0, make_species_table(argon), 1.40);
    return maxwell_boltzmann_init(s, temperature, seed);
}

double total_energy(const MDState& st) { return st.current.energy + kinetic_energy(st.system); }

LabeledFrame snapshot(const AtomicSystem& s, double time) {
    LabeledFrame f;
    f.system = s;
    f.forces.assign(s.size(), Vec3{});
    f.time = time;
    return f;
}

} // namespace

TEST(MaxwellBoltzmann, ZeroTemperatureIsAtRest) {
    const auto s = argon32(0.0, 1);
    for (const auto& v : s.velocities) EXPECT_EQ(v, (Vec3{0, 0, 0}));
}

TEST(MaxwellBoltzmann, MomentumAndKineticEnergy) {
    const auto s = argon32(300.0, 2);
    Vec3 p{};
    for (std::size_t i = 0; i < s.size(); ++i) p += s.velocities[i] * s.mass(i);
    EXPECT_LE(norm(p), 1e-12);
    const double target = 0.5 * (3.0 * 32 - 3.0) * units::boltzmann * 300.0;
    EXPECT_NEAR(kinetic_energy(s), target, 1e-14);
}

TEST(Units, ForceToAccelerationFromCodata) {
    EXPECT_NEAR(units::force_to_acceleration, 9.648533e-3, 1e-9);
    EXPECT_EQ(units::boltzmann, 8.617333262e-5);
}

TEST(Verlet, StraightLineWithoutForces) {
    auto s = make_system({0}, {{1.0, 2.0, 3.0}}, {20, 20, 20}, make_species_table(argon));
    s.velocities[0] = {0.01, -0.02, 0.005};
    auto st = start_md(s, ZeroPotential{});
    std::mt19937_64 rng(0);
    velocity_verlet_step(st, ZeroPotential{}, 2.0, Thermostat::None, 0.0, 0.0, rng);
    EXPECT_EQ(st.system.positions[0], (Vec3{1.0 + 0.01 * 2.0, 2.0 - 0.02 * 2.0, 3.0 + 0.005 * 2.0}));
    EXPECT_EQ(st.system.velocities[0], s.velocities[0]);
}

TEST(Verlet, HarmonicPhaseErrorScalesAsDtSquared) {
    const HarmonicDimer pot{0.5, 3.0};
    const double mass = 39.948;
    const double omega = std::sqrt(pot.k * units::force_to_acceleration / (mass / 2.0));
    const double amplitude = 0.1, t_end = 500.0;
    auto error_for = [&](double dt) {
        auto s = make_system({0, 0}, {{5, 5, 5}, {5, 5, 5 + pot.r0 + amplitude}}, {20, 20, 20},
                             make_species_table(argon));
        auto st = start_md(s, pot);
        std::mt19937_64 rng(0);
        const auto n = static_cast<std::size_t>(std::llround(t_end / dt));
        for (std::size_t i = 0; i < n; ++i) velocity_verlet_step(st, pot, dt, Thermostat::None, 0.0, 0.0, rng);
        const double r = norm(minimum_image_displacement(st.system.positions[0], st.system.positions[1], st.system.cell));
        return std::abs((r - pot.r0) - amplitude * std::cos(omega * t_end));
    };
    const double coarse = error_for(1.0), fine = error_for(0.5);
    EXPECT_GT(coarse / fine, 3.5);
    EXPECT_LT(coarse / fine, 4.5);
}

TEST(Verlet, ZeroFrictionLangevinIsNve) {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    auto a = start_md(argon32(100.0, 3), pot);
    auto b = a;
    std::mt19937_64 ra(1), rb(2);
    for (int i = 0; i < 200; ++i) {
        velocity_verlet_step(a, pot, 1.0, Thermostat::Langevin, 0.0, 300.0, ra);
        velocity_verlet_step(b, pot, 1.0, Thermostat::None, 0.0, 300.0, rb);
    }
    EXPECT_EQ(a.system.positions, b.system.positions);
    EXPECT_EQ(a.system.velocities, b.system.velocities);
}

TEST(Verlet, NveEnergyConservation) {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    auto st = start_md(argon32(100.0, 4), pot);
    const double e0 = total_energy(st);
    std::mt19937_64 rng(0);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
        velocity_verlet_step(st, pot, 0.5, Thermostat::None, 0.0, 0.0, rng);
        worst = std::max(worst, std::abs(total_energy(st) - e0) / 32.0);
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(Verlet, TimeReversal) {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    const auto start = argon32(100.0, 5);
    auto st = start_md(start, pot);
    std::mt19937_64 rng(0);
    for (int i = 0; i < 1000; ++i) velocity_verlet_step(st, pot, 0.5, Thermostat::None, 0.0, 0.0, rng);
    for (auto& v : st.system.velocities) v *= -1.0;
    for (int i = 0; i < 1000; ++i) velocity_verlet_step(st, pot, 0.5, Thermostat::None, 0.0, 0.0, rng);
    for (std::size_t i = 0; i < start.size(); ++i)
        EXPECT_LE(norm(minimum_image_displacement(start.positions[i], st.system.positions[i], start.cell)), 1e-8);
}

TEST(Verlet, NonFiniteStateCarriesStep) {
    struct Exploding {
        EnergyForces operator()(const AtomicSystem& s) const {
            return {0.0, std::vector<Vec3>(s.size(), Vec3{std::nan(""), 0, 0})};
        }
    };
    auto st = start_md(argon32(10.0, 6), ZeroPotential{});
    std::mt19937_64 rng(0);
    try {
        velocity_verlet_step(st, Exploding{}, 1.0, Thermostat::None, 0.0, 0.0, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFiniteState);
        EXPECT_EQ(e.index(), 1);
    }
}

TEST(Langevin, HoldsTemperature) {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    MDConfig c;
    c.timestep = 2.0;
    c.n_steps = 25000; // 50 ps
    c.temperature = 300.0;
    c.friction = 0.1;
    c.equilibration = 5000;
    c.sample_interval = 10;
    c.seed = 11;
    const auto traj = run_md(argon32(300.0, 7), pot, c);
    double mean = 0.0;
    for (const auto& f : traj.frames) mean += kinetic_temperature(f.system, 3 * f.system.size());
    mean /= static_cast<double>(traj.size());
    EXPECT_NEAR(mean, 300.0, 15.0);
}

TEST(RunMd, SampleCountTimesAndDeterminism) {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    MDConfig c;
    c.timestep = 0.5;
    c.n_steps = 1050;
    c.equilibration = 300;
    c.sample_interval = 100;
    c.seed = 3;
    const auto a = run_md(argon32(200.0, 8), pot, c);
    ASSERT_EQ(a.size(), (1050u - 300u) / 100u);
    EXPECT_DOUBLE_EQ(a.frames[1].time - a.frames[0].time, 50.0);
    EXPECT_DOUBLE_EQ(a.frames[0].time, 400 * 0.5);
    const auto b = run_md(argon32(200.0, 8), pot, c);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a.frames[k].system.positions, b.frames[k].system.positions);
        EXPECT_EQ(a.frames[k].energy, b.frames[k].energy);
    }
    c.equilibration = c.n_steps;
    EXPECT_EQ(run_md(argon32(200.0, 8), pot, c).size(), 0u);
}

TEST(RunMd, PartialRunKeepsFramesBeforeDivergence) {
    struct ExplodesLater {
        EnergyForces operator()(const AtomicSystem& s) const {
            const double bad = s.positions[0].x > 5.0505 ? std::nan("") : 0.0;
            return {0.0, std::vector<Vec3>(s.size(), Vec3{bad, 0, 0})};
        }
    };
    auto s = make_system({0}, {{5.0, 5.0, 5.0}}, {20, 20, 20}, make_species_table(argon));
    s.velocities[0] = {0.001, 0, 0};
    MDConfig c;
    c.timestep = 1.0;
    c.n_steps = 100;
    c.equilibration = 0;
    c.sample_interval = 10;
    c.thermostat = Thermostat::None;
    const auto t = run_md_partial(s, ExplodesLater{}, c);
    ASSERT_TRUE(t.failed_step.has_value());
    EXPECT_EQ(*t.failed_step, 51u);
    EXPECT_EQ(t.size(), 5u);
    EXPECT_THROW(run_md(s, ExplodesLater{}, c), Error);
}

TEST(RunMd, PairCollapseEndsRun) {
    // Two free atoms closing at 0.02 A/fs from 2 A apart; the gap drops below 0.5 A between steps 70 and 80.
    auto s = make_system({0, 0}, {{5.0, 5.0, 5.0}, {7.0, 5.0, 5.0}}, {20, 20, 20}, make_species_table(argon));
    s.velocities = {{0.01, 0, 0}, {-0.01, 0, 0}};
    MDConfig c;
    c.timestep = 1.0;
    c.n_steps = 100;
    c.equilibration = 0;
    c.sample_interval = 10;
    c.thermostat = Thermostat::None;
    EXPECT_EQ(run_md(s, ZeroPotential{}, c).size(), 10u);
    c.min_pair_distance = 0.5;
    const auto t = run_md_partial(s, ZeroPotential{}, c);
    ASSERT_TRUE(t.failed_step.has_value());
    EXPECT_EQ(*t.failed_step, 80u);
    EXPECT_EQ(t.size(), 7u);
    EXPECT_NEAR(min_pair_distance(t.frames.back().system), 0.6, 1e-12);
}

TEST(RunMd, InvalidConfigRejected) {
    MDConfig c;
    c.timestep = -0.5;
    EXPECT_THROW(validate(c), Error);
    c.timestep = 0.5;
    c.min_pair_distance = -1.0;
    EXPECT_THROW(validate(c), Error);
}

TEST(Msd, FrozenAtomsGiveZero) {
    const auto s = argon32(0.0, 1);
    std::vector<LabeledFrame> frames;
    for (int t = 0; t < 10; ++t) frames.push_back(snapshot(s, 10.0 * t));
    const auto c = mean_square_displacement(frames);
    for (double m : c.msd) EXPECT_EQ(m, 0.0);
}

TEST(Msd, BallisticAtom) {
    auto s = make_system({0}, {{1.0, 1.0, 1.0}}, {5, 5, 5}, make_species_table(argon));
    std::vector<LabeledFrame> frames;
    for (int t = 0; t <= 40; ++t) {
        auto x = s;
        x.positions[0].x += 0.1 * t; // 0.1 Å/fs at 1 fs spacing, crossing the boundary
        wrap_positions(x);
        frames.push_back(snapshot(x, t));
    }
    const auto c = mean_square_displacement(frames);
    EXPECT_EQ(c.msd[0], 0.0);
    EXPECT_EQ(c.lag.size(), 21u);
    EXPECT_NEAR(c.msd[10], 1.0, 1e-12);
}

TEST(Msd, TooFewSamples) {
    std::vector<LabeledFrame> one{snapshot(argon32(0.0, 1), 0.0)};
    EXPECT_THROW(mean_square_displacement(one), Error);
}

TEST(Diffusion, LinearMsd) {
    MsdCurve c;
    for (int k = 0; k <= 100; ++k) {
        c.lag.push_back(k);
        c.msd.push_back(0.6 * k);
    }
    const auto fit = self_diffusion(c);
    EXPECT_NEAR(fit.slope, 0.6, 1e-12);
    EXPECT_NEAR(fit.coefficient, 1e-2, 1e-14);
}

TEST(Diffusion, ConstantMsdAndDegenerateWindow) {
    MsdCurve c;
    for (int k = 0; k <= 10; ++k) {
        c.lag.push_back(k);
        c.msd.push_back(2.0);
    }
    EXPECT_NEAR(self_diffusion(c).coefficient, 0.0, 1e-16);
    MsdCurve tiny{{0.0, 1.0}, {0.0, 1.0}};
    EXPECT_THROW(self_diffusion(tiny, 0.3, 0.7), Error);
}

TEST(Diffusion, NoisySyntheticSlope) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> noise(-0.01, 0.01);
    MsdCurve c;
    for (int k = 0; k <= 200; ++k) {
        c.lag.push_back(5.0 * k);
        c.msd.push_back(0.03 * 5.0 * k * (1.0 + noise(rng)));
    }
    EXPECT_NEAR(self_diffusion(c).slope, 0.03, 0.05 * 0.03);
}

TEST(Histogram, CountsMeanStd) {
    const std::vector<double> v{1.0, 1.0, 2.0};
    const auto h = histogram_of(v, 2, 0.5, 2.5);
    EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 1}));
    EXPECT_DOUBLE_EQ(h.mean, 4.0 / 3.0);
    EXPECT_NEAR(h.std, std::sqrt(1.0 / 3.0), 1e-15);
    EXPECT_THROW(histogram_of(std::vector<double>{}, 2, 0.0, 1.0), Error);
}

TEST(Histogram, PercentileInterpolates) {
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50.0), 3.0);
    EXPECT_DOUBLE_EQ(percentile({0, 10}, 95.0), 9.5);
}
