#include <gtest/gtest.h>

#include <sstream>

#include "kdnnp/config.hpp"
#include "kdnnp/xyz.hpp"
#include "test_util.hpp"

using namespace kdnnp;
using kdnnp::testing::random_system;

namespace {

const char* minimal = "[systems]\nspecies = Ar\n[soft_md]\ntemperatures = 300\n";

LabeledFrame odd_frame() {
    auto s = random_system(7, 11.3, 2.0, 17, {"A", "B"});
    s.velocities[2] = {1.0 / 3.0, -2e-17, 5.5e3};
    s.images[4] = {-3, 0, 12};
    LabeledFrame f;
    f.system = s;
    f.forces.assign(s.size(), Vec3{0.1, -1.0 / 7.0, 3e-300});
    f.energy = -0.123456789012345678;
    f.provenance = Provenance::HardOracle;
    f.temperature_tag = 450.0;
    f.time = 1234.5;
    return f;
}

ErrorKind kind_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::InvalidArgument; // sentinel: nothing thrown
}

} // namespace

TEST(Xyz, RoundTripIsExact) {
    const auto f = odd_frame();
    std::stringstream ss;
    xyz::write_frame(ss, f, true);
    xyz::write_frame(ss, f, false);
    const auto back = xyz::read_frames(ss);
    ASSERT_EQ(back.size(), 2u);
    const auto& g = back[0];
    EXPECT_EQ(g.energy, f.energy);
    EXPECT_EQ(g.forces, f.forces);
    EXPECT_EQ(g.system.positions, f.system.positions);
    EXPECT_EQ(g.system.velocities, f.system.velocities);
    EXPECT_EQ(g.system.images, f.system.images);
    EXPECT_EQ(g.system.species, f.system.species);
    EXPECT_EQ(g.system.cell, f.system.cell);
    EXPECT_EQ(g.provenance, f.provenance);
    EXPECT_EQ(g.temperature_tag, f.temperature_tag);
    EXPECT_EQ(g.time, f.time);
    // Without dynamics the velocities are dropped.
    EXPECT_EQ(back[1].system.positions, f.system.positions);
    EXPECT_EQ(back[1].system.velocities[2], (Vec3{0, 0, 0}));
}

TEST(Xyz, WriteReadWriteIsByteStable) {
    std::stringstream a;
    xyz::write_frame(a, odd_frame(), true);
    const auto text = a.str();
    std::stringstream in(text), b;
    for (const auto& f : xyz::read_frames(in)) xyz::write_frame(b, f, true);
    EXPECT_EQ(b.str(), text);
}

TEST(Xyz, TruncatedFileIsFormatError) {
    std::stringstream ss;
    xyz::write_frame(ss, odd_frame(), false);
    std::string text = ss.str();
    text.resize(text.size() / 2);
    std::stringstream in(text);
    try {
        xyz::read_frames(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Format);
    }
}

TEST(Config, MinimalGetsDefaults) {
    const auto c = parse_config_text(minimal);
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.systems.species, std::vector<std::string>{"Ar"});
    EXPECT_EQ(c.n_hard_targets, 200u);
    EXPECT_EQ(c.selection, SelectionMode::Fps);
    EXPECT_DOUBLE_EQ(c.split_ratio, 0.8);
    EXPECT_DOUBLE_EQ(c.oracle.epsilon.at(0), 0.0104);
    EXPECT_DOUBLE_EQ(c.oracle.sigma.at(0), 3.405);
    EXPECT_DOUBLE_EQ(c.oracle.dispersion_scale, 1.0);
    EXPECT_DOUBLE_EQ(c.teacher_truth.softening_factor, 0.5);
    EXPECT_EQ(c.soft_md.temperatures, std::vector<double>{300.0});
    EXPECT_TRUE(c.finetune.freeze_descriptor);
}

TEST(Config, MisspelledKeyReportsLine) {
    const std::string text = std::string(minimal) + "timestap = 1.0\n";
    try {
        parse_config_text(text);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnknownKey);
        EXPECT_EQ(e.index(), 5);
        EXPECT_NE(std::string(e.what()).find("timestap"), std::string::npos);
    }
}

TEST(Config, NegativeTimestepIsUnitRangeError) {
    const std::string text = std::string(minimal) + "timestep = -0.5\n";
    try {
        parse_config_text(text);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnitRangeError);
        EXPECT_EQ(e.index(), 5);
    }
}

TEST(Config, ErrorKinds) {
    EXPECT_EQ(kind_of("[soft_md]\ntemperatures = 300\n"), ErrorKind::MissingRequired);
    EXPECT_EQ(kind_of(std::string(minimal) + "[run\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of(std::string(minimal) + "seed\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of(std::string(minimal) + "[systems]\nspecies = B\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of(std::string(minimal) + "[run]\nselection = best\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of(std::string(minimal) + "[soft_md]\n"), ErrorKind::InvalidArgument);
    EXPECT_EQ(kind_of(std::string(minimal) + "n_steps = 10\nequilibration = 20\n"), ErrorKind::UnitRangeError);
}

TEST(Config, CommentsAndWhitespace) {
    const auto c = parse_config_text("# comment\n[systems]\n  species = A, B  # two\n[soft_md]\ntemperatures=300,600\n");
    EXPECT_EQ(c.systems.species, (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(c.oracle.epsilon.size(), 2u);
    EXPECT_EQ(c.soft_md.temperatures, (std::vector<double>{300.0, 600.0}));
}

TEST(Config, ReferenceListsEveryKey) {
    const auto ref = config_reference();
    for (const auto& k : config_keys()) {
        EXPECT_NE(ref.find("[" + k.section + "]"), std::string::npos) << k.section;
        EXPECT_NE(ref.find("  " + k.key + " = "), std::string::npos) << k.key;
    }
}

TEST(Config, EveryDefaultParses) {
    // Applying each documented default on its own must succeed.
    for (const auto& k : config_keys()) {
        if (k.default_value.empty()) continue;
        PipelineConfig c;
        EXPECT_NO_THROW(k.apply(c, k.default_value)) << k.section << '.' << k.key;
    }
}
