#pragma once

// Pipeline configuration: line-oriented "key = value" with [section] headers.
// Every key, its unit, default and validation live in one table
// (`config_keys()`); the help text is generated from the same table.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kdnnp/error.hpp"
#include "kdnnp/format.hpp"
#include "kdnnp/md.hpp"
#include "kdnnp/oracle.hpp"
#include "kdnnp/system.hpp"
#include "kdnnp/trainer.hpp"

namespace kdnnp {

enum class SelectionMode { Fps, Random };

struct SystemsConfig {
    std::vector<std::string> species;
    LatticeKind lattice{LatticeKind::SimpleCubic};
    std::size_t cells{4};
    std::vector<double> densities; // g/cm³, one initial system per entry
    std::string initial_xyz;       // overrides the lattice when set
};

struct OracleConfig {
    std::vector<double> epsilon; // eV, per species
    std::vector<double> sigma;   // Å, per species
    double cutoff{6.0};
    bool shift_at_cutoff{true};
    double dispersion_scale{1.0};
};

struct TeacherTruthConfig {
    double dispersion_scale{0.0};
    double softening_threshold{0.0}; // eV
    double softening_factor{0.5};
};

struct ModelConfig {
    std::vector<std::size_t> descriptor_layers;
    std::vector<std::size_t> fitting_layers;
    double cutoff{6.0};
    std::size_t radial_count{8};
    double radial_min{0.5};
    bool residual{true};
};

struct MDPlan {
    std::vector<double> temperatures; // K
    double timestep{};                // fs
    std::size_t n_steps{};
    std::size_t equilibration{};
    std::size_t sample_interval{};
    double friction{};                // 1/fs
};

struct AnalysisConfig {
    std::size_t histogram_bins{40};
    double msd_fit_lo{0.2};
    double msd_fit_hi{0.8};
};

struct TimingConfig {
    std::vector<std::size_t> cells; // simple-cubic cells per edge for each tested size
    std::size_t steps{1000};
    std::size_t trials{5};
    double temperature{300.0};
    double timestep{2.0};
};

struct StandaloneMDConfig {
    std::string potential{"ground_truth"}; // ground_truth | teacher_truth | path to a checkpoint
    double temperature{300.0};
    double density{1.40};
    Thermostat thermostat{Thermostat::Langevin};
    double timestep{2.0};
    std::size_t n_steps{5000};
    std::size_t equilibration{1000};
    std::size_t sample_interval{25};
    double friction{0.01};
};

struct PipelineConfig {
    std::uint64_t seed{};
    unsigned threads{};
    double split_ratio{};
    std::size_t n_hard_targets{};
    SelectionMode selection{SelectionMode::Fps};
    std::uint64_t selection_seed{};
    std::size_t scratch_multiplier{};
    std::string teacher_checkpoint;

    SystemsConfig systems;
    OracleConfig oracle;
    TeacherTruthConfig teacher_truth;
    ModelConfig teacher;
    ModelConfig student;
    MDPlan teacher_data_md;
    MDPlan soft_md;
    TrainConfig train_teacher;
    TrainConfig train_student;
    TrainConfig finetune;
    TrainConfig finetune_teacher;
    TrainConfig scratch;
    AnalysisConfig analysis;
    TimingConfig timing;
    StandaloneMDConfig md;
};

struct ConfigKey {
    std::string section;
    std::string key;
    std::string unit;
    std::string default_value;
    std::string description;
    bool required{};
    std::function<void(PipelineConfig&, const std::string&)> apply;
};

namespace cfg {

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

inline double to_double(const std::string& v) {
    try {
        return parse_double(trim(v));
    } catch (const Error&) {
        throw Error(ErrorKind::ParseError, "expected a number, got '" + v + "'");
    }
}

inline std::size_t to_size(const std::string& v) {
    std::int64_t x{};
    try {
        x = parse_int(trim(v));
    } catch (const Error&) {
        throw Error(ErrorKind::ParseError, "expected an integer, got '" + v + "'");
    }
    if (x < 0) throw Error(ErrorKind::UnitRangeError, "expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

inline std::uint64_t to_u64(const std::string& v) {
    std::uint64_t x{};
    const auto t = trim(v);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        throw Error(ErrorKind::ParseError, "expected an unsigned integer, got '" + v + "'");
    return x;
}

inline bool to_bool(const std::string& v) {
    const auto t = trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw Error(ErrorKind::ParseError, "expected true/false, got '" + v + "'");
}

inline std::vector<double> to_doubles(const std::string& v) {
    std::vector<double> out;
    for (const auto& t : split_list(v)) out.push_back(to_double(t));
    return out;
}

inline std::vector<std::size_t> to_sizes(const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& t : split_list(v)) out.push_back(to_size(t));
    return out;
}

inline double positive(double x, const char* what) {
    if (!(x > 0.0)) throw Error(ErrorKind::UnitRangeError, std::string(what) + " must be positive");
    return x;
}
inline double non_negative(double x, const char* what) {
    if (!(x >= 0.0)) throw Error(ErrorKind::UnitRangeError, std::string(what) + " must be non-negative");
    return x;
}
inline std::size_t at_least_one(std::size_t x, const char* what) {
    if (x < 1) throw Error(ErrorKind::UnitRangeError, std::string(what) + " must be at least 1");
    return x;
}

inline void add_model_keys(std::vector<ConfigKey>& keys, const std::string& section, ModelConfig PipelineConfig::*m,
                           const std::string& desc_default, const std::string& fit_default) {
    keys.push_back({section, "descriptor_layers", "nodes", desc_default, "descriptor-network widths", false,
                    [m](PipelineConfig& c, const std::string& v) { (c.*m).descriptor_layers = to_sizes(v); }});
    keys.push_back({section, "fitting_layers", "nodes", fit_default, "fitting-network widths (last = screening features)", false,
                    [m](PipelineConfig& c, const std::string& v) {
                        (c.*m).fitting_layers = to_sizes(v);
                        if ((c.*m).fitting_layers.empty())
                            throw Error(ErrorKind::UnitRangeError, "fitting_layers needs at least one width");
                    }});
    keys.push_back({section, "cutoff", "Å", "6.0", "descriptor cutoff radius", false,
                    [m](PipelineConfig& c, const std::string& v) { (c.*m).cutoff = positive(to_double(v), "cutoff"); }});
    keys.push_back({section, "radial_count", "count", "8", "radial Gaussian centres per species channel", false,
                    [m](PipelineConfig& c, const std::string& v) {
                        (c.*m).radial_count = to_size(v);
                        if ((c.*m).radial_count < 2) throw Error(ErrorKind::UnitRangeError, "radial_count must be >= 2");
                    }});
    keys.push_back({section, "radial_min", "Å", "0.5", "first radial centre", false,
                    [m](PipelineConfig& c, const std::string& v) { (c.*m).radial_min = non_negative(to_double(v), "radial_min"); }});
    keys.push_back({section, "residual", "bool", "true", "skip paths after the input layer: identity when widths match, [x; x] when a descriptor layer doubles", false,
                    [m](PipelineConfig& c, const std::string& v) { (c.*m).residual = to_bool(v); }});
}

struct MDDefaults {
    std::string temperatures, timestep, n_steps, equilibration, sample_interval, friction;
    bool temperatures_required;
};

inline void add_md_keys(std::vector<ConfigKey>& keys, const std::string& section, MDPlan PipelineConfig::*p,
                        const MDDefaults& d) {
    keys.push_back({section, "temperatures", "K", d.temperatures, "thermostat set-points, one run per system and temperature",
                    d.temperatures_required, [p](PipelineConfig& c, const std::string& v) {
                        (c.*p).temperatures = to_doubles(v);
                        if ((c.*p).temperatures.empty()) throw Error(ErrorKind::UnitRangeError, "temperature list is empty");
                        for (double t : (c.*p).temperatures) non_negative(t, "temperature");
                    }});
    keys.push_back({section, "timestep", "fs", d.timestep, "integration timestep", false,
                    [p](PipelineConfig& c, const std::string& v) { (c.*p).timestep = positive(to_double(v), "timestep"); }});
    keys.push_back({section, "n_steps", "steps", d.n_steps, "MD steps per run", false,
                    [p](PipelineConfig& c, const std::string& v) { (c.*p).n_steps = to_size(v); }});
    keys.push_back({section, "equilibration", "steps", d.equilibration, "steps discarded before sampling", false,
                    [p](PipelineConfig& c, const std::string& v) { (c.*p).equilibration = to_size(v); }});
    keys.push_back({section, "sample_interval", "steps", d.sample_interval, "steps between sampled frames", false,
                    [p](PipelineConfig& c, const std::string& v) { (c.*p).sample_interval = at_least_one(to_size(v), "sample_interval"); }});
    keys.push_back({section, "friction", "1/fs", d.friction, "Langevin friction", false,
                    [p](PipelineConfig& c, const std::string& v) { (c.*p).friction = non_negative(to_double(v), "friction"); }});
}

struct TrainDefaults {
    std::string steps, batch_size, lr_start, lr_end, decay_steps, eval_interval, freeze;
};

inline void add_train_keys(std::vector<ConfigKey>& keys, const std::string& section, TrainConfig PipelineConfig::*t,
                           const TrainDefaults& d) {
    keys.push_back({section, "steps", "steps", d.steps, "optimiser steps", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).steps = to_size(v); }});
    keys.push_back({section, "batch_size", "frames", d.batch_size, "frames per step", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).batch_size = at_least_one(to_size(v), "batch_size"); }});
    keys.push_back({section, "lr_start", "1/step", d.lr_start, "initial learning rate", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).lr_start = positive(to_double(v), "lr_start"); }});
    keys.push_back({section, "lr_end", "1/step", d.lr_end, "final learning rate", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).lr_end = positive(to_double(v), "lr_end"); }});
    keys.push_back({section, "decay_steps", "steps", d.decay_steps, "staircase width of the exponential decay", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).decay_steps = at_least_one(to_size(v), "decay_steps"); }});
    keys.push_back({section, "energy_weight", "dimensionless", "1.0", "w_e, weight of the per-atom energy term", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).energy_weight = non_negative(to_double(v), "energy_weight"); }});
    keys.push_back({section, "force_weight", "dimensionless", "10.0", "w_f, weight of the force term", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).force_weight = non_negative(to_double(v), "force_weight"); }});
    keys.push_back({section, "eval_interval", "steps", d.eval_interval, "validation interval for best-model selection", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).eval_interval = at_least_one(to_size(v), "eval_interval"); }});
    keys.push_back({section, "clip_norm", "dimensionless", "10.0", "global gradient-norm clip (0 disables)", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).clip_norm = non_negative(to_double(v), "clip_norm"); }});
    keys.push_back({section, "freeze_descriptor", "bool", d.freeze, "keep the descriptor-network segment fixed", false,
                    [t](PipelineConfig& c, const std::string& v) { (c.*t).freeze_descriptor = to_bool(v); }});
}

} // namespace cfg

/// The single source of truth for configuration keys.
inline const std::vector<ConfigKey>& config_keys() {
    using namespace cfg;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        k.push_back({"run", "seed", "u64", "42", "global seed; every stage seed derives from it", false,
                     [](PipelineConfig& c, const std::string& v) { c.seed = to_u64(v); }});
        k.push_back({"run", "threads", "count", "0", "worker cap (0 = hardware concurrency, 1 = bitwise reproducible)", false,
                     [](PipelineConfig& c, const std::string& v) { c.threads = static_cast<unsigned>(to_size(v)); }});
        k.push_back({"run", "split_ratio", "fraction", "0.8", "train fraction of every train/validation split", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.split_ratio = to_double(v);
                         if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0))
                             throw Error(ErrorKind::UnitRangeError, "split_ratio must lie in (0, 1)");
                     }});
        k.push_back({"run", "n_hard_targets", "frames", "200", "hard targets selected for fine-tuning", false,
                     [](PipelineConfig& c, const std::string& v) { c.n_hard_targets = at_least_one(to_size(v), "n_hard_targets"); }});
        k.push_back({"run", "selection", "fps|random", "fps", "hard-target selection rule", false,
                     [](PipelineConfig& c, const std::string& v) {
                         const auto t = trim(v);
                         if (t == "fps") c.selection = SelectionMode::Fps;
                         else if (t == "random") c.selection = SelectionMode::Random;
                         else throw Error(ErrorKind::ParseError, "selection must be fps or random");
                     }});
        k.push_back({"run", "selection_seed", "u64", "0", "seed of random selection (also the baseline teacher fine-tuning set)", false,
                     [](PipelineConfig& c, const std::string& v) { c.selection_seed = to_u64(v); }});
        k.push_back({"run", "scratch_multiplier", "count", "10", "hard-target multiple for the larger scratch baseline", false,
                     [](PipelineConfig& c, const std::string& v) { c.scratch_multiplier = at_least_one(to_size(v), "scratch_multiplier"); }});
        k.push_back({"run", "teacher_checkpoint", "path", "", "use this teacher instead of pretraining one", false,
                     [](PipelineConfig& c, const std::string& v) { c.teacher_checkpoint = std::string(trim(v)); }});

        k.push_back({"systems", "species", "symbols", "", "species list (Ar, A, B)", true,
                     [](PipelineConfig& c, const std::string& v) {
                         c.systems.species = split_list(v);
                         if (c.systems.species.empty()) throw Error(ErrorKind::UnitRangeError, "species list is empty");
                         for (const auto& s : c.systems.species) lookup_species(s);
                     }});
        k.push_back({"systems", "lattice", "sc|fcc", "sc", "initial lattice of single-species systems", false,
                     [](PipelineConfig& c, const std::string& v) {
                         const auto t = trim(v);
                         if (t == "sc") c.systems.lattice = LatticeKind::SimpleCubic;
                         else if (t == "fcc") c.systems.lattice = LatticeKind::FaceCentredCubic;
                         else throw Error(ErrorKind::ParseError, "lattice must be sc or fcc");
                     }});
        k.push_back({"systems", "cells", "count", "4", "unit cells per edge", false,
                     [](PipelineConfig& c, const std::string& v) { c.systems.cells = at_least_one(to_size(v), "cells"); }});
        k.push_back({"systems", "densities", "g/cm³", "1.40, 1.33", "one initial system per density", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.systems.densities = to_doubles(v);
                         if (c.systems.densities.empty()) throw Error(ErrorKind::UnitRangeError, "density list is empty");
                         for (double d : c.systems.densities) positive(d, "density");
                     }});
        k.push_back({"systems", "initial_xyz", "path", "", "initial structure file (rescaled to each density)", false,
                     [](PipelineConfig& c, const std::string& v) { c.systems.initial_xyz = std::string(trim(v)); }});

        k.push_back({"oracle", "epsilon", "eV", "0.0104", "Lennard-Jones well depth per species", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.oracle.epsilon = to_doubles(v);
                         for (double e : c.oracle.epsilon) positive(e, "epsilon");
                     }});
        k.push_back({"oracle", "sigma", "Å", "3.405", "Lennard-Jones diameter per species", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.oracle.sigma = to_doubles(v);
                         for (double s : c.oracle.sigma) positive(s, "sigma");
                     }});
        k.push_back({"oracle", "cutoff", "Å", "6.0", "pair cutoff", false,
                     [](PipelineConfig& c, const std::string& v) { c.oracle.cutoff = positive(to_double(v), "cutoff"); }});
        k.push_back({"oracle", "shift_at_cutoff", "bool", "true", "shift pair energy to zero at the cutoff", false,
                     [](PipelineConfig& c, const std::string& v) { c.oracle.shift_at_cutoff = to_bool(v); }});
        k.push_back({"oracle", "dispersion_scale", "dimensionless", "1.0", "d, weight of the -C6/r^6 tail in the ground truth", false,
                     [](PipelineConfig& c, const std::string& v) { c.oracle.dispersion_scale = non_negative(to_double(v), "dispersion_scale"); }});

        k.push_back({"teacher_truth", "dispersion_scale", "dimensionless", "0.0", "dispersion weight of the teacher's reference", false,
                     [](PipelineConfig& c, const std::string& v) { c.teacher_truth.dispersion_scale = non_negative(to_double(v), "dispersion_scale"); }});
        k.push_back({"teacher_truth", "softening_threshold", "eV", "0.0", "U0, energy above the reference minimum where compression starts", false,
                     [](PipelineConfig& c, const std::string& v) { c.teacher_truth.softening_threshold = non_negative(to_double(v), "softening_threshold"); }});
        k.push_back({"teacher_truth", "softening_factor", "dimensionless", "0.5", "s in (0, 1], compression of energy above the threshold", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.teacher_truth.softening_factor = to_double(v);
                         if (!(c.teacher_truth.softening_factor > 0.0 && c.teacher_truth.softening_factor <= 1.0))
                             throw Error(ErrorKind::UnitRangeError, "softening_factor must lie in (0, 1]");
                     }});

        add_model_keys(k, "teacher", &PipelineConfig::teacher, "32, 64", "128, 128, 128");
        add_model_keys(k, "student", &PipelineConfig::student, "16, 32", "64, 64");

        add_md_keys(k, "teacher_data_md", &PipelineConfig::teacher_data_md,
                    {"300, 450, 600, 750, 900", "2.0", "6500", "500", "20", "0.01", false});
        add_md_keys(k, "soft_md", &PipelineConfig::soft_md, {"", "2.0", "13000", "500", "25", "0.01", true});

        add_train_keys(k, "train_teacher", &PipelineConfig::train_teacher,
                       {"15000", "4", "1e-3", "1e-5", "500", "1000", "false"});
        add_train_keys(k, "train_student", &PipelineConfig::train_student,
                       {"15000", "4", "1e-3", "1e-5", "500", "1000", "false"});
        add_train_keys(k, "finetune", &PipelineConfig::finetune, {"6000", "4", "1e-3", "1e-5", "200", "500", "true"});
        add_train_keys(k, "finetune_teacher", &PipelineConfig::finetune_teacher,
                       {"6000", "4", "1e-3", "1e-5", "200", "500", "false"});
        add_train_keys(k, "scratch", &PipelineConfig::scratch, {"15000", "4", "1e-3", "1e-5", "500", "1000", "false"});

        k.push_back({"analysis", "histogram_bins", "count", "40", "bins of the per-atom energy histograms", false,
                     [](PipelineConfig& c, const std::string& v) { c.analysis.histogram_bins = at_least_one(to_size(v), "histogram_bins"); }});
        k.push_back({"analysis", "msd_fit_lo", "fraction", "0.2", "start of the diffusion fit window (fraction of max lag)", false,
                     [](PipelineConfig& c, const std::string& v) { c.analysis.msd_fit_lo = non_negative(to_double(v), "msd_fit_lo"); }});
        k.push_back({"analysis", "msd_fit_hi", "fraction", "0.8", "end of the diffusion fit window (fraction of max lag)", false,
                     [](PipelineConfig& c, const std::string& v) { c.analysis.msd_fit_hi = positive(to_double(v), "msd_fit_hi"); }});

        k.push_back({"timing", "cells", "count", "4, 6", "simple-cubic cells per edge of each timed system", false,
                     [](PipelineConfig& c, const std::string& v) {
                         c.timing.cells = to_sizes(v);
                         if (c.timing.cells.empty()) throw Error(ErrorKind::UnitRangeError, "timing cell list is empty");
                     }});
        k.push_back({"timing", "steps", "steps", "1000", "MD steps per timed trial", false,
                     [](PipelineConfig& c, const std::string& v) { c.timing.steps = at_least_one(to_size(v), "steps"); }});
        k.push_back({"timing", "trials", "count", "5", "timed trials per model and size", false,
                     [](PipelineConfig& c, const std::string& v) { c.timing.trials = at_least_one(to_size(v), "trials"); }});
        k.push_back({"timing", "temperature", "K", "300", "thermostat set-point of timed runs", false,
                     [](PipelineConfig& c, const std::string& v) { c.timing.temperature = non_negative(to_double(v), "temperature"); }});
        k.push_back({"timing", "timestep", "fs", "2.0", "timestep of timed runs", false,
                     [](PipelineConfig& c, const std::string& v) { c.timing.timestep = positive(to_double(v), "timestep"); }});

        k.push_back({"md", "potential", "name|path", "ground_truth", "ground_truth, teacher_truth, or a checkpoint path", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.potential = std::string(trim(v)); }});
        k.push_back({"md", "temperature", "K", "300", "thermostat set-point / initial temperature", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.temperature = non_negative(to_double(v), "temperature"); }});
        k.push_back({"md", "density", "g/cm³", "1.40", "density of the lattice start", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.density = positive(to_double(v), "density"); }});
        k.push_back({"md", "thermostat", "langevin|none", "langevin", "NVT (Langevin) or NVE", false,
                     [](PipelineConfig& c, const std::string& v) {
                         const auto t = trim(v);
                         if (t == "langevin") c.md.thermostat = Thermostat::Langevin;
                         else if (t == "none") c.md.thermostat = Thermostat::None;
                         else throw Error(ErrorKind::ParseError, "thermostat must be langevin or none");
                     }});
        k.push_back({"md", "timestep", "fs", "2.0", "integration timestep", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.timestep = positive(to_double(v), "timestep"); }});
        k.push_back({"md", "n_steps", "steps", "5000", "MD steps", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.n_steps = to_size(v); }});
        k.push_back({"md", "equilibration", "steps", "1000", "steps discarded before sampling", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.equilibration = to_size(v); }});
        k.push_back({"md", "sample_interval", "steps", "25", "steps between sampled frames", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.sample_interval = at_least_one(to_size(v), "sample_interval"); }});
        k.push_back({"md", "friction", "1/fs", "0.01", "Langevin friction", false,
                     [](PipelineConfig& c, const std::string& v) { c.md.friction = non_negative(to_double(v), "friction"); }});
        return k;
    }();
    return keys;
}

inline const ConfigKey* find_key(std::string_view section, std::string_view key) {
    for (const auto& k : config_keys())
        if (k.section == section && k.key == key) return &k;
    return nullptr;
}

namespace detail {

inline Error at_line(const Error& e, std::size_t line) {
    return Error(e.kind(), e.message() + " (line " + std::to_string(line) + ")",
                 static_cast<std::int64_t>(line));
}

inline void check_consistency(const PipelineConfig& c) {
    const std::size_t ns = c.systems.species.size();
    if (c.oracle.epsilon.size() != ns || c.oracle.sigma.size() != ns)
        throw Error(ErrorKind::UnitRangeError, "oracle epsilon/sigma need one value per species");
    auto md_ok = [](const MDPlan& p, const char* name) {
        if (p.equilibration > p.n_steps)
            throw Error(ErrorKind::UnitRangeError, std::string(name) + ": equilibration exceeds n_steps");
    };
    md_ok(c.teacher_data_md, "teacher_data_md");
    md_ok(c.soft_md, "soft_md");
    for (const auto* t : {&c.train_teacher, &c.train_student, &c.finetune, &c.finetune_teacher, &c.scratch})
        if (t->lr_end > t->lr_start) throw Error(ErrorKind::UnitRangeError, "lr_end must not exceed lr_start");
    if (c.md.equilibration > c.md.n_steps) throw Error(ErrorKind::UnitRangeError, "md: equilibration exceeds n_steps");
    if (!(c.analysis.msd_fit_lo < c.analysis.msd_fit_hi && c.analysis.msd_fit_hi <= 1.0))
        throw Error(ErrorKind::UnitRangeError, "msd fit window must satisfy lo < hi <= 1");
}

} // namespace detail

/// Strict parse; unknown keys, duplicates and missing required keys are errors.
inline PipelineConfig parse_config_text(std::string_view text) {
    PipelineConfig c;
    for (const auto& k : config_keys())
        if (!k.default_value.empty()) k.apply(c, k.default_value);

    std::set<std::pair<std::string, std::string>> seen;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream is{std::string(text)};
    for (std::string raw; std::getline(is, raw);) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw Error(ErrorKind::ParseError, "unterminated section header at line " + std::to_string(line_no),
                            static_cast<std::int64_t>(line_no));
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw Error(ErrorKind::ParseError, "expected 'key = value' at line " + std::to_string(line_no),
                        static_cast<std::int64_t>(line_no));
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        const auto* spec = find_key(section, key);
        if (!spec)
            throw Error(ErrorKind::UnknownKey,
                        "unknown key '" + key + "' in section [" + section + "] at line " + std::to_string(line_no),
                        static_cast<std::int64_t>(line_no));
        if (!seen.insert({section, key}).second)
            throw Error(ErrorKind::ParseError, "duplicate key '" + key + "' at line " + std::to_string(line_no),
                        static_cast<std::int64_t>(line_no));
        try {
            spec->apply(c, value);
        } catch (const Error& e) {
            throw detail::at_line(e, line_no);
        }
    }
    for (const auto& k : config_keys()) {
        if (k.required && !seen.count({k.section, k.key}))
            throw Error(ErrorKind::MissingRequired, "missing required key [" + k.section + "] " + k.key);
    }
    // Single-species defaults extend to every species when not given explicitly.
    const std::size_t ns = c.systems.species.size();
    if (!seen.count({"oracle", "epsilon"}) && c.oracle.epsilon.size() == 1) c.oracle.epsilon.assign(ns, c.oracle.epsilon[0]);
    if (!seen.count({"oracle", "sigma"}) && c.oracle.sigma.size() == 1) c.oracle.sigma.assign(ns, c.oracle.sigma[0]);
    detail::check_consistency(c);
    return c;
}

inline PipelineConfig parse_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::Io, "cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

/// Generated reference of every key with unit and default.
inline std::string config_reference() {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_keys()) {
        if (k.section != section) {
            section = k.section;
            os << "\n[" << section << "]\n";
        }
        os << "  " << k.key << " = " << (k.default_value.empty() ? "<none>" : k.default_value) << "    # [" << k.unit
           << "] " << k.description << (k.required ? " (required)" : "") << '\n';
    }
    return os.str();
}

/// Constructors for the module-level objects a config describes.
inline OracleSpec ground_truth_spec(const PipelineConfig& c) {
    return make_oracle_spec(c.oracle.epsilon, c.oracle.sigma, c.oracle.cutoff, c.oracle.shift_at_cutoff,
                            c.oracle.dispersion_scale);
}

inline OracleSpec teacher_truth_spec(const PipelineConfig& c) {
    auto spec = make_oracle_spec(c.oracle.epsilon, c.oracle.sigma, c.oracle.cutoff, c.oracle.shift_at_cutoff,
                                 c.teacher_truth.dispersion_scale);
    return with_softening(spec, c.teacher_truth.softening_threshold, c.teacher_truth.softening_factor);
}

inline MDConfig md_config(const MDPlan& p, double temperature, std::uint64_t seed) {
    MDConfig m;
    m.timestep = p.timestep;
    m.n_steps = p.n_steps;
    m.temperature = temperature;
    m.thermostat = Thermostat::Langevin;
    m.friction = p.friction;
    m.sample_interval = p.sample_interval;
    m.equilibration = p.equilibration;
    m.seed = seed;
    return m;
}

} // namespace kdnnp
