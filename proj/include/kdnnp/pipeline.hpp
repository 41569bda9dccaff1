#pragma once

// End-to-end orchestration. Every stage reads its inputs from and writes its
// outputs to the run directory, so any stage can be rerun on stored artifacts.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kdnnp/analysis.hpp"
#include "kdnnp/checkpoint.hpp"
#include "kdnnp/config.hpp"
#include "kdnnp/dataset.hpp"
#include "kdnnp/md.hpp"
#include "kdnnp/model.hpp"
#include "kdnnp/oracle.hpp"
#include "kdnnp/parallel.hpp"
#include "kdnnp/screening.hpp"
#include "kdnnp/trainer.hpp"
#include "kdnnp/xyz.hpp"

namespace kdnnp {

namespace fs = std::filesystem;

/// Plain "key = value" summary with fixed key names, merged across commands.
class Report {
public:
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    void set(const std::string& key, double value) { entries_[key] = format_double(value); }
    void set(const std::string& key, std::size_t value) { entries_[key] = std::to_string(value); }
    void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

    const std::string& get(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) throw Error(ErrorKind::MissingRequired, "report has no key '" + key + "'");
        return it->second;
    }
    double number(const std::string& key) const { return parse_double(get(key)); }
    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    const std::map<std::string, std::string>& entries() const { return entries_; }

    void write(const fs::path& path) const {
        std::ofstream os(path);
        if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
        for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
    }

    static Report read(const fs::path& path) {
        Report r;
        std::ifstream is(path);
        if (!is) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
        for (std::string line; std::getline(is, line);) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            r.entries_[line.substr(0, eq)] = line.substr(eq + 3);
        }
        return r;
    }

private:
    std::map<std::string, std::string> entries_;
};

struct RunContext {
    PipelineConfig config;
    fs::path out;
    std::string config_text;
    std::string command;
    bool verbose{};
    std::ostream* log{&std::cerr};
    Report report;

    fs::path path(const std::string& rel) const { return out / rel; }
    void say(const std::string& msg) const {
        if (verbose) *log << "[kdnnp] " << msg << std::endl;
    }
};

inline constexpr const char* report_file = "report.txt";
inline constexpr const char* stage_times_file = "stage_times.csv";

/// Files whose content depends on wall-clock time; excluded from manifest hashes.
inline bool volatile_artifact(const std::string& rel) {
    static const std::set<std::string> names{stage_times_file, "timing.csv", "timing_summary.csv",
                                             "timing_report.txt", "manifest.txt"};
    return names.count(rel) > 0;
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, std::uint64_t index = 0) {
    return fnv1a64(std::to_string(seed) + "/" + tag + "/" + std::to_string(index));
}

inline RunContext make_context(PipelineConfig config, fs::path out, std::string config_text, std::string command,
                               bool verbose = false) {
    RunContext ctx;
    ctx.config = std::move(config);
    ctx.out = std::move(out);
    ctx.config_text = std::move(config_text);
    ctx.command = std::move(command);
    ctx.verbose = verbose;
    fs::create_directories(ctx.out);
    if (fs::exists(ctx.path(report_file))) ctx.report = Report::read(ctx.path(report_file));
    return ctx;
}

inline void save_report(const RunContext& ctx) { ctx.report.write(ctx.path(report_file)); }

/// Runs one stage, appends its wall-clock time to stage_times.csv and tags
/// any error with the stage name.
template <class Fn>
void run_stage(RunContext& ctx, const std::string& name, Fn&& fn) {
    ctx.say("stage " + name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn();
    } catch (const Error& e) {
        save_report(ctx);
        throw Error(e.kind(), "stage " + name + ": " + e.message(), e.index());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto p = ctx.path(stage_times_file);
    const bool fresh = !fs::exists(p);
    std::ofstream os(p, std::ios::app);
    if (fresh) os << "stage,seconds\n";
    os << name << ',' << secs << '\n';
    save_report(ctx);
}

// ---------------------------------------------------------------------------
// Building blocks

inline std::vector<AtomicSystem> initial_systems(const PipelineConfig& c) {
    const auto kinds = make_species_table(c.systems.species);
    std::vector<AtomicSystem> out;
    AtomicSystem base;
    if (!c.systems.initial_xyz.empty()) {
        const auto frames = xyz::read_file(c.systems.initial_xyz);
        if (frames.empty()) throw Error(ErrorKind::EmptyDataset, "initial structure file holds no frames");
        const auto& s = frames.front().system;
        std::vector<int> species(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            const auto& sym = s.kinds.at(static_cast<std::size_t>(s.species[i])).symbol;
            const auto it = std::find(c.systems.species.begin(), c.systems.species.end(), sym);
            if (it == c.systems.species.end())
                throw Error(ErrorKind::UnknownSpecies, "initial structure uses species '" + sym + "' not in the config");
            species[i] = static_cast<int>(it - c.systems.species.begin());
        }
        base = make_system(std::move(species), s.positions, s.cell, kinds);
    } else {
        base = make_lattice(c.systems.lattice, static_cast<int>(c.systems.cells), 0, kinds, c.systems.densities.front());
        for (std::size_t i = 0; i < base.size(); ++i) base.species[i] = static_cast<int>(i % kinds.size());
    }
    for (double d : c.systems.densities) out.push_back(scale_to_density(base, d));
    return out;
}

inline PotentialModel new_model(const ModelConfig& m, const std::vector<std::string>& species, std::uint64_t seed) {
    auto desc = make_descriptor_spec(m.cutoff, species.size(), m.radial_count, m.radial_min);
    NetworkSpec net;
    net.descriptor_layers = m.descriptor_layers;
    net.fitting_layers = m.fitting_layers;
    net.residual_connections = m.residual;
    return init_model(species, std::move(desc), std::move(net), seed);
}

inline TrainConfig stage_train_config(const RunContext& ctx, TrainConfig t, const std::string& tag) {
    t.seed = derive_seed(ctx.config.seed, "train/" + tag);
    t.threads = ctx.config.threads;
    return t;
}

/// Shifts every species' energy offset by the mean per-atom residual on `frames`.
inline void align_energy_shift(PotentialModel& m, std::span<const LabeledFrame> frames) {
    if (frames.empty()) throw Error(ErrorKind::EmptyDataset, "cannot align energy on no frames");
    double acc = 0.0;
    for (const auto& f : frames) acc += (f.energy - model_energy(m, f.system)) / static_cast<double>(f.system.size());
    const double delta = acc / static_cast<double>(frames.size());
    for (auto& e : m.energy_shift) e += delta;
}

inline Dataset load_dataset(const fs::path& p) {
    Dataset d;
    d.frames = xyz::read_file(p);
    return d;
}

inline void save_dataset(const fs::path& p, const Dataset& d, bool with_dynamics = false) {
    xyz::write_file(p, d.frames, with_dynamics);
}

/// Per-frame errors behind a reported MAE, written to errors/<name>.csv.
inline MaeResult evaluate_and_record(const RunContext& ctx, const PotentialModel& model, const Dataset& data,
                                     const std::string& name) {
    if (data.empty()) throw Error(ErrorKind::EmptyDataset, "cannot evaluate on an empty dataset");
    struct Row {
        double e{}, f{};
        std::size_t comps{};
    };
    std::vector<Row> rows(data.size());
    parallel_for(data.size(), ctx.config.threads, [&](std::size_t k) {
        const auto& fr = data.frames[k];
        const auto pred = model_energy_forces(model, fr.system);
        Row r;
        r.e = std::abs(pred.energy - fr.energy) / static_cast<double>(fr.system.size());
        for (std::size_t i = 0; i < fr.system.size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) r.f += std::abs(pred.forces[i][c] - fr.forces[i][c]);
        r.comps = 3 * fr.system.size();
        rows[k] = r;
    });
    fs::create_directories(ctx.path("errors"));
    std::ofstream os(ctx.path("errors/" + name + ".csv"));
    if (!os) throw Error(ErrorKind::Io, "cannot write per-frame errors for " + name);
    os << "frame,energy_abs_error_per_atom,force_abs_error_sum,force_components\n";
    double e = 0.0, f = 0.0;
    std::size_t comps = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        os << k << ',' << format_double(rows[k].e) << ',' << format_double(rows[k].f) << ',' << rows[k].comps << '\n';
        e += rows[k].e;
        f += rows[k].f;
        comps += rows[k].comps;
    }
    return {e / static_cast<double>(rows.size()), f / static_cast<double>(comps)};
}

inline void report_mae(RunContext& ctx, const std::string& key, const MaeResult& r) {
    ctx.report.set(key + ".energy_mae", r.energy_mae);
    ctx.report.set(key + ".force_mae", r.force_mae);
}

struct MDRunSpec {
    std::size_t system{};
    double temperature{};
};

inline std::vector<MDRunSpec> md_runs(std::size_t n_systems, const MDPlan& plan) {
    std::vector<MDRunSpec> runs;
    for (std::size_t s = 0; s < n_systems; ++s)
        for (double t : plan.temperatures) runs.push_back({s, t});
    return runs;
}

inline std::string trajectory_name(const std::string& prefix, const MDRunSpec& r) {
    return prefix + "_s" + std::to_string(r.system) + "_T" + format_double(r.temperature) + ".xyz";
}

/// One thermostatted run per (system, temperature) with per-run seeds.
/// Runs that diverge or collapse keep their frames and record the failing step.
template <Potential P>
std::vector<Trajectory> run_md_plan(const RunContext& ctx, const P& potential, const std::vector<AtomicSystem>& systems,
                                    const MDPlan& plan, const std::string& tag, Provenance provenance) {
    const auto runs = md_runs(systems.size(), plan);
    std::vector<Trajectory> out(runs.size());
    parallel_for(runs.size(), ctx.config.threads, [&](std::size_t r) {
        const auto init = maxwell_boltzmann_init(systems[runs[r].system], runs[r].temperature,
                                                 derive_seed(ctx.config.seed, tag + "/velocities", r));
        auto cfg = md_config(plan, runs[r].temperature, derive_seed(ctx.config.seed, tag + "/md", r));
        // At least the distance below which the oracle refuses to label a pair.
        cfg.min_pair_distance = 0.1 * *std::max_element(ctx.config.oracle.sigma.begin(), ctx.config.oracle.sigma.end());
        out[r] = run_md_partial(init, potential, cfg, provenance);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Post-processing of stored trajectories

struct TrajectoryFile {
    fs::path path;
    std::string prefix;
    std::size_t system{};
    double temperature{};
};

inline std::vector<TrajectoryFile> list_trajectories(const fs::path& dir, const std::string& prefix) {
    std::vector<TrajectoryFile> out;
    if (!fs::exists(dir)) return out;
    const std::regex re("^([A-Za-z0-9]+)_s([0-9]+)_T([0-9.eE+-]+)\\.xyz$");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const auto name = e.path().filename().string();
        if (!std::regex_match(name, m, re) || m[1] != prefix) continue;
        out.push_back({e.path(), m[1], static_cast<std::size_t>(std::stoul(m[2])), parse_double(m[3].str())});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::tie(a.temperature, a.system) < std::tie(b.temperature, b.system);
    });
    return out;
}

inline Histogram pooled_histogram(std::span<const double> values, std::size_t bins) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    double a = *lo, b = *hi;
    if (!(b > a)) {
        a -= 0.5;
        b += 0.5;
    }
    return histogram_of(values, bins, a, b);
}

/// Regenerates per-temperature energy histograms and per-run MSD curves
/// from trajectories/<prefix>_s*_T*.xyz. Output depends only on those files.
inline void analyze_trajectories(RunContext& ctx, const std::string& prefix) {
    const auto files = list_trajectories(ctx.path("trajectories"), prefix);
    if (files.empty()) throw Error(ErrorKind::EmptyDataset, "no '" + prefix + "' trajectories to analyze");
    fs::create_directories(ctx.path("analysis"));
    std::map<double, std::vector<double>> energies;
    for (const auto& f : files) {
        const auto frames = xyz::read_file(f.path);
        const auto stem = f.path.stem().string();
        auto& pool = energies[f.temperature];
        for (const auto& fr : frames) pool.push_back(fr.energy_per_atom());
        try {
            const auto curve = mean_square_displacement(frames);
            write_msd_csv(ctx.path("analysis/msd_" + stem + ".csv"), curve);
            const auto fit = self_diffusion(curve, ctx.config.analysis.msd_fit_lo, ctx.config.analysis.msd_fit_hi);
            ctx.report.set("diffusion." + stem + ".cm2_per_s", fit.coefficient);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TooFewSamples && e.kind() != ErrorKind::DegenerateFit) throw;
            ctx.report.set("diffusion." + stem + ".cm2_per_s", std::string("n/a"));
        }
    }
    for (const auto& [t, values] : energies) {
        if (values.empty()) continue;
        const auto key = prefix + "_T" + format_double(t);
        const auto h = pooled_histogram(values, ctx.config.analysis.histogram_bins);
        write_histogram_csv(ctx.path("analysis/hist_" + key + ".csv"), h);
        ctx.report.set("hist." + key + ".mean", h.mean);
        ctx.report.set("hist." + key + ".std", h.std);
        ctx.report.set("hist." + key + ".n", h.n);
    }
}

// ---------------------------------------------------------------------------
// Stages

inline void pretrain_teacher(RunContext& ctx) {
    const auto& c = ctx.config;
    PotentialModel teacher;
    if (!c.teacher_checkpoint.empty()) {
        teacher = load_checkpoint(c.teacher_checkpoint);
        save_checkpoint(ctx.path("teacher.ckpt"), teacher);
        ctx.report.set("teacher.params", teacher.parameter_count());
        ctx.report.set("teacher.source", c.teacher_checkpoint);
        return;
    }
    const auto truth = teacher_truth_spec(c);
    const auto systems = initial_systems(c);
    const auto trajs = run_md_plan(ctx, OraclePotential{truth}, systems, c.teacher_data_md, "teacher_data",
                                   Provenance::TeacherTruth);
    Dataset data;
    for (const auto& t : trajs) {
        if (t.failed_step)
            throw Error(ErrorKind::NonFiniteState, "teacher-truth MD diverged", static_cast<std::int64_t>(*t.failed_step));
        data.frames.insert(data.frames.end(), t.frames.begin(), t.frames.end());
    }
    save_dataset(ctx.path("teacher_data.xyz"), data);
    auto [tr, va] = split_dataset(data, c.split_ratio, derive_seed(c.seed, "split/teacher_data"));

    teacher = new_model(c.teacher, c.systems.species, derive_seed(c.seed, "teacher/init"));
    fit_statistics(teacher, tr.frames);
    auto [best, history] = train(teacher, tr, va, stage_train_config(ctx, c.train_teacher, "teacher"));
    save_checkpoint(ctx.path("teacher.ckpt"), best);
    write_history_csv(ctx.path("teacher_history.csv"), history);

    ctx.report.set("teacher.params", best.parameter_count());
    ctx.report.set("teacher.data_frames", data.size());
    ctx.report.set("teacher.best_step", history.best_step);
    report_mae(ctx, "teacher_vs_teacher_truth", evaluate_and_record(ctx, best, va, "teacher_vs_teacher_truth"));
}

/// Teacher-driven MD over the soft-target plan; writes trajectories/<prefix>_*.xyz
/// and <prefix>_targets.xyz. Returns the concatenated frames in run order.
inline Dataset generate_soft_targets(RunContext& ctx, const PotentialModel& teacher, const std::string& prefix) {
    const auto& c = ctx.config;
    const auto systems = initial_systems(c);
    // Every soft-target set uses the same MD seeds, so only the driving potential differs.
    const auto trajs = run_md_plan(ctx, ModelPotential{&teacher}, systems, c.soft_md, "soft_md", Provenance::SoftTeacher);
    const auto runs = md_runs(systems.size(), c.soft_md);
    fs::create_directories(ctx.path("trajectories"));
    Dataset all;
    std::size_t failed = 0;
    std::ofstream status(ctx.path(prefix + "_md_status.csv"));
    status << "system,temperature,frames,failed_step\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& t = trajs[r];
        xyz::write_file(ctx.path("trajectories/" + trajectory_name(prefix, runs[r])), t.frames, true);
        status << runs[r].system << ',' << format_double(runs[r].temperature) << ',' << t.frames.size() << ','
               << (t.failed_step ? std::to_string(*t.failed_step) : std::string("")) << '\n';
        if (t.failed_step) {
            ++failed;
            ctx.say("MD diverged: system " + std::to_string(runs[r].system) + " at " +
                    format_double(runs[r].temperature) + " K, step " + std::to_string(*t.failed_step));
        }
        all.frames.insert(all.frames.end(), t.frames.begin(), t.frames.end());
    }
    ctx.report.set(prefix + ".frames", all.size());
    ctx.report.set(prefix + ".failed_runs", failed);
    if (all.empty()) throw Error(ErrorKind::NonFiniteState, "every soft-target MD run diverged before sampling");
    save_dataset(ctx.path(prefix + "_targets.xyz"), all);
    return all;
}

inline void soft_targets(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto teacher = load_checkpoint(ctx.path("teacher.ckpt"));
    const auto soft = generate_soft_targets(ctx, teacher, "soft");
    auto [tr, va] = split_dataset(soft, c.split_ratio, derive_seed(c.seed, "split/soft"));
    if (c.n_hard_targets > tr.size())
        throw Error(ErrorKind::KTooLarge, "n_hard_targets exceeds the soft-target training split");
    save_dataset(ctx.path("soft_train.xyz"), tr);
    save_dataset(ctx.path("soft_val.xyz"), va);
    ctx.report.set("soft.train_frames", tr.size());
    ctx.report.set("soft.val_frames", va.size());

    Dataset gt;
    gt.frames = relabel_frames(va.frames, ground_truth_spec(c), Provenance::HardOracle, c.threads);
    save_dataset(ctx.path("val_ground_truth.xyz"), gt);
    report_mae(ctx, "teacher_vs_ground_truth", evaluate_and_record(ctx, teacher, gt, "teacher_vs_ground_truth"));
    analyze_trajectories(ctx, "soft");
}

inline void train_student(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto tr = load_dataset(ctx.path("soft_train.xyz"));
    const auto va = load_dataset(ctx.path("soft_val.xyz"));
    auto student = new_model(c.student, c.systems.species, derive_seed(c.seed, "student/init"));
    fit_statistics(student, tr.frames);
    auto [best, history] = train(student, tr, va, stage_train_config(ctx, c.train_student, "student_soft"));
    save_checkpoint(ctx.path("student_soft.ckpt"), best);
    write_history_csv(ctx.path("student_soft_history.csv"), history);
    ctx.report.set("student.params", best.parameter_count());
    ctx.report.set("student_soft.best_step", history.best_step);
    report_mae(ctx, "student_soft_vs_teacher", evaluate_and_record(ctx, best, va, "student_soft_vs_teacher"));
    const auto gt = load_dataset(ctx.path("val_ground_truth.xyz"));
    report_mae(ctx, "student_soft_vs_ground_truth", evaluate_and_record(ctx, best, gt, "student_soft_vs_ground_truth"));
}

/// Screening coordinates of the soft training split under the soft-trained student.
inline std::vector<ScreeningPoint> screening_points(const RunContext& ctx, const PotentialModel& student,
                                                    const Dataset& pool) {
    std::vector<Eigen::VectorXd> features(pool.size());
    parallel_for(pool.size(), ctx.config.threads,
                 [&](std::size_t i) { features[i] = extract_features(student, pool.frames[i].system); });
    const auto reduced = reduce_2d(features);
    return augment_energy(reduced, per_atom_energies(pool.frames));
}

inline std::vector<std::size_t> select_indices(const std::vector<ScreeningPoint>& points, std::size_t k,
                                               SelectionMode mode, std::uint64_t seed) {
    return mode == SelectionMode::Fps ? select_fps(points, k) : select_random(points.size(), k, seed);
}

inline void write_indices(const fs::path& p, std::span<const std::size_t> idx) {
    std::ofstream os(p);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + p.string() + "' for writing");
    os << "order,source_index\n";
    for (std::size_t k = 0; k < idx.size(); ++k) os << k << ',' << idx[k] << '\n';
}

inline std::vector<std::size_t> read_indices(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::Io, "cannot open '" + p.string() + "'");
    std::vector<std::size_t> out;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw Error(ErrorKind::Format, "bad selection line '" + line + "'");
        out.push_back(static_cast<std::size_t>(parse_int(trim(std::string_view(line).substr(comma + 1)))));
    }
    return out;
}

inline void screen(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto student = load_checkpoint(ctx.path("student_soft.ckpt"));
    const auto pool = load_dataset(ctx.path("soft_train.xyz"));
    const auto points = screening_points(ctx, student, pool);
    const auto chosen = select_indices(points, c.n_hard_targets, c.selection, c.selection_seed);
    write_selection_csv(ctx.path("selection_map.csv"), points, chosen);
    write_indices(ctx.path("selection.csv"), chosen);
    ctx.report.set("selection.mode", std::string(c.selection == SelectionMode::Fps ? "fps" : "random"));
    ctx.report.set("selection.count", chosen.size());
    ctx.report.set("selection.min_pairwise_distance", min_pairwise_distance(points, chosen));
}

/// Ground-truth labels for the given soft-training-split indices.
inline Dataset label_selection(const RunContext& ctx, const Dataset& pool, std::span<const std::size_t> idx) {
    const auto picked = subset(pool, idx);
    Dataset hard;
    hard.frames = relabel_frames(picked.frames, ground_truth_spec(ctx.config), Provenance::HardOracle,
                                 ctx.config.threads);
    return hard;
}

inline void label(RunContext& ctx) {
    const auto pool = load_dataset(ctx.path("soft_train.xyz"));
    const auto idx = read_indices(ctx.path("selection.csv"));
    const auto hard = label_selection(ctx, pool, idx);
    save_dataset(ctx.path("hard_targets.xyz"), hard);
    ctx.report.set("hard.frames", hard.size());
}

/// Continues training on hard targets; best snapshot by a held-out part of them.
inline std::pair<PotentialModel, TrainHistory> finetune_on(const RunContext& ctx, PotentialModel model,
                                                           const Dataset& hard, const TrainConfig& cfg,
                                                           const std::string& tag) {
    if (hard.empty()) throw Error(ErrorKind::EmptyDataset, "no hard targets to fine-tune on");
    auto [tr, va] = split_dataset(hard, ctx.config.split_ratio, derive_seed(ctx.config.seed, "split/" + tag));
    align_energy_shift(model, tr.frames);
    return train(std::move(model), tr, va, stage_train_config(ctx, cfg, tag));
}

inline bool same_descriptor_segment(const PotentialModel& a, const PotentialModel& b) {
    if (a.descriptor_segment_size != b.descriptor_segment_size) return false;
    return std::equal(a.weights.begin(), a.weights.begin() + static_cast<std::ptrdiff_t>(a.descriptor_segment_size),
                      b.weights.begin());
}

inline void finetune(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto student = load_checkpoint(ctx.path("student_soft.ckpt"));
    const auto hard = load_dataset(ctx.path("hard_targets.xyz"));
    auto [best, history] = finetune_on(ctx, student, hard, c.finetune, "student_ft");
    save_checkpoint(ctx.path("student_ft.ckpt"), best);
    write_history_csv(ctx.path("student_ft_history.csv"), history);
    ctx.report.set("student_ft.best_step", history.best_step);
    ctx.report.set("student_ft.descriptor_frozen", same_descriptor_segment(student, best));
    const auto gt = load_dataset(ctx.path("val_ground_truth.xyz"));
    report_mae(ctx, "student_ft_vs_ground_truth", evaluate_and_record(ctx, best, gt, "student_ft_vs_ground_truth"));
}

inline void distill(RunContext& ctx) {
    run_stage(ctx, "pretrain-teacher", [&] { pretrain_teacher(ctx); });
    run_stage(ctx, "soft-targets", [&] { soft_targets(ctx); });
    run_stage(ctx, "train", [&] { train_student(ctx); });
    run_stage(ctx, "screen", [&] { screen(ctx); });
    run_stage(ctx, "label", [&] { label(ctx); });
    run_stage(ctx, "finetune", [&] { finetune(ctx); });
}

/// Lowest-temperature frames of a soft-target set, relabeled with the ground truth.
inline std::vector<double> ground_truth_energies_at(const RunContext& ctx, const Dataset& soft, double temperature) {
    std::vector<LabeledFrame> at;
    for (const auto& f : soft.frames)
        if (f.temperature_tag == temperature) at.push_back(f);
    const auto gt = relabel_frames(at, ground_truth_spec(ctx.config), Provenance::HardOracle, ctx.config.threads);
    return per_atom_energies(gt);
}

struct SampleStats {
    double mean{}, std{}, sem{}, p95{};
    std::size_t n{};
};

inline SampleStats sample_stats(const std::vector<double>& v) {
    if (v.size() < 2) throw Error(ErrorKind::TooFewSamples, "need at least two samples");
    SampleStats s;
    s.n = v.size();
    double acc = 0.0;
    for (double x : v) acc += x;
    s.mean = acc / static_cast<double>(s.n);
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.sem = s.std / std::sqrt(static_cast<double>(s.n));
    s.p95 = percentile(v, 95.0);
    return s;
}

/// Fine-tuned-teacher KD baseline: fine-tune the teacher on a random hard
/// set, regenerate soft targets with it and train a fresh student on those.
inline void baseline_kd(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto teacher = load_checkpoint(ctx.path("teacher.ckpt"));
    fs::create_directories(ctx.path("baseline"));

    run_stage(ctx, "baseline-finetune-teacher", [&] {
        const auto pool = load_dataset(ctx.path("soft_train.xyz"));
        const auto idx = select_random(pool.size(), c.n_hard_targets, c.selection_seed);
        write_indices(ctx.path("baseline/selection.csv"), idx);
        const auto hard = label_selection(ctx, pool, idx);
        save_dataset(ctx.path("baseline/hard_targets.xyz"), hard);
        auto [best, history] = finetune_on(ctx, teacher, hard, c.finetune_teacher, "teacher_ft");
        save_checkpoint(ctx.path("teacher_ft.ckpt"), best);
        write_history_csv(ctx.path("teacher_ft_history.csv"), history);
        const auto gt = load_dataset(ctx.path("val_ground_truth.xyz"));
        report_mae(ctx, "teacher_ft_vs_ground_truth", evaluate_and_record(ctx, best, gt, "teacher_ft_vs_ground_truth"));
    });

    run_stage(ctx, "baseline-soft-targets", [&] {
        const auto teacher_ft = load_checkpoint(ctx.path("teacher_ft.ckpt"));
        generate_soft_targets(ctx, teacher_ft, "softft");
        analyze_trajectories(ctx, "softft");
    });

    run_stage(ctx, "baseline-train", [&] {
        const auto soft_ft = load_dataset(ctx.path("softft_targets.xyz"));
        auto [tr, va] = split_dataset(soft_ft, c.split_ratio, derive_seed(c.seed, "split/soft"));
        auto student = new_model(c.student, c.systems.species, derive_seed(c.seed, "student/init"));
        fit_statistics(student, tr.frames);
        auto [best, history] = train(student, tr, va, stage_train_config(ctx, c.train_student, "student_softft"));
        save_checkpoint(ctx.path("student_softft.ckpt"), best);
        write_history_csv(ctx.path("student_softft_history.csv"), history);
        const auto gt = load_dataset(ctx.path("val_ground_truth.xyz"));
        report_mae(ctx, "student_softft_vs_ground_truth",
                   evaluate_and_record(ctx, best, gt, "student_softft_vs_ground_truth"));
    });

    run_stage(ctx, "baseline-compare", [&] {
        const double t_low = *std::min_element(c.soft_md.temperatures.begin(), c.soft_md.temperatures.end());
        const auto pre = ground_truth_energies_at(ctx, load_dataset(ctx.path("soft_targets.xyz")), t_low);
        const auto ft = ground_truth_energies_at(ctx, load_dataset(ctx.path("softft_targets.xyz")), t_low);
        std::vector<double> both(pre);
        both.insert(both.end(), ft.begin(), ft.end());
        const auto [lo, hi] = std::minmax_element(both.begin(), both.end());
        const double a = *lo, b = *hi > *lo ? *hi : *lo + 1.0;
        const auto tag = "T" + format_double(t_low);
        write_histogram_csv(ctx.path("analysis/gt_hist_soft_" + tag + ".csv"),
                            histogram_of(pre, c.analysis.histogram_bins, a, b));
        write_histogram_csv(ctx.path("analysis/gt_hist_softft_" + tag + ".csv"),
                            histogram_of(ft, c.analysis.histogram_bins, a, b));
        const auto sp = sample_stats(pre), sf = sample_stats(ft);
        for (const auto& [name, s] : {std::pair{"soft", sp}, std::pair{"softft", sf}}) {
            const std::string k = std::string("gt_energy.") + name + "." + tag;
            ctx.report.set(k + ".mean", s.mean);
            ctx.report.set(k + ".std", s.std);
            ctx.report.set(k + ".sem", s.sem);
            ctx.report.set(k + ".p95", s.p95);
            ctx.report.set(k + ".n", s.n);
        }
        ctx.report.set("gt_energy.temperature", t_low);
        ctx.report.set("gt_energy.mean_gap", sp.mean - sf.mean);
        ctx.report.set("gt_energy.pooled_sem", std::sqrt(sp.sem * sp.sem + sf.sem * sf.sem));
    });
}

/// Students trained from random init on K and multiplier*K ground-truth frames.
inline void scratch(RunContext& ctx) {
    const auto& c = ctx.config;
    const std::size_t k = c.n_hard_targets;
    const std::size_t big = k * c.scratch_multiplier;
    auto fit_scratch = [&](const Dataset& hard, const std::string& tag) {
        if (hard.empty()) throw Error(ErrorKind::EmptyDataset, "no hard targets for the scratch baseline");
        auto [tr, va] = split_dataset(hard, c.split_ratio, derive_seed(c.seed, "split/" + tag));
        auto m = new_model(c.student, c.systems.species, derive_seed(c.seed, "student/init"));
        fit_statistics(m, tr.frames);
        auto [best, history] = train(m, tr, va, stage_train_config(ctx, c.scratch, tag));
        save_checkpoint(ctx.path(tag + ".ckpt"), best);
        write_history_csv(ctx.path(tag + "_history.csv"), history);
        const auto gt = load_dataset(ctx.path("val_ground_truth.xyz"));
        report_mae(ctx, tag + "_vs_ground_truth", evaluate_and_record(ctx, best, gt, tag + "_vs_ground_truth"));
    };
    run_stage(ctx, "scratch-k", [&] {
        fit_scratch(load_dataset(ctx.path("hard_targets.xyz")), "scratch_k");
        ctx.report.set("scratch_k.frames", k);
    });
    run_stage(ctx, "scratch-multiple", [&] {
        const auto student = load_checkpoint(ctx.path("student_soft.ckpt"));
        const auto pool = load_dataset(ctx.path("soft_train.xyz"));
        const auto points = screening_points(ctx, student, pool);
        const auto idx = select_indices(points, big, c.selection, c.selection_seed);
        fs::create_directories(ctx.path("scratch"));
        write_indices(ctx.path("scratch/selection.csv"), idx);
        const auto hard = label_selection(ctx, pool, idx);
        save_dataset(ctx.path("scratch/hard_targets.xyz"), hard);
        fit_scratch(hard, "scratch_multiple");
        ctx.report.set("scratch_multiple.frames", big);
    });
}

/// Potential named in the [md] section: an oracle or a checkpoint path.
struct AnyPotential {
    std::optional<OracleSpec> oracle;
    std::optional<PotentialModel> model;
    EnergyForces operator()(const AtomicSystem& s) const {
        return oracle ? oracle_energy_forces(s, *oracle) : model_energy_forces(*model, s);
    }
};

inline AnyPotential resolve_potential(const RunContext& ctx, const std::string& name) {
    AnyPotential p;
    if (name == "ground_truth") p.oracle = ground_truth_spec(ctx.config);
    else if (name == "teacher_truth") p.oracle = teacher_truth_spec(ctx.config);
    else {
        fs::path path(name);
        if (!fs::exists(path) && fs::exists(ctx.path(name))) path = ctx.path(name);
        p.model = load_checkpoint(path);
    }
    return p;
}

/// Single MD run from the [md] section; writes trajectories/md_s0_T<T>.xyz.
inline void standalone_md(RunContext& ctx) {
    const auto& c = ctx.config;
    const auto pot = resolve_potential(ctx, c.md.potential);
    auto base = initial_systems(c).front();
    base = scale_to_density(base, c.md.density);
    MDConfig m;
    m.timestep = c.md.timestep;
    m.n_steps = c.md.n_steps;
    m.temperature = c.md.temperature;
    m.thermostat = c.md.thermostat;
    m.friction = c.md.friction;
    m.sample_interval = c.md.sample_interval;
    m.equilibration = c.md.equilibration;
    m.seed = derive_seed(c.seed, "md/run");
    const auto init = maxwell_boltzmann_init(base, c.md.temperature, derive_seed(c.seed, "md/velocities"));
    const auto traj = run_md(init, pot, m);
    fs::create_directories(ctx.path("trajectories"));
    xyz::write_file(ctx.path("trajectories/" + trajectory_name("md", {0, c.md.temperature})), traj.frames, true);
    ctx.report.set("md.frames", traj.size());
    if (!traj.frames.empty()) {
        double t = 0.0;
        for (const auto& f : traj.frames) t += kinetic_temperature(f.system, 3 * f.system.size() - 3);
        ctx.report.set("md.mean_kinetic_temperature", t / static_cast<double>(traj.size()));
    }
    analyze_trajectories(ctx, "md");
}

/// Post-processing of every stored trajectory family.
inline void analyze(RunContext& ctx) {
    std::size_t families = 0;
    for (const char* prefix : {"soft", "softft", "md"}) {
        if (list_trajectories(ctx.path("trajectories"), prefix).empty()) continue;
        analyze_trajectories(ctx, prefix);
        ++families;
    }
    if (families == 0) throw Error(ErrorKind::EmptyDataset, "run directory holds no trajectories");
}

struct TimingRow {
    std::string model;
    std::size_t n_atoms{};
    std::size_t params{};
    std::vector<double> seconds_per_step;
    double mean{};
};

/// Wall-clock cost of model-driven MD: `steps` steps, `trials` trials per
/// model and system size; writes timing.csv, timing_summary.csv, timing_report.txt.
inline std::vector<TimingRow> timing(RunContext& ctx, const std::vector<std::pair<std::string, fs::path>>& models) {
    const auto& c = ctx.config;
    const auto kinds = make_species_table(c.systems.species);
    std::vector<TimingRow> rows;
    for (const auto& [name, path] : models) {
        const auto model = load_checkpoint(path);
        for (auto cells : c.timing.cells) {
            auto s = make_lattice(LatticeKind::SimpleCubic, static_cast<int>(cells), 0, kinds, c.systems.densities.front());
            for (std::size_t i = 0; i < s.size(); ++i) s.species[i] = static_cast<int>(i % kinds.size());
            s = scale_to_density(s, c.systems.densities.front());
            TimingRow row{name, s.size(), model.parameter_count(), {}, 0.0};
            for (std::size_t trial = 0; trial < c.timing.trials; ++trial) {
                MDConfig m;
                m.timestep = c.timing.timestep;
                m.n_steps = c.timing.steps;
                m.temperature = c.timing.temperature;
                m.thermostat = Thermostat::Langevin;
                m.friction = 0.01;
                m.sample_interval = c.timing.steps;
                m.equilibration = 0;
                m.seed = derive_seed(c.seed, "timing/md", trial);
                const auto init = maxwell_boltzmann_init(s, m.temperature, derive_seed(c.seed, "timing/velocities", trial));
                const auto t0 = std::chrono::steady_clock::now();
                run_md(init, ModelPotential{&model}, m);
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                row.seconds_per_step.push_back(secs / static_cast<double>(m.n_steps));
            }
            double acc = 0.0;
            for (double x : row.seconds_per_step) acc += x;
            row.mean = acc / static_cast<double>(row.seconds_per_step.size());
            ctx.say("timing " + name + " N=" + std::to_string(row.n_atoms) + ": " + format_double(row.mean) + " s/step");
            rows.push_back(std::move(row));
        }
    }
    std::ofstream raw(ctx.path("timing.csv"));
    raw << "model,n_atoms,trial,seconds_per_step\n";
    std::ofstream sum(ctx.path("timing_summary.csv"));
    sum << "model,n_atoms,params,mean_seconds_per_step\n";
    for (const auto& r : rows) {
        for (std::size_t t = 0; t < r.seconds_per_step.size(); ++t)
            raw << r.model << ',' << r.n_atoms << ',' << t << ',' << format_double(r.seconds_per_step[t]) << '\n';
        sum << r.model << ',' << r.n_atoms << ',' << r.params << ',' << format_double(r.mean) << '\n';
    }
    Report rep;
    rep.set("timing.steps", c.timing.steps);
    rep.set("timing.trials", c.timing.trials);
    for (const auto& r : rows) {
        rep.set("timing." + r.model + ".N" + std::to_string(r.n_atoms) + ".mean_s_per_step", r.mean);
        rep.set("timing." + r.model + ".params", r.params);
    }
    if (models.size() >= 2) {
        for (const auto& a : rows) {
            if (a.model != models[0].first) continue;
            for (const auto& b : rows)
                if (b.model == models[1].first && b.n_atoms == a.n_atoms)
                    rep.set("timing.ratio." + a.model + "_over_" + b.model + ".N" + std::to_string(a.n_atoms),
                            a.mean / b.mean);
        }
    }
    rep.write(ctx.path("timing_report.txt"));
    return rows;
}

/// Config hash, seed and the hashed artifact list of the run directory.
inline void write_manifest(const RunContext& ctx) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(ctx.out))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), ctx.out).generic_string());
    std::sort(files.begin(), files.end());
    std::ofstream os(ctx.path("manifest.txt"));
    if (!os) throw Error(ErrorKind::Io, "cannot write manifest");
    os << "command = " << ctx.command << '\n';
    os << "config_hash = " << hex64(fnv1a64(ctx.config_text)) << '\n';
    os << "seed = " << ctx.config.seed << '\n';
    os << "threads = " << ctx.config.threads << '\n';
    for (const auto& f : files) {
        if (f == "manifest.txt") continue;
        os << "artifact " << f << ' ';
        if (volatile_artifact(f)) {
            os << "volatile\n";
            continue;
        }
        const auto bytes = read_bytes(ctx.path(f));
        os << bytes.size() << ' ' << hex64(fnv1a64(bytes)) << '\n';
    }
}

} // namespace kdnnp
