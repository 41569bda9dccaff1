// Acceptance run: eleven criteria, one PASS/FAIL line each. Criteria 4-7 and
// 9-11 drive the CLI on configs/desk.conf; the rest run in process.

#include <sys/wait.h>

#include <chrono>
#include <cstring>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "kdnnp/md.hpp"
#include "kdnnp/pipeline.hpp"
#include "kdnnp/screening.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace kdnnp;
using namespace kdnnp::testing;

namespace {

const fs::path work = fs::path(KDNNP_TEST_WORK) / "acceptance";

struct Outcome {
    bool pass{};
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int cli(const fs::path& out, const std::string& command) {
    const std::string cmd = std::string(KDNNP_CLI) + " --config " + KDNNP_DESK_CONF + " --out " + out.string() +
                            " --threads 1 " + command + " >> " + (out.string() + ".log") + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("missing " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::map<std::string, double> stage_seconds(const fs::path& dir) {
    std::map<std::string, double> out;
    std::ifstream is(dir / "stage_times.csv");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        const auto comma = line.find(',');
        out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    return out;
}

double sum_stages(const fs::path& dir, std::initializer_list<const char*> names) {
    const auto t = stage_seconds(dir);
    double s = 0.0;
    for (const char* n : names) s += t.at(n);
    return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

Vec3 rotate(const Eigen::Matrix3d& R, const Vec3& v) {
    const Eigen::Vector3d w = R * Eigen::Vector3d(v.x, v.y, v.z);
    return {w(0), w(1), w(2)};
}

Outcome gradients() {
    double worst_oracle = 0.0, worst_model = 0.0;
    const auto spec = argon_spec(6.0, 1.0);
    const auto model = random_model({"Ar"}, {16, 32}, {64, 64}, 3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = random_system(8, 12.5, 2.8, 700 + seed);
        const auto fo = finite_difference_forces(
            s, [&](const AtomicSystem& x) { return oracle_energy_forces(x, spec).energy; }, 1e-5);
        worst_oracle = std::max(worst_oracle, relative_error(oracle_energy_forces(s, spec).forces, fo));
        const auto fm = finite_difference_forces(s, [&](const AtomicSystem& x) { return model_energy(model, x); }, 1e-4);
        worst_model = std::max(worst_model, relative_error(model_energy_forces(model, s).forces, fm));
    }
    return {worst_oracle <= 1e-6 && worst_model <= 1e-5,
            fmt("oracle %.2e <= 1e-6, NNP %.2e <= 1e-5 over 20 frames", worst_oracle, worst_model)};
}

Outcome symmetry() {
    const auto model = random_model({"Ar"}, {16, 32}, {64, 64}, 4);
    const auto spec = argon_spec(6.0, 1.0);
    double inv = 0.0, cov = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = random_system(16, 13.0, 2.4, 40 + seed);
        AtomicSystem t = s, p = s;
        for (auto& x : t.positions) x += Vec3{1.37, -4.2, 0.91};
        wrap_positions(t);
        std::reverse(p.positions.begin(), p.positions.end());
        const double em = model_energy(model, s), eo = oracle_energy_forces(s, spec).energy;
        inv = std::max({inv, std::abs(model_energy(model, t) - em), std::abs(model_energy(model, p) - em),
                        std::abs(oracle_energy_forces(t, spec).energy - eo),
                        std::abs(oracle_energy_forces(p, spec).energy - eo)});

        const auto c = random_cluster(12, 4.5, 30.0, 2.5, 90 + seed);
        const Eigen::Matrix3d R =
            Eigen::AngleAxisd(0.3 + seed, Eigen::Vector3d(1.0, 2.0 - seed, 3.0).normalized()).toRotationMatrix();
        AtomicSystem r = c;
        const Vec3 centre{15, 15, 15};
        for (auto& x : r.positions) x = rotate(R, x - centre) + centre;
        const auto a = model_energy_forces(model, c), b = model_energy_forces(model, r);
        const auto ao = oracle_energy_forces(c, spec), bo = oracle_energy_forces(r, spec);
        for (std::size_t i = 0; i < c.size(); ++i)
            cov = std::max({cov, norm(rotate(R, a.forces[i]) - b.forces[i]), norm(rotate(R, ao.forces[i]) - bo.forces[i])});
    }
    return {inv <= 1e-10 && cov <= 1e-8, fmt("invariance %.2e <= 1e-10 eV, rotation %.2e <= 1e-8 eV/A", inv, cov)};
}

Outcome nve() {
    const auto pot = OraclePotential{argon_spec(5.5, 1.0)};
    auto lattice = make_lattice(LatticeKind::FaceCentredCubic, 2, 0, make_species_table(std::vector<std::string>{"Ar"}), 1.40);
    const auto start = maxwell_boltzmann_init(lattice, 100.0, 5);
    auto st = start_md(start, pot);
    const double e0 = st.current.energy + kinetic_energy(st.system);
    std::mt19937_64 rng(0);
    double drift = 0.0;
    for (int i = 0; i < 2000; ++i) {
        velocity_verlet_step(st, pot, 0.5, Thermostat::None, 0.0, 0.0, rng);
        drift = std::max(drift, std::abs(st.current.energy + kinetic_energy(st.system) - e0) / 32.0);
    }
    for (auto& v : st.system.velocities) v *= -1.0;
    for (int i = 0; i < 2000; ++i) velocity_verlet_step(st, pot, 0.5, Thermostat::None, 0.0, 0.0, rng);
    double back = 0.0;
    for (std::size_t i = 0; i < start.size(); ++i)
        back = std::max(back, norm(minimum_image_displacement(start.positions[i], st.system.positions[i], start.cell)));
    return {drift <= 1e-4 && back <= 1e-8, fmt("|dE| %.2e <= 1e-4 eV/atom over 1 ps, reversal %.2e <= 1e-8 A", drift, back)};
}

Outcome screening_quality(const fs::path& run) {
    // The normalised 3-space points and FPS flags written by the screen stage.
    std::vector<ScreeningPoint> pts;
    std::vector<std::size_t> chosen;
    std::ifstream is(run / "selection_map.csv");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        ScreeningPoint p;
        int flag{};
        ls >> p.source_index >> p.x >> p.y >> p.norm_energy >> flag;
        if (flag) chosen.push_back(p.source_index);
        pts.push_back(p);
    }
    if (pts.empty() || chosen.empty()) return {false, "no screening points"};
    const double fps = min_pairwise_distance(pts, chosen);
    std::vector<double> random;
    for (std::uint64_t s = 0; s < 100; ++s) random.push_back(min_pairwise_distance(pts, select_random(pts.size(), chosen.size(), s)));
    std::nth_element(random.begin(), random.begin() + 50, random.end());
    const double median = random[50];

    std::mt19937_64 rng(8);
    double worst_ratio = 1e300;
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 6 + trial % 7;
        const auto pick = select_random(pts.size(), n, 1000 + static_cast<std::uint64_t>(trial));
        std::vector<ScreeningPoint> sub;
        for (std::size_t i = 0; i < n; ++i) sub.push_back({pts[pick[i]].x, pts[pick[i]].y, pts[pick[i]].norm_energy, i});
        for (std::size_t k = 2; k <= 4; ++k) {
            const double greedy = min_pairwise_distance(sub, select_fps(sub, k));
            double opt = 0.0;
            std::vector<bool> mask(n, false);
            std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k), true);
            do {
                std::vector<std::size_t> idx;
                for (std::size_t i = 0; i < n; ++i)
                    if (mask[i]) idx.push_back(i);
                opt = std::max(opt, min_pairwise_distance(sub, idx));
            } while (std::prev_permutation(mask.begin(), mask.end()));
            if (opt > 0.0) worst_ratio = std::min(worst_ratio, greedy / opt);
        }
    }
    return {fps >= median && worst_ratio >= 0.5,
            fmt("FPS min distance %.4f >= random median %.4f (k=%zu, n=%zu); worst FPS/optimal %.3f >= 0.5", fps,
                median, chosen.size(), pts.size(), worst_ratio)};
}

} // namespace

int main() {
    std::printf("acceptance work directory: %s\n", work.string().c_str());
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path a = work / "a", b = work / "b";

    criterion(1, "gradient exactness", gradients);
    criterion(2, "symmetry suite", symmetry);
    criterion(3, "NVE conservation", nve);

    const int distill_a = cli(a, "distill");
    fs::copy_file(a / "report.txt", work / "report_a_distill.txt");

    criterion(4, "knowledge-transfer parity", [&]() -> Outcome {
        if (distill_a != 0) return {false, fmt("distill exited %d", distill_a)};
        const auto r = Report::read(a / "report.txt");
        const double student = r.number("student_soft_vs_ground_truth.force_mae");
        const double teacher = r.number("teacher_vs_ground_truth.force_mae");
        const double secs = sum_stages(a, {"pretrain-teacher", "soft-targets", "train"});
        return {rel(student, teacher) <= 0.2 && secs <= 600.0,
                fmt("student %.5f vs teacher %.5f eV/A, rel %.3f <= 0.2; %.0f s <= 600 s", student, teacher,
                    rel(student, teacher), secs)};
    });

    criterion(5, "fine-tuning gain", [&]() -> Outcome {
        const auto r = Report::read(a / "report.txt");
        const double ft = r.number("student_ft_vs_ground_truth.force_mae");
        const double soft = r.number("student_soft_vs_ground_truth.force_mae");
        const auto before = load_checkpoint(a / "student_soft.ckpt"), after = load_checkpoint(a / "student_ft.ckpt");
        bool frozen = before.descriptor_segment_size > 0 && before.descriptor_segment_size == after.descriptor_segment_size;
        for (std::size_t k = 0; frozen && k < before.descriptor_segment_size; ++k)
            frozen = std::memcmp(&before.weights[k], &after.weights[k], sizeof(double)) == 0;
        const double secs = sum_stages(a, {"screen", "label", "finetune"});
        return {ft <= 0.75 * soft && frozen && secs <= 300.0,
                fmt("fine-tuned %.5f <= 0.75 x %.5f = %.5f eV/A; descriptor %s; %.0f s <= 300 s", ft, soft,
                    0.75 * soft, frozen ? "bitwise frozen" : "CHANGED", secs)};
    });

    criterion(11, "determinism", [&]() -> Outcome {
        const int code = cli(b, "distill");
        if (code != 0) return {false, fmt("second distill exited %d", code)};
        std::string differs;
        for (const char* f : {"teacher.ckpt", "student_soft.ckpt", "student_ft.ckpt"})
            if (slurp(a / f) != slurp(b / f)) differs += std::string(" ") + f;
        if (slurp(work / "report_a_distill.txt") != slurp(b / "report.txt")) differs += " report.txt";
        return {differs.empty(), differs.empty() ? "checkpoints and report bitwise identical across two runs"
                                                 : "differs:" + differs};
    });

    criterion(8, "screening quality", [&] { return screening_quality(a); });

    criterion(6, "fine-tuned teacher samples lower energies", [&]() -> Outcome {
        const int code = cli(a, "baseline-kd");
        if (code != 0) return {false, fmt("baseline-kd exited %d", code)};
        const auto r = Report::read(a / "report.txt");
        const double gap = r.number("gt_energy.mean_gap"), sem = r.number("gt_energy.pooled_sem");
        const double secs =
            sum_stages(a, {"baseline-finetune-teacher", "baseline-soft-targets", "baseline-train", "baseline-compare"});
        return {gap > 2.0 * sem && secs <= 600.0,
                fmt("T=%s K: mean(soft) - mean(fine-tuned) = %.5f > 2 x %.5f eV/atom; %.0f s <= 600 s",
                    r.get("gt_energy.temperature").c_str(), gap, sem, secs)};
    });

    criterion(7, "high-energy coverage", [&]() -> Outcome {
        const auto r = Report::read(a / "report.txt");
        const std::string t = r.get("gt_energy.temperature");
        const double soft = r.number("gt_energy.soft.T" + t + ".p95");
        const double ft = r.number("gt_energy.softft.T" + t + ".p95");
        return {soft > ft, fmt("p95 pre-trained %.5f > fine-tuned %.5f eV/atom", soft, ft)};
    });

    criterion(9, "data efficiency", [&]() -> Outcome {
        const int code = cli(a, "scratch");
        if (code != 0) return {false, fmt("scratch exited %d", code)};
        const auto r = Report::read(a / "report.txt");
        const double kd = r.number("student_ft_vs_ground_truth.force_mae");
        const double k = r.number("scratch_k_vs_ground_truth.force_mae");
        const double big = r.number("scratch_multiple_vs_ground_truth.force_mae");
        const double secs = sum_stages(a, {"scratch-k", "scratch-multiple"});
        return {kd <= k && rel(kd, big) <= 0.25 && secs <= 1800.0,
                fmt("KD %.5f <= scratch(K) %.5f; |KD - scratch(%s frames)| / scratch = %.3f <= 0.25 (%.5f); %.0f s <= 1800 s",
                    kd, k, r.get("scratch_multiple.frames").c_str(), rel(kd, big), big, secs)};
    });

    criterion(10, "timing direction", [&]() -> Outcome {
        const int code = cli(a, "timing");
        if (code != 0) return {false, fmt("timing exited %d", code)};
        // Wall-clock results live in timing_report.txt, not in report.txt.
        const auto r = Report::read(a / "timing_report.txt");
        const double tp = r.number("timing.teacher.params"), sp = r.number("timing.student.params");
        std::string detail = fmt("params %.0f / %.0f = %.1f >= 4; s/step ratio", tp, sp, tp / sp);
        bool ok = tp >= 4.0 * sp;
        std::size_t seen = 0;
        for (const auto& [key, value] : r.entries()) {
            if (key.rfind("timing.ratio.teacher_over_student.", 0) != 0) continue;
            const double ratio = parse_double(value);
            ok = ok && ratio > 1.0;
            detail += fmt(" %s=%.2f", key.substr(key.rfind('.') + 1).c_str(), ratio);
            ++seen;
        }
        const double secs = stage_seconds(a).at("timing");
        return {ok && seen > 0 && secs <= 600.0, detail + fmt(" > 1; %.0f s <= 600 s", secs)};
    });

    std::printf("%s: %d of 11 criteria failed\n", failures ? "FAILED" : "PASSED", failures);
    return failures ? 1 : 0;
}
