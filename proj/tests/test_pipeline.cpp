#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kdnnp/pipeline.hpp"

namespace fs = std::filesystem;

// End-to-end runs of the CLI on a tiny configuration (27 atoms, a few hundred steps).

namespace {

const fs::path work = fs::path(KDNNP_TEST_WORK) / "pipeline";

int cli(const fs::path& config, const fs::path& out, const std::string& command) {
    const std::string cmd = std::string(KDNNP_CLI) + " --config " + config.string() + " --out " + out.string() +
                            " --threads 1 " + command + " > " + (out.string() + ".log") + " 2>&1";
    fs::create_directories(out.parent_path());
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path config_with(const std::string& name, const std::string& extra) {
    fs::create_directories(work);
    const fs::path p = work / (name + ".conf");
    std::ofstream os(p);
    os << slurp(KDNNP_TINY_CONF) << extra;
    return p;
}

/// One distilled run shared by the tests below.
const fs::path& distilled() {
    static const fs::path dir = [] {
        const fs::path d = work / "a";
        fs::remove_all(d);
        EXPECT_EQ(cli(KDNNP_TINY_CONF, d, "distill"), 0) << slurp(d.string() + ".log");
        return d;
    }();
    return dir;
}

} // namespace

TEST(Pipeline, DistillWritesEveryArtifact) {
    const auto& d = distilled();
    for (const char* f : {"teacher.ckpt", "teacher_data.xyz", "soft_train.xyz", "soft_val.xyz", "val_ground_truth.xyz",
                          "student_soft.ckpt", "selection.csv", "selection_map.csv", "hard_targets.xyz",
                          "student_ft.ckpt", "report.txt", "manifest.txt", "stage_times.csv"})
        EXPECT_TRUE(fs::exists(d / f)) << f;
    const auto report = kdnnp::Report::read(d / "report.txt");
    EXPECT_EQ(report.get("hard.frames"), "10");
    EXPECT_EQ(report.get("student_ft.descriptor_frozen"), "true");
    EXPECT_EQ(report.get("selection.mode"), "fps");
}

TEST(Pipeline, RerunIsBitwiseIdentical) {
    const auto& a = distilled();
    const fs::path b = work / "b";
    fs::remove_all(b);
    ASSERT_EQ(cli(KDNNP_TINY_CONF, b, "distill"), 0);
    for (const char* f : {"teacher.ckpt", "student_soft.ckpt", "student_ft.ckpt", "report.txt", "manifest.txt",
                          "hard_targets.xyz", "selection.csv"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Pipeline, StagesCommunicateOnlyThroughFiles) {
    const auto& a = distilled();
    const fs::path c = work / "c";
    fs::remove_all(c);
    fs::copy(a, c, fs::copy_options::recursive);
    fs::remove(c / "hard_targets.xyz");
    fs::remove(c / "student_ft.ckpt");
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "label"), 0);
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "finetune"), 0);
    EXPECT_EQ(slurp(a / "hard_targets.xyz"), slurp(c / "hard_targets.xyz"));
    EXPECT_EQ(slurp(a / "student_ft.ckpt"), slurp(c / "student_ft.ckpt"));
    EXPECT_EQ(slurp(a / "report.txt"), slurp(c / "report.txt"));
}

TEST(Pipeline, AnalyzeReproducesStoredAnalysis) {
    const auto& a = distilled();
    const fs::path c = work / "analyze";
    fs::remove_all(c);
    fs::copy(a, c, fs::copy_options::recursive);
    fs::remove_all(c / "analysis");
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "analyze"), 0);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(a / "analysis")) {
        EXPECT_EQ(slurp(e.path()), slurp(c / "analysis" / e.path().filename())) << e.path();
        ++compared;
    }
    EXPECT_GT(compared, 0u);
    EXPECT_EQ(slurp(a / "report.txt"), slurp(c / "report.txt"));
}

TEST(Pipeline, RandomSelectionCompletes) {
    const fs::path d = work / "random";
    fs::remove_all(d);
    ASSERT_EQ(cli(config_with("random", "[run]\nselection = random\n"), d, "distill"), 0);
    const auto report = kdnnp::Report::read(d / "report.txt");
    EXPECT_EQ(report.get("selection.mode"), "random");
    EXPECT_TRUE(report.has("student_ft_vs_ground_truth.force_mae"));
    // Same upstream stages as the FPS run.
    EXPECT_EQ(slurp(distilled() / "student_soft.ckpt"), slurp(d / "student_soft.ckpt"));
}

TEST(Pipeline, BaselineScratchAndTimingComplete) {
    const auto& a = distilled();
    const fs::path c = work / "downstream";
    fs::remove_all(c);
    fs::copy(a, c, fs::copy_options::recursive);
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "baseline-kd"), 0) << slurp(c.string() + ".log");
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "scratch"), 0) << slurp(c.string() + ".log");
    ASSERT_EQ(cli(KDNNP_TINY_CONF, c, "timing"), 0) << slurp(c.string() + ".log");
    const auto report = kdnnp::Report::read(c / "report.txt");
    for (const char* k : {"teacher_ft_vs_ground_truth.force_mae", "student_softft_vs_ground_truth.force_mae",
                          "gt_energy.mean_gap", "gt_energy.pooled_sem", "scratch_k_vs_ground_truth.force_mae",
                          "scratch_multiple_vs_ground_truth.force_mae"})
        EXPECT_TRUE(report.has(k)) << k;
    EXPECT_TRUE(fs::exists(c / "timing.csv"));
    const auto timing = kdnnp::Report::read(c / "timing_report.txt");
    EXPECT_TRUE(timing.has("timing.ratio.teacher_over_student.N27"));
    EXPECT_FALSE(report.has("timing.ratio.teacher_over_student.N27"));
    EXPECT_TRUE(fs::exists(c / "baseline" / "selection.csv"));
}

TEST(Pipeline, StandaloneMd) {
    const fs::path d = work / "md";
    fs::remove_all(d);
    ASSERT_EQ(cli(KDNNP_TINY_CONF, d, "md"), 0) << slurp(d.string() + ".log");
    EXPECT_TRUE(fs::exists(d / "trajectories" / "md_s0_T300.xyz"));
    EXPECT_TRUE(kdnnp::Report::read(d / "report.txt").has("diffusion.md_s0_T300.cm2_per_s"));
}

TEST(Pipeline, ExitCodes) {
    const fs::path d = work / "codes";
    fs::remove_all(d);
    EXPECT_EQ(cli(config_with("bad", "[run]\nsed = 3\n"), d, "distill"), 2);
    EXPECT_EQ(cli(config_with("range", "[soft_md]\ntimestep = -0.5\n"), d, "distill"), 2);
    // A stage whose input file is missing.
    EXPECT_EQ(cli(KDNNP_TINY_CONF, d, "finetune"), 4);
}

TEST(Pipeline, ScratchWithoutHardTargetsIsEmptyDataset) {
    const auto& a = distilled();
    const fs::path c = work / "empty";
    fs::remove_all(c);
    fs::copy(a, c, fs::copy_options::recursive);
    std::ofstream(c / "hard_targets.xyz", std::ios::trunc).close();
    EXPECT_EQ(cli(KDNNP_TINY_CONF, c, "scratch"), 1);
    EXPECT_NE(slurp(c.string() + ".log").find("EmptyDataset"), std::string::npos);
}
