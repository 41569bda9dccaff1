#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "kdnnp/config.hpp"
#include "kdnnp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kdnnp;

namespace {

enum ExitCode { Ok = 0, Failure = 1, ConfigError = 2, MdUnstable = 3, IoError = 4 };

int exit_code_for(ErrorKind k) {
    switch (k) {
    case ErrorKind::ParseError:
    case ErrorKind::UnknownKey:
    case ErrorKind::MissingRequired:
    case ErrorKind::UnitRangeError: return ConfigError;
    case ErrorKind::NonFiniteState: return MdUnstable;
    case ErrorKind::Io:
    case ErrorKind::Format: return IoError;
    default: return Failure;
    }
}

std::string read_text(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw Error(ErrorKind::Io, "cannot open config '" + p.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path student_for_timing(const RunContext& ctx) {
    return fs::exists(ctx.path("student_ft.ckpt")) ? ctx.path("student_ft.ckpt") : ctx.path("student_soft.ckpt");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdnnp: knowledge distillation of neural network potentials"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer("Exit status: 0 success, 1 error, 2 configuration error, 3 MD instability, 4 I/O error.\n"
               "KDNNP_OUT sets the output directory when --out is not given.\n\nConfiguration keys:\n" +
               config_reference());

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed{};
    unsigned threads{};
    bool verbose{};
    std::string teacher_ckpt, student_ckpt;

    auto* seed_opt = app.add_option("--seed", seed, "override [run] seed");
    auto* threads_opt = app.add_option("--threads", threads, "override [run] threads (1 = bitwise reproducible)");
    app.add_option("--config", config_path, "pipeline configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "run directory");
    app.add_flag("--verbose,-v", verbose, "progress messages on stderr");

    const char* names[] = {"pretrain-teacher", "soft-targets", "train", "screen", "label", "finetune",
                           "distill", "baseline-kd", "scratch", "md", "analyze", "timing"};
    const char* help[] = {"train the teacher on teacher-truth MD frames",
                          "teacher-driven MD, 8:2 split, ground-truth validation labels",
                          "train the student on the soft training split",
                          "project student features and select hard targets",
                          "label the selected frames with the ground-truth oracle",
                          "fine-tune the student on hard targets with the descriptor frozen",
                          "run pretrain-teacher through finetune",
                          "fine-tuned-teacher distillation baseline",
                          "students trained from scratch on K and multiplier*K hard targets",
                          "single MD run from the [md] section",
                          "regenerate histograms and MSD from stored trajectories",
                          "s/step of teacher and student MD"};
    for (std::size_t i = 0; i < std::size(names); ++i) {
        auto* sub = app.add_subcommand(names[i], help[i]);
        if (std::string(names[i]) == "timing") {
            sub->add_option("--teacher", teacher_ckpt, "teacher checkpoint (default <out>/teacher.ckpt)");
            sub->add_option("--student", student_ckpt, "student checkpoint (default <out>/student_ft.ckpt)");
        }
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const std::string text = read_text(config_path);
        auto cfg = parse_config_text(text);
        if (*seed_opt) cfg.seed = seed;
        if (*threads_opt) cfg.threads = threads;
        if (out_dir.empty()) {
            const char* env = std::getenv("KDNNP_OUT");
            out_dir = env && *env ? env : "run";
        }
        auto ctx = make_context(std::move(cfg), out_dir, text, command, verbose);

        if (command == "distill") distill(ctx);
        else if (command == "pretrain-teacher") run_stage(ctx, command, [&] { pretrain_teacher(ctx); });
        else if (command == "soft-targets") run_stage(ctx, command, [&] { soft_targets(ctx); });
        else if (command == "train") run_stage(ctx, command, [&] { train_student(ctx); });
        else if (command == "screen") run_stage(ctx, command, [&] { screen(ctx); });
        else if (command == "label") run_stage(ctx, command, [&] { label(ctx); });
        else if (command == "finetune") run_stage(ctx, command, [&] { finetune(ctx); });
        else if (command == "baseline-kd") baseline_kd(ctx);
        else if (command == "scratch") scratch(ctx);
        else if (command == "md") run_stage(ctx, command, [&] { standalone_md(ctx); });
        else if (command == "analyze") run_stage(ctx, command, [&] { analyze(ctx); });
        else if (command == "timing") {
            run_stage(ctx, command, [&] {
                const fs::path t = teacher_ckpt.empty() ? ctx.path("teacher.ckpt") : fs::path(teacher_ckpt);
                const fs::path s = student_ckpt.empty() ? student_for_timing(ctx) : fs::path(student_ckpt);
                timing(ctx, {{"teacher", t}, {"student", s}});
            });
        }
        save_report(ctx);
        write_manifest(ctx);
    } catch (const Error& e) {
        std::cerr << "kdnnp " << command << ": " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "kdnnp " << command << ": " << e.what() << '\n';
        return Failure;
    }
    return Ok;
}
