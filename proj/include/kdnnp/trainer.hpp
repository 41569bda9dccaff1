#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "kdnnp/dataset.hpp"
#include "kdnnp/format.hpp"
#include "kdnnp/model.hpp"
#include "kdnnp/parallel.hpp"

namespace kdnnp {

struct TrainConfig {
    std::size_t steps{50000};
    std::size_t batch_size{4};
    double lr_start{1e-3};
    double lr_end{1e-8};
    std::size_t decay_steps{500};
    double energy_weight{1.0};
    double force_weight{10.0};
    bool freeze_descriptor{false};
    std::uint64_t seed{0};
    std::size_t eval_interval{1000};
    double clip_norm{10.0};
    unsigned threads{1};
};

struct TrainRecord {
    std::size_t step{};
    double lr{};
    double loss{};
    double energy_mae{}; // eV/atom
    double force_mae{};  // eV/Å
};

struct TrainHistory {
    std::vector<TrainRecord> records;
    std::size_t best_step{};
};

/// Staircase exponential decay that reaches lr_end on the final stair.
inline double lr_schedule(std::size_t step, const TrainConfig& c) {
    if (c.steps == 0 || c.decay_steps == 0) return c.lr_start;
    const std::size_t stair = (step / c.decay_steps) * c.decay_steps;
    if (stair == 0) return c.lr_start;
    if (stair >= c.steps) return c.lr_end;
    const double exponent = static_cast<double>(stair) / static_cast<double>(c.steps);
    return c.lr_start * std::pow(c.lr_end / c.lr_start, exponent);
}

/// w_e (dE/N)^2 + w_f/(3N) sum |dF|^2.
inline double loss(const EnergyForces& predicted, const EnergyForces& label, std::size_t n_atoms, double w_e,
                   double w_f) {
    if (predicted.forces.size() != label.forces.size() || predicted.forces.size() != n_atoms)
        throw Error(ErrorKind::InvalidArgument, "prediction and label shapes differ");
    const double n = static_cast<double>(n_atoms);
    const double de = (predicted.energy - label.energy) / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < n_atoms; ++i) {
        const Vec3 d = predicted.forces[i] - label.forces[i];
        sq += dot(d, d);
    }
    return w_e * de * de + w_f / (3.0 * n) * sq;
}

struct MaeResult {
    double energy_mae{}; // eV/atom
    double force_mae{};  // eV/Å
};

inline MaeResult evaluate_mae(const PotentialModel& model, const Dataset& dataset, unsigned threads = 1) {
    if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "cannot evaluate on an empty dataset");
    struct Partial {
        double e{}, f{};
        std::size_t components{};
    };
    std::vector<Partial> parts(dataset.size());
    parallel_for(dataset.size(), threads, [&](std::size_t k) {
        const auto& fr = dataset.frames[k];
        const auto pred = model_energy_forces(model, fr.system);
        Partial p;
        p.e = std::abs(pred.energy - fr.energy) / static_cast<double>(fr.system.size());
        for (std::size_t i = 0; i < fr.system.size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) p.f += std::abs(pred.forces[i][c] - fr.forces[i][c]);
        p.components = 3 * fr.system.size();
        parts[k] = p;
    });
    double e = 0.0, f = 0.0;
    std::size_t comps = 0;
    for (const auto& p : parts) {
        e += p.e;
        f += p.f;
        comps += p.components;
    }
    return {e / static_cast<double>(dataset.size()), f / static_cast<double>(comps)};
}

/// Adam on the energy+force loss. Returns the snapshot with the lowest
/// validation force MAE among the evaluation points (step 0 included).
inline std::pair<PotentialModel, TrainHistory> train(PotentialModel model, const Dataset& train_set,
                                                     const Dataset& val_set, const TrainConfig& c) {
    TrainHistory history;
    if (c.steps == 0) return {std::move(model), std::move(history)};
    if (train_set.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
    if (c.batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be positive");
    const Dataset& eval_set = val_set.empty() ? train_set : val_set;

    const std::size_t n_params = model.weights.size();
    const std::size_t first = c.freeze_descriptor ? model.descriptor_segment_size : 0;
    std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double beta1_t = 1.0, beta2_t = 1.0;

    std::mt19937_64 rng(c.seed);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_index = [&] {
        if (cursor == order.size()) {
            order = seeded_permutation(train_set.size(), rng());
            cursor = 0;
        }
        return order[cursor++];
    };

    PotentialModel best = model;
    double best_mae = std::numeric_limits<double>::infinity();
    double loss_acc = 0.0;
    std::size_t loss_count = 0;
    auto evaluate = [&](std::size_t step) {
        const auto mae = evaluate_mae(model, eval_set, c.threads);
        history.records.push_back(
            {step, lr_schedule(step, c), loss_count ? loss_acc / static_cast<double>(loss_count) : 0.0,
             mae.energy_mae, mae.force_mae});
        loss_acc = 0.0;
        loss_count = 0;
        if (mae.force_mae < best_mae) {
            best_mae = mae.force_mae;
            best = model;
            history.best_step = step;
        }
    };
    evaluate(0);

    const std::size_t batch = std::min(c.batch_size, train_set.size());
    std::vector<std::vector<double>> frame_grads(batch, std::vector<double>(n_params));
    std::vector<double> frame_loss(batch);
    std::vector<std::size_t> picks(batch);
    std::vector<double> grad(n_params);

    for (std::size_t step = 0; step < c.steps; ++step) {
        for (auto& p : picks) p = next_index();
        parallel_for(batch, c.threads, [&](std::size_t b) {
            std::fill(frame_grads[b].begin(), frame_grads[b].end(), 0.0);
            frame_loss[b] = loss_and_gradient(model, train_set.frames[picks[b]], c.energy_weight, c.force_weight,
                                              c.freeze_descriptor, frame_grads[b])
                                .loss;
        });
        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            batch_loss += frame_loss[b];
            for (std::size_t k = first; k < n_params; ++k) grad[k] += frame_grads[b][k];
        }
        const double inv_b = 1.0 / static_cast<double>(batch);
        batch_loss *= inv_b;
        if (!std::isfinite(batch_loss))
            throw Error(ErrorKind::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step),
                        static_cast<std::int64_t>(step));
        double norm_sq = 0.0;
        for (std::size_t k = first; k < n_params; ++k) {
            grad[k] *= inv_b;
            norm_sq += grad[k] * grad[k];
        }
        const double gnorm = std::sqrt(norm_sq);
        const double clip = (c.clip_norm > 0.0 && gnorm > c.clip_norm) ? c.clip_norm / gnorm : 1.0;

        const double lr = lr_schedule(step, c);
        beta1_t *= beta1;
        beta2_t *= beta2;
        const double corr1 = 1.0 / (1.0 - beta1_t);
        const double corr2 = 1.0 / (1.0 - beta2_t);
        for (std::size_t k = first; k < n_params; ++k) {
            const double g = grad[k] * clip;
            m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
            m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
            model.weights[k] -= lr * (m1[k] * corr1) / (std::sqrt(m2[k] * corr2) + eps);
        }
        loss_acc += batch_loss;
        ++loss_count;
        const std::size_t done = step + 1;
        if ((c.eval_interval > 0 && done % c.eval_interval == 0) || done == c.steps) evaluate(done);
    }
    return {std::move(best), std::move(history)};
}

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << "step,lr,loss,e_mae,f_mae\n";
    for (const auto& r : h.records)
        os << r.step << ',' << format_double(r.lr) << ',' << format_double(r.loss) << ','
           << format_double(r.energy_mae) << ',' << format_double(r.force_mae) << '\n';
}

} // namespace kdnnp
