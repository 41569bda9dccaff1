#pragma once

// Neural network potential: radial descriptor -> descriptor-refinement MLP ->
// fitting MLP -> per-atom energy. Total energy is the sum of atomic energies
// plus a per-species shift. Derivatives are written out by hand:
//   * forces by reverse-mode through the networks and the radial terms,
//   * training gradients of the force loss by a reverse pass over the
//     forward tangent (directional derivative of E along the force residual).

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kdnnp/dataset.hpp"
#include "kdnnp/descriptor.hpp"
#include "kdnnp/error.hpp"

namespace kdnnp {

struct NetworkSpec {
    std::vector<std::size_t> descriptor_layers{25, 50, 100};
    std::vector<std::size_t> fitting_layers{240, 240, 240};
    std::string activation{"tanh"};
    bool residual_connections{true};
};

/// Skip path added to a layer's tanh output: identity when the widths
/// match; in the descriptor net also [x; x] when the width doubles.
/// The input layer has none.
enum class Skip { None, Identity, Doubling };

struct LayerLayout {
    std::size_t in{};
    std::size_t out{};
    std::size_t weight_offset{}; // out x in, column-major
    std::size_t bias_offset{};
    Skip skip{Skip::None};
};

struct PotentialModel {
    std::vector<std::string> species; // model species order
    DescriptorSpec descriptor;
    NetworkSpec network;
    std::vector<double> weights;
    std::vector<double> feature_mean;    // input normalisation, fixed at init
    std::vector<double> feature_inv_std;
    std::vector<double> energy_shift;    // eV per atom, per species
    std::uint64_t init_seed{};

    // Filled in from `network` and `descriptor` by `finalize_layout`.
    std::vector<LayerLayout> layers; // descriptor-net layers first, then fitting-net layers
    std::size_t n_descriptor_layers{};
    std::size_t output_weight_offset{};
    std::size_t output_bias_offset{};
    std::size_t descriptor_segment_size{}; // weights[0, descriptor_segment_size) is the descriptor net

    std::size_t input_dim() const noexcept {
        return descriptor.feature_dim() + (species.size() > 1 ? species.size() : 0);
    }
    std::size_t feature_width() const noexcept {
        return layers.empty() ? input_dim() : layers.back().out;
    }
    std::size_t parameter_count() const noexcept { return weights.size(); }
};

inline void finalize_layout(PotentialModel& m) {
    if (m.network.activation != "tanh")
        throw Error(ErrorKind::InvalidArgument, "unsupported activation '" + m.network.activation + "'");
    if (m.network.fitting_layers.empty())
        throw Error(ErrorKind::InvalidArgument, "fitting network needs at least one hidden layer");
    m.layers.clear();
    std::size_t offset = 0;
    std::size_t width = m.input_dim();
    auto add = [&](std::size_t out, bool descriptor_net) {
        LayerLayout l;
        l.in = width;
        l.out = out;
        l.weight_offset = offset;
        offset += l.in * l.out;
        l.bias_offset = offset;
        offset += l.out;
        // The first layer reads standardised raw features and never gets a skip.
        const bool skips = m.network.residual_connections && !m.layers.empty();
        if (skips && l.in == l.out) l.skip = Skip::Identity;
        else if (skips && descriptor_net && l.out == 2 * l.in) l.skip = Skip::Doubling;
        m.layers.push_back(l);
        width = out;
    };
    for (auto w : m.network.descriptor_layers) add(w, true);
    m.n_descriptor_layers = m.layers.size();
    m.descriptor_segment_size = offset;
    for (auto w : m.network.fitting_layers) add(w, false);
    m.output_weight_offset = offset;
    offset += width;
    m.output_bias_offset = offset;
    offset += 1;
    if (!m.weights.empty() && m.weights.size() != offset)
        throw Error(ErrorKind::Format, "weight vector length does not match the network layout");
    m.weights.resize(offset, 0.0);
    if (m.feature_mean.empty()) m.feature_mean.assign(m.descriptor.feature_dim(), 0.0);
    if (m.feature_inv_std.empty()) m.feature_inv_std.assign(m.descriptor.feature_dim(), 1.0);
    if (m.energy_shift.empty()) m.energy_shift.assign(m.species.size(), 0.0);
}

/// Glorot-uniform weights, zero biases, zero energy shift and identity normalisation.
inline PotentialModel init_model(std::vector<std::string> species, DescriptorSpec descriptor, NetworkSpec network,
                                 std::uint64_t seed) {
    if (species.empty() || descriptor.n_species != species.size())
        throw Error(ErrorKind::InvalidArgument, "descriptor species count must match the species list");
    PotentialModel m;
    m.species = std::move(species);
    m.descriptor = std::move(descriptor);
    m.network = std::move(network);
    m.init_seed = seed;
    finalize_layout(m);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (std::size_t k = 0; k < fan_in * fan_out; ++k) m.weights[offset + k] = dist(rng);
    };
    for (const auto& l : m.layers) fill(l.weight_offset, l.in, l.out);
    fill(m.output_weight_offset, m.feature_width(), 1);
    return m;
}

/// Maps each atom to the model's species index; UnknownSpecies otherwise.
inline std::vector<int> model_species_of(const PotentialModel& model, const AtomicSystem& system) {
    std::vector<int> lookup(system.kinds.size(), -1);
    for (std::size_t k = 0; k < system.kinds.size(); ++k) {
        for (std::size_t t = 0; t < model.species.size(); ++t)
            if (model.species[t] == system.kinds[k].symbol) lookup[k] = static_cast<int>(t);
    }
    std::vector<int> out(system.size());
    for (std::size_t i = 0; i < system.size(); ++i) {
        const int t = lookup[static_cast<std::size_t>(system.species[i])];
        if (t < 0)
            throw Error(ErrorKind::UnknownSpecies,
                        "species '" + system.kinds[static_cast<std::size_t>(system.species[i])].symbol +
                            "' is not known to the model");
        out[i] = t;
    }
    return out;
}

namespace detail {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Owning copies, not Maps: Eigen's vectorised kernels pick their summation order
// from operand alignment, which for std::vector storage varies between allocations.
inline MatrixXd layer_weight(const PotentialModel& m, const LayerLayout& l) {
    return Eigen::Map<const MatrixXd>(m.weights.data() + l.weight_offset, static_cast<Index>(l.out),
                                      static_cast<Index>(l.in));
}
inline VectorXd layer_bias(const PotentialModel& m, const LayerLayout& l) {
    return Eigen::Map<const VectorXd>(m.weights.data() + l.bias_offset, static_cast<Index>(l.out));
}
inline VectorXd output_weight(const PotentialModel& m) {
    return Eigen::Map<const VectorXd>(m.weights.data() + m.output_weight_offset, static_cast<Index>(m.feature_width()));
}

/// Adds the skip path of `l` from `x` (in x n) onto `y` (out x n).
inline void add_skip(const LayerLayout& l, const MatrixXd& x, MatrixXd& y) {
    if (l.skip == Skip::Identity) {
        y += x;
    } else if (l.skip == Skip::Doubling) {
        const auto in = static_cast<Index>(l.in);
        y.topRows(in) += x;
        y.bottomRows(in) += x;
    }
}

/// Adjoint of the skip path: accumulates dL/dx from `g` = dL/dy.
inline void add_skip_adjoint(const LayerLayout& l, const MatrixXd& g, MatrixXd& dx) {
    if (l.skip == Skip::Identity) {
        dx += g;
    } else if (l.skip == Skip::Doubling) {
        const auto in = static_cast<Index>(l.in);
        dx += g.topRows(in) + g.bottomRows(in);
    }
}

struct Forward {
    DescriptorBatch desc;
    std::vector<MatrixXd> act;    // act[0] = normalised input, act[l] = output of layer l
    std::vector<MatrixXd> hidden; // hidden[l-1] = tanh(z_l)
    VectorXd atom_energy;
    double energy{};
};

inline Forward forward(const PotentialModel& m, const AtomicSystem& system) {
    Forward f;
    const auto species = model_species_of(m, system);
    f.desc = compute_descriptor_batch(system, species, m.descriptor);
    const auto n = static_cast<Index>(system.size());
    const auto nf = static_cast<Index>(m.descriptor.feature_dim());

    MatrixXd a0(static_cast<Index>(m.input_dim()), n);
    const Eigen::Map<const VectorXd> mean(m.feature_mean.data(), nf);
    const Eigen::Map<const VectorXd> inv_std(m.feature_inv_std.data(), nf);
    a0.topRows(nf) = (f.desc.features.colwise() - mean).array().colwise() * inv_std.array();
    if (m.species.size() > 1) {
        a0.bottomRows(static_cast<Index>(m.species.size())).setZero();
        for (Index i = 0; i < n; ++i) a0(nf + species[static_cast<std::size_t>(i)], i) = 1.0;
    }
    f.act.reserve(m.layers.size() + 1);
    f.hidden.reserve(m.layers.size());
    f.act.push_back(std::move(a0));
    for (const auto& l : m.layers) {
        MatrixXd z = layer_weight(m, l) * f.act.back();
        z.colwise() += layer_bias(m, l);
        MatrixXd h = z.array().tanh().matrix();
        MatrixXd a = h;
        add_skip(l, f.act.back(), a);
        f.hidden.push_back(std::move(h));
        f.act.push_back(std::move(a));
    }
    f.atom_energy = (output_weight(m).transpose() * f.act.back()).transpose();
    f.atom_energy.array() += m.weights[m.output_bias_offset];
    for (Index i = 0; i < n; ++i) f.atom_energy(i) += m.energy_shift[static_cast<std::size_t>(species[static_cast<std::size_t>(i)])];
    f.energy = f.atom_energy.sum();
    return f;
}

/// dE/d(raw features), feature_dim x n_atoms.
inline MatrixXd energy_feature_gradient(const PotentialModel& m, const Forward& f) {
    const auto n = f.act.front().cols();
    MatrixXd da = output_weight(m) * Eigen::RowVectorXd::Ones(n);
    for (std::size_t li = m.layers.size(); li-- > 0;) {
        const auto& l = m.layers[li];
        const MatrixXd dz = da.array() * (1.0 - f.hidden[li].array().square());
        MatrixXd prev = layer_weight(m, l).transpose() * dz;
        add_skip_adjoint(l, da, prev);
        da = std::move(prev);
    }
    const auto nf = static_cast<Index>(m.descriptor.feature_dim());
    const Eigen::Map<const VectorXd> inv_std(m.feature_inv_std.data(), nf);
    return da.topRows(nf).array().colwise() * inv_std.array();
}

inline std::vector<Vec3> forces_from_feature_gradient(const PotentialModel& m, const Forward& f,
                                                      const MatrixXd& dEdG) {
    std::vector<Vec3> forces(f.act.front().cols(), Vec3{});
    const std::size_t nr = m.descriptor.radial.size();
    const auto& pairs = f.desc.neighbors.pairs;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        const auto ti = static_cast<std::size_t>(f.desc.species[pr.i]);
        const auto tj = static_cast<std::size_t>(f.desc.species[pr.j]);
        const auto ci = static_cast<Index>(m.descriptor.channel(tj, 0));
        const auto cj = static_cast<Index>(m.descriptor.channel(ti, 0));
        double dEdr = 0.0;
        for (std::size_t k = 0; k < nr; ++k) {
            const auto kk = static_cast<Index>(k);
            dEdr += f.desc.pair_grad(kk, static_cast<Index>(p)) *
                    (dEdG(ci + kk, static_cast<Index>(pr.i)) + dEdG(cj + kk, static_cast<Index>(pr.j)));
        }
        const Vec3 g = pr.displacement * (dEdr / pr.distance);
        forces[pr.i] += g;
        forces[pr.j] -= g;
    }
    return forces;
}

} // namespace detail

inline EnergyForces model_energy_forces(const PotentialModel& model, const AtomicSystem& system) {
    const auto f = detail::forward(model, system);
    const auto dEdG = detail::energy_feature_gradient(model, f);
    return {f.energy, detail::forces_from_feature_gradient(model, f, dEdG)};
}

inline double model_energy(const PotentialModel& model, const AtomicSystem& system) {
    return detail::forward(model, system).energy;
}

/// Mean over atoms of the last fitting-layer activations.
inline Eigen::VectorXd extract_features(const PotentialModel& model, const AtomicSystem& system) {
    const auto f = detail::forward(model, system);
    return f.act.back().rowwise().mean();
}

struct LossTerms {
    double loss{};
    double energy_error{}; // predicted - label, eV
    double force_sq_sum{}; // sum of squared force component errors
};

/// Energy+force loss of one frame and its parameter gradient, accumulated
/// into `grad` (same layout as model.weights). With `freeze_descriptor`
/// the descriptor segment of `grad` is left untouched.
///   L = w_e (dE/N)^2 + w_f/(3N) sum |dF|^2
inline LossTerms loss_and_gradient(const PotentialModel& m, const LabeledFrame& frame, double w_e, double w_f,
                                   bool freeze_descriptor, std::span<double> grad) {
    using namespace detail;
    const auto& sys = frame.system;
    const auto n = static_cast<Index>(sys.size());
    const double natoms = static_cast<double>(sys.size());

    const auto f = forward(m, sys);
    const auto dEdG = energy_feature_gradient(m, f);
    const auto forces = forces_from_feature_gradient(m, f, dEdG);

    LossTerms out;
    out.energy_error = f.energy - frame.energy;
    std::vector<Vec3> resid(sys.size());
    for (std::size_t i = 0; i < sys.size(); ++i) {
        resid[i] = forces[i] - frame.forces[i];
        out.force_sq_sum += dot(resid[i], resid[i]);
    }
    const double e_norm = out.energy_error / natoms;
    out.loss = w_e * e_norm * e_norm + w_f / (3.0 * natoms) * out.force_sq_sum;

    const double alpha = 2.0 * w_e * out.energy_error / (natoms * natoms);
    const double beta = -2.0 * w_f / (3.0 * natoms);

    // Tangent of the raw features along the force residual.
    const std::size_t nr = m.descriptor.radial.size();
    const auto nf = static_cast<Index>(m.descriptor.feature_dim());
    MatrixXd dG = MatrixXd::Zero(nf, n);
    const auto& pairs = f.desc.neighbors.pairs;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        const double rdot = dot(pr.displacement, resid[pr.j] - resid[pr.i]) / pr.distance;
        const auto ci = static_cast<Index>(m.descriptor.channel(static_cast<std::size_t>(f.desc.species[pr.j]), 0));
        const auto cj = static_cast<Index>(m.descriptor.channel(static_cast<std::size_t>(f.desc.species[pr.i]), 0));
        for (std::size_t k = 0; k < nr; ++k) {
            const auto kk = static_cast<Index>(k);
            const double v = f.desc.pair_grad(kk, static_cast<Index>(p)) * rdot;
            dG(ci + kk, static_cast<Index>(pr.i)) += v;
            dG(cj + kk, static_cast<Index>(pr.j)) += v;
        }
    }
    const Eigen::Map<const VectorXd> inv_std(m.feature_inv_std.data(), nf);
    std::vector<MatrixXd> tact;  // tangent of act
    std::vector<MatrixXd> tz;    // tangent of z
    tact.reserve(m.layers.size() + 1);
    tz.reserve(m.layers.size());
    {
        MatrixXd t0 = MatrixXd::Zero(static_cast<Index>(m.input_dim()), n);
        t0.topRows(nf) = dG.array().colwise() * inv_std.array();
        tact.push_back(std::move(t0));
    }
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& l = m.layers[li];
        MatrixXd z = layer_weight(m, l) * tact.back();
        MatrixXd a = (1.0 - f.hidden[li].array().square()) * z.array();
        add_skip(l, tact.back(), a);
        tz.push_back(std::move(z));
        tact.push_back(std::move(a));
    }

    // Reverse pass for J = alpha * E + beta * Edot.
    const auto w_out = output_weight(m);
    const VectorXd g_out = alpha * f.act.back().rowwise().sum() + beta * tact.back().rowwise().sum();
    Eigen::Map<VectorXd>(grad.data() + m.output_weight_offset, w_out.size()) += g_out;
    grad[m.output_bias_offset] += alpha * natoms;

    MatrixXd bar_a = (alpha * w_out) * Eigen::RowVectorXd::Ones(n);
    MatrixXd bar_t = (beta * w_out) * Eigen::RowVectorXd::Ones(n);
    const std::size_t stop = freeze_descriptor ? m.n_descriptor_layers : 0;
    for (std::size_t li = m.layers.size(); li-- > stop;) {
        const auto& l = m.layers[li];
        const auto& h = f.hidden[li];
        const Eigen::ArrayXXd dh = 1.0 - h.array().square();
        const MatrixXd bar_tz = dh * bar_t.array();
        const MatrixXd bar_z = dh * (bar_a.array() - 2.0 * bar_t.array() * tz[li].array() * h.array());
        Eigen::Map<MatrixXd> gw(grad.data() + l.weight_offset, static_cast<Index>(l.out), static_cast<Index>(l.in));
        // Products go through aligned temporaries (see layer_weight).
        const MatrixXd gz = bar_z * f.act[li].transpose();
        const MatrixXd gt = bar_tz * tact[li].transpose();
        gw += gz;
        gw += gt;
        const VectorXd gb = bar_z.rowwise().sum();
        Eigen::Map<VectorXd>(grad.data() + l.bias_offset, static_cast<Index>(l.out)) += gb;
        if (li == stop) break;
        const auto W = layer_weight(m, l);
        MatrixXd prev_a = W.transpose() * bar_z;
        MatrixXd prev_t = W.transpose() * bar_tz;
        add_skip_adjoint(l, bar_a, prev_a);
        add_skip_adjoint(l, bar_t, prev_t);
        bar_a = std::move(prev_a);
        bar_t = std::move(prev_t);
    }
    return out;
}

/// Sets the input normalisation from raw descriptors of `frames` and the
/// per-species energy shift from a least-squares fit of frame energies.
inline constexpr double feature_std_floor = 1e-3;

inline void fit_statistics(PotentialModel& m, std::span<const LabeledFrame> frames) {
    if (frames.empty()) return;
    const auto nf = m.descriptor.feature_dim();
    std::vector<double> sum(nf, 0.0), sum_sq(nf, 0.0);
    double count = 0.0;
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames.size()),
                                                   static_cast<Eigen::Index>(m.species.size()));
    Eigen::VectorXd energies(static_cast<Eigen::Index>(frames.size()));
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const auto species = model_species_of(m, frames[fi].system);
        const auto batch = compute_descriptor_batch(frames[fi].system, species, m.descriptor);
        for (Eigen::Index i = 0; i < batch.features.cols(); ++i) {
            for (std::size_t c = 0; c < nf; ++c) {
                const double v = batch.features(static_cast<Eigen::Index>(c), i);
                sum[c] += v;
                sum_sq[c] += v * v;
            }
            count += 1.0;
        }
        for (int t : species) counts(static_cast<Eigen::Index>(fi), t) += 1.0;
        energies(static_cast<Eigen::Index>(fi)) = frames[fi].energy;
    }
    for (std::size_t c = 0; c < nf; ++c) {
        const double mean = sum[c] / count;
        const double var = std::max(0.0, sum_sq[c] / count - mean * mean);
        m.feature_mean[c] = mean;
        // Core-region channels barely vary; the floor keeps their normalised values small.
        m.feature_inv_std[c] = 1.0 / std::max(std::sqrt(var), feature_std_floor);
    }
    if (m.species.size() == 1) {
        m.energy_shift[0] = energies.sum() / counts.sum();
    } else {
        const Eigen::VectorXd shift = counts.colPivHouseholderQr().solve(energies);
        for (std::size_t t = 0; t < m.species.size(); ++t) m.energy_shift[t] = shift(static_cast<Eigen::Index>(t));
    }
}

} // namespace kdnnp
