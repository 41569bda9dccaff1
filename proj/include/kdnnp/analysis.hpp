#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "kdnnp/dataset.hpp"
#include "kdnnp/error.hpp"
#include "kdnnp/format.hpp"
#include "kdnnp/units.hpp"

namespace kdnnp {

struct MsdCurve {
    std::vector<double> lag; // fs
    std::vector<double> msd; // Å²
};

/// Multiple-time-origin MSD of unwrapped coordinates, lags up to half the sampled span.
inline MsdCurve mean_square_displacement(std::span<const LabeledFrame> frames) {
    if (frames.size() < 2) throw Error(ErrorKind::TooFewSamples, "MSD needs at least two samples");
    const std::size_t m = frames.size();
    const std::size_t n = frames.front().system.size();
    const double dt = frames[1].time - frames[0].time;
    std::vector<std::vector<Vec3>> unwrapped(m, std::vector<Vec3>(n));
    for (std::size_t t = 0; t < m; ++t)
        for (std::size_t i = 0; i < n; ++i) unwrapped[t][i] = frames[t].system.unwrapped(i);
    const std::size_t max_lag = (m - 1) / 2;
    MsdCurve c;
    for (std::size_t k = 0; k <= max_lag; ++k) {
        double acc = 0.0;
        const std::size_t origins = m - k;
        for (std::size_t t0 = 0; t0 < origins; ++t0) {
            for (std::size_t i = 0; i < n; ++i) {
                const Vec3 d = unwrapped[t0 + k][i] - unwrapped[t0][i];
                acc += dot(d, d);
            }
        }
        c.lag.push_back(static_cast<double>(k) * dt);
        c.msd.push_back(acc / static_cast<double>(origins * n));
    }
    return c;
}

struct DiffusionFit {
    double slope{};        // Å²/fs
    double coefficient{};  // cm²/s
    std::size_t points{};
};

/// Least-squares slope over lags in [lo, hi] x max lag; D = slope / 6.
inline DiffusionFit self_diffusion(const MsdCurve& curve, double window_lo = 0.2, double window_hi = 0.8) {
    if (curve.lag.empty()) throw Error(ErrorKind::DegenerateFit, "empty MSD curve");
    if (!(window_lo >= 0.0 && window_lo < window_hi && window_hi <= 1.0))
        throw Error(ErrorKind::InvalidArgument, "fit window must satisfy 0 <= lo < hi <= 1");
    const double max_lag = curve.lag.back();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < curve.lag.size(); ++k) {
        const double x = curve.lag[k];
        if (x < window_lo * max_lag || x > window_hi * max_lag) continue;
        sx += x;
        sy += curve.msd[k];
        sxx += x * x;
        sxy += x * curve.msd[k];
        ++n;
    }
    if (n < 2) throw Error(ErrorKind::DegenerateFit, "fit window holds fewer than two points");
    const double nn = static_cast<double>(n);
    const double denom = nn * sxx - sx * sx;
    if (denom == 0.0) throw Error(ErrorKind::DegenerateFit, "fit window has no lag spread");
    DiffusionFit fit;
    fit.slope = (nn * sxy - sx * sy) / denom;
    fit.coefficient = fit.slope / 6.0 * units::diffusion_angstrom2_per_fs_to_cm2_per_s;
    fit.points = n;
    return fit;
}

struct Histogram {
    std::vector<double> edges;
    std::vector<std::size_t> counts;
    double mean{};
    double std{}; // sample standard deviation
    std::size_t n{};
};

inline Histogram histogram_of(std::span<const double> values, std::size_t n_bins, double lo, double hi) {
    if (values.empty()) throw Error(ErrorKind::EmptyDataset, "histogram of no values");
    if (n_bins == 0 || !(hi > lo)) throw Error(ErrorKind::InvalidArgument, "histogram needs bins and hi > lo");
    Histogram h;
    h.n = values.size();
    h.edges.resize(n_bins + 1);
    for (std::size_t b = 0; b <= n_bins; ++b)
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
    h.counts.assign(n_bins, 0);
    double sum = 0.0;
    for (double v : values) {
        sum += v;
        if (v < lo || v > hi) continue;
        auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(n_bins));
        if (b >= n_bins) b = n_bins - 1;
        ++h.counts[b];
    }
    h.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - h.mean) * (v - h.mean);
    h.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    return h;
}

inline std::vector<double> per_atom_energies(std::span<const LabeledFrame> frames) {
    std::vector<double> e;
    e.reserve(frames.size());
    for (const auto& f : frames) e.push_back(f.energy_per_atom());
    return e;
}

/// Histogram of per-atom energies (eV/atom).
inline Histogram energy_histogram(std::span<const LabeledFrame> frames, std::size_t n_bins, double lo, double hi) {
    if (frames.empty()) throw Error(ErrorKind::EmptyDataset, "no frames for histogram");
    const auto e = per_atom_energies(frames);
    return histogram_of(e, n_bins, lo, hi);
}

/// Linear-interpolation percentile, q in [0, 100].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorKind::EmptyDataset, "percentile of no values");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

inline void write_msd_csv(const std::filesystem::path& path, const MsdCurve& c) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << "lag_fs,msd_A2\n";
    for (std::size_t k = 0; k < c.lag.size(); ++k) os << format_double(c.lag[k]) << ',' << format_double(c.msd[k]) << '\n';
}

inline void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        os << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
}

} // namespace kdnnp
