#pragma once

// Hard-target selection: project frame features to 2D, append normalised
// per-atom energy, pick a spread-out subset by farthest-point sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "kdnnp/dataset.hpp"
#include "kdnnp/error.hpp"
#include "kdnnp/format.hpp"

namespace kdnnp {

using Point2 = std::array<double, 2>;

struct ScreeningPoint {
    double x{};
    double y{};
    double norm_energy{};
    std::size_t source_index{};
};

namespace detail {

/// Min-max to [0, 1]; an axis with no spread maps to 0.5.
inline void normalise_axis(std::vector<double>& v, double tolerance) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, range = *hi - *lo;
    if (!(range > tolerance)) {
        std::fill(v.begin(), v.end(), 0.5);
        return;
    }
    for (auto& x : v) x = (x - a) / range;
}

} // namespace detail

/// Projection onto the two leading principal components, each axis
/// min-max normalised. Sign convention: the largest-magnitude loading of
/// each component is positive.
inline std::vector<Point2> reduce_2d(std::span<const Eigen::VectorXd> features) {
    if (features.size() < 3) throw Error(ErrorKind::InvalidArgument, "reduce_2d needs at least three feature vectors");
    const auto dim = features.front().size();
    const auto n = static_cast<Eigen::Index>(features.size());
    Eigen::MatrixXd X(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (features[static_cast<std::size_t>(i)].size() != dim)
            throw Error(ErrorKind::InvalidArgument, "feature vectors differ in length");
        X.row(i) = features[static_cast<std::size_t>(i)].transpose();
    }
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);
    const double total = cov.trace();
    if (!(total > 0.0)) throw Error(ErrorKind::DegenerateVariance, "all feature vectors are identical");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::Index top = dim - 1;
    std::array<std::vector<double>, 2> axes;
    for (int a = 0; a < 2; ++a) {
        axes[a].assign(static_cast<std::size_t>(n), 0.0);
        const Eigen::Index col = top - a;
        if (col < 0 || eig.eigenvalues()(col) <= 1e-12 * total) {
            std::fill(axes[a].begin(), axes[a].end(), 0.5);
            continue;
        }
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        Eigen::Index arg = 0;
        for (Eigen::Index k = 1; k < dim; ++k)
            if (std::abs(v(k)) > std::abs(v(arg))) arg = k;
        if (v(arg) < 0.0) v = -v;
        const Eigen::VectorXd proj = X * v;
        for (Eigen::Index i = 0; i < n; ++i) axes[a][static_cast<std::size_t>(i)] = proj(i);
        detail::normalise_axis(axes[a], 0.0);
    }
    std::vector<Point2> out(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {axes[0][i], axes[1][i]};
    return out;
}

/// Appends (E - min) / (max - min); constant energies map to 0.5.
inline std::vector<ScreeningPoint> augment_energy(std::span<const Point2> points, std::span<const double> energies) {
    if (points.size() != energies.size())
        throw Error(ErrorKind::InvalidArgument, "points and energies differ in length");
    std::vector<double> e(energies.begin(), energies.end());
    if (!e.empty()) detail::normalise_axis(e, 0.0);
    std::vector<ScreeningPoint> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = {points[i][0], points[i][1], e[i], i};
    return out;
}

inline double distance(const ScreeningPoint& a, const ScreeningPoint& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, de = a.norm_energy - b.norm_energy;
    return std::sqrt(dx * dx + dy * dy + de * de);
}

/// Greedy farthest-point sampling. Starts from the point farthest from the
/// centroid; ties go to the lowest source_index. Returns source indices in
/// selection order.
inline std::vector<std::size_t> select_fps(std::span<const ScreeningPoint> points, std::size_t k) {
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "must select at least one point");
    if (k > points.size()) throw Error(ErrorKind::KTooLarge, "k exceeds the number of points");
    const std::size_t n = points.size();
    // Visit points in source_index order so strict comparisons implement the tie-break.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return points[a].source_index < points[b].source_index; });

    ScreeningPoint centroid{};
    for (const auto& p : points) {
        centroid.x += p.x;
        centroid.y += p.y;
        centroid.norm_energy += p.norm_energy;
    }
    centroid.x /= static_cast<double>(n);
    centroid.y /= static_cast<double>(n);
    centroid.norm_energy /= static_cast<double>(n);

    std::vector<bool> taken(n, false);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> selected;
    selected.reserve(k);

    std::size_t current = order[0];
    double best = -1.0;
    for (auto i : order) {
        const double d = distance(points[i], centroid);
        if (d > best) {
            best = d;
            current = i;
        }
    }
    while (true) {
        taken[current] = true;
        selected.push_back(points[current].source_index);
        if (selected.size() == k) break;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i]) min_dist[i] = std::min(min_dist[i], distance(points[i], points[current]));
        best = -1.0;
        for (auto i : order) {
            if (!taken[i] && min_dist[i] > best) {
                best = min_dist[i];
                current = i;
            }
        }
    }
    return selected;
}

/// Uniform sample without replacement, sorted ascending.
inline std::vector<std::size_t> select_random(std::size_t n_points, std::size_t k, std::uint64_t seed) {
    if (k > n_points) throw Error(ErrorKind::KTooLarge, "k exceeds the number of points");
    auto perm = seeded_permutation(n_points, seed);
    perm.resize(k);
    std::sort(perm.begin(), perm.end());
    return perm;
}

/// Smallest pairwise distance among the chosen source indices.
inline double min_pairwise_distance(std::span<const ScreeningPoint> points, std::span<const std::size_t> chosen) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < chosen.size(); ++a)
        for (std::size_t b = a + 1; b < chosen.size(); ++b)
            best = std::min(best, distance(points[chosen[a]], points[chosen[b]]));
    return best;
}

inline void write_selection_csv(const std::filesystem::path& path, std::span<const ScreeningPoint> points,
                                std::span<const std::size_t> chosen) {
    std::vector<bool> flag(points.size(), false);
    for (auto c : chosen) flag.at(c) = true;
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << "source_index,x,y,norm_energy,selected\n";
    for (const auto& p : points)
        os << p.source_index << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
           << format_double(p.norm_energy) << ',' << (flag[p.source_index] ? 1 : 0) << '\n';
}

} // namespace kdnnp
