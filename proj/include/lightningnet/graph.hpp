#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lightningnet/errors.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kPi = 3.14159265358979323846;

// Great-circle distance (spherical law of cosines), in km.
inline double geodesic_distance(double lat1, double lon1, double lat2, double lon2) {
    auto check = [](double lat, double lon) {
        if (!(lat >= -90.0 && lat <= 90.0))
            throw validation_error("geodesic_distance: latitude out of range: " +
                                   std::to_string(lat));
        if (!(lon >= -180.0 && lon <= 180.0))
            throw validation_error("geodesic_distance: longitude out of range: " +
                                   std::to_string(lon));
    };
    check(lat1, lon1);
    check(lat2, lon2);
    // the law-of-cosines form is ill-conditioned near zero separation
    if (lat1 == lat2 && lon1 == lon2) return 0.0;
    const double d2r = kPi / 180.0;
    const double p1 = lat1 * d2r, l1 = lon1 * d2r;
    const double p2 = lat2 * d2r, l2 = lon2 * d2r;
    // dot product of the two unit position vectors
    double dot = std::sin(p1) * std::sin(p2) +
                 std::cos(p1) * std::cos(p2) * std::cos(l1 - l2);
    dot = std::clamp(dot, -1.0, 1.0);
    return kEarthRadiusKm * std::acos(dot);
}

struct CellNetwork {
    std::vector<std::string> cell_ids;
    std::vector<double> lat_deg;
    std::vector<double> lon_deg;
    Tensor2D adjacency; // symmetric 0/1, zero diagonal
    double threshold_km = 0.0;

    std::size_t size() const { return cell_ids.size(); }
};

// Strictly upper triangular pairwise distance matrix; lower triangle and
// diagonal are stored as zero.
inline Tensor2D distance_matrix(const CellNetwork& net) {
    const std::size_t n = net.size();
    if (n < 1) throw validation_error("distance_matrix: empty network");
    Tensor2D d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d(i, j) = geodesic_distance(net.lat_deg[i], net.lon_deg[i],
                                        net.lat_deg[j], net.lon_deg[j]);
    return d;
}

inline Tensor2D build_adjacency(const Tensor2D& dist, double threshold_km) {
    if (threshold_km < 0.0)
        throw validation_error("build_adjacency: negative threshold");
    const std::size_t n = dist.rows();
    Tensor2D a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (dist(i, j) <= threshold_km) a(i, j) = a(j, i) = 1.0;
    return a;
}

inline Tensor2D add_self_loops(const Tensor2D& a) {
    if (a.rows() != a.cols()) throw validation_error("add_self_loops: not square");
    for (std::size_t i = 0; i < a.rows(); ++i)
        if (a(i, i) != 0.0)
            throw validation_error("add_self_loops: nonzero diagonal at " +
                                   std::to_string(i));
    Tensor2D out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, i) = 1.0;
    return out;
}

inline Tensor2D degree_matrix(const Tensor2D& a_tilde) {
    if (a_tilde.rows() != a_tilde.cols())
        throw validation_error("degree_matrix: not square");
    const std::size_t n = a_tilde.rows();
    Tensor2D d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a_tilde(i, j);
        d(i, i) = s;
    }
    return d;
}

// D^(-1/2) * A~ * D^(-1/2)
inline Tensor2D renormalize_adjacency(const Tensor2D& a_tilde, const Tensor2D& d_tilde) {
    const std::size_t n = a_tilde.rows();
    if (d_tilde.rows() != n || d_tilde.cols() != n)
        throw validation_error("renormalize_adjacency: shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (d_tilde(i, i) <= 0.0)
            throw numeric_error("renormalize_adjacency: zero degree at node " +
                                std::to_string(i));
    Tensor2D out(n, n);
    // a / sqrt(d_i * d_j) keeps perfect-square degree products exact
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out(i, j) = a_tilde(i, j) / std::sqrt(d_tilde(i, i) * d_tilde(j, j));
    return out;
}

// Combinatorial Laplacian L = D - A.
inline Tensor2D laplacian(const Tensor2D& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw validation_error("laplacian: not square");
    for (std::size_t i = 0; i < n; ++i) {
        if (a(i, i) != 0.0) throw validation_error("laplacian: nonzero diagonal");
        for (std::size_t j = i + 1; j < n; ++j)
            if (a(i, j) != a(j, i))
                throw validation_error("laplacian: asymmetric input");
    }
    Tensor2D l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            deg += a(i, j);
            l(i, j) = -a(i, j);
        }
        l(i, i) = deg;
    }
    return l;
}

struct Spectrum {
    std::vector<double> eigenvalues; // descending
};

// All eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
inline Spectrum symmetric_eigenvalues(const Tensor2D& m_in) {
    const std::size_t n = m_in.rows();
    if (m_in.cols() != n)
        throw validation_error("symmetric_eigenvalues: not square");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m_in(i, j) - m_in(j, i)) > 1e-9)
                throw validation_error("symmetric_eigenvalues: asymmetric beyond 1e-9");
    Tensor2D a = m_in;
    // symmetrize exactly so rotations stay consistent
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));

    auto offdiag_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    const int max_sweeps = 100;
    int sweep = 0;
    while (offdiag_norm() >= 1e-10 && sweep < max_sweeps) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
        ++sweep;
    }
    const double residual = offdiag_norm();
    if (residual >= 1e-10 && n > 1)
        throw numeric_error("symmetric_eigenvalues: no convergence, residual " +
                            std::to_string(residual));
    Spectrum spec;
    spec.eigenvalues.resize(n);
    for (std::size_t i = 0; i < n; ++i) spec.eigenvalues[i] = a(i, i);
    std::sort(spec.eigenvalues.begin(), spec.eigenvalues.end(), std::greater<>());
    return spec;
}

struct SubGraphPartition {
    std::size_t k = 0;
    std::vector<std::size_t> assignment; // per cell, in [0, k)
    std::vector<std::size_t> sizes;

    std::vector<std::size_t> members(std::size_t g) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == g) out.push_back(i);
        return out;
    }
};

enum class PartitionMode { spatial, random };

// Equally-sized (+-1) sub-graphs. Default mode slices cells sorted by
// (lat, lon); random mode is a seeded balanced shuffle for ablations.
inline SubGraphPartition partition_graph(const CellNetwork& net, std::size_t k,
                                         std::uint64_t seed = 0,
                                         PartitionMode mode = PartitionMode::spatial) {
    const std::size_t n = net.size();
    if (k < 1 || k > n)
        throw validation_error("partition_graph: k=" + std::to_string(k) +
                               " out of range for " + std::to_string(n) + " cells");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (mode == PartitionMode::spatial) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (net.lat_deg[a] != net.lat_deg[b]) return net.lat_deg[a] < net.lat_deg[b];
            if (net.lon_deg[a] != net.lon_deg[b]) return net.lon_deg[a] < net.lon_deg[b];
            return a < b;
        });
    } else {
        // Fisher-Yates with a splitmix-style generator, independent of libstdc++
        std::uint64_t s = seed ? seed : 0x9e3779b97f4a7c15ull;
        auto next = [&s]() {
            s += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = s;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            return z ^ (z >> 31);
        };
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[next() % (i + 1)]);
    }
    SubGraphPartition part;
    part.k = k;
    part.assignment.resize(n);
    part.sizes.assign(k, 0);
    const std::size_t base = n / k, extra = n % k;
    std::size_t pos = 0;
    for (std::size_t g = 0; g < k; ++g) {
        const std::size_t sz = base + (g < extra ? 1 : 0);
        for (std::size_t j = 0; j < sz; ++j) part.assignment[order[pos++]] = g;
        part.sizes[g] = sz;
    }
    return part;
}

// Sub-graph indices sorted by descending total positive labels; ties break
// toward the lower index. labels: hours x cells, 0/1.
inline std::vector<std::size_t> rank_subgraphs_by_hotspots(
    const SubGraphPartition& part, const std::vector<std::vector<std::uint8_t>>& labels) {
    std::vector<std::size_t> counts(part.k, 0);
    for (const auto& row : labels) {
        if (row.size() != part.assignment.size())
            throw validation_error("rank_subgraphs_by_hotspots: label row size mismatch");
        for (std::size_t m = 0; m < row.size(); ++m)
            if (row[m]) counts[part.assignment[m]] += 1;
    }
    std::vector<std::size_t> order(part.k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] > counts[b];
    });
    return order;
}

// Number of leading eigenvalues whose sum reaches 90% of the total.
inline std::size_t spectrum_head_count(const Spectrum& s) {
    double total = 0.0;
    for (double v : s.eigenvalues) total += v;
    if (total <= 0.0) return 1; // empty graph: defined as k=1
    double run = 0.0;
    for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) {
        run += s.eigenvalues[i];
        if (run / total >= 0.9) return i + 1;
    }
    return s.eigenvalues.size();
}

// Sum of squared differences over the top-k eigenvalues, with k the
// smaller of the two 90%-energy head counts.
inline double subgraph_similarity(const Spectrum& s1, const Spectrum& s2) {
    const std::size_t k = std::min(spectrum_head_count(s1), spectrum_head_count(s2));
    double sim = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double a = i < s1.eigenvalues.size() ? s1.eigenvalues[i] : 0.0;
        const double b = i < s2.eigenvalues.size() ? s2.eigenvalues[i] : 0.0;
        sim += (a - b) * (a - b);
    }
    return sim;
}

// Restriction of an adjacency matrix to a node subset (cross edges dropped).
inline Tensor2D induced_subgraph(const Tensor2D& a, const std::vector<std::size_t>& nodes) {
    Tensor2D out(nodes.size(), nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (std::size_t j = 0; j < nodes.size(); ++j)
            out(i, j) = a(nodes[i], nodes[j]);
    return out;
}

// A~ -> A^ pipeline for one (sub-)graph adjacency with zero diagonal.
inline Tensor2D renormalized_operator(const Tensor2D& a) {
    Tensor2D at = add_self_loops(a);
    return renormalize_adjacency(at, degree_matrix(at));
}

} // namespace lnet
