#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lightningnet/errors.hpp"
#include "lightningnet/graph.hpp"
#include "lightningnet/rng.hpp"

namespace lnet {

// Sentinel stored in masked-out entries; models must consult the mask and
// never read these.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct KpiPanel {
    std::vector<std::string> cell_ids;
    std::size_t hours = 0;      // T
    std::size_t n_features = 0; // F
    std::vector<double> kpis;        // T*M*F row-major (t, m, f)
    std::vector<std::uint8_t> mask;  // 1 = observed
    std::vector<std::vector<std::uint8_t>> hot; // T x M ground truth

    std::size_t n_cells() const { return cell_ids.size(); }
    std::size_t idx(std::size_t t, std::size_t m, std::size_t f) const {
        return (t * n_cells() + m) * n_features + f;
    }
    double& at(std::size_t t, std::size_t m, std::size_t f) { return kpis[idx(t, m, f)]; }
    double at(std::size_t t, std::size_t m, std::size_t f) const { return kpis[idx(t, m, f)]; }
    bool observed(std::size_t t, std::size_t m, std::size_t f) const {
        return mask[idx(t, m, f)] != 0;
    }
};

struct ScoreConfig {
    std::vector<double> weights;
    std::vector<double> thresholds;
    double hot_cutoff = 0.0;
};

// Eq.-style weighted sum of thresholded KPIs; H(0) = 1 (reaching the
// threshold triggers).
inline double hotspot_score(const std::vector<double>& kpi_row, const ScoreConfig& cfg) {
    if (kpi_row.size() != cfg.weights.size() || kpi_row.size() != cfg.thresholds.size())
        throw validation_error("hotspot_score: KPI row length " +
                               std::to_string(kpi_row.size()) + " vs config length " +
                               std::to_string(cfg.weights.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < kpi_row.size(); ++i)
        if (kpi_row[i] >= cfg.thresholds[i]) s += cfg.weights[i];
    return s;
}

struct NetworkGenConfig {
    std::size_t n_cells = 400;
    std::size_t n_clusters = 4;
    double cluster_radius_km = 0.5;
    double box_lat_lo = 40.0, box_lat_hi = 40.5;
    double box_lon_lo = 23.0, box_lon_hi = 23.5;
    std::uint64_t seed = 1;
};

inline CellNetwork generate_network(const NetworkGenConfig& cfg) {
    if (cfg.n_clusters < 1 || cfg.n_cells < cfg.n_clusters)
        throw validation_error("generate_network: need n_cells >= n_clusters >= 1");
    CellNetwork net;
    Rng center_rng(mix_seed(cfg.seed, 0xC0));
    std::vector<double> clat(cfg.n_clusters), clon(cfg.n_clusters);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        clat[c] = center_rng.uniform(cfg.box_lat_lo, cfg.box_lat_hi);
        clon[c] = center_rng.uniform(cfg.box_lon_lo, cfg.box_lon_hi);
    }
    const double km_per_deg_lat = 111.195; // mean meridian arc per degree
    for (std::size_t i = 0; i < cfg.n_cells; ++i) {
        const std::size_t c = i % cfg.n_clusters;
        Rng rng(mix_seed(cfg.seed, 0xCE, i));
        const double dlat_km = rng.normal() * cfg.cluster_radius_km;
        const double dlon_km = rng.normal() * cfg.cluster_radius_km;
        const double lat = clat[c] + dlat_km / km_per_deg_lat;
        const double lon = clon[c] + dlon_km / (km_per_deg_lat * std::cos(clat[c] * kPi / 180.0));
        net.lat_deg.push_back(lat);
        net.lon_deg.push_back(lon);
        net.cell_ids.push_back("cell_" + std::to_string(i));
    }
    return net;
}

struct KpiGenConfig {
    std::size_t hours = 1440;
    std::size_t n_features = 35;
    std::size_t n_score_features = 8; // features carrying score weight
    double event_rate = 3e-5;   // event-start probability per cell-hour
    double event_spread = 0.6;  // neighbor attenuation in [0,1]
    std::size_t event_duration_mean = 30;
    std::size_t event_ramp = 4;
    std::size_t neighbor_lag_hours = 3;
    double event_amp = 6.0;
    double noise_sd = 0.25;
    double ar1 = 0.6;
    double diurnal_amp = 1.0;
    double weekly_amp = 0.5;
    std::uint64_t seed = 1;
};

// Default score config matching the generator: unit weight on the first
// n_score_features features, thresholds above the seasonal peak so only
// event bumps trigger. Margins are staggered across the scored features, so
// the score grows with bump height instead of being all-or-nothing; this is
// what makes the cutoff calibratable to a target rate.
inline ScoreConfig default_score_config(const KpiGenConfig& cfg) {
    ScoreConfig sc;
    sc.weights.assign(cfg.n_features, 0.0);
    sc.thresholds.assign(cfg.n_features, 0.0);
    const double stationary_sd = cfg.noise_sd / std::sqrt(1.0 - cfg.ar1 * cfg.ar1);
    const double ns = static_cast<double>(std::max<std::size_t>(cfg.n_score_features, 1));
    for (std::size_t f = 0; f < cfg.n_features; ++f) {
        const double base = 5.0 + 0.1 * static_cast<double>(f);
        double margin = 0.0;
        if (f < cfg.n_score_features)
            margin = static_cast<double>(f) * cfg.event_amp / ns;
        sc.thresholds[f] =
            base + cfg.diurnal_amp + cfg.weekly_amp + 4.0 * stationary_sd + margin;
        if (f < cfg.n_score_features) sc.weights[f] = 1.0;
    }
    sc.hot_cutoff = 0.5 * static_cast<double>(cfg.n_score_features);
    return sc;
}

namespace detail {

struct CongestionEvent {
    std::size_t cell;
    std::size_t start;
    std::size_t duration;
};

inline double event_profile(std::size_t h_rel, std::size_t duration, std::size_t ramp) {
    if (h_rel >= duration) return 0.0;
    const double r = static_cast<double>(ramp);
    if (ramp > 0 && h_rel < ramp) return (h_rel + 1) / r;
    if (ramp > 0 && h_rel >= duration - std::min(ramp, duration))
        return static_cast<double>(duration - h_rel) / r;
    return 1.0;
}

} // namespace detail

// Base level + diurnal (24h) + weekly (168h) seasonality + AR(1) noise +
// planted congestion events that propagate (lagged, attenuated) to graph
// neighbors. Per-cell streams are seed-derived, so generation order does
// not affect the result.
inline KpiPanel generate_kpi_series(const CellNetwork& net, const KpiGenConfig& cfg) {
    if (cfg.hours < 1 || cfg.n_features < 1)
        throw validation_error("generate_kpi_series: hours and features must be >= 1");
    const std::size_t T = cfg.hours, M = net.size(), F = cfg.n_features;
    KpiPanel panel;
    panel.cell_ids = net.cell_ids;
    panel.hours = T;
    panel.n_features = F;
    panel.kpis.assign(T * M * F, 0.0);
    panel.mask.assign(T * M * F, 1);

    // pass 1: draw events per cell
    std::vector<detail::CongestionEvent> events;
    for (std::size_t m = 0; m < M; ++m) {
        Rng rng(mix_seed(cfg.seed, 0xE0, m));
        for (std::size_t t = 0; t < T; ++t) {
            if (rng.bernoulli(cfg.event_rate)) {
                const std::size_t lo = cfg.event_duration_mean / 2;
                const std::size_t span = cfg.event_duration_mean + 1;
                events.push_back({m, t, lo + rng.uniform_index(span)});
            }
        }
    }

    // pass 2: bump tracks (source + lagged neighbor propagation)
    std::vector<double> bump(T * M, 0.0);
    auto add_bump = [&](std::size_t cell, std::size_t start, std::size_t duration,
                        double amp) {
        for (std::size_t h = 0; h < duration && start + h < T; ++h)
            bump[(start + h) * M + cell] +=
                amp * detail::event_profile(h, duration, cfg.event_ramp);
    };
    for (const auto& ev : events) {
        add_bump(ev.cell, ev.start, ev.duration, cfg.event_amp);
        if (cfg.event_spread > 0.0 && net.adjacency.rows() == M) {
            for (std::size_t j = 0; j < M; ++j)
                if (net.adjacency(ev.cell, j) != 0.0)
                    add_bump(j, ev.start + cfg.neighbor_lag_hours, ev.duration,
                             cfg.event_amp * cfg.event_spread);
        }
    }

    // pass 3: per-cell series
    for (std::size_t m = 0; m < M; ++m) {
        Rng rng(mix_seed(cfg.seed, 0xF0, m));
        std::vector<double> ar(F, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double diurnal =
                std::sin(2.0 * kPi * static_cast<double>(t % 24) / 24.0);
            const double weekly =
                std::sin(2.0 * kPi * static_cast<double>(t % 168) / 168.0);
            const double b = bump[t * M + m];
            for (std::size_t f = 0; f < F; ++f) {
                ar[f] = cfg.ar1 * ar[f] + (cfg.noise_sd > 0.0 ? cfg.noise_sd * rng.normal() : 0.0);
                const double base = 5.0 + 0.1 * static_cast<double>(f);
                double v = base + cfg.diurnal_amp * diurnal + cfg.weekly_amp * weekly + ar[f];
                if (f < cfg.n_score_features) v += b;
                panel.at(t, m, f) = v;
            }
        }
    }
    return panel;
}

inline void label_panel(KpiPanel& panel, const ScoreConfig& cfg) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    panel.hot.assign(T, std::vector<std::uint8_t>(M, 0));
    std::vector<double> row(F);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t f = 0; f < F; ++f) row[f] = panel.at(t, m, f);
            panel.hot[t][m] = hotspot_score(row, cfg) >= cfg.hot_cutoff ? 1 : 0;
        }
}

// Bisection on the cutoff so the realized positive rate lands as close as
// possible to the target (scores are discrete, so exact targets are
// generally unreachable).
inline double calibrate_hot_cutoff(const KpiPanel& panel, const ScoreConfig& cfg,
                                   double target_rate) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    std::vector<double> scores;
    scores.reserve(T * M);
    std::vector<double> row(F);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t f = 0; f < F; ++f) row[f] = panel.at(t, m, f);
            scores.push_back(hotspot_score(row, cfg));
        }
    const double total = static_cast<double>(scores.size());
    auto rate_at = [&](double cutoff) {
        std::size_t c = 0;
        for (double s : scores)
            if (s >= cutoff) ++c;
        return static_cast<double>(c) / total;
    };
    double wsum = 0.0;
    for (double w : cfg.weights) wsum += w;
    double lo = 0.0, hi = wsum + 1.0; // rate(lo) = 1, rate(hi) = 0
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (rate_at(mid) >= target_rate)
            lo = mid;
        else
            hi = mid;
    }
    const double rl = rate_at(lo), rh = rate_at(hi);
    return std::abs(rl - target_rate) <= std::abs(rh - target_rate) ? lo : hi;
}

// Item non-response masks single entries; unit non-response masks whole
// (t, cell) rows. Masked entries are overwritten with the sentinel.
inline void inject_missingness(KpiPanel& panel, double item_rate, double unit_rate,
                               std::uint64_t seed) {
    if (item_rate < 0.0 || item_rate > 1.0 || unit_rate < 0.0 || unit_rate > 1.0)
        throw validation_error("inject_missingness: rates must be in [0,1]");
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    for (std::size_t m = 0; m < M; ++m) {
        Rng rng(mix_seed(seed, 0xA1, m));
        for (std::size_t t = 0; t < T; ++t) {
            const bool unit_gone = unit_rate > 0.0 && rng.bernoulli(unit_rate);
            for (std::size_t f = 0; f < F; ++f) {
                const bool item_gone = item_rate > 0.0 && rng.bernoulli(item_rate);
                if (unit_gone || item_gone) {
                    panel.mask[panel.idx(t, m, f)] = 0;
                    panel.at(t, m, f) = kMissing;
                }
            }
        }
    }
}

} // namespace lnet
