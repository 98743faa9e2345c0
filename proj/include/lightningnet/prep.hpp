#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lightningnet/datagen.hpp"
#include "lightningnet/errors.hpp"
#include "lightningnet/rng.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

enum class ImputeMethod { zero, mean, median, most_frequent, hot_deck, cold_deck, knn };

inline ImputeMethod impute_method_from_string(const std::string& s) {
    if (s == "zero") return ImputeMethod::zero;
    if (s == "mean") return ImputeMethod::mean;
    if (s == "median") return ImputeMethod::median;
    if (s == "most_frequent") return ImputeMethod::most_frequent;
    if (s == "hot_deck") return ImputeMethod::hot_deck;
    if (s == "cold_deck") return ImputeMethod::cold_deck;
    if (s == "knn") return ImputeMethod::knn;
    throw validation_error("unknown imputation method: " + s);
}

struct ImputeWarning {
    std::size_t cell;
    std::size_t feature;
    std::string note;
};

namespace detail {

inline double column_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double column_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double column_most_frequent(const std::vector<double>& v) {
    std::map<double, std::size_t> counts;
    for (double x : v) counts[x] += 1;
    double best = v.front();
    std::size_t best_n = 0;
    for (const auto& [val, n] : counts)
        if (n > best_n) { best = val; best_n = n; }
    return best;
}

// Euclidean distance over co-observed features, scaled by F / n_co.
// Returns nullopt when the rows share no observed feature.
inline std::optional<double> masked_row_distance(const KpiPanel& p, std::size_t m,
                                                 std::size_t t1, std::size_t t2) {
    double ss = 0.0;
    std::size_t n_co = 0;
    for (std::size_t f = 0; f < p.n_features; ++f) {
        if (p.observed(t1, m, f) && p.observed(t2, m, f)) {
            const double d = p.at(t1, m, f) - p.at(t2, m, f);
            ss += d * d;
            ++n_co;
        }
    }
    if (n_co == 0) return std::nullopt;
    return std::sqrt(ss * static_cast<double>(p.n_features) / static_cast<double>(n_co));
}

} // namespace detail

// Fills missing item entries in place. Column statistics are computed per
// cell over that cell's observed hours. KNN searches the same cell's rows.
inline std::vector<ImputeWarning> impute(KpiPanel& panel, ImputeMethod method,
                                         std::size_t k_neighbors = 5,
                                         const KpiPanel* donor = nullptr,
                                         std::uint64_t seed = 0) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    if (method == ImputeMethod::knn && k_neighbors < 1)
        throw validation_error("impute: knn requires k_neighbors >= 1");
    if (method == ImputeMethod::cold_deck) {
        if (!donor) throw validation_error("impute: cold_deck requires a donor panel");
        if (donor->n_features != F)
            throw validation_error("impute: donor feature count mismatch");
    }
    std::vector<ImputeWarning> warnings;

    // donor column means, pooled over donor cells
    std::vector<double> donor_mean;
    if (method == ImputeMethod::cold_deck) {
        donor_mean.assign(F, 0.0);
        for (std::size_t f = 0; f < F; ++f) {
            double s = 0.0;
            std::size_t n = 0;
            for (std::size_t t = 0; t < donor->hours; ++t)
                for (std::size_t m = 0; m < donor->n_cells(); ++m)
                    if (donor->observed(t, m, f)) { s += donor->at(t, m, f); ++n; }
            donor_mean[f] = n ? s / static_cast<double>(n) : 0.0;
        }
    }

    for (std::size_t m = 0; m < M; ++m) {
        Rng rng(mix_seed(seed, 0xD0, m));
        for (std::size_t f = 0; f < F; ++f) {
            std::vector<double> observed;
            std::vector<std::size_t> missing_t;
            for (std::size_t t = 0; t < T; ++t) {
                if (panel.observed(t, m, f))
                    observed.push_back(panel.at(t, m, f));
                else
                    missing_t.push_back(t);
            }
            if (missing_t.empty()) continue;

            auto fill_all = [&](double v) {
                for (std::size_t t : missing_t) panel.at(t, m, f) = v;
            };

            if (method == ImputeMethod::zero) { fill_all(0.0); continue; }
            if (method == ImputeMethod::cold_deck) { fill_all(donor_mean[f]); continue; }

            if (observed.empty()) {
                warnings.push_back({m, f, "no observed entries; zero-filled"});
                fill_all(0.0);
                continue;
            }

            switch (method) {
                case ImputeMethod::mean:
                    fill_all(detail::column_mean(observed));
                    break;
                case ImputeMethod::median:
                    fill_all(detail::column_median(observed));
                    break;
                case ImputeMethod::most_frequent:
                    fill_all(detail::column_most_frequent(observed));
                    break;
                case ImputeMethod::hot_deck:
                    for (std::size_t t : missing_t)
                        panel.at(t, m, f) = observed[rng.uniform_index(observed.size())];
                    break;
                case ImputeMethod::knn: {
                    for (std::size_t t : missing_t) {
                        std::vector<std::pair<double, std::size_t>> cand;
                        for (std::size_t t2 = 0; t2 < T; ++t2) {
                            if (t2 == t || !panel.observed(t2, m, f)) continue;
                            auto d = detail::masked_row_distance(panel, m, t, t2);
                            if (d) cand.push_back({*d, t2});
                        }
                        if (cand.empty()) {
                            panel.at(t, m, f) = detail::column_mean(observed);
                            continue;
                        }
                        const std::size_t k = std::min(k_neighbors, cand.size());
                        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
                        double s = 0.0;
                        for (std::size_t i = 0; i < k; ++i)
                            s += panel.at(cand[i].second, m, f);
                        panel.at(t, m, f) = s / static_cast<double>(k);
                    }
                    break;
                }
                default:
                    break;
            }
        }
    }
    // everything is filled now
    std::fill(panel.mask.begin(), panel.mask.end(), 1);
    return warnings;
}

// Fully-missing (t, cell) rows copy the most recent observed row of the
// same cell (first observed row for a leading gap). Values and item masks
// are copied together, so item imputation still sees the original pattern.
inline void impute_unit_nonresponse(KpiPanel& panel) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    for (std::size_t m = 0; m < M; ++m) {
        auto row_observed = [&](std::size_t t) {
            for (std::size_t f = 0; f < F; ++f)
                if (panel.observed(t, m, f)) return true;
            return false;
        };
        std::optional<std::size_t> last_obs;
        std::vector<std::pair<std::size_t, std::size_t>> copies; // (dst, src)
        std::vector<std::size_t> leading;
        for (std::size_t t = 0; t < T; ++t) {
            if (row_observed(t)) {
                last_obs = t;
            } else if (last_obs) {
                copies.push_back({t, *last_obs});
            } else {
                leading.push_back(t);
            }
        }
        if (!leading.empty()) {
            if (!last_obs)
                throw data_error("impute_unit_nonresponse: cell " + panel.cell_ids[m] +
                                 " has no observed rows");
            std::size_t first_obs = T;
            for (std::size_t t = 0; t < T; ++t)
                if (row_observed(t)) { first_obs = t; break; }
            for (std::size_t t : leading) copies.push_back({t, first_obs});
        }
        for (auto [dst, src] : copies) {
            for (std::size_t f = 0; f < F; ++f) {
                panel.at(dst, m, f) = panel.at(src, m, f);
                panel.mask[panel.idx(dst, m, f)] = panel.mask[panel.idx(src, m, f)];
            }
        }
    }
}

// Pooled two-pass variance per feature; keeps features with variance
// strictly above the threshold, in stable index order.
inline std::vector<std::size_t> near_zero_variance_filter(const KpiPanel& panel,
                                                          double threshold) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    std::vector<std::size_t> kept;
    const double n = static_cast<double>(T * M);
    for (std::size_t f = 0; f < F; ++f) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t m = 0; m < M; ++m) mean += panel.at(t, m, f);
        mean /= n;
        double var = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t m = 0; m < M; ++m) {
                const double d = panel.at(t, m, f) - mean;
                var += d * d;
            }
        var /= n;
        if (var > threshold) kept.push_back(f);
    }
    return kept;
}

// |Pearson correlation| ranking of feature columns against targets.
// Zero-variance columns rank last with r = 0.
inline std::vector<std::pair<std::size_t, double>> correlation_filter(
    const Tensor2D& x, const std::vector<double>& y) {
    const std::size_t n = x.rows(), f_count = x.cols();
    if (n < 2 || y.size() != n)
        throw validation_error("correlation_filter: need >= 2 rows and matching y");
    double ym = 0.0;
    for (double v : y) ym += v;
    ym /= static_cast<double>(n);
    double yss = 0.0;
    for (double v : y) yss += (v - ym) * (v - ym);
    std::vector<std::pair<std::size_t, double>> scored(f_count);
    for (std::size_t f = 0; f < f_count; ++f) {
        double xm = 0.0;
        for (std::size_t i = 0; i < n; ++i) xm += x(i, f);
        xm /= static_cast<double>(n);
        double xss = 0.0, xy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = x(i, f) - xm;
            xss += dx * dx;
            xy += dx * (y[i] - ym);
        }
        const double denom = std::sqrt(xss * yss);
        scored[f] = {f, denom > 0.0 ? std::abs(xy / denom) : 0.0};
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return scored;
}

// Coordinate-descent LASSO on a column-standardized design. Minimizes
// (1/2n)||y - Xb||^2 + lambda*||b||_1.
inline std::vector<double> lasso_fit(const Tensor2D& x, const std::vector<double>& y,
                                     double lambda, std::size_t max_iter = 1000,
                                     double tol = 1e-8) {
    const std::size_t n = x.rows(), p = x.cols();
    if (y.size() != n) throw validation_error("lasso_fit: y length mismatch");
    if (lambda < 0.0) throw validation_error("lasso_fit: negative lambda");
    std::vector<double> beta(p, 0.0);
    std::vector<double> resid(y); // y - X*beta
    std::vector<double> col_sq(p, 0.0);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t i = 0; i < n; ++i) col_sq[j] += x(i, j) * x(i, j);
    const double dn = static_cast<double>(n);
    for (std::size_t it = 0; it < max_iter; ++it) {
        double max_change = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) continue;
            double rho = 0.0;
            for (std::size_t i = 0; i < n; ++i) rho += x(i, j) * resid[i];
            rho = rho / dn + col_sq[j] / dn * beta[j];
            const double z = col_sq[j] / dn;
            double b_new = 0.0;
            if (rho > lambda)
                b_new = (rho - lambda) / z;
            else if (rho < -lambda)
                b_new = (rho + lambda) / z;
            const double delta = b_new - beta[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < n; ++i) resid[i] -= x(i, j) * delta;
                beta[j] = b_new;
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        if (max_change < tol) return beta;
    }
    double rss = 0.0;
    for (double r : resid) rss += r * r;
    throw numeric_error("lasso_fit: no convergence in " + std::to_string(max_iter) +
                        " sweeps, residual " + std::to_string(rss));
}

// Ridge: solves (X'X + n*lambda*I) b = X'y by Cholesky.
inline std::vector<double> ridge_fit(const Tensor2D& x, const std::vector<double>& y,
                                     double lambda) {
    const std::size_t n = x.rows(), p = x.cols();
    if (y.size() != n) throw validation_error("ridge_fit: y length mismatch");
    Tensor2D a(p, p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i; j < p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += x(r, i) * x(r, j);
            a(i, j) = a(j, i) = s;
        }
    for (std::size_t i = 0; i < p; ++i) a(i, i) += static_cast<double>(n) * lambda;
    std::vector<double> b(p, 0.0);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t r = 0; r < n; ++r) b[j] += x(r, j) * y[r];
    // Cholesky
    Tensor2D l(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw numeric_error("ridge_fit: singular system (non-PD at row " +
                                        std::to_string(i) + ")");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    std::vector<double> z(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * z[k];
        z[i] = s / l(i, i);
    }
    std::vector<double> beta(p, 0.0);
    for (std::size_t ii = p; ii-- > 0;) {
        double s = z[ii];
        for (std::size_t k = ii + 1; k < p; ++k) s -= l(k, ii) * beta[k];
        beta[ii] = s / l(ii, ii);
    }
    return beta;
}

enum class WrapperMode { forward, backward, stepwise };

// Greedy wrapper selection driven by an external scorer. Adds require a
// strict improvement; drops accept score-preserving removals. Ties break
// toward the lowest feature index.
inline std::vector<std::size_t> wrapper_select(
    std::size_t n_features, WrapperMode mode,
    const std::function<double(const std::vector<std::size_t>&)>& scorer,
    std::size_t budget) {
    if (budget > n_features) budget = n_features;
    std::vector<std::size_t> selected;
    if (mode == WrapperMode::backward) {
        selected.resize(n_features);
        std::iota(selected.begin(), selected.end(), 0);
    }
    double current = scorer(selected);

    auto try_add = [&]() {
        if (selected.size() >= budget && mode != WrapperMode::backward) return false;
        double best = current;
        std::size_t best_f = n_features;
        for (std::size_t f = 0; f < n_features; ++f) {
            if (std::find(selected.begin(), selected.end(), f) != selected.end())
                continue;
            auto cand = selected;
            cand.push_back(f);
            std::sort(cand.begin(), cand.end());
            const double s = scorer(cand);
            if (s > best) { best = s; best_f = f; }
        }
        if (best_f == n_features) return false;
        selected.push_back(best_f);
        std::sort(selected.begin(), selected.end());
        current = best;
        return true;
    };
    auto try_drop = [&]() {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = selected.size();
        for (std::size_t i = 0; i < selected.size(); ++i) {
            auto cand = selected;
            cand.erase(cand.begin() + i);
            const double s = scorer(cand);
            if (s > best) { best = s; best_i = i; }
        }
        if (best_i == selected.size() || best < current) return false;
        selected.erase(selected.begin() + best_i);
        current = best;
        return true;
    };

    const std::size_t iter_cap = 2 * n_features * n_features + 4;
    std::size_t iters = 0;
    if (mode == WrapperMode::forward) {
        while (iters++ < iter_cap && try_add()) {}
    } else if (mode == WrapperMode::backward) {
        while (iters++ < iter_cap && !selected.empty() && try_drop()) {}
    } else {
        bool moved = true;
        while (moved && iters++ < iter_cap) {
            moved = false;
            if (try_add()) moved = true;
            if (!selected.empty() && try_drop()) moved = true;
        }
    }
    return selected;
}

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> sd; // 0 marks constant columns (mapped to 0 output)
};

// Stats over the panel's [hour_lo, hour_hi) range only (the train split).
inline FeatureStats compute_feature_stats(const KpiPanel& panel, std::size_t hour_lo,
                                          std::size_t hour_hi) {
    const std::size_t M = panel.n_cells(), F = panel.n_features;
    if (hour_hi <= hour_lo || hour_hi > panel.hours)
        throw validation_error("compute_feature_stats: bad hour range");
    FeatureStats st;
    st.mean.assign(F, 0.0);
    st.sd.assign(F, 0.0);
    const double n = static_cast<double>((hour_hi - hour_lo) * M);
    for (std::size_t f = 0; f < F; ++f) {
        double mean = 0.0;
        for (std::size_t t = hour_lo; t < hour_hi; ++t)
            for (std::size_t m = 0; m < M; ++m) mean += panel.at(t, m, f);
        mean /= n;
        double var = 0.0;
        for (std::size_t t = hour_lo; t < hour_hi; ++t)
            for (std::size_t m = 0; m < M; ++m) {
                const double d = panel.at(t, m, f) - mean;
                var += d * d;
            }
        st.mean[f] = mean;
        st.sd[f] = std::sqrt(var / n);
    }
    return st;
}

inline void apply_zscore(KpiPanel& panel, const FeatureStats& st) {
    const std::size_t T = panel.hours, M = panel.n_cells(), F = panel.n_features;
    if (st.mean.size() != F) throw validation_error("apply_zscore: stats size mismatch");
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t f = 0; f < F; ++f) {
                double& v = panel.at(t, m, f);
                v = st.sd[f] > 0.0 ? (v - st.mean[f]) / st.sd[f] : 0.0;
            }
}

enum class LabelMode { any_within_horizon, at_horizon };

// Window view over a panel: inputs are hours [s, s+mb), the target marks
// hot cells within (window end, window end + hz].
struct WindowedDataset {
    const KpiPanel* panel = nullptr;
    std::vector<std::size_t> cells;    // graph node order
    std::vector<std::size_t> features; // selected feature indices
    std::size_t mb = 0, hz = 0;
    std::vector<std::size_t> starts;
    std::vector<std::vector<std::uint8_t>> targets; // per window, per cell

    std::size_t n_windows() const { return starts.size(); }

    Tensor2D hour_matrix(std::size_t t) const {
        Tensor2D x(cells.size(), features.size());
        for (std::size_t i = 0; i < cells.size(); ++i)
            for (std::size_t j = 0; j < features.size(); ++j)
                x(i, j) = panel->at(t, cells[i], features[j]);
        return x;
    }
};

inline WindowedDataset make_windows(const KpiPanel& panel,
                                    const std::vector<std::size_t>& cells,
                                    const std::vector<std::size_t>& features,
                                    std::size_t mb, std::size_t hz,
                                    LabelMode label_mode = LabelMode::any_within_horizon) {
    if (panel.hours < mb + hz)
        throw validation_error("make_windows: T=" + std::to_string(panel.hours) +
                               " too small for mb+hz=" + std::to_string(mb + hz));
    if (panel.hot.size() != panel.hours)
        throw validation_error("make_windows: panel has no labels");
    WindowedDataset ds;
    ds.panel = &panel;
    ds.cells = cells;
    ds.features = features;
    ds.mb = mb;
    ds.hz = hz;
    const std::size_t n = panel.hours - mb - hz + 1;
    ds.starts.resize(n);
    std::iota(ds.starts.begin(), ds.starts.end(), 0);
    ds.targets.assign(n, std::vector<std::uint8_t>(cells.size(), 0));
    for (std::size_t w = 0; w < n; ++w) {
        const std::size_t s = ds.starts[w];
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::size_t cell = cells[c];
            if (label_mode == LabelMode::any_within_horizon) {
                for (std::size_t t = s + mb; t < s + mb + hz; ++t)
                    if (panel.hot[t][cell]) { ds.targets[w][c] = 1; break; }
            } else {
                ds.targets[w][c] = panel.hot[s + mb + hz - 1][cell];
            }
        }
    }
    return ds;
}

struct SplitSpec {
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
};

struct SplitResult {
    WindowedDataset train, val, test;
};

// Chronological split with a guard gap of (mb+hz-1) windows dropped from
// the tail of train and val, so no input window or horizon crosses a
// boundary.
inline SplitResult chronological_split(const WindowedDataset& ds, const SplitSpec& spec) {
    if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9)
        throw validation_error("chronological_split: fractions must sum to 1");
    const std::size_t n = ds.n_windows();
    const std::size_t b1 = static_cast<std::size_t>(spec.train_frac * static_cast<double>(n));
    const std::size_t b2 =
        static_cast<std::size_t>((spec.train_frac + spec.val_frac) * static_cast<double>(n));
    const std::size_t gap = ds.mb + ds.hz - 1;
    if (b1 <= gap || b2 <= b1 + gap || n <= b2)
        throw validation_error("chronological_split: split too small to survive guard gaps");
    auto slice = [&](std::size_t lo, std::size_t hi) {
        WindowedDataset out;
        out.panel = ds.panel;
        out.cells = ds.cells;
        out.features = ds.features;
        out.mb = ds.mb;
        out.hz = ds.hz;
        out.starts.assign(ds.starts.begin() + lo, ds.starts.begin() + hi);
        out.targets.assign(ds.targets.begin() + lo, ds.targets.begin() + hi);
        return out;
    };
    SplitResult r;
    r.train = slice(0, b1 - gap);
    r.val = slice(b1, b2 - gap);
    r.test = slice(b2, n);
    return r;
}

} // namespace lnet
