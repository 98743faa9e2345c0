#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "lightningnet/ensemble.hpp"
#include "lightningnet/graph.hpp"
#include "lightningnet/metrics.hpp"
#include "lightningnet/models.hpp"
#include "lightningnet/rng.hpp"

namespace lnet {

struct CrossEvalGrid {
    std::size_t k = 0;
    std::vector<std::vector<ConfusionMatrix>> cells; // [model i][subgraph j]

    PrecisionRecall at(std::size_t i, std::size_t j) const {
        return precision_recall(cells[i][j]);
    }
    // micro-aggregated row for one model across all sub-graphs
    PrecisionRecall row_micro(std::size_t i) const {
        return precision_recall(aggregate_confusion(cells[i]));
    }
};

// Each sub-classifier is re-bound to the target sub-graph's renormalized
// operator; parameters transfer, the graph operator is local.
inline CrossEvalGrid cross_evaluate(const std::vector<SubClassifier>& scs,
                                    const std::vector<WindowedDataset>& test_sets,
                                    const std::vector<Tensor2D>& a_hats) {
    const std::size_t k = scs.size();
    if (test_sets.size() != k || a_hats.size() != k)
        throw validation_error("cross_evaluate: need one test set and operator per model");
    CrossEvalGrid grid;
    grid.k = k;
    grid.cells.assign(k, std::vector<ConfusionMatrix>(k));
    // classifiers trained on [own | aggregated] inputs are twice as wide
    const bool augmented =
        !test_sets.empty() && scs[0].f_in == 2 * test_sets[0].features.size();
    for (std::size_t j = 0; j < k; ++j) {
        const auto hours = materialize_hours(test_sets[j], &a_hats[j], augmented);
        for (std::size_t i = 0; i < k; ++i) {
            if (scs[i].f_in != (augmented ? 2 : 1) * test_sets[j].features.size())
                throw validation_error("cross_evaluate: feature width mismatch at (" +
                                       std::to_string(i) + "," + std::to_string(j) + ")");
            SubClassifier model = scs[i];
            model.rebind(a_hats[j]);
            grid.cells[i][j] = evaluate_model(model, test_sets[j], hours,
                                              model.config.decision_threshold);
        }
    }
    return grid;
}

// Eq.-10 style ratio: metric(SC_i on SG_i) / metric(SC_i on SG_j).
inline std::optional<double> transfer_ratio(const CrossEvalGrid& grid,
                                            FallbackMetric metric, std::size_t i,
                                            std::size_t j) {
    auto value = [&](std::size_t a, std::size_t b) {
        PrecisionRecall pr = grid.at(a, b);
        return metric == FallbackMetric::precision ? pr.precision : pr.recall;
    };
    const double denom = value(i, j);
    if (denom <= 0.0) return std::nullopt;
    return value(i, i) / denom;
}

// ---------------------------------------------------------------------------
// Rank statistics
// ---------------------------------------------------------------------------

// average ranks (1-based), ties share the mean rank
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double xm = 0.0, ym = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) { xm += x[i]; ym += y[i]; }
    xm /= n;
    ym /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - xm) * (x[i] - xm);
        syy += (y[i] - ym) * (y[i] - ym);
        sxy += (x[i] - xm) * (y[i] - ym);
    }
    const double denom = std::sqrt(sxx * syy);
    return denom > 0.0 ? sxy / denom : std::nan("");
}

struct SpearmanResult {
    double r_s = 0.0;
    double p_value = 1.0;
    bool defined = false;
};

// Two-sided permutation p-value: exact enumeration for n <= 8, otherwise
// a 10,000-draw seeded Monte-Carlo permutation test.
inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y,
                               std::uint64_t seed = 20240901) {
    const std::size_t n = x.size();
    if (n < 3 || y.size() != n)
        throw validation_error("spearman: need equal lengths >= 3");
    std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    const double r_obs = pearson(rx, ry);
    SpearmanResult res;
    if (std::isnan(r_obs)) return res; // constant vector
    res.defined = true;
    res.r_s = r_obs;
    const double threshold = std::abs(r_obs) - 1e-12;

    if (n <= 8) {
        std::vector<double> perm = ry;
        std::sort(perm.begin(), perm.end());
        std::size_t total = 0, extreme = 0;
        do {
            ++total;
            const double r = pearson(rx, perm);
            if (!std::isnan(r) && std::abs(r) >= threshold) ++extreme;
        } while (std::next_permutation(perm.begin(), perm.end()));
        res.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    } else {
        Rng rng(mix_seed(seed, 0x5E));
        const std::size_t draws = 10000;
        std::size_t extreme = 0;
        std::vector<double> perm = ry;
        for (std::size_t d = 0; d < draws; ++d) {
            for (std::size_t i = perm.size(); i > 1; --i)
                std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
            const double r = pearson(rx, perm);
            if (!std::isnan(r) && std::abs(r) >= threshold) ++extreme;
        }
        res.p_value = static_cast<double>(extreme + 1) / static_cast<double>(draws + 1);
    }
    return res;
}

struct HolmResult {
    std::vector<bool> rejected;
    std::vector<double> adjusted;
};

// Step-down Holm: sorted p_(i) vs alpha/(m-i+1); adjusted p is the running
// max of min(1, (m-i+1)*p_(i)).
inline HolmResult holm_adjust(const std::vector<double>& p_values, double alpha) {
    const std::size_t m = p_values.size();
    HolmResult res;
    res.rejected.assign(m, false);
    res.adjusted.assign(m, 1.0);
    if (m == 0) return res;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    double running = 0.0;
    bool stopped = false;
    for (std::size_t i = 0; i < m; ++i) {
        const double p = p_values[order[i]];
        const double factor = static_cast<double>(m - i);
        running = std::max(running, std::min(1.0, factor * p));
        res.adjusted[order[i]] = running;
        if (!stopped && p <= alpha / factor)
            res.rejected[order[i]] = true;
        else
            stopped = true;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Similarity vs transferability study
// ---------------------------------------------------------------------------

struct StudyRow {
    std::size_t anchor = 0, other = 0;
    double sim = 0.0;
    std::optional<double> precision_ratio, recall_ratio;
};

struct StudyTest {
    std::size_t anchor = 0;
    FallbackMetric metric = FallbackMetric::precision;
    bool defined = false;
    double r_s = 0.0;
    double p_value = 1.0;
    double p_adjusted = 1.0;
    bool rejected = false;
};

struct SimilarityStudy {
    std::vector<StudyRow> rows;
    std::vector<StudyTest> tests;
    bool skipped = false;
};

// Per anchor sub-graph: correlate sim(SG_i, SG_j) with the transfer ratio
// over j != i; Holm-correct each metric's family of k tests.
inline SimilarityStudy similarity_vs_transfer_study(const std::vector<Spectrum>& spectra,
                                                    const CrossEvalGrid& grid,
                                                    double alpha = 0.05) {
    const std::size_t k = grid.k;
    if (spectra.size() != k)
        throw validation_error("similarity_vs_transfer_study: spectra count mismatch");
    SimilarityStudy study;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            StudyRow row;
            row.anchor = i;
            row.other = j;
            row.sim = subgraph_similarity(spectra[i], spectra[j]);
            row.precision_ratio = transfer_ratio(grid, FallbackMetric::precision, i, j);
            row.recall_ratio = transfer_ratio(grid, FallbackMetric::recall, i, j);
            study.rows.push_back(row);
        }

    for (FallbackMetric metric : {FallbackMetric::precision, FallbackMetric::recall}) {
        std::vector<StudyTest> tests;
        for (std::size_t i = 0; i < k; ++i) {
            StudyTest test;
            test.anchor = i;
            test.metric = metric;
            std::vector<double> sims, ratios;
            for (const auto& row : study.rows) {
                if (row.anchor != i) continue;
                const auto& ratio = metric == FallbackMetric::precision
                                        ? row.precision_ratio
                                        : row.recall_ratio;
                if (!ratio) continue;
                sims.push_back(row.sim);
                ratios.push_back(*ratio);
            }
            if (sims.size() >= 3) {
                SpearmanResult sr = spearman(sims, ratios);
                test.defined = sr.defined;
                test.r_s = sr.r_s;
                test.p_value = sr.p_value;
            }
            tests.push_back(test);
        }
        std::vector<double> ps;
        std::vector<std::size_t> idx;
        for (std::size_t t = 0; t < tests.size(); ++t)
            if (tests[t].defined) {
                ps.push_back(tests[t].p_value);
                idx.push_back(t);
            }
        HolmResult hr = holm_adjust(ps, alpha);
        for (std::size_t t = 0; t < idx.size(); ++t) {
            tests[idx[t]].p_adjusted = hr.adjusted[t];
            tests[idx[t]].rejected = hr.rejected[t];
        }
        for (auto& t : tests) study.tests.push_back(t);
    }
    bool any_defined = false;
    for (const auto& t : study.tests) any_defined |= t.defined;
    study.skipped = !any_defined;
    return study;
}

} // namespace lnet
