#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lightningnet/datagen.hpp"
#include "lightningnet/ensemble.hpp"
#include "lightningnet/evalx.hpp"
#include "lightningnet/graph.hpp"
#include "lightningnet/io.hpp"
#include "lightningnet/models.hpp"
#include "lightningnet/prep.hpp"

namespace lnet {

// ---------------------------------------------------------------------------
// Experiment configuration (single JSON file; flags > config > defaults)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::size_t jobs = 1;

    // network + generator
    std::size_t n_cells = 400;
    std::size_t n_clusters = 4;
    double cluster_radius_km = 0.5;
    std::size_t hours = 1440;
    std::size_t n_features = 35;
    double target_hot_rate = 0.0025;
    double item_missing_rate = 0.01;
    double unit_missing_rate = 0.002;
    KpiGenConfig kpi; // advanced generator knobs (seed/hours/F overridden)

    // graph / partition
    double threshold_km = 1.0;
    std::size_t k = 4;

    // prep
    std::string impute_method = "mean";
    std::size_t knn_k = 5;
    double nzv_threshold = 1e-8;
    std::string label_mode = "any"; // any | at_horizon
    std::size_t train_stride = 1;

    // windowing
    std::size_t mb = 24;
    std::size_t hz = 12;

    ModelConfig model; // mb/hz/seed filled from the fields above
    HmConfig hm;       // k/seed filled from the fields above
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["out_dir"] = c.out_dir;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["network"] = {{"n_cells", c.n_cells},
                    {"n_clusters", c.n_clusters},
                    {"cluster_radius_km", c.cluster_radius_km}};
    j["data"] = {{"hours", c.hours},
                 {"n_features", c.n_features},
                 {"target_hot_rate", c.target_hot_rate},
                 {"item_missing_rate", c.item_missing_rate},
                 {"unit_missing_rate", c.unit_missing_rate}};
    j["generator"] = {{"n_score_features", c.kpi.n_score_features},
                      {"event_rate", c.kpi.event_rate},
                      {"event_spread", c.kpi.event_spread},
                      {"event_duration_mean", c.kpi.event_duration_mean},
                      {"event_ramp", c.kpi.event_ramp},
                      {"neighbor_lag_hours", c.kpi.neighbor_lag_hours},
                      {"event_amp", c.kpi.event_amp},
                      {"noise_sd", c.kpi.noise_sd},
                      {"ar1", c.kpi.ar1},
                      {"diurnal_amp", c.kpi.diurnal_amp},
                      {"weekly_amp", c.kpi.weekly_amp}};
    j["graph"] = {{"threshold_km", c.threshold_km}, {"k", c.k}};
    j["prep"] = {{"impute_method", c.impute_method},
                 {"knn_k", c.knn_k},
                 {"nzv_threshold", c.nzv_threshold},
                 {"label_mode", c.label_mode},
                 {"train_stride", c.train_stride}};
    j["window"] = {{"mb", c.mb}, {"hz", c.hz}};
    j["model"] = model_config_to_json(c.model);
    j["hm"] = {{"h1", c.hm.h1},
               {"h2", c.hm.h2},
               {"lr", c.hm.lr},
               {"epochs", c.hm.epochs},
               {"batch_size", c.hm.batch_size},
               {"decision_threshold", c.hm.decision_threshold},
               {"recall_floor", c.hm.recall_floor},
               {"patience", c.hm.patience}};
    return j;
}

// Missing required keys raise validation errors naming the key; optional
// keys fall back to defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    auto require = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
        if (!obj.contains(key))
            throw validation_error(std::string("config: missing required field '") + key +
                                   "'");
        return obj.at(key);
    };
    c.out_dir = require(j, "out_dir").get<std::string>();
    c.seed = require(j, "seed").get<std::uint64_t>();
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("network")) {
        const auto& n = j.at("network");
        c.n_cells = n.value("n_cells", c.n_cells);
        c.n_clusters = n.value("n_clusters", c.n_clusters);
        c.cluster_radius_km = n.value("cluster_radius_km", c.cluster_radius_km);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.hours = d.value("hours", c.hours);
        c.n_features = d.value("n_features", c.n_features);
        c.target_hot_rate = d.value("target_hot_rate", c.target_hot_rate);
        c.item_missing_rate = d.value("item_missing_rate", c.item_missing_rate);
        c.unit_missing_rate = d.value("unit_missing_rate", c.unit_missing_rate);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        c.kpi.n_score_features = g.value("n_score_features", c.kpi.n_score_features);
        c.kpi.event_rate = g.value("event_rate", c.kpi.event_rate);
        c.kpi.event_spread = g.value("event_spread", c.kpi.event_spread);
        c.kpi.event_duration_mean = g.value("event_duration_mean", c.kpi.event_duration_mean);
        c.kpi.event_ramp = g.value("event_ramp", c.kpi.event_ramp);
        c.kpi.neighbor_lag_hours = g.value("neighbor_lag_hours", c.kpi.neighbor_lag_hours);
        c.kpi.event_amp = g.value("event_amp", c.kpi.event_amp);
        c.kpi.noise_sd = g.value("noise_sd", c.kpi.noise_sd);
        c.kpi.ar1 = g.value("ar1", c.kpi.ar1);
        c.kpi.diurnal_amp = g.value("diurnal_amp", c.kpi.diurnal_amp);
        c.kpi.weekly_amp = g.value("weekly_amp", c.kpi.weekly_amp);
    }
    if (j.contains("graph")) {
        const auto& g = j.at("graph");
        c.threshold_km = g.value("threshold_km", c.threshold_km);
        c.k = g.value("k", c.k);
    }
    if (j.contains("prep")) {
        const auto& p = j.at("prep");
        c.impute_method = p.value("impute_method", c.impute_method);
        c.knn_k = p.value("knn_k", c.knn_k);
        c.nzv_threshold = p.value("nzv_threshold", c.nzv_threshold);
        c.label_mode = p.value("label_mode", c.label_mode);
        c.train_stride = p.value("train_stride", c.train_stride);
    }
    if (j.contains("window")) {
        const auto& w = j.at("window");
        c.mb = w.value("mb", c.mb);
        c.hz = w.value("hz", c.hz);
    }
    if (j.contains("model")) {
        nlohmann::json m = model_config_to_json(c.model);
        m.update(j.at("model"));
        c.model = model_config_from_json(m);
    }
    if (j.contains("hm")) {
        const auto& h = j.at("hm");
        c.hm.h1 = h.value("h1", c.hm.h1);
        c.hm.h2 = h.value("h2", c.hm.h2);
        c.hm.lr = h.value("lr", c.hm.lr);
        c.hm.epochs = h.value("epochs", c.hm.epochs);
        c.hm.batch_size = h.value("batch_size", c.hm.batch_size);
        c.hm.decision_threshold = h.value("decision_threshold", c.hm.decision_threshold);
        c.hm.recall_floor = h.value("recall_floor", c.hm.recall_floor);
        c.hm.patience = h.value("patience", c.hm.patience);
    }
    return c;
}

// Hard errors for impossible values; out-of-grid but workable values are
// returned as warnings (documented ranges are extensible).
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> warnings;
    if (c.n_cells < 1 || c.n_clusters < 1 || c.n_cells < c.n_clusters)
        throw validation_error("config: need n_cells >= n_clusters >= 1");
    if (c.k < 1 || c.k > c.n_cells)
        throw validation_error("config: k out of range");
    if (c.hours < c.mb + c.hz)
        throw validation_error("config: hours must be >= mb + hz");
    if (c.target_hot_rate <= 0.0 || c.target_hot_rate >= 1.0)
        throw validation_error("config: target_hot_rate must be in (0,1)");
    if (c.item_missing_rate < 0.0 || c.item_missing_rate > 1.0 ||
        c.unit_missing_rate < 0.0 || c.unit_missing_rate > 1.0)
        throw validation_error("config: missing rates must be in [0,1]");
    if (c.train_stride < 1)
        throw validation_error("config: train_stride must be >= 1");
    if (c.label_mode != "any" && c.label_mode != "at_horizon")
        throw validation_error("config: label_mode must be 'any' or 'at_horizon'");
    impute_method_from_string(c.impute_method); // throws on unknown names

    auto in = [](auto v, std::initializer_list<decltype(v)> set) {
        for (auto s : set)
            if (v == s) return true;
        return false;
    };
    if (!in(c.mb, {std::size_t(12), std::size_t(24), std::size_t(36), std::size_t(48)}))
        warnings.push_back("mb=" + std::to_string(c.mb) + " outside the documented grid {12,24,36,48}");
    if (!in(c.hz, {std::size_t(12), std::size_t(24), std::size_t(48)}))
        warnings.push_back("hz=" + std::to_string(c.hz) + " outside the documented grid {12,24,48}");
    if (!in(c.threshold_km, {0.0, 0.1, 0.5, 1.0, 1.5, 3.0}))
        warnings.push_back("threshold_km=" + fmt_double(c.threshold_km) +
                           " outside the documented list {0,0.1,0.5,1,1.5,3}");
    return warnings;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error(std::string("config: invalid JSON: ") + e.what());
    }
    return experiment_config_from_json(j);
}

inline std::string config_hash(const ExperimentConfig& c) {
    return content_hash(experiment_config_to_json(c).dump());
}

// ---------------------------------------------------------------------------
// Pipeline state and stages
// ---------------------------------------------------------------------------

enum class Stage { gen, prep, partition, train, crosseval, ensemble, report };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::gen: return "gen";
        case Stage::prep: return "prep";
        case Stage::partition: return "partition";
        case Stage::train: return "train";
        case Stage::crosseval: return "crosseval";
        case Stage::ensemble: return "ensemble";
        case Stage::report: return "report";
    }
    return "?";
}

struct SubgraphRun {
    std::vector<std::size_t> members; // panel cell indices, node order
    Tensor2D a_hat;
    Spectrum spectrum;
    WindowedDataset windows;
    SplitResult split;
    std::vector<Tensor2D> agg_hours; // a_hat * X_t per panel hour
    bool loaded_from_checkpoint = false;
};

struct EnsembleRun {
    HierarchicalModel hm;
    PrecisionRecall hm_val, hm_test;
    std::vector<PrecisionRecall> sc_val, sc_test; // SC_i on this target SG
    FallbackChoice choice;
    PrecisionRecall final_test;
    bool loaded_from_checkpoint = false;
};

struct PipelineState {
    ExperimentConfig cfg;
    std::vector<std::string> warnings;
    Manifest manifest;

    CellNetwork net;
    KpiPanel panel; // masked/imputed working panel with clean-truth labels
    ScoreConfig score;
    double realized_hot_rate = 0.0;

    std::vector<std::size_t> kept_features;
    FeatureStats stats;
    std::vector<ImputeWarning> impute_warnings;

    SubGraphPartition part;
    std::vector<std::size_t> hotspot_rank;
    std::vector<SubgraphRun> sg;

    std::vector<SubClassifier> scs;
    std::vector<TrainLog> sc_logs;

    CrossEvalGrid grid;
    SimilarityStudy study;

    std::vector<EnsembleRun> ens;
    nlohmann::json report;
};

namespace detail {

inline WindowedDataset stride_windows(const WindowedDataset& ds, std::size_t stride) {
    if (stride <= 1) return ds;
    WindowedDataset out = ds;
    out.starts.clear();
    out.targets.clear();
    for (std::size_t w = 0; w < ds.n_windows(); w += stride) {
        out.starts.push_back(ds.starts[w]);
        out.targets.push_back(ds.targets[w]);
    }
    return out;
}

inline double auto_pos_weight(const WindowedDataset& ds) {
    std::size_t pos = 0, total = 0;
    for (const auto& row : ds.targets) {
        total += row.size();
        for (auto v : row) pos += v;
    }
    if (pos == 0 || pos == total) return 1.0;
    const double w = static_cast<double>(total - pos) / static_cast<double>(pos);
    return std::clamp(w, 1.0, 50.0);
}

// Stacked SC label matrix over one dataset's (window, cell) rows, plus truth.
inline void stack_sc_labels(const std::vector<SubClassifier>& scs,
                            const WindowedDataset& ds,
                            const std::vector<Tensor2D>& agg_hours,
                            const Tensor2D& a_hat, Tensor2D& x_out,
                            std::vector<std::uint8_t>& y_out) {
    const std::size_t k = scs.size();
    std::vector<std::vector<std::vector<std::uint8_t>>> labels(k);
    for (std::size_t i = 0; i < k; ++i) {
        SubClassifier m = scs[i];
        m.rebind(a_hat);
        labels[i] = predict_labels(m, ds, agg_hours, m.config.decision_threshold);
    }
    const std::size_t cells = ds.cells.size();
    x_out = Tensor2D(ds.n_windows() * cells, k);
    y_out.assign(ds.n_windows() * cells, 0);
    for (std::size_t w = 0; w < ds.n_windows(); ++w)
        for (std::size_t c = 0; c < cells; ++c) {
            const std::size_t row = w * cells + c;
            for (std::size_t i = 0; i < k; ++i) x_out(row, i) = labels[i][w][c];
            y_out[row] = ds.targets[w][c];
        }
}

inline nlohmann::json pr_json(const PrecisionRecall& pr) {
    return nlohmann::json{{"precision", pr.precision},
                          {"recall", pr.recall},
                          {"precision_defined", pr.precision_defined},
                          {"recall_defined", pr.recall_defined}};
}

template <class Fn>
void run_jobs(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t w = 0; w < std::min(jobs, n); ++w)
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

inline void stage_gen(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    NetworkGenConfig ng;
    ng.n_cells = cfg.n_cells;
    ng.n_clusters = cfg.n_clusters;
    ng.cluster_radius_km = cfg.cluster_radius_km;
    ng.seed = cfg.seed;
    st.net = generate_network(ng);
    st.net.threshold_km = cfg.threshold_km;
    st.net.adjacency = build_adjacency(distance_matrix(st.net), cfg.threshold_km);

    KpiGenConfig kg = cfg.kpi;
    kg.hours = cfg.hours;
    kg.n_features = cfg.n_features;
    kg.seed = cfg.seed;
    st.panel = generate_kpi_series(st.net, kg);

    st.score = default_score_config(kg);
    st.score.hot_cutoff = calibrate_hot_cutoff(st.panel, st.score, cfg.target_hot_rate);
    label_panel(st.panel, st.score); // labels from the clean panel
    std::size_t hot_count = 0;
    for (const auto& row : st.panel.hot)
        for (auto v : row) hot_count += v;
    st.realized_hot_rate =
        static_cast<double>(hot_count) / static_cast<double>(cfg.hours * cfg.n_cells);

    inject_missingness(st.panel, cfg.item_missing_rate, cfg.unit_missing_rate,
                       mix_seed(cfg.seed, 0x31));

    const std::string& dir = cfg.out_dir;
    emit_file(dir, "cells.csv", cells_csv(st.net), st.manifest);
    emit_file(dir, "kpis.csv", kpis_csv(st.panel), st.manifest);
    emit_file(dir, "labels.csv", labels_csv(st.panel), st.manifest);
    emit_file(dir, "score_config.json", score_config_json(st.score), st.manifest);
}

inline void stage_prep(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    impute_unit_nonresponse(st.panel);
    st.impute_warnings =
        impute(st.panel, impute_method_from_string(cfg.impute_method), cfg.knn_k,
               nullptr, mix_seed(cfg.seed, 0x32));
    st.kept_features = near_zero_variance_filter(st.panel, cfg.nzv_threshold);
    if (st.kept_features.empty())
        throw data_error("prep: all features filtered out");

    // z-score with statistics from the chronological train portion only
    const std::size_t train_hours =
        std::max<std::size_t>(1, static_cast<std::size_t>(0.8 * static_cast<double>(cfg.hours)));
    st.stats = compute_feature_stats(st.panel, 0, train_hours);
    apply_zscore(st.panel, st.stats);

    nlohmann::json sel{{"method", "near_zero_variance"},
                       {"indices", st.kept_features},
                       {"score", 0.0}};
    emit_file(cfg.out_dir, "selected_features.json", sel.dump(2) + "\n", st.manifest);
    nlohmann::json stats{{"mean", st.stats.mean},
                         {"sd", st.stats.sd},
                         {"train_hours", train_hours}};
    emit_file(cfg.out_dir, "prep_stats.json", stats.dump(2) + "\n", st.manifest);
}

inline void stage_partition(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    st.part = partition_graph(st.net, cfg.k, cfg.seed);
    st.hotspot_rank = rank_subgraphs_by_hotspots(st.part, st.panel.hot);
    st.sg.assign(cfg.k, {});
    for (std::size_t g = 0; g < cfg.k; ++g) {
        SubgraphRun& run = st.sg[g];
        run.members = st.part.members(g);
        Tensor2D sub_a = induced_subgraph(st.net.adjacency, run.members);
        run.a_hat = renormalized_operator(sub_a);
        run.spectrum = symmetric_eigenvalues(laplacian(sub_a));
    }
    nlohmann::json j;
    j["k"] = cfg.k;
    j["assignment"] = st.part.assignment;
    j["sizes"] = st.part.sizes;
    j["hotspot_rank"] = st.hotspot_rank;
    nlohmann::json sim = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t jj = 0; jj < cfg.k; ++jj)
            row.push_back(subgraph_similarity(st.sg[i].spectrum, st.sg[jj].spectrum));
        sim.push_back(row);
    }
    j["similarity"] = sim;
    emit_file(cfg.out_dir, "partition.json", j.dump(2) + "\n", st.manifest);
}

inline void stage_train(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    st.scs.assign(cfg.k, {});
    st.sc_logs.assign(cfg.k, {});

    for (std::size_t g = 0; g < cfg.k; ++g) {
        SubgraphRun& run = st.sg[g];
        run.windows = make_windows(st.panel, run.members, st.kept_features, cfg.mb, cfg.hz,
                                   cfg.label_mode == "any" ? LabelMode::any_within_horizon
                                                           : LabelMode::at_horizon);
        run.split = chronological_split(run.windows, SplitSpec{});
        run.agg_hours = materialize_hours(run.windows, &run.a_hat, /*augment=*/true);
    }

    detail::run_jobs(cfg.k, cfg.jobs, [&](std::size_t g) {
        SubgraphRun& run = st.sg[g];
        const std::string name = "sc_" + std::to_string(g) + ".ckpt";
        ModelConfig mc = cfg.model;
        mc.mb = cfg.mb;
        mc.hz = cfg.hz;
        mc.seed = mix_seed(cfg.seed, 0x40, g);
        if (mc.pos_weight <= 0.0) mc.pos_weight = detail::auto_pos_weight(run.split.train);

        if (file_valid(cfg.out_dir, name, st.manifest)) {
            SubClassifier loaded = load_subclassifier(cfg.out_dir + "/" + name);
            if (loaded.f_in == 2 * st.kept_features.size() &&
                loaded.a_hat.same_shape(run.a_hat)) {
                st.scs[g] = std::move(loaded);
                run.loaded_from_checkpoint = true;
                return;
            }
        }
        // input rows are [own features | aggregated features]
        SubClassifier model(2 * st.kept_features.size(), run.a_hat, mc);
        WindowedDataset train = detail::stride_windows(run.split.train, cfg.train_stride);
        st.sc_logs[g] = train_model(model, train, run.split.val, run.agg_hours);
        calibrate_decision_threshold(model, run.split.val, run.agg_hours);
        st.scs[g] = std::move(model);
    });

    for (std::size_t g = 0; g < cfg.k; ++g) {
        const std::string name = "sc_" + std::to_string(g) + ".ckpt";
        if (!st.sg[g].loaded_from_checkpoint) {
            save_subclassifier(cfg.out_dir + "/" + name, st.scs[g]);
            st.manifest.files[name] = content_hash(read_file(cfg.out_dir + "/" + name));
            // evaluate through the persisted float32 weights so resumed runs
            // and fresh runs score identically
            st.scs[g] = load_subclassifier(cfg.out_dir + "/" + name);
            const TrainLog& log = st.sc_logs[g];
            nlohmann::json tj;
            tj["epochs_run"] = log.epochs.size();
            tj["best_epoch"] = log.best_epoch;
            tj["val_precision"] =
                log.epochs.empty() ? 0.0 : log.epochs[log.best_epoch].val_precision;
            tj["val_recall"] =
                log.epochs.empty() ? 0.0 : log.epochs[log.best_epoch].val_recall;
            tj["decision_threshold"] = st.scs[g].config.decision_threshold;
            tj["no_positives_warning"] = log.no_positives_warning;
            emit_file(cfg.out_dir, "sc_" + std::to_string(g) + ".train.json",
                      tj.dump(2) + "\n", st.manifest);
        }
    }
}

inline std::string cross_eval_csv(const CrossEvalGrid& grid) {
    std::string out = "i,j,tp,fp,fn,tn,precision,recall\n";
    for (std::size_t i = 0; i < grid.k; ++i)
        for (std::size_t j = 0; j < grid.k; ++j) {
            const ConfusionMatrix& cm = grid.cells[i][j];
            PrecisionRecall pr = precision_recall(cm);
            out += std::to_string(i) + "," + std::to_string(j) + "," +
                   std::to_string(cm.tp) + "," + std::to_string(cm.fp) + "," +
                   std::to_string(cm.fn) + "," + std::to_string(cm.tn) + "," +
                   fmt_double(pr.precision) + "," + fmt_double(pr.recall) + "\n";
        }
    return out;
}

inline std::string similarity_study_csv(const SimilarityStudy& study) {
    std::string out = "anchor,other,sim,precision_ratio,recall_ratio\n";
    auto opt = [](const std::optional<double>& v) {
        return v ? fmt_double(*v) : std::string();
    };
    for (const auto& row : study.rows)
        out += std::to_string(row.anchor) + "," + std::to_string(row.other) + "," +
               fmt_double(row.sim) + "," + opt(row.precision_ratio) + "," +
               opt(row.recall_ratio) + "\n";
    out += "anchor,metric,r_s,p_value,p_adjusted,rejected,defined\n";
    for (const auto& t : study.tests)
        out += std::to_string(t.anchor) + "," +
               (t.metric == FallbackMetric::precision ? "precision" : "recall") + "," +
               fmt_double(t.r_s) + "," + fmt_double(t.p_value) + "," +
               fmt_double(t.p_adjusted) + "," + (t.rejected ? "1" : "0") + "," +
               (t.defined ? "1" : "0") + "\n";
    return out;
}

inline void stage_crosseval(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    std::vector<WindowedDataset> tests;
    std::vector<Tensor2D> a_hats;
    std::vector<Spectrum> spectra;
    for (std::size_t g = 0; g < cfg.k; ++g) {
        tests.push_back(st.sg[g].split.test);
        a_hats.push_back(st.sg[g].a_hat);
        spectra.push_back(st.sg[g].spectrum);
    }
    st.grid = cross_evaluate(st.scs, tests, a_hats);
    st.study = similarity_vs_transfer_study(spectra, st.grid);
    emit_file(cfg.out_dir, "cross_eval.csv", cross_eval_csv(st.grid), st.manifest);
    emit_file(cfg.out_dir, "similarity_study.csv", similarity_study_csv(st.study),
              st.manifest);
}

inline void stage_ensemble(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    st.ens.clear();
    if (cfg.k < 2) return; // single-model pipeline: no HM

    st.ens.resize(cfg.k);
    detail::run_jobs(cfg.k, cfg.jobs, [&](std::size_t g) {
        SubgraphRun& run = st.sg[g];
        EnsembleRun& er = st.ens[g];
        const std::string name = "hm_" + std::to_string(g) + ".ckpt";

        Tensor2D x_train, x_val, x_test;
        std::vector<std::uint8_t> y_train, y_val, y_test;
        detail::stack_sc_labels(st.scs, run.split.train, run.agg_hours, run.a_hat,
                                x_train, y_train);
        detail::stack_sc_labels(st.scs, run.split.val, run.agg_hours, run.a_hat, x_val,
                                y_val);
        detail::stack_sc_labels(st.scs, run.split.test, run.agg_hours, run.a_hat, x_test,
                                y_test);

        HmConfig hc = cfg.hm;
        hc.k = cfg.k;
        hc.seed = mix_seed(cfg.seed, 0x50, g);
        std::size_t pos = 0;
        for (auto v : y_train) pos += v;
        hc.pos_weight =
            pos == 0 || pos == y_train.size()
                ? 1.0
                : std::clamp(static_cast<double>(y_train.size() - pos) /
                                 static_cast<double>(pos),
                             1.0, 50.0);

        bool loaded = false;
        if (file_valid(cfg.out_dir, name, st.manifest)) {
            HierarchicalModel hm = load_hm(cfg.out_dir + "/" + name);
            if (hm.config.k == cfg.k) {
                er.hm = std::move(hm);
                er.loaded_from_checkpoint = loaded = true;
            }
        }
        if (!loaded) {
            er.hm = HierarchicalModel(hc);
            train_hm(er.hm, x_train, y_train, x_val, y_val);
            // round-trip through the float32 checkpoint encoding in memory so
            // evaluation matches a resumed run exactly
            const std::string tmp = cfg.out_dir + "/hm_" + std::to_string(g) + ".tmp.ckpt";
            save_hm(tmp, er.hm);
            er.hm = load_hm(tmp);
            std::filesystem::remove(tmp);
            calibrate_hm_threshold(er.hm, x_val, y_val);
        }

        auto eval_hm = [&](const Tensor2D& x, const std::vector<std::uint8_t>& y) {
            Tensor2D p = hm_forward(er.hm, x);
            ConfusionMatrix cm;
            for (std::size_t i = 0; i < p.rows(); ++i)
                cm.add(p(i, 0) >= er.hm.config.decision_threshold, y[i] != 0);
            return precision_recall(cm);
        };
        er.hm_val = eval_hm(x_val, y_val);
        er.hm_test = eval_hm(x_test, y_test);

        // per-SC reports on this target sub-graph's validation/test windows
        for (std::size_t i = 0; i < cfg.k; ++i) {
            SubClassifier m = st.scs[i];
            m.rebind(run.a_hat);
            er.sc_val.push_back(precision_recall(evaluate_model(
                m, run.split.val, run.agg_hours, m.config.decision_threshold)));
            er.sc_test.push_back(precision_recall(evaluate_model(
                m, run.split.test, run.agg_hours, m.config.decision_threshold)));
        }
        er.choice = fallback_select(er.hm_val, er.sc_val);
        er.final_test = er.choice.use_hm ? er.hm_test : er.sc_test[er.choice.sc_index];
    });

    for (std::size_t g = 0; g < cfg.k; ++g) {
        const std::string name = "hm_" + std::to_string(g) + ".ckpt";
        if (!st.ens[g].loaded_from_checkpoint) {
            save_hm(cfg.out_dir + "/" + name, st.ens[g].hm);
            st.manifest.files[name] = content_hash(read_file(cfg.out_dir + "/" + name));
        }
    }
}

inline void stage_report(PipelineState& st) {
    const ExperimentConfig& cfg = st.cfg;
    nlohmann::json r;
    r["config"] = experiment_config_to_json(cfg);
    r["warnings"] = st.warnings;
    r["data"] = {{"cells", st.panel.n_cells()},
                 {"hours", st.panel.hours},
                 {"features_kept", st.kept_features},
                 {"hot_rate", st.realized_hot_rate},
                 {"hot_cutoff", st.score.hot_cutoff},
                 {"impute_warnings", st.impute_warnings.size()}};
    nlohmann::json sim = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < cfg.k; ++j)
            row.push_back(subgraph_similarity(st.sg[i].spectrum, st.sg[j].spectrum));
        sim.push_back(row);
    }
    r["partition"] = {{"sizes", st.part.sizes},
                      {"hotspot_rank", st.hotspot_rank},
                      {"similarity", sim}};

    nlohmann::json scs = nlohmann::json::array();
    for (std::size_t g = 0; g < cfg.k; ++g) {
        nlohmann::json sj;
        sj["id"] = g;
        const std::string train_file =
            cfg.out_dir + "/sc_" + std::to_string(g) + ".train.json";
        if (std::filesystem::exists(train_file))
            sj["training"] = nlohmann::json::parse(read_file(train_file));
        PrecisionRecall pr = st.grid.k ? st.grid.at(g, g) : PrecisionRecall{};
        sj["test_same_subgraph"] = detail::pr_json(pr);
        scs.push_back(sj);
    }
    r["subclassifiers"] = scs;

    if (st.grid.k) {
        nlohmann::json prec = nlohmann::json::array(), rec = nlohmann::json::array();
        for (std::size_t i = 0; i < st.grid.k; ++i) {
            nlohmann::json prow = nlohmann::json::array(), rrow = nlohmann::json::array();
            for (std::size_t j = 0; j < st.grid.k; ++j) {
                PrecisionRecall pr = st.grid.at(i, j);
                prow.push_back(pr.precision);
                rrow.push_back(pr.recall);
            }
            prec.push_back(prow);
            rec.push_back(rrow);
        }
        nlohmann::json micro = nlohmann::json::array();
        for (std::size_t i = 0; i < st.grid.k; ++i)
            micro.push_back(detail::pr_json(st.grid.row_micro(i)));
        r["cross_eval"] = {{"precision", prec}, {"recall", rec}, {"micro", micro}};

        nlohmann::json tests = nlohmann::json::array();
        for (const auto& t : st.study.tests)
            tests.push_back({{"anchor", t.anchor},
                             {"metric", t.metric == FallbackMetric::precision
                                            ? "precision"
                                            : "recall"},
                             {"defined", t.defined},
                             {"r_s", t.r_s},
                             {"p_value", t.p_value},
                             {"p_adjusted", t.p_adjusted},
                             {"rejected", t.rejected}});
        r["similarity_study"] = {{"tests", tests}, {"skipped", st.study.skipped}};
    }

    nlohmann::json ens = nlohmann::json::array();
    ConfusionMatrix final_cm;
    for (std::size_t g = 0; g < st.ens.size(); ++g) {
        const EnsembleRun& er = st.ens[g];
        nlohmann::json ej;
        ej["target"] = g;
        ej["hm_val"] = detail::pr_json(er.hm_val);
        ej["hm_test"] = detail::pr_json(er.hm_test);
        nlohmann::json sc_val = nlohmann::json::array();
        for (const auto& pr : er.sc_val) sc_val.push_back(detail::pr_json(pr));
        ej["sc_val"] = sc_val;
        ej["choice"] = er.choice.use_hm ? std::string("hm")
                                        : "sc_" + std::to_string(er.choice.sc_index);
        ej["final_test"] = detail::pr_json(er.final_test);
        ens.push_back(ej);
    }
    r["ensemble"] = ens;
    st.report = r;
    emit_file(cfg.out_dir, "report.json", r.dump(2) + "\n", st.manifest);
}

// Runs stages in order up to and including `last`; on stage failure the
// stage name is reported and completed outputs stay on disk.
inline PipelineState run_pipeline(const ExperimentConfig& cfg, Stage last = Stage::report) {
    PipelineState st;
    st.cfg = cfg;
    st.warnings = validate_config(cfg);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (!std::filesystem::is_directory(cfg.out_dir))
        throw io_error("cannot create output directory: " + cfg.out_dir);

    st.manifest = load_manifest(cfg.out_dir);
    const std::string ch = config_hash(cfg);
    if (st.manifest.config_hash != ch) st.manifest = Manifest{}; // config changed: restart
    st.manifest.config_hash = ch;

    const Stage order[] = {Stage::gen,      Stage::prep,     Stage::partition,
                           Stage::train,    Stage::crosseval, Stage::ensemble,
                           Stage::report};
    for (Stage s : order) {
        try {
            switch (s) {
                case Stage::gen: stage_gen(st); break;
                case Stage::prep: stage_prep(st); break;
                case Stage::partition: stage_partition(st); break;
                case Stage::train: stage_train(st); break;
                case Stage::crosseval: stage_crosseval(st); break;
                case Stage::ensemble: stage_ensemble(st); break;
                case Stage::report: stage_report(st); break;
            }
        } catch (error&) {
            save_manifest(cfg.out_dir, st.manifest);
            throw; // partial outputs preserved; caller prints the stage name
        } catch (const std::exception& e) {
            save_manifest(cfg.out_dir, st.manifest);
            throw data_error(std::string("stage ") + stage_name(s) + ": " + e.what());
        }
        save_manifest(cfg.out_dir, st.manifest);
        if (s == last) break;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Resource profiling
// ---------------------------------------------------------------------------

struct ProfileRecord {
    std::size_t nodes = 0;
    std::size_t neurons = 0;
    std::size_t mb = 0;
    double stage_seconds = 0.0;
    double epoch_seconds = 0.0;
    std::size_t peak_mem_bytes = 0;
};

inline std::string profile_csv(const std::vector<ProfileRecord>& recs) {
    std::string out = "nodes,neurons,mb,stage_seconds,epoch_seconds,peak_mem_bytes\n";
    for (const auto& r : recs)
        out += std::to_string(r.nodes) + "," + std::to_string(r.neurons) + "," +
               std::to_string(r.mb) + "," + fmt_double(r.stage_seconds) + "," +
               fmt_double(r.epoch_seconds) + "," + std::to_string(r.peak_mem_bytes) + "\n";
    return out;
}

// Short fixed-epoch training runs over a node-count grid; peak memory comes
// from the tensor allocator's own accounting.
inline std::vector<ProfileRecord> run_profile(const ExperimentConfig& base,
                                              const std::vector<std::size_t>& node_counts,
                                              std::size_t epochs = 2) {
    std::vector<ProfileRecord> recs;
    for (std::size_t nodes : node_counts) {
        ExperimentConfig cfg = base;
        cfg.n_cells = nodes;
        cfg.k = 1;
        const auto t0 = std::chrono::steady_clock::now();
        membook::reset_peak();

        NetworkGenConfig ng;
        ng.n_cells = cfg.n_cells;
        ng.n_clusters = cfg.n_clusters;
        ng.cluster_radius_km = cfg.cluster_radius_km;
        ng.seed = cfg.seed;
        CellNetwork net = generate_network(ng);
        net.adjacency = build_adjacency(distance_matrix(net), cfg.threshold_km);

        KpiGenConfig kg = cfg.kpi;
        kg.hours = cfg.hours;
        kg.n_features = cfg.n_features;
        kg.seed = cfg.seed;
        KpiPanel panel = generate_kpi_series(net, kg);
        ScoreConfig score = default_score_config(kg);
        score.hot_cutoff = calibrate_hot_cutoff(panel, score, cfg.target_hot_rate);
        label_panel(panel, score);

        std::vector<std::size_t> cells(nodes), features(cfg.n_features);
        std::iota(cells.begin(), cells.end(), 0);
        std::iota(features.begin(), features.end(), 0);
        WindowedDataset ds = make_windows(panel, cells, features, cfg.mb, cfg.hz);
        SplitResult split = chronological_split(ds, SplitSpec{});
        Tensor2D a_hat = renormalized_operator(net.adjacency);
        std::vector<Tensor2D> hours = materialize_hours(ds, &a_hat, /*augment=*/true);

        ModelConfig mc = cfg.model;
        mc.mb = cfg.mb;
        mc.hz = cfg.hz;
        mc.epochs = epochs;
        mc.patience = epochs + 1;
        mc.seed = cfg.seed;
        if (mc.pos_weight <= 0.0) mc.pos_weight = detail::auto_pos_weight(split.train);
        SubClassifier model(2 * features.size(), a_hat, mc);
        WindowedDataset train = detail::stride_windows(split.train, cfg.train_stride);
        TrainLog log = train_model(model, train, split.val, hours);

        ProfileRecord rec;
        rec.nodes = nodes;
        rec.neurons = mc.n_gcn;
        rec.mb = cfg.mb;
        rec.stage_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        double total = 0.0;
        for (const auto& e : log.epochs) total += e.seconds;
        rec.epoch_seconds = log.epochs.empty() ? 0.0 : total / static_cast<double>(log.epochs.size());
        rec.peak_mem_bytes = membook::peak().load();
        recs.push_back(rec);
    }
    return recs;
}

} // namespace lnet
