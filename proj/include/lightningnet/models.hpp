#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lightningnet/checkpoint.hpp"
#include "lightningnet/graph.hpp"
#include "lightningnet/layers.hpp"
#include "lightningnet/metrics.hpp"
#include "lightningnet/prep.hpp"
#include "lightningnet/rng.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

struct ModelConfig {
    std::size_t mb = 24;
    std::size_t hz = 12;
    std::size_t n_gcn = 64;
    std::size_t n_hidden = 64;
    std::size_t n_gru_layers = 1;
    double lr = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double pos_weight = 1.0;
    double decision_threshold = 0.5;
    double recall_floor = 0.05;
    // When > 0, the decision threshold is re-fit on the validation split after
    // training: the threshold with the best validation precision subject to
    // recall >= recall_floor wins, and a model whose best reachable precision
    // stays below the gate is muted (threshold set above 1, so it never fires).
    double calibration_gate = 0.0;
    std::size_t patience = 10;
    std::uint64_t seed = 1;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{
        {"mb", c.mb},
        {"hz", c.hz},
        {"n_gcn", c.n_gcn},
        {"n_hidden", c.n_hidden},
        {"n_gru_layers", c.n_gru_layers},
        {"lr", c.lr},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"pos_weight", c.pos_weight},
        {"decision_threshold", c.decision_threshold},
        {"recall_floor", c.recall_floor},
        {"calibration_gate", c.calibration_gate},
        {"patience", c.patience},
        {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.mb = j.at("mb");
    c.hz = j.at("hz");
    c.n_gcn = j.at("n_gcn");
    c.n_hidden = j.at("n_hidden");
    c.n_gru_layers = j.at("n_gru_layers");
    c.lr = j.at("lr");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.pos_weight = j.at("pos_weight");
    c.decision_threshold = j.at("decision_threshold");
    c.recall_floor = j.at("recall_floor");
    c.calibration_gate = j.value("calibration_gate", 0.0);
    c.patience = j.at("patience");
    c.seed = j.at("seed");
    return c;
}

inline void validate_a_hat(const Tensor2D& a_hat) {
    if (a_hat.rows() != a_hat.cols())
        throw validation_error("a_hat must be square");
    for (std::size_t i = 0; i < a_hat.rows(); ++i)
        for (std::size_t j = i + 1; j < a_hat.cols(); ++j)
            if (std::abs(a_hat(i, j) - a_hat(j, i)) > 1e-12)
                throw validation_error("a_hat must be symmetric");
}

struct EpochLog {
    double train_loss = 0.0;
    double val_precision = 0.0;
    double val_recall = 0.0;
    double seconds = 0.0;
    std::size_t peak_mem_bytes = 0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    bool no_positives_warning = false;
};

// ---------------------------------------------------------------------------
// LightningNet sub-classifier: GCN -> GRU stack -> FC -> sigmoid
// ---------------------------------------------------------------------------

struct SubClassifierCache {
    std::vector<GcnCache> gcn;          // per time step
    std::vector<GruSeqCache> gru;       // per layer
    FcCache fc;
    Tensor2D probs;
};

struct SubClassifier {
    Param gcn_w; // f_in x n_gcn
    std::vector<GruParams> gru;
    Param fc_w; // n_hidden x 1
    Param fc_b; // 1 x 1
    Tensor2D a_hat;
    ModelConfig config;
    std::size_t f_in = 0;

    SubClassifier() = default;
    SubClassifier(std::size_t f_in_, Tensor2D a_hat_, ModelConfig cfg)
        : config(cfg), f_in(f_in_) {
        validate_a_hat(a_hat_);
        a_hat = std::move(a_hat_);
        Rng rng(mix_seed(cfg.seed, 0x5C));
        gcn_w = Param(glorot_init(f_in, cfg.n_gcn, rng));
        for (std::size_t l = 0; l < cfg.n_gru_layers; ++l)
            gru.emplace_back(l == 0 ? cfg.n_gcn : cfg.n_hidden, cfg.n_hidden, rng);
        fc_w = Param(glorot_init(cfg.n_hidden, 1, rng));
        fc_b = Param(Tensor2D(1, 1));
    }

    static constexpr bool wants_aggregated = true;
    std::size_t hours_needed() const { return config.mb; }

    void rebind(Tensor2D new_a_hat) {
        validate_a_hat(new_a_hat);
        a_hat = std::move(new_a_hat);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out{&gcn_w, &fc_w, &fc_b};
        for (auto& g : gru)
            for (Param* p : g.params()) out.push_back(p);
        return out;
    }

    // xs: mb matrices of shape M x f_in; pre-aggregated means they already
    // carry the a_hat product.
    Tensor2D forward(const std::vector<Tensor2D>& xs, bool pre_aggregated,
                     SubClassifierCache& cache) const {
        if (xs.size() != config.mb)
            throw validation_error("subclassifier_forward: expected mb=" +
                                   std::to_string(config.mb) + " steps, got " +
                                   std::to_string(xs.size()));
        cache.gcn.resize(xs.size());
        std::vector<Tensor2D> seq(xs.size());
        for (std::size_t t = 0; t < xs.size(); ++t) {
            seq[t] = pre_aggregated
                         ? gcn_forward_pre_aggregated(xs[t], gcn_w.value, &cache.gcn[t])
                         : gcn_forward(a_hat, xs[t], gcn_w.value, &cache.gcn[t]);
        }
        cache.gru.resize(gru.size());
        Tensor2D h;
        for (std::size_t l = 0; l < gru.size(); ++l) {
            h = gru_forward(gru[l], seq, &cache.gru[l]);
            seq = cache.gru[l].h_out;
        }
        Tensor2D logits = fc_forward(fc_w, fc_b, h, &cache.fc);
        cache.probs = activation(logits, Activation::sigmoid);
        if (!cache.probs.all_finite())
            throw numeric_error("subclassifier_forward: non-finite output");
        return cache.probs;
    }

    void backward(const SubClassifierCache& cache, const Tensor2D& d_logits) {
        Tensor2D dh = fc_backward(fc_w, fc_b, cache.fc, d_logits);
        const std::size_t steps = cache.gcn.size();
        std::vector<Tensor2D> d_steps(steps);
        const std::size_t rows = dh.rows();
        for (std::size_t t = 0; t + 1 < steps; ++t)
            d_steps[t] = Tensor2D(rows, dh.cols());
        d_steps[steps - 1] = dh;
        for (std::size_t li = gru.size(); li-- > 0;) {
            std::vector<Tensor2D> dxs = gru_backward(gru[li], cache.gru[li], d_steps);
            d_steps = std::move(dxs);
        }
        for (std::size_t t = 0; t < steps; ++t)
            gcn_backward(a_hat, gcn_w.value, cache.gcn[t], d_steps[t], gcn_w.grad);
    }
};

// ---------------------------------------------------------------------------
// LSTM baseline: per-cell LSTM + FC, no graph term
// ---------------------------------------------------------------------------

struct LstmBaselineCache {
    LstmSeqCache lstm;
    FcCache fc;
    Tensor2D probs;
};

struct LstmBaseline {
    LstmParams lstm;
    Param fc_w, fc_b;
    ModelConfig config;
    std::size_t f_in = 0;

    LstmBaseline() = default;
    LstmBaseline(std::size_t f_in_, ModelConfig cfg) : config(cfg), f_in(f_in_) {
        Rng rng(mix_seed(cfg.seed, 0x15));
        lstm = LstmParams(f_in, cfg.n_hidden, rng);
        fc_w = Param(glorot_init(cfg.n_hidden, 1, rng));
        fc_b = Param(Tensor2D(1, 1));
    }

    static constexpr bool wants_aggregated = false;
    std::size_t hours_needed() const { return config.mb; }

    std::vector<Param*> params() {
        std::vector<Param*> out = lstm.params();
        out.push_back(&fc_w);
        out.push_back(&fc_b);
        return out;
    }

    Tensor2D forward(const std::vector<Tensor2D>& xs, bool /*pre_aggregated*/,
                     LstmBaselineCache& cache) const {
        Tensor2D h = lstm_forward(lstm, xs, &cache.lstm);
        Tensor2D logits = fc_forward(fc_w, fc_b, h, &cache.fc);
        cache.probs = activation(logits, Activation::sigmoid);
        return cache.probs;
    }

    void backward(const LstmBaselineCache& cache, const Tensor2D& d_logits) {
        Tensor2D dh = fc_backward(fc_w, fc_b, cache.fc, d_logits);
        lstm_backward(lstm, cache.lstm, dh);
    }
};

// ---------------------------------------------------------------------------
// GCN baseline: two stacked graph convolutions on the latest hour only
// ---------------------------------------------------------------------------

struct GcnBaselineCache {
    GcnCache l1, l2;
    FcCache fc;
    Tensor2D probs;
};

struct GcnBaseline {
    Param w1; // f_in x n_gcn
    Param w2; // n_gcn x n_gcn
    Param fc_w, fc_b;
    Tensor2D a_hat;
    ModelConfig config;
    std::size_t f_in = 0;

    GcnBaseline() = default;
    GcnBaseline(std::size_t f_in_, Tensor2D a_hat_, ModelConfig cfg)
        : config(cfg), f_in(f_in_) {
        validate_a_hat(a_hat_);
        a_hat = std::move(a_hat_);
        Rng rng(mix_seed(cfg.seed, 0x6C));
        w1 = Param(glorot_init(f_in, cfg.n_gcn, rng));
        w2 = Param(glorot_init(cfg.n_gcn, cfg.n_gcn, rng));
        fc_w = Param(glorot_init(cfg.n_gcn, 1, rng));
        fc_b = Param(Tensor2D(1, 1));
    }

    static constexpr bool wants_aggregated = false;
    std::size_t hours_needed() const { return 1; }

    void rebind(Tensor2D new_a_hat) {
        validate_a_hat(new_a_hat);
        a_hat = std::move(new_a_hat);
    }

    std::vector<Param*> params() { return {&w1, &w2, &fc_w, &fc_b}; }

    Tensor2D forward(const std::vector<Tensor2D>& xs, bool /*pre_aggregated*/,
                     GcnBaselineCache& cache) const {
        const Tensor2D& x = xs.back();
        Tensor2D h1 = gcn_forward(a_hat, x, w1.value, &cache.l1);
        Tensor2D h2 = gcn_forward(a_hat, h1, w2.value, &cache.l2);
        Tensor2D logits = fc_forward(fc_w, fc_b, h2, &cache.fc);
        cache.probs = activation(logits, Activation::sigmoid);
        return cache.probs;
    }

    void backward(const GcnBaselineCache& cache, const Tensor2D& d_logits) {
        Tensor2D dh2 = fc_backward(fc_w, fc_b, cache.fc, d_logits);
        Tensor2D dh1;
        gcn_backward(a_hat, w2.value, cache.l2, dh2, w2.grad, &dh1);
        gcn_backward(a_hat, w1.value, cache.l1, dh1, w1.grad);
    }
};

template <class Model>
struct ModelCacheOf;
template <>
struct ModelCacheOf<SubClassifier> { using type = SubClassifierCache; };
template <>
struct ModelCacheOf<LstmBaseline> { using type = LstmBaselineCache; };
template <>
struct ModelCacheOf<GcnBaseline> { using type = GcnBaselineCache; };

// ---------------------------------------------------------------------------
// Shared training / inference machinery
// ---------------------------------------------------------------------------

// Per-hour input matrices for a dataset's cells and features; index is the
// absolute panel hour. With a_hat given, entries carry the aggregation
// a_hat * X_t (data-only, so it is shared across epochs and models). With
// augment set as well, each row concatenates the cell's own features with the
// aggregated ones, [X_t | a_hat * X_t], so a model can tell local activity
// apart from neighbourhood activity.
inline std::vector<Tensor2D> materialize_hours(const WindowedDataset& ds,
                                               const Tensor2D* a_hat = nullptr,
                                               bool augment = false) {
    std::vector<Tensor2D> out(ds.panel->hours);
    for (std::size_t t = 0; t < ds.panel->hours; ++t) {
        Tensor2D x = ds.hour_matrix(t);
        if (!a_hat) {
            out[t] = std::move(x);
            continue;
        }
        Tensor2D agg = matmul(*a_hat, x);
        if (!augment) {
            out[t] = std::move(agg);
            continue;
        }
        Tensor2D both(x.rows(), x.cols() + agg.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) both(r, c) = x(r, c);
            for (std::size_t c = 0; c < agg.cols(); ++c)
                both(r, x.cols() + c) = agg(r, c);
        }
        out[t] = std::move(both);
    }
    return out;
}

namespace detail {

inline std::vector<Tensor2D> window_inputs(const std::vector<Tensor2D>& hours,
                                           std::size_t start, std::size_t mb,
                                           std::size_t needed) {
    std::vector<Tensor2D> xs;
    xs.reserve(needed);
    // models that need fewer hours than mb get the trailing ones
    for (std::size_t t = start + mb - needed; t < start + mb; ++t) xs.push_back(hours[t]);
    return xs;
}

inline Tensor2D target_column(const std::vector<std::uint8_t>& row) {
    Tensor2D t(row.size(), 1);
    for (std::size_t i = 0; i < row.size(); ++i) t(i, 0) = row[i];
    return t;
}

} // namespace detail

template <class Model>
std::vector<std::vector<std::uint8_t>> predict_labels(
    const Model& model, const WindowedDataset& ds, const std::vector<Tensor2D>& hours,
    double threshold) {
    std::vector<std::vector<std::uint8_t>> out(ds.n_windows());
    for (std::size_t w = 0; w < ds.n_windows(); ++w) {
        auto xs = detail::window_inputs(hours, ds.starts[w], ds.mb, model.hours_needed());
        typename ModelCacheOf<Model>::type cache;
        Tensor2D probs = model.forward(xs, Model::wants_aggregated, cache);
        out[w].resize(probs.rows());
        for (std::size_t i = 0; i < probs.rows(); ++i)
            out[w][i] = probs(i, 0) >= threshold ? 1 : 0;
    }
    return out;
}

template <class Model>
ConfusionMatrix evaluate_model(const Model& model, const WindowedDataset& ds,
                               const std::vector<Tensor2D>& hours, double threshold) {
    auto labels = predict_labels(model, ds, hours, threshold);
    ConfusionMatrix cm;
    for (std::size_t w = 0; w < ds.n_windows(); ++w)
        for (std::size_t c = 0; c < labels[w].size(); ++c)
            cm.add(labels[w][c] != 0, ds.targets[w][c] != 0);
    return cm;
}

// Re-fit a model's decision threshold on held-out data. Candidate thresholds
// are the distinct predicted probabilities; the one with the best precision
// subject to recall >= recall_floor wins. If even the best reachable
// precision stays below calibration_gate, the model is muted: its threshold
// is set above 1 so it never fires and cannot pollute pooled predictions.
// No-op (returns the configured threshold) when calibration_gate <= 0.
template <class Model>
double calibrate_decision_threshold(Model& model, const WindowedDataset& ds,
                                    const std::vector<Tensor2D>& hours) {
    const double gate = model.config.calibration_gate;
    if (gate <= 0.0) return model.config.decision_threshold;

    std::vector<std::pair<double, int>> scored; // (probability, truth)
    for (std::size_t w = 0; w < ds.n_windows(); ++w) {
        auto xs = detail::window_inputs(hours, ds.starts[w], ds.mb, model.hours_needed());
        typename ModelCacheOf<Model>::type cache;
        Tensor2D probs = model.forward(xs, Model::wants_aggregated, cache);
        for (std::size_t i = 0; i < probs.rows(); ++i)
            scored.emplace_back(probs(i, 0), ds.targets[w][i] != 0 ? 1 : 0);
    }
    std::size_t total_pos = 0;
    for (const auto& s : scored) total_pos += static_cast<std::size_t>(s.second);

    double best_threshold = 2.0; // mute by default
    if (total_pos > 0) {
        std::sort(scored.begin(), scored.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        double best_precision = -1.0;
        std::size_t tp = 0;
        for (std::size_t i = 0; i < scored.size(); ++i) {
            tp += static_cast<std::size_t>(scored[i].second);
            // a threshold can only sit between distinct probabilities
            if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first)
                continue;
            const double precision =
                static_cast<double>(tp) / static_cast<double>(i + 1);
            const double recall =
                static_cast<double>(tp) / static_cast<double>(total_pos);
            if (recall < model.config.recall_floor) continue;
            if (precision > best_precision) {
                best_precision = precision;
                best_threshold = scored[i].first;
            }
        }
        if (best_precision < gate) best_threshold = 2.0;
    }
    model.config.decision_threshold = best_threshold;
    return best_threshold;
}

template <class Model>
TrainLog train_model(Model& model, const WindowedDataset& train,
                     const WindowedDataset& val, const std::vector<Tensor2D>& hours) {
    const ModelConfig& cfg = model.config;
    TrainLog log;

    std::size_t n_pos = 0;
    for (const auto& row : train.targets)
        for (auto v : row) n_pos += v;
    log.no_positives_warning = (n_pos == 0);

    auto param_ptrs = model.params();
    auto snapshot = [&]() {
        std::vector<Tensor2D> vals;
        for (Param* p : param_ptrs) vals.push_back(p->value);
        return vals;
    };
    auto restore = [&](const std::vector<Tensor2D>& vals) {
        for (std::size_t i = 0; i < param_ptrs.size(); ++i)
            param_ptrs[i]->value = vals[i];
    };
    std::vector<Tensor2D> best_values = snapshot();
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t epochs_since_best = 0;

    AdamConfig adam;
    adam.lr = cfg.lr;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x7A));
    std::vector<std::size_t> order(train.n_windows());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        membook::reset_peak();
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        std::size_t batch_count = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(b0 + cfg.batch_size, order.size());
            for (Param* p : param_ptrs) p->zero_grad();
            for (std::size_t bi = b0; bi < b1; ++bi) {
                const std::size_t w = order[bi];
                auto xs = detail::window_inputs(hours, train.starts[w], train.mb,
                                                model.hours_needed());
                typename ModelCacheOf<Model>::type cache;
                Tensor2D probs = model.forward(xs, Model::wants_aggregated, cache);
                Tensor2D target = detail::target_column(train.targets[w]);
                BceResult bce = bce_loss(probs, target, cfg.pos_weight);
                if (!std::isfinite(bce.loss))
                    throw numeric_error("train: non-finite loss");
                epoch_loss += bce.loss;
                Tensor2D d_logits = bce.grad;
                for (std::size_t i = 0; i < d_logits.size(); ++i) {
                    const double p = probs.data()[i];
                    d_logits.data()[i] *= p * (1.0 - p);
                }
                model.backward(cache, d_logits);
            }
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            for (Param* p : param_ptrs) {
                for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad.data()[i] *= inv;
                adam_step(*p, adam);
            }
            ++batch_count;
        }
        EpochLog el;
        el.train_loss = batch_count ? epoch_loss / static_cast<double>(train.n_windows()) : 0.0;

        ConfusionMatrix cm = evaluate_model(model, val, hours, cfg.decision_threshold);
        PrecisionRecall pr = precision_recall(cm);
        el.val_precision = pr.precision;
        el.val_recall = pr.recall;
        el.peak_mem_bytes = membook::peak().load();
        el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(el);

        // early stopping: best precision subject to the recall floor;
        // epochs missing the floor rank strictly below any that meet it
        double score = pr.precision + (pr.recall >= cfg.recall_floor ? 1000.0 : 0.0);
        if (score > best_score) {
            best_score = score;
            best_values = snapshot();
            log.best_epoch = epoch;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            break;
        }
    }
    restore(best_values);
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoint bindings
// ---------------------------------------------------------------------------

inline std::vector<CheckpointEntry> subclassifier_entries(const SubClassifier& m) {
    std::vector<CheckpointEntry> e;
    e.push_back({"gcn.w", m.gcn_w.value});
    for (std::size_t l = 0; l < m.gru.size(); ++l) {
        const std::string pre = "gru" + std::to_string(l) + ".";
        e.push_back({pre + "wz", m.gru[l].wz.value});
        e.push_back({pre + "wr", m.gru[l].wr.value});
        e.push_back({pre + "wh", m.gru[l].wh.value});
        e.push_back({pre + "bz", m.gru[l].bz.value});
        e.push_back({pre + "br", m.gru[l].br.value});
        e.push_back({pre + "bh", m.gru[l].bh.value});
    }
    e.push_back({"fc.w", m.fc_w.value});
    e.push_back({"fc.b", m.fc_b.value});
    e.push_back({"a_hat", m.a_hat});
    return e;
}

inline void save_subclassifier(const std::string& path, const SubClassifier& m) {
    nlohmann::json cfg = model_config_to_json(m.config);
    cfg["model_type"] = "subclassifier";
    cfg["f_in"] = m.f_in;
    save_checkpoint_file(path, subclassifier_entries(m), cfg.dump());
}

inline SubClassifier load_subclassifier(const std::string& path) {
    Checkpoint ck = load_checkpoint_file(path);
    nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
    if (cfg.value("model_type", "") != "subclassifier")
        throw data_error("checkpoint: not a subclassifier: " + path);
    ModelConfig mc = model_config_from_json(cfg);
    SubClassifier m(cfg.at("f_in").get<std::size_t>(), ck.find("a_hat"), mc);
    auto expect = [&](Param& p, const std::string& name) {
        const Tensor2D& t = ck.find(name);
        if (!t.same_shape(p.value))
            throw data_error("checkpoint: shape mismatch for '" + name + "'");
        p.value = t;
    };
    expect(m.gcn_w, "gcn.w");
    for (std::size_t l = 0; l < m.gru.size(); ++l) {
        const std::string pre = "gru" + std::to_string(l) + ".";
        expect(m.gru[l].wz, pre + "wz");
        expect(m.gru[l].wr, pre + "wr");
        expect(m.gru[l].wh, pre + "wh");
        expect(m.gru[l].bz, pre + "bz");
        expect(m.gru[l].br, pre + "br");
        expect(m.gru[l].bh, pre + "bh");
    }
    expect(m.fc_w, "fc.w");
    expect(m.fc_b, "fc.b");
    return m;
}

} // namespace lnet
