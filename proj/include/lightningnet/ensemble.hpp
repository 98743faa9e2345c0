#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lightningnet/checkpoint.hpp"
#include "lightningnet/layers.hpp"
#include "lightningnet/metrics.hpp"
#include "lightningnet/rng.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

struct HmConfig {
    std::size_t k = 0;
    std::size_t h1 = 16;
    std::size_t h2 = 8;
    double lr = 1e-2;
    std::size_t epochs = 200;
    std::size_t batch_size = 256;
    double pos_weight = 1.0;
    double decision_threshold = 0.5;
    double recall_floor = 0.0;
    std::size_t patience = 20;
    std::uint64_t seed = 1;
};

struct HmCache {
    FcCache c1, c2, c3;
    Tensor2D a1, a2; // post-relu activations
    Tensor2D probs;
};

// Three fully connected layers with intermediate ReLUs and a final sigmoid,
// consuming the k sub-classifiers' hard labels.
struct HierarchicalModel {
    Param fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b;
    HmConfig config;

    HierarchicalModel() = default;
    explicit HierarchicalModel(HmConfig cfg) : config(cfg) {
        if (cfg.k < 1) throw validation_error("HierarchicalModel: k must be >= 1");
        Rng rng(mix_seed(cfg.seed, 0x88));
        fc1_w = Param(glorot_init(cfg.k, cfg.h1, rng));
        fc1_b = Param(Tensor2D(1, cfg.h1));
        fc2_w = Param(glorot_init(cfg.h1, cfg.h2, rng));
        fc2_b = Param(Tensor2D(1, cfg.h2));
        fc3_w = Param(glorot_init(cfg.h2, 1, rng));
        fc3_b = Param(Tensor2D(1, 1));
    }

    std::vector<Param*> params() {
        return {&fc1_w, &fc1_b, &fc2_w, &fc2_b, &fc3_w, &fc3_b};
    }

    Tensor2D forward(const Tensor2D& x, HmCache& cache) const {
        if (x.cols() != config.k)
            throw validation_error("hm_forward: expected width " +
                                   std::to_string(config.k) + ", got " +
                                   std::to_string(x.cols()));
        cache.a1 = activation(fc_forward(fc1_w, fc1_b, x, &cache.c1), Activation::relu);
        cache.a2 = activation(fc_forward(fc2_w, fc2_b, cache.a1, &cache.c2), Activation::relu);
        cache.probs = activation(fc_forward(fc3_w, fc3_b, cache.a2, &cache.c3),
                                 Activation::sigmoid);
        return cache.probs;
    }

    void backward(const HmCache& cache, const Tensor2D& d_logits) {
        Tensor2D d2 = fc_backward(fc3_w, fc3_b, cache.c3, d_logits);
        for (std::size_t i = 0; i < d2.size(); ++i)
            if (cache.a2.data()[i] <= 0.0) d2.data()[i] = 0.0;
        Tensor2D d1 = fc_backward(fc2_w, fc2_b, cache.c2, d2);
        for (std::size_t i = 0; i < d1.size(); ++i)
            if (cache.a1.data()[i] <= 0.0) d1.data()[i] = 0.0;
        fc_backward(fc1_w, fc1_b, cache.c1, d1);
    }
};

inline Tensor2D hm_forward(const HierarchicalModel& hm, const Tensor2D& x) {
    HmCache cache;
    return hm.forward(x, cache);
}

struct HmTrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_precision;
    std::vector<double> val_recall;
    std::size_t best_epoch = 0;
};

// Mini-batch Adam on weighted BCE over label rows; early stopping on best
// validation precision (recall floor applied as with the sub-classifiers).
inline HmTrainLog train_hm(HierarchicalModel& hm, const Tensor2D& x_train,
                           const std::vector<std::uint8_t>& y_train,
                           const Tensor2D& x_val,
                           const std::vector<std::uint8_t>& y_val) {
    if (x_train.rows() != y_train.size() || x_val.rows() != y_val.size())
        throw validation_error("train_hm: inputs and targets disagree");
    const HmConfig& cfg = hm.config;
    HmTrainLog log;
    auto params = hm.params();
    AdamConfig adam;
    adam.lr = cfg.lr;

    Tensor2D yt(y_train.size(), 1);
    for (std::size_t i = 0; i < y_train.size(); ++i) yt(i, 0) = y_train[i];

    auto eval = [&]() {
        HmCache cache;
        Tensor2D p = hm.forward(x_val, cache);
        ConfusionMatrix cm;
        for (std::size_t i = 0; i < p.rows(); ++i)
            cm.add(p(i, 0) >= cfg.decision_threshold, y_val[i] != 0);
        return precision_recall(cm);
    };

    auto snapshot = [&]() {
        std::vector<Tensor2D> v;
        for (Param* p : params) v.push_back(p->value);
        return v;
    };
    std::vector<Tensor2D> best = snapshot();
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    Rng shuffle_rng(mix_seed(cfg.seed, 0x89));
    std::vector<std::size_t> order(x_train.rows());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(b0 + cfg.batch_size, order.size());
            Tensor2D xb(b1 - b0, cfg.k), yb(b1 - b0, 1);
            for (std::size_t i = b0; i < b1; ++i) {
                for (std::size_t j = 0; j < cfg.k; ++j)
                    xb(i - b0, j) = x_train(order[i], j);
                yb(i - b0, 0) = yt(order[i], 0);
            }
            for (Param* p : params) p->zero_grad();
            HmCache cache;
            Tensor2D probs = hm.forward(xb, cache);
            BceResult bce = bce_loss(probs, yb, cfg.pos_weight);
            epoch_loss += bce.loss * static_cast<double>(b1 - b0);
            Tensor2D d_logits = bce.grad;
            for (std::size_t i = 0; i < d_logits.size(); ++i) {
                const double p = probs.data()[i];
                d_logits.data()[i] *= p * (1.0 - p);
            }
            hm.backward(cache, d_logits);
            for (Param* p : params) adam_step(*p, adam);
        }
        log.train_loss.push_back(order.empty() ? 0.0
                                               : epoch_loss / static_cast<double>(order.size()));
        PrecisionRecall pr = eval();
        log.val_precision.push_back(pr.precision);
        log.val_recall.push_back(pr.recall);
        const double score = pr.precision + (pr.recall >= cfg.recall_floor ? 1000.0 : 0.0);
        if (score > best_score) {
            best_score = score;
            best = snapshot();
            log.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    return log;
}

// Re-fit the HM decision threshold on held-out rows: best precision subject
// to recall >= recall_floor. Leaves the configured threshold alone when no
// candidate satisfies the floor or when recall_floor is zero (with a zero
// floor the sweep would degenerate to the single most confident row).
inline double calibrate_hm_threshold(HierarchicalModel& hm, const Tensor2D& x,
                                     const std::vector<std::uint8_t>& y) {
    if (hm.config.recall_floor <= 0.0 || x.rows() != y.size() || x.rows() == 0)
        return hm.config.decision_threshold;
    HmCache cache;
    Tensor2D p = hm.forward(x, cache);
    std::vector<std::pair<double, int>> scored;
    scored.reserve(p.rows());
    std::size_t total_pos = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        scored.emplace_back(p(i, 0), y[i] != 0 ? 1 : 0);
        total_pos += y[i] != 0 ? 1u : 0u;
    }
    if (total_pos == 0) return hm.config.decision_threshold;
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    double best_precision = -1.0;
    double best_threshold = hm.config.decision_threshold;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        tp += static_cast<std::size_t>(scored[i].second);
        if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first) continue;
        const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        if (recall < hm.config.recall_floor) continue;
        if (precision > best_precision) {
            best_precision = precision;
            best_threshold = scored[i].first;
        }
    }
    hm.config.decision_threshold = best_threshold;
    return best_threshold;
}

// The paper's fallback rule: prefer the HM unless a sub-classifier beats it
// on the comparison metric (ties go to the HM).
struct FallbackChoice {
    bool use_hm = true;
    std::size_t sc_index = 0; // valid when !use_hm
};

enum class FallbackMetric { precision, recall };

inline FallbackChoice fallback_select(const PrecisionRecall& hm_report,
                                      const std::vector<PrecisionRecall>& sc_reports,
                                      FallbackMetric metric = FallbackMetric::precision) {
    if (sc_reports.empty())
        throw validation_error("fallback_select: no sub-classifier reports");
    auto value = [&](const PrecisionRecall& pr) {
        return metric == FallbackMetric::precision ? pr.precision : pr.recall;
    };
    std::size_t best_sc = 0;
    for (std::size_t i = 1; i < sc_reports.size(); ++i)
        if (value(sc_reports[i]) > value(sc_reports[best_sc])) best_sc = i;
    FallbackChoice choice;
    if (value(hm_report) >= value(sc_reports[best_sc])) {
        choice.use_hm = true;
    } else {
        choice.use_hm = false;
        choice.sc_index = best_sc;
    }
    return choice;
}

inline void save_hm(const std::string& path, const HierarchicalModel& hm) {
    std::vector<CheckpointEntry> e{
        {"hm.fc1.w", hm.fc1_w.value}, {"hm.fc1.b", hm.fc1_b.value},
        {"hm.fc2.w", hm.fc2_w.value}, {"hm.fc2.b", hm.fc2_b.value},
        {"hm.fc3.w", hm.fc3_w.value}, {"hm.fc3.b", hm.fc3_b.value}};
    nlohmann::json cfg{{"model_type", "hm"},
                       {"k", hm.config.k},
                       {"h1", hm.config.h1},
                       {"h2", hm.config.h2},
                       {"lr", hm.config.lr},
                       {"epochs", hm.config.epochs},
                       {"batch_size", hm.config.batch_size},
                       {"pos_weight", hm.config.pos_weight},
                       {"decision_threshold", hm.config.decision_threshold},
                       {"recall_floor", hm.config.recall_floor},
                       {"patience", hm.config.patience},
                       {"seed", hm.config.seed}};
    save_checkpoint_file(path, e, cfg.dump());
}

inline HierarchicalModel load_hm(const std::string& path) {
    Checkpoint ck = load_checkpoint_file(path);
    nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
    if (cfg.value("model_type", "") != "hm")
        throw data_error("checkpoint: not a hierarchical model: " + path);
    HmConfig c;
    c.k = cfg.at("k");
    c.h1 = cfg.at("h1");
    c.h2 = cfg.at("h2");
    c.lr = cfg.at("lr");
    c.epochs = cfg.at("epochs");
    c.batch_size = cfg.at("batch_size");
    c.pos_weight = cfg.at("pos_weight");
    c.decision_threshold = cfg.at("decision_threshold");
    c.recall_floor = cfg.at("recall_floor");
    c.patience = cfg.at("patience");
    c.seed = cfg.at("seed");
    HierarchicalModel hm(c);
    hm.fc1_w.value = ck.find("hm.fc1.w");
    hm.fc1_b.value = ck.find("hm.fc1.b");
    hm.fc2_w.value = ck.find("hm.fc2.w");
    hm.fc2_b.value = ck.find("hm.fc2.b");
    hm.fc3_w.value = ck.find("hm.fc3.w");
    hm.fc3_b.value = ck.find("hm.fc3.b");
    return hm;
}

} // namespace lnet
