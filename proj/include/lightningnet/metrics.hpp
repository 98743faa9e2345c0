#pragma once

#include <cstdint>
#include <vector>

#include "lightningnet/errors.hpp"

namespace lnet {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
    void add(bool pred, bool truth) {
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
        else ++tn;
    }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
        return *this;
    }
};

inline ConfusionMatrix confusion(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size())
        throw validation_error("confusion: length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < pred.size(); ++i) cm.add(pred[i] != 0, truth[i] != 0);
    return cm;
}

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    bool precision_defined = true; // false when tp+fp == 0
    bool recall_defined = true;    // false when tp+fn == 0
};

// Zero denominators yield 0.0 with the corresponding defined flag cleared.
inline PrecisionRecall precision_recall(const ConfusionMatrix& cm) {
    PrecisionRecall pr;
    if (cm.tp + cm.fp == 0) {
        pr.precision_defined = false;
    } else {
        pr.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    }
    if (cm.tp + cm.fn == 0) {
        pr.recall_defined = false;
    } else {
        pr.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    }
    return pr;
}

inline ConfusionMatrix aggregate_confusion(const std::vector<ConfusionMatrix>& cms) {
    if (cms.empty()) throw validation_error("aggregate_confusion: empty list");
    ConfusionMatrix out;
    for (const auto& cm : cms) out += cm;
    return out;
}

} // namespace lnet
