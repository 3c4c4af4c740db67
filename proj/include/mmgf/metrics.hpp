#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

struct ClassMetrics {
    double f1 = 0.0;
    double sensitivity = 0.0;
    double precision = 0.0;
    bool zero_denominator = false;  // set when any of the three hit an empty denominator
};

struct EpochLosses {
    double ce_image = 0.0;
    double ce_clinical = 0.0;
    double pos = 0.0;
    double neg = 0.0;
    double contrastive = 0.0;
    double diag = 0.0;
    double total = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<int>> confusion;  // [true class][predicted class]
    std::vector<RocPoint> roc_points;
    double auc = 0.0;
    bool auc_defined = false;
    std::vector<EpochLosses> loss_history;
};

// Threshold sweep over the unique scores in descending order; each point
// classifies score >= threshold as positive. The area under the resulting
// curve is computed by the trapezoidal rule, which handles tied scores by
// walking equal-score groups as single steps.
inline std::pair<double, std::vector<RocPoint>> roc_auc(const std::vector<double>& scores,
                                                        const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("roc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc: both classes must be present, got " + std::to_string(n_pos) +
                        " positive and " + std::to_string(n_neg) + " negative");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    std::vector<RocPoint> points;
    points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0, i = 0;
    double auc = 0.0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        RocPoint p;
        p.threshold = t;
        p.tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        p.fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
        const RocPoint& prev = points.back();
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) * 0.5;
        points.push_back(p);
    }
    return {auc, points};
}

// Argmax classification metrics; ties pick the lower class index. AUC is
// attached for binary problems when both classes appear in the labels.
inline MetricsReport evaluate(const Tensor& probabilities, const Tensor& labels_onehot) {
    if (probabilities.ndim() != 2 || labels_onehot.ndim() != 2)
        throw ShapeError("evaluate: probabilities and labels must be 2-d");
    if (probabilities.shape() != labels_onehot.shape())
        throw ShapeError("evaluate: probabilities " + shape_str(probabilities.shape()) +
                         " vs labels " + shape_str(labels_onehot.shape()));
    const std::size_t n = probabilities.dim(0), c = probabilities.dim(1);
    if (n == 0) throw DataError("evaluate: no rows");
    if (c < 2) throw ShapeError("evaluate: need at least two classes");

    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        double rowsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) rowsum += probabilities.at(i, j);
        if (std::abs(rowsum - 1.0) > 1e-6)
            throw DataError("evaluate: probability row " + std::to_string(i) +
                            " sums to " + std::to_string(rowsum));
        int t = -1;
        for (std::size_t j = 0; j < c; ++j) {
            const double v = labels_onehot.at(i, j);
            if (std::abs(v - 1.0) <= 1e-12) {
                if (t >= 0) throw DataError("labels: row " + std::to_string(i) +
                                            " is not one-hot");
                t = static_cast<int>(j);
            } else if (std::abs(v) > 1e-12) {
                throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
            }
        }
        if (t < 0) throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
        truth[i] = t;
        int best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (probabilities.at(i, j) > probabilities.at(i, best)) best = static_cast<int>(j);
        pred[i] = best;
    }

    MetricsReport rep;
    rep.confusion.assign(c, std::vector<int>(c, 0));
    for (std::size_t i = 0; i < n; ++i) rep.confusion[truth[i]][pred[i]] += 1;
    int trace = 0;
    for (std::size_t j = 0; j < c; ++j) trace += rep.confusion[j][j];
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(n);

    rep.per_class.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
        int tp = rep.confusion[k][k], fp = 0, fn = 0;
        for (std::size_t r = 0; r < c; ++r)
            if (r != k) fp += rep.confusion[r][k];
        for (std::size_t j = 0; j < c; ++j)
            if (j != k) fn += rep.confusion[k][j];
        ClassMetrics& m = rep.per_class[k];
        if (tp + fp > 0) {
            m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        } else {
            m.zero_denominator = true;
        }
        if (tp + fn > 0) {
            m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
        } else {
            m.zero_denominator = true;
        }
        if (m.precision + m.sensitivity > 0.0) {
            m.f1 = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
        } else {
            m.zero_denominator = true;
        }
    }

    if (c == 2) {
        std::size_t n_pos = 0;
        for (int t : truth) n_pos += t == 1 ? 1 : 0;
        if (n_pos > 0 && n_pos < n) {
            std::vector<double> scores(n);
            for (std::size_t i = 0; i < n; ++i) scores[i] = probabilities.at(i, 1);
            auto [auc, pts] = roc_auc(scores, truth);
            rep.auc = auc;
            rep.roc_points = std::move(pts);
            rep.auc_defined = true;
        }
    }
    return rep;
}

}  // namespace mmgf
