#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

struct FoldMasks {
    std::vector<std::uint8_t> train;
    std::vector<std::uint8_t> test;
};

// Stratified k-fold assignment. Within each class the (shuffled) i-th member
// goes to fold (i + class) % folds; the class offset staggers the remainder
// members across folds so fold sizes differ by at most one per class. Classes
// smaller than the fold count cannot be stratified; that triggers a warning
// and a plain unstratified deal.
inline std::vector<FoldMasks> kfold_split(const std::vector<int>& class_of, std::size_t folds,
                                          std::uint64_t seed) {
    const std::size_t n = class_of.size();
    if (folds < 2) throw ParamError("kfold: folds must be at least 2");
    if (folds > n)
        throw ParamError("kfold: " + std::to_string(folds) + " folds exceed " +
                         std::to_string(n) + " samples");
    int n_classes = 0;
    for (int c : class_of) {
        if (c < 0) throw DataError("kfold: negative class index");
        n_classes = std::max(n_classes, c + 1);
    }

    std::vector<std::vector<std::size_t>> members(n_classes);
    for (std::size_t i = 0; i < n; ++i) members[class_of[i]].push_back(i);
    bool stratified = true;
    for (int c = 0; c < n_classes; ++c)
        if (!members[c].empty() && members[c].size() < folds) {
            warn("kfold: class " + std::to_string(c) + " has " +
                 std::to_string(members[c].size()) + " members, fewer than " +
                 std::to_string(folds) + " folds; falling back to an unstratified split");
            stratified = false;
            break;
        }

    std::vector<std::size_t> fold_of(n, 0);
    if (stratified) {
        for (int c = 0; c < n_classes; ++c) {
            auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(c) + 1));
            std::shuffle(members[c].begin(), members[c].end(), rng);
            for (std::size_t i = 0; i < members[c].size(); ++i)
                fold_of[members[c][i]] = (i + static_cast<std::size_t>(c)) % folds;
        }
    } else {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        auto rng = make_rng(derive_seed(seed, 0));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < n; ++i) fold_of[order[i]] = i % folds;
    }

    std::vector<FoldMasks> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        out[f].train.assign(n, 0);
        out[f].test.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (fold_of[i] == f)
                out[f].test[i] = 1;
            else
                out[f].train[i] = 1;
        }
    }
    return out;
}

// Single shuffled train/test split with n_train training rows.
inline FoldMasks fixed_split(std::size_t n, std::size_t n_train, std::uint64_t seed) {
    if (n_train < 1 || n_train >= n)
        throw ParamError("fixed_split: train size must lie in [1, n), got " +
                         std::to_string(n_train) + " of " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    auto rng = make_rng(derive_seed(seed, 0));
    std::shuffle(order.begin(), order.end(), rng);
    FoldMasks m;
    m.train.assign(n, 0);
    m.test.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        (i < n_train ? m.train : m.test)[order[i]] = 1;
    return m;
}

}  // namespace mmgf
