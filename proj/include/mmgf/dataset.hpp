#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

struct SynthConfig {
    std::size_t n = 200;
    std::size_t image_size = 16;
    std::size_t n_clinical = 12;
    double separation = 1.0;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
};

struct MultimodalDataset {
    Tensor images;    // [N x 1 x H x W] scan-like maps, or [N x latent] precomputed
    Tensor clinical;  // [N x F]
    Tensor labels;    // [N x 2] one-hot rows, columns [normal, abnormal]
    std::vector<std::string> ids;

    std::size_t size() const { return ids.size(); }

    std::vector<int> classes() const {
        std::vector<int> out(labels.dim(0));
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = labels.at(i, 1) > labels.at(i, 0) ? 1 : 0;
        return out;
    }
};

// Twelve tracer-uptake measurements: eight regional binding ratios in
// left/right pairs, two putamen-to-caudate ratios, two asymmetry indices.
// Wider feature counts repeat the pattern.
inline std::vector<std::string> clinical_feature_names(std::size_t f) {
    static const char* canonical[12] = {
        "sbr_caudate_r",      "sbr_caudate_l",      "sbr_ant_putamen_r",
        "sbr_ant_putamen_l",  "sbr_post_putamen_r", "sbr_post_putamen_l",
        "sbr_putamen_r",      "sbr_putamen_l",      "ratio_pc_r",
        "ratio_pc_l",         "asym_caudate",       "asym_putamen"};
    std::vector<std::string> names;
    names.reserve(f);
    for (std::size_t j = 0; j < f; ++j) {
        std::string name = canonical[j % 12];
        if (j >= 12) name += "_" + std::to_string(j / 12 + 1);
        names.push_back(name);
    }
    return names;
}

namespace detail {

inline double profile_base(std::size_t j) {
    static const double base[12] = {2.1, 2.1, 1.8, 1.8, 1.5, 1.5,
                                    1.7, 1.7, 0.85, 0.85, 0.05, 0.05};
    return base[j % 12];
}

inline double profile_weight(std::size_t j) {
    static const double weight[12] = {0.6, 0.6, 1.0, 1.0, 1.1, 1.1,
                                      0.9, 0.9, 0.8, 0.8, 0.4, 0.4};
    return weight[j % 12];
}

inline void check_synth_config(const SynthConfig& cfg) {
    if (cfg.n < 2 || cfg.n % 2 != 0)
        throw ParamError("synth: n must be even and at least 2, got " + std::to_string(cfg.n));
    if (cfg.image_size < 7)
        throw ParamError("synth: image_size must be at least 7, got " +
                         std::to_string(cfg.image_size));
    if (cfg.n_clinical < 1) throw ParamError("synth: n_clinical must be positive");
    if (!(cfg.separation >= 0.0)) throw ParamError("synth: separation must be nonnegative");
    if (!(cfg.label_noise >= 0.0 && cfg.label_noise <= 1.0))
        throw ParamError("synth: label_noise must lie in [0, 1]");
}

}  // namespace detail

// Exact class-conditional clinical mean used by the generator: a fixed
// healthy-looking base profile shifted by +/- separation/2 along a unit
// direction, so the two class means are exactly `separation` apart and
// coincide at separation zero. Class 0 is normal (shifted up), class 1
// abnormal (reduced uptake).
inline std::vector<double> clinical_class_mean(const SynthConfig& cfg, int cls) {
    detail::check_synth_config(cfg);
    const std::size_t f = cfg.n_clinical;
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
        const double w = detail::profile_weight(j);
        norm_sq += w * w;
    }
    const double norm = std::sqrt(norm_sq);
    const double sign = cls == 0 ? 1.0 : -1.0;
    std::vector<double> mean(f);
    for (std::size_t j = 0; j < f; ++j)
        mean[j] = detail::profile_base(j) +
                  sign * 0.5 * cfg.separation * detail::profile_weight(j) / norm;
    return mean;
}

// Synthetic stand-in cohort: class-conditional Gaussian clinical vectors with
// correlated left/right pairs, and two-blob intensity images whose blob
// amplitude drops with the abnormal class (a reduced-uptake analog, with an
// extra one-sided asymmetry). All class effects scale with `separation`, so
// separation zero carries no signal in either modality. A label_noise
// fraction of the one-hot labels is flipped after generation. Image pixels
// are quantized through float32 so on-disk round trips are bit-exact.
inline MultimodalDataset synth_generate(const SynthConfig& cfg) {
    detail::check_synth_config(cfg);
    const std::size_t n = cfg.n, hw = cfg.image_size, f = cfg.n_clinical;
    MultimodalDataset ds;

    // First half normal, second half abnormal; flips come later.
    std::vector<int> cls(n, 0);
    for (std::size_t i = n / 2; i < n; ++i) cls[i] = 1;

    std::size_t width = 4;
    while (n >= std::size_t(std::pow(10.0, static_cast<double>(width)))) ++width;
    for (std::size_t i = 0; i < n; ++i) {
        std::string num = std::to_string(i + 1);
        ds.ids.push_back("P" + std::string(width - num.size(), '0') + num);
    }

    {
        auto rng = make_rng(derive_seed(cfg.seed, 1));
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::vector<double> mean0 = clinical_class_mean(cfg, 0);
        const std::vector<double> mean1 = clinical_class_mean(cfg, 1);
        const double rho = 0.5, sigma = 1.0;
        ds.clinical = Tensor::zeros({n, f});
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<double>& mean = cls[i] == 0 ? mean0 : mean1;
            std::size_t j = 0;
            while (j + 1 < f) {  // left/right pair with shared latent factor
                const double shared = gauss(rng);
                const double noise_r = gauss(rng), noise_l = gauss(rng);
                ds.clinical.at(i, j) = mean[j] + sigma * (std::sqrt(rho) * shared +
                                                          std::sqrt(1.0 - rho) * noise_r);
                ds.clinical.at(i, j + 1) =
                    mean[j + 1] +
                    sigma * (std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * noise_l);
                j += 2;
            }
            if (j < f) ds.clinical.at(i, j) = mean[j] + sigma * gauss(rng);
        }
    }

    {
        auto rng = make_rng(derive_seed(cfg.seed,2));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_int_distribution<int> coin(0, 1);
        ds.images = Tensor::zeros({n, 1, hw, hw});
        const double cy = 0.5 * static_cast<double>(hw);
        const double cx_left = static_cast<double>(hw) / 3.0;
        const double cx_right = 2.0 * static_cast<double>(hw) / 3.0;
        const double drop = std::min(0.8, 0.25 * cfg.separation);
        for (std::size_t i = 0; i < n; ++i) {
            const bool abnormal = cls[i] == 1;
            const int hit_side = coin(rng);  // extra reduction side for abnormal
            double amp[2];
            for (int side = 0; side < 2; ++side) {
                double a = 1.0 + 0.08 * gauss(rng);
                if (abnormal) {
                    a -= drop;
                    if (side == hit_side) a -= 0.3 * drop;
                }
                amp[side] = a;
            }
            const double jy = 0.4 * gauss(rng), jl = 0.4 * gauss(rng), jr = 0.4 * gauss(rng);
            double radius = 2.2 + 0.15 * gauss(rng);
            radius = std::max(1.2, radius);
            const double two_r_sq = 2.0 * radius * radius;
            for (std::size_t y = 0; y < hw; ++y)
                for (std::size_t x = 0; x < hw; ++x) {
                    const double dy = static_cast<double>(y) - (cy + jy);
                    const double dxl = static_cast<double>(x) - (cx_left + jl);
                    const double dxr = static_cast<double>(x) - (cx_right + jr);
                    double v = amp[0] * std::exp(-(dy * dy + dxl * dxl) / two_r_sq) +
                               amp[1] * std::exp(-(dy * dy + dxr * dxr) / two_r_sq) +
                               0.02 * gauss(rng);
                    ds.images.at(i, 0, y, x) = static_cast<double>(static_cast<float>(v));
                }
        }
    }

    ds.labels = Tensor::zeros({n, 2});
    for (std::size_t i = 0; i < n; ++i) ds.labels.at(i, cls[i]) = 1.0;
    const std::size_t flips =
        static_cast<std::size_t>(std::llround(cfg.label_noise * static_cast<double>(n)));
    if (flips > 0) {
        auto rng = make_rng(derive_seed(cfg.seed, 3));
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = 0; i < flips; ++i) {  // partial Fisher-Yates
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(order[i], order[pick(rng)]);
            const std::size_t idx = order[i];
            std::swap(ds.labels.at(idx, 0), ds.labels.at(idx, 1));
        }
    }
    return ds;
}

}  // namespace mmgf
