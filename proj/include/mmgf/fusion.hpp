#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/graph.hpp"
#include "mmgf/ops.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

struct FusionParams {
    Tensor W_m;     // [(image feature width + embed width) x fuse width]
    Tensor W_f;     // [(clinical width + embed width) x fuse width]
    Tensor head_m;  // [fuse width x classes]
    Tensor head_f;
    double delta = 0.2;
    double beta = 0.5;

    std::vector<Tensor> all() const { return {W_m, W_f, head_m, head_f}; }
};

inline void check_beta(double beta) {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw ParamError("beta must lie in [0, 1], got " + std::to_string(beta));
}

inline FusionParams init_fusion(std::size_t image_dim, std::size_t clinical_dim,
                                std::size_t embed_dim, std::size_t fuse_dim,
                                std::size_t n_classes, double delta, double beta,
                                std::uint64_t seed) {
    if (fuse_dim < 1 || n_classes < 2)
        throw ParamError("fusion: fuse width must be positive and classes at least 2");
    if (!(delta >= 0.0)) throw ParamError("fusion: margin delta must be nonnegative");
    check_beta(beta);
    FusionParams p;
    p.delta = delta;
    p.beta = beta;
    auto rng = make_rng(seed);
    const std::size_t in_m = image_dim + embed_dim;
    const std::size_t in_f = clinical_dim + embed_dim;
    p.W_m = Tensor::xavier_uniform({in_m, fuse_dim}, in_m, fuse_dim, rng)
                .set_requires_grad(true);
    p.W_f = Tensor::xavier_uniform({in_f, fuse_dim}, in_f, fuse_dim, rng)
                .set_requires_grad(true);
    p.head_m = Tensor::xavier_uniform({fuse_dim, n_classes}, fuse_dim, n_classes, rng)
                   .set_requires_grad(true);
    p.head_f = Tensor::xavier_uniform({fuse_dim, n_classes}, fuse_dim, n_classes, rng)
                   .set_requires_grad(true);
    return p;
}

// Column-wise concatenation of raw view features with graph embeddings.
inline Tensor concat_views(const Tensor& raw, const Tensor& embedded) {
    return concat_cols(raw, embedded);
}

// Projects one concatenated view into the shared fusion space.
inline Tensor fuse_view(const Tensor& concat, const Tensor& W) {
    return elu(matmul(concat, W));
}

// Merges the two projected views by elementwise sum.
inline Tensor fuse_sum(const Tensor& z_m, const Tensor& z_f) { return add(z_m, z_f); }

// Pairwise similarity of the fused embeddings. With normalization on (the
// default) rows are L2-normalized first, so S is a cosine matrix bounded in
// [-1, 1]; off, it is the raw Gram matrix.
inline Tensor similarity_matrix(const Tensor& z, bool normalize = true) {
    if (z.ndim() != 2)
        throw ShapeError("similarity_matrix: expects 2-d embeddings, got " +
                         shape_str(z.shape()));
    if (!normalize) return matmul(z, transpose(z));
    Tensor zn = row_l2_normalize(z);
    return matmul(zn, transpose(zn));
}

struct ContrastiveBatch {
    Tensor d_pos;  // [N x N] similarities on edges both graphs share
    Tensor d_neg;  // [N x N] dissimilarities on pairs neither graph links
    Tensor loss_pos;
    Tensor loss_neg;
    Tensor loss_contrastive;
};

namespace detail {

inline void check_one_hot_rows(const Tensor& y, const std::vector<std::uint8_t>* rows) {
    const std::size_t n = y.dim(0), c = y.dim(1);
    const double* p = y.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (rows && !(*rows)[i]) continue;
        double rowsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double v = p[i * c + j];
            if (std::abs(v) > 1e-12 && std::abs(v - 1.0) > 1e-12)
                throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
            rowsum += v;
        }
        if (std::abs(rowsum - 1.0) > 1e-9)
            throw DataError("labels: row " + std::to_string(i) + " is not one-hot");
    }
}

// Y with rows outside the mask zeroed; complement = (1 - Y) likewise.
inline Tensor select_label_rows(const Tensor& y, const std::vector<std::uint8_t>* rows,
                                bool complement) {
    const std::size_t n = y.dim(0), c = y.dim(1);
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        if (rows && !(*rows)[i]) continue;
        for (std::size_t j = 0; j < c; ++j)
            out.at(i, j) = complement ? 1.0 - y.at(i, j) : y.at(i, j);
    }
    return out;
}

}  // namespace detail

// Pull-together / push-apart losses over the cross-view graph agreement.
// Positive pairs are edges present in both graphs; negative pairs are absent
// from both. Both losses are negated squared Frobenius norms of label-weighted
// pair matrices, and the negative side only counts dissimilarity above the
// margin delta. When train_mask is given, label rows outside it are zeroed so
// held-out labels never influence the value or gradient.
inline ContrastiveBatch contrastive_loss(const Tensor& S, const Graph& g_m, const Graph& g_f,
                                         const Tensor& Y, double delta,
                                         const std::vector<std::uint8_t>* train_mask = nullptr) {
    if (!g_m.self_looped || !g_f.self_looped)
        throw ContractError("contrastive_loss: both graphs must include self-loops");
    if (S.ndim() != 2 || S.dim(0) != S.dim(1))
        throw ShapeError("contrastive_loss: similarity must be square, got " +
                         shape_str(S.shape()));
    const std::size_t n = S.dim(0);
    if (g_m.n_nodes != n || g_f.n_nodes != n)
        throw ShapeError("contrastive_loss: graph sizes do not match similarity");
    if (Y.ndim() != 2 || Y.dim(0) != n)
        throw ShapeError("contrastive_loss: labels " + shape_str(Y.shape()) +
                         " do not match " + std::to_string(n) + " nodes");
    if (train_mask && train_mask->size() != n)
        throw ShapeError("contrastive_loss: mask covers " +
                         std::to_string(train_mask->size()) + " rows, expected " +
                         std::to_string(n));
    if (!(delta >= 0.0)) throw ParamError("contrastive_loss: delta must be nonnegative");
    detail::check_one_hot_rows(Y, train_mask);

    Tensor both = mul(g_m.adjacency, g_f.adjacency);
    Tensor neither = mul(sub_from_scalar(1.0, g_m.adjacency),
                         sub_from_scalar(1.0, g_f.adjacency));
    Tensor y_rows = detail::select_label_rows(Y, train_mask, false);
    Tensor ynot_rows = detail::select_label_rows(Y, train_mask, true);

    ContrastiveBatch b;
    b.d_pos = mul(S, both);
    b.d_neg = mul(sub_from_scalar(1.0, S), neither);
    b.loss_pos = mul_scalar(frobenius_norm_sq(matmul(b.d_pos, y_rows)), -1.0);
    b.loss_neg =
        mul_scalar(frobenius_norm_sq(matmul(hinge_max0(b.d_neg, delta), ynot_rows)), -1.0);
    b.loss_contrastive = add(b.loss_pos, b.loss_neg);
    return b;
}

// Train-row cross-entropy of one view's classifier head.
inline Tensor classification_loss(const Tensor& z_view, const Tensor& head, const Tensor& Y,
                                  const std::vector<std::uint8_t>& mask) {
    return masked_cross_entropy(matmul(z_view, head), Y, mask);
}

// Mean squared gap between every similarity entry in row i and the degree of
// node i in the reference graph.
inline Tensor diag_loss(const Tensor& S, const Graph& ref) {
    if (!ref.self_looped) throw ContractError("diag_loss: reference graph needs self-loops");
    if (S.ndim() != 2 || S.dim(0) != S.dim(1) || S.dim(0) != ref.n_nodes)
        throw ShapeError("diag_loss: similarity " + shape_str(S.shape()) +
                         " does not match graph with " + std::to_string(ref.n_nodes) +
                         " nodes");
    const std::size_t n = ref.n_nodes;
    std::vector<double> deg = degrees(ref);
    Tensor target = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) target.at(i, j) = deg[i];
    return mul_scalar(frobenius_norm_sq(sub(S, target)), 1.0 / static_cast<double>(n));
}

enum class DiagReference { image, clinical, average };

inline const char* diag_reference_name(DiagReference r) {
    switch (r) {
        case DiagReference::image: return "image";
        case DiagReference::clinical: return "clinical";
        default: return "average";
    }
}

// Which adjacency supplies the degree targets for diag_loss. The averaged
// graph has fractional edge weights; its self-loop weight stays 1 because
// both inputs carry self-loops.
inline Graph reference_adjacency(const Graph& g_m, const Graph& g_f, DiagReference mode) {
    if (!g_m.self_looped || !g_f.self_looped)
        throw ContractError("reference_adjacency: both graphs must include self-loops");
    if (g_m.n_nodes != g_f.n_nodes)
        throw ShapeError("reference_adjacency: graph sizes differ");
    switch (mode) {
        case DiagReference::image: return g_m;
        case DiagReference::clinical: return g_f;
        default: {
            Graph g;
            g.n_nodes = g_m.n_nodes;
            g.self_looped = true;
            g.adjacency = mul_scalar(add(g_m.adjacency, g_f.adjacency), 0.5).detach();
            return g;
        }
    }
}

// (1 - beta) * (L_m + L_f) + beta * L_contrastive + L_diag
inline Tensor total_loss(const Tensor& l_m, const Tensor& l_f, const Tensor& l_contrastive,
                         const Tensor& l_diag, double beta) {
    check_beta(beta);
    Tensor supervised = mul_scalar(add(l_m, l_f), 1.0 - beta);
    return add(add(supervised, mul_scalar(l_contrastive, beta)), l_diag);
}

}  // namespace mmgf
