#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/graph.hpp"
#include "mmgf/ops.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

enum class GnnKind { gat, gcn };

inline const char* gnn_kind_name(GnnKind k) { return k == GnnKind::gat ? "gat" : "gcn"; }

struct GatHeadParams {
    Tensor W;     // [Din x Dout]
    Tensor attn;  // [2*Dout x 1], stacked source / neighbor halves
};

struct GatLayerParams {
    std::vector<GatHeadParams> heads;
    double leaky_slope = 0.2;
};

struct GcnLayerParams {
    Tensor W;  // [Din x Dout]
};

struct GnnStackConfig {
    GnnKind kind = GnnKind::gat;
    std::size_t layers = 2;  // 1 or 2
    std::size_t hidden = 16;
    std::size_t out = 16;
    std::size_t heads = 2;
    double leaky_slope = 0.2;
};

struct GnnStackParams {
    GnnKind kind = GnnKind::gat;
    std::vector<GatLayerParams> gat_layers;
    std::vector<GcnLayerParams> gcn_layers;

    std::vector<Tensor> all() const {
        std::vector<Tensor> out;
        for (const GatLayerParams& l : gat_layers)
            for (const GatHeadParams& h : l.heads) {
                out.push_back(h.W);
                out.push_back(h.attn);
            }
        for (const GcnLayerParams& l : gcn_layers) out.push_back(l.W);
        return out;
    }
};

inline GnnStackParams init_gnn_stack(const GnnStackConfig& cfg, std::size_t in_dim,
                                     std::uint64_t seed) {
    if (cfg.layers < 1 || cfg.layers > 2)
        throw ParamError("gnn: layers must be 1 or 2, got " + std::to_string(cfg.layers));
    if (cfg.heads < 1) throw ParamError("gnn: heads must be positive");
    if (cfg.hidden < 1 || cfg.out < 1)
        throw ParamError("gnn: hidden and output widths must be positive");
    if (!(cfg.leaky_slope > 0.0 && cfg.leaky_slope < 1.0))
        throw ParamError("gnn: leaky_slope must lie in (0, 1)");
    GnnStackParams p;
    p.kind = cfg.kind;
    auto rng = make_rng(seed);
    for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
        const std::size_t din = layer == 0 ? in_dim : cfg.hidden;
        const std::size_t dout = layer + 1 == cfg.layers ? cfg.out : cfg.hidden;
        if (cfg.kind == GnnKind::gat) {
            GatLayerParams lp;
            lp.leaky_slope = cfg.leaky_slope;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                GatHeadParams hp;
                hp.W = Tensor::xavier_uniform({din, dout}, din, dout, rng)
                           .set_requires_grad(true);
                hp.attn = Tensor::xavier_uniform({2 * dout, 1}, 2 * dout, 1, rng)
                              .set_requires_grad(true);
                lp.heads.push_back(hp);
            }
            p.gat_layers.push_back(lp);
        } else {
            GcnLayerParams lp;
            lp.W = Tensor::xavier_uniform({din, dout}, din, dout, rng).set_requires_grad(true);
            p.gcn_layers.push_back(lp);
        }
    }
    return p;
}

namespace detail {

struct GatHeadTerms {
    Tensor alpha;  // [N x N] attention coefficients
    Tensor hw;     // [N x Dout] transformed features
};

// Shared forward for one attention head. The pairwise score for edge (i, j)
// splits as a1 . Wh_i + a2 . Wh_j, so the full logit matrix is the outer sum
// f1 1^T + 1 f2^T built from two matmuls.
inline GatHeadTerms gat_head_terms(const Tensor& features, const Graph& graph,
                                   const GatHeadParams& head, double leaky_slope) {
    if (!graph.self_looped)
        throw ContractError("gat_attention: graph must include self-loops");
    if (features.ndim() != 2 || features.dim(0) != graph.n_nodes)
        throw ShapeError("gat_attention: features " + shape_str(features.shape()) +
                         " do not match graph with " + std::to_string(graph.n_nodes) +
                         " nodes");
    const std::size_t n = graph.n_nodes;
    const std::size_t dout = head.W.dim(1);
    if (head.attn.ndim() != 2 || head.attn.dim(0) != 2 * dout || head.attn.dim(1) != 1)
        throw ShapeError("gat_attention: attention vector must be [" +
                         std::to_string(2 * dout) + " x 1], got " +
                         shape_str(head.attn.shape()));
    GatHeadTerms t;
    t.hw = matmul(features, head.W);
    Tensor a1 = slice_rows(head.attn, 0, dout);
    Tensor a2 = slice_rows(head.attn, dout, 2 * dout);
    Tensor f1 = matmul(t.hw, a1);  // [N x 1]
    Tensor f2 = matmul(t.hw, a2);
    Tensor ones_row = Tensor::ones({1, n});
    Tensor logits = add(matmul(f1, ones_row), transpose(matmul(f2, ones_row)));
    t.alpha = masked_softmax_rows(leaky_relu(logits, leaky_slope), graph.adjacency);
    return t;
}

}  // namespace detail

// Attention coefficients of one head: [N x N], rows summing to one over the
// adjacency support.
inline Tensor gat_attention(const Tensor& features, const Graph& graph,
                            const GatLayerParams& layer, std::size_t head_index) {
    if (head_index >= layer.heads.size())
        throw ParamError("gat_attention: head index out of range");
    return detail::gat_head_terms(features, graph, layer.heads[head_index], layer.leaky_slope)
        .alpha;
}

// One attention layer: per-head neighborhood aggregation, averaged across
// heads, then elu.
inline Tensor gat_layer(const Tensor& features, const Graph& graph,
                        const GatLayerParams& layer) {
    if (layer.heads.empty()) throw ContractError("gat_layer: no heads");
    Tensor acc;
    for (const GatHeadParams& head : layer.heads) {
        detail::GatHeadTerms t = detail::gat_head_terms(features, graph, head,
                                                        layer.leaky_slope);
        Tensor m = matmul(t.alpha, t.hw);
        acc = acc.defined() ? add(acc, m) : m;
    }
    return elu(mul_scalar(acc, 1.0 / static_cast<double>(layer.heads.size())));
}

// One convolution layer on a precomputed symmetric-normalized adjacency.
inline Tensor gcn_layer(const Tensor& features, const Tensor& norm_adj,
                        const GcnLayerParams& layer) {
    return elu(matmul(matmul(norm_adj, features), layer.W));
}

// Runs the whole stack on one graph view and returns [N x out] embeddings.
inline Tensor gnn_encode(const Tensor& features, const Graph& graph,
                         const GnnStackParams& stack) {
    Tensor h = features;
    if (stack.kind == GnnKind::gat) {
        if (stack.gat_layers.empty()) throw ContractError("gnn_encode: empty stack");
        for (const GatLayerParams& layer : stack.gat_layers) h = gat_layer(h, graph, layer);
    } else {
        if (stack.gcn_layers.empty()) throw ContractError("gnn_encode: empty stack");
        Tensor norm = normalized_adjacency(graph);
        for (const GcnLayerParams& layer : stack.gcn_layers) h = gcn_layer(h, norm, layer);
    }
    return h;
}

}  // namespace mmgf
