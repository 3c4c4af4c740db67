#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmgf/dataset.hpp"
#include "mmgf/encoder.hpp"
#include "mmgf/error.hpp"
#include "mmgf/fusion.hpp"
#include "mmgf/gnn.hpp"
#include "mmgf/graph.hpp"
#include "mmgf/metrics.hpp"
#include "mmgf/ops.hpp"
#include "mmgf/optim.hpp"
#include "mmgf/split.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

enum class Protocol { cv, fixed };

inline const char* protocol_name(Protocol p) { return p == Protocol::cv ? "cv" : "fixed"; }

struct TrainConfig {
    std::size_t epochs = 300;
    double lr = 0.001;
    std::size_t knn_k = 10;
    Metric metric = Metric::euclidean;
    GnnKind gnn = GnnKind::gat;
    std::size_t heads = 2;
    std::size_t gnn_layers = 2;
    std::size_t hidden = 16;
    std::size_t embed_dim = 16;  // GNN output width
    std::size_t fuse_dim = 16;   // shared fusion width
    double delta = 0.2;
    double beta = 0.5;
    std::uint64_t seed = 0;
    std::size_t folds = 5;
    bool normalize_similarity = true;
    double leaky_slope = 0.2;
    DiagReference diag_reference = DiagReference::average;
    Protocol protocol = Protocol::cv;
    std::size_t fixed_train_size = 0;  // 0 = 3/4 of the cohort when protocol is fixed
    EncoderConfig encoder;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ParamError("train: epochs must be at least 1");
    if (!(cfg.lr >= 0.0)) throw ParamError("train: lr must be nonnegative");
    if (cfg.folds < 2) throw ParamError("train: folds must be at least 2");
    if (cfg.knn_k < 1) throw ParamError("train: knn_k must be positive");
    if (!(cfg.delta >= 0.0)) throw ParamError("train: delta must be nonnegative");
    check_beta(cfg.beta);
}

// Per-column standardization statistics, fit on training rows only.
struct Scaler {
    std::vector<double> mean;
    std::vector<double> stdev;
};

inline Scaler fit_scaler(const Tensor& x, const std::vector<std::uint8_t>& train_mask) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (train_mask.size() != n) throw ShapeError("fit_scaler: mask does not match rows");
    std::size_t n_train = 0;
    for (std::uint8_t m : train_mask) n_train += m ? 1 : 0;
    if (n_train == 0) throw ContractError("fit_scaler: empty training mask");
    Scaler s;
    s.mean.assign(d, 0.0);
    s.stdev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!train_mask[i]) continue;
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.at(i, j);
    }
    for (double& m : s.mean) m /= static_cast<double>(n_train);
    for (std::size_t i = 0; i < n; ++i) {
        if (!train_mask[i]) continue;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x.at(i, j) - s.mean[j];
            s.stdev[j] += diff * diff;
        }
    }
    for (double& v : s.stdev) {
        v = std::sqrt(v / static_cast<double>(n_train));
        if (v < 1e-12) v = 1.0;  // constant column: leave it centered only
    }
    return s;
}

inline Tensor apply_scaler(const Tensor& x, const Scaler& s) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (s.mean.size() != d) throw ShapeError("apply_scaler: column count mismatch");
    Tensor out = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = (x.at(i, j) - s.mean[j]) / s.stdev[j];
    return out;
}

// Everything one fold's training loop needs. Labels arrive pre-masked: rows
// outside the training mask are zero, so no code below this point can read a
// held-out label.
struct FoldContext {
    Tensor qm_std;  // [N x latent] standardized image features, constant
    Tensor xf_std;  // [N x F] standardized clinical features, constant
    Graph g_m, g_f;
    Tensor labels_masked;  // [N x C], held-out rows zeroed
    std::vector<std::uint8_t> train_mask;
};

struct ModelParams {
    GnnStackParams gnn_m, gnn_f;
    FusionParams fusion;

    std::vector<Tensor> all() const {
        std::vector<Tensor> out = gnn_m.all();
        for (const Tensor& t : gnn_f.all()) out.push_back(t);
        for (const Tensor& t : fusion.all()) out.push_back(t);
        return out;
    }
};

struct ForwardOutputs {
    Tensor z_m, z_f;        // per-view graph embeddings
    Tensor zhat_m, zhat_f;  // projected cross-view embeddings
    Tensor z_fused;
    Tensor similarity;
    Tensor prob;  // mean of the two head softmaxes
};

// The full model pass, shared by training, evaluation, and embedding export.
inline ForwardOutputs model_forward(const FoldContext& ctx, const ModelParams& params,
                                    bool normalize_similarity) {
    ForwardOutputs out;
    out.z_m = gnn_encode(ctx.qm_std, ctx.g_m, params.gnn_m);
    out.z_f = gnn_encode(ctx.xf_std, ctx.g_f, params.gnn_f);
    out.zhat_m = fuse_view(concat_views(ctx.qm_std, out.z_m), params.fusion.W_m);
    out.zhat_f = fuse_view(concat_views(ctx.xf_std, out.z_f), params.fusion.W_f);
    out.z_fused = fuse_sum(out.zhat_m, out.zhat_f);
    out.similarity = similarity_matrix(out.z_fused, normalize_similarity);
    Tensor p_m = softmax_rows(matmul(out.zhat_m, params.fusion.head_m));
    Tensor p_f = softmax_rows(matmul(out.zhat_f, params.fusion.head_f));
    out.prob = mul_scalar(add(p_m, p_f), 0.5);
    return out;
}

inline ModelParams init_model(const TrainConfig& cfg, std::size_t qm_dim, std::size_t xf_dim,
                              std::size_t n_classes, std::uint64_t param_seed) {
    GnnStackConfig gc;
    gc.kind = cfg.gnn;
    gc.layers = cfg.gnn_layers;
    gc.hidden = cfg.hidden;
    gc.out = cfg.embed_dim;
    gc.heads = cfg.heads;
    gc.leaky_slope = cfg.leaky_slope;
    ModelParams p;
    p.gnn_m = init_gnn_stack(gc, qm_dim, derive_seed(param_seed, 1));
    p.gnn_f = init_gnn_stack(gc, xf_dim, derive_seed(param_seed, 2));
    p.fusion = init_fusion(qm_dim, xf_dim, cfg.embed_dim, cfg.fuse_dim, n_classes, cfg.delta,
                           cfg.beta, derive_seed(param_seed, 3));
    return p;
}

struct TrainedFold {
    ModelParams params;
    std::vector<EpochLosses> history;
};

// One fold's optimization loop. Loss components are recorded before each
// update; a non-finite component aborts with a diagnostic naming the epoch
// and the first offending component.
inline TrainedFold train_fold_model(const FoldContext& ctx, const TrainConfig& cfg,
                                    std::uint64_t param_seed) {
    validate_train_config(cfg);
    TrainedFold tf;
    tf.params = init_model(cfg, ctx.qm_std.dim(1), ctx.xf_std.dim(1),
                           ctx.labels_masked.dim(1), param_seed);
    std::vector<Tensor> params = tf.params.all();
    AdamState opt;
    Graph ref = reference_adjacency(ctx.g_m, ctx.g_f, cfg.diag_reference);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ForwardOutputs fwd = model_forward(ctx, tf.params, cfg.normalize_similarity);
        Tensor l_m = classification_loss(fwd.zhat_m, tf.params.fusion.head_m,
                                         ctx.labels_masked, ctx.train_mask);
        Tensor l_f = classification_loss(fwd.zhat_f, tf.params.fusion.head_f,
                                         ctx.labels_masked, ctx.train_mask);
        ContrastiveBatch con = contrastive_loss(fwd.similarity, ctx.g_m, ctx.g_f,
                                                ctx.labels_masked, cfg.delta,
                                                &ctx.train_mask);
        Tensor l_diag = diag_loss(fwd.similarity, ref);
        Tensor total = total_loss(l_m, l_f, con.loss_contrastive, l_diag, cfg.beta);

        EpochLosses e;
        e.ce_image = l_m.at(0);
        e.ce_clinical = l_f.at(0);
        e.pos = con.loss_pos.at(0);
        e.neg = con.loss_neg.at(0);
        e.contrastive = con.loss_contrastive.at(0);
        e.diag = l_diag.at(0);
        e.total = total.at(0);
        const struct {
            const char* name;
            double value;
        } components[] = {{"ce_image", e.ce_image}, {"ce_clinical", e.ce_clinical},
                          {"contrastive_pos", e.pos}, {"contrastive_neg", e.neg},
                          {"diag", e.diag}, {"total", e.total}};
        for (const auto& c : components)
            if (!std::isfinite(c.value))
                throw DivergenceError(static_cast<int>(epoch), c.name);
        tf.history.push_back(e);

        if (cfg.lr == 0.0) continue;  // evaluation-only run: keep parameters frozen
        zero_grad(params);
        backward(total);
        adam_step(params, opt, cfg.lr);
    }
    return tf;
}

// A trained fold plus the per-fold preprocessing needed to reproduce its
// forward pass on the full cohort.
struct ModelState {
    ModelParams params;
    Scaler scaler_m, scaler_f;
    std::vector<std::uint8_t> train_mask;
};

struct FoldResult {
    MetricsReport report;  // metrics on this fold's held-out rows
    std::vector<std::uint8_t> test_mask;
    std::vector<std::size_t> test_indices;
    Tensor test_prob;  // [n_test x C]
    ModelState model;
};

struct CvResult {
    MetricsReport pooled;  // micro-pooled over all held-out predictions
    std::vector<FoldResult> folds;
    std::vector<EpochLosses> first_fold_history;
    double fold_auc_mean = 0.0;
    double fold_auc_std = 0.0;
    EncoderParams encoder;
    std::vector<double> pretrain_history;
};

// Image features: pretrained-encoder codes for image stacks, identity for
// precomputed 2-d embeddings.
inline Tensor image_features(const Tensor& images, const EncoderParams& enc) {
    return encode(images, enc);
}

inline FoldContext make_fold_context(const Tensor& qm, const Tensor& xf, const Tensor& labels,
                                     const FoldMasks& masks, const TrainConfig& cfg,
                                     Scaler* out_scaler_m = nullptr,
                                     Scaler* out_scaler_f = nullptr) {
    FoldContext ctx;
    Scaler sm = fit_scaler(qm, masks.train);
    Scaler sf = fit_scaler(xf, masks.train);
    ctx.qm_std = apply_scaler(qm, sm);
    ctx.xf_std = apply_scaler(xf, sf);
    ctx.g_m = add_self_loops(knn_graph(ctx.qm_std, cfg.knn_k, cfg.metric));
    ctx.g_f = add_self_loops(knn_graph(ctx.xf_std, cfg.knn_k, cfg.metric));
    ctx.train_mask = masks.train;
    const std::size_t n = labels.dim(0), c = labels.dim(1);
    ctx.labels_masked = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        if (!masks.train[i]) continue;
        for (std::size_t j = 0; j < c; ++j) ctx.labels_masked.at(i, j) = labels.at(i, j);
    }
    if (out_scaler_m) *out_scaler_m = sm;
    if (out_scaler_f) *out_scaler_f = sf;
    return ctx;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Cross-validation driver: pretrains the image encoder once on the full
// image stack (no labels involved), then trains an independent model per
// fold and aggregates held-out predictions.
inline CvResult run_cv(const MultimodalDataset& data, const TrainConfig& cfg) {
    validate_train_config(cfg);
    const std::size_t n = data.size();
    if (data.clinical.dim(0) != n || data.labels.dim(0) != n || data.images.dim(0) != n)
        throw DataError("run_cv: dataset field row counts disagree");

    CvResult cv;
    if (data.images.ndim() == 4) {
        PretrainResult pre = pretrain_autoencoder(data.images, cfg.encoder, cfg.seed);
        cv.encoder = pre.params;
        cv.pretrain_history = pre.loss_history;
    } else {
        EncoderConfig idc;
        idc.kind = EncoderKind::identity;
        cv.encoder = init_encoder(idc, data.images.shape(), cfg.seed);
    }
    Tensor qm = image_features(data.images, cv.encoder);

    std::vector<FoldMasks> folds;
    if (cfg.protocol == Protocol::cv) {
        folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    } else {
        const std::size_t n_train = cfg.fixed_train_size ? cfg.fixed_train_size : 3 * n / 4;
        folds.push_back(fixed_split(n, n_train, cfg.seed));
    }

    std::vector<double> fold_aucs;
    Tensor pooled_prob = Tensor::zeros({n, data.labels.dim(1)});
    std::vector<std::uint8_t> covered(n, 0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        FoldResult fr;
        fr.test_mask = folds[f].test;
        FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[f], cfg,
                                            &fr.model.scaler_m, &fr.model.scaler_f);
        TrainedFold tf;
        try {
            tf = train_fold_model(ctx, cfg, derive_seed(cfg.seed, f + 1));
        } catch (const DivergenceError& e) {
            throw DivergenceError(e.epoch, "fold " + std::to_string(f) + " " + e.component);
        }
        fr.model.params = tf.params;
        fr.model.train_mask = folds[f].train;

        ForwardOutputs fwd = model_forward(ctx, tf.params, cfg.normalize_similarity);
        Tensor prob = fwd.prob.detach();
        for (std::size_t i = 0; i < n; ++i)
            if (folds[f].test[i]) {
                fr.test_indices.push_back(i);
                covered[i] = 1;
            }
        fr.test_prob = Tensor::zeros({fr.test_indices.size(), prob.dim(1)});
        Tensor test_labels = Tensor::zeros({fr.test_indices.size(), prob.dim(1)});
        for (std::size_t r = 0; r < fr.test_indices.size(); ++r)
            for (std::size_t j = 0; j < prob.dim(1); ++j) {
                fr.test_prob.at(r, j) = prob.at(fr.test_indices[r], j);
                test_labels.at(r, j) = data.labels.at(fr.test_indices[r], j);
                pooled_prob.at(fr.test_indices[r], j) = prob.at(fr.test_indices[r], j);
            }
        fr.report = evaluate(fr.test_prob, test_labels);
        fr.report.loss_history = tf.history;
        if (fr.report.auc_defined) fold_aucs.push_back(fr.report.auc);
        if (f == 0) cv.first_fold_history = tf.history;
        cv.folds.push_back(std::move(fr));
    }

    // Pool only rows some fold held out; under the fixed protocol that is a
    // strict subset of the cohort.
    std::vector<std::size_t> pooled_rows;
    for (std::size_t i = 0; i < n; ++i)
        if (covered[i]) pooled_rows.push_back(i);
    Tensor pp = Tensor::zeros({pooled_rows.size(), data.labels.dim(1)});
    Tensor pl = Tensor::zeros({pooled_rows.size(), data.labels.dim(1)});
    for (std::size_t r = 0; r < pooled_rows.size(); ++r)
        for (std::size_t j = 0; j < data.labels.dim(1); ++j) {
            pp.at(r, j) = pooled_prob.at(pooled_rows[r], j);
            pl.at(r, j) = data.labels.at(pooled_rows[r], j);
        }
    cv.pooled = evaluate(pp, pl);
    cv.fold_auc_mean = mean_of(fold_aucs);
    cv.fold_auc_std = std_of(fold_aucs);
    return cv;
}

}  // namespace mmgf
