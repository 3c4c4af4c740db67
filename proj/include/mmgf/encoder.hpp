#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/ops.hpp"
#include "mmgf/optim.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

enum class EncoderKind { identity, dense, conv };
enum class Activation { elu, identity };

inline const char* encoder_kind_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::identity: return "identity";
        case EncoderKind::dense: return "dense";
        default: return "conv";
    }
}

struct EncoderConfig {
    EncoderKind kind = EncoderKind::conv;
    std::size_t latent_dim = 16;
    std::size_t conv_c1 = 4;
    std::size_t conv_c2 = 8;
    std::size_t conv_kernel = 3;
    std::size_t conv_stride = 2;
    std::size_t pretrain_epochs = 100;
    double pretrain_lr = 1e-3;
    Activation activation = Activation::elu;
};

// Parameters of the autoencoder. The conv stack is
//   conv(1 -> c1) -> act -> conv(c1 -> c2) -> flatten -> dense(latent)
// with the mirrored decoder
//   dense -> act -> reshape -> convT(c2 -> c1) -> act -> convT(c1 -> 1).
// The dense stack is flatten -> act(dense(latent)) and dense back. Biases are
// zero-initialized; weights are seeded Xavier-uniform.
struct EncoderParams {
    EncoderConfig cfg;
    std::size_t in_h = 0, in_w = 0;
    std::size_t flat_in = 0;             // flattened input width
    std::size_t h1 = 0, w1 = 0, h2 = 0, w2 = 0;
    Tensor enc_k1, enc_b1, enc_k2, enc_b2;  // conv encoder
    Tensor enc_w, enc_b;                     // dense-to-latent (both kinds)
    Tensor dec_w, dec_b;                     // latent-to-flat
    Tensor dec_k1, dec_b1, dec_k2, dec_b2;  // conv decoder

    std::vector<Tensor> all() const {
        std::vector<Tensor> out;
        for (const Tensor* t : {&enc_k1, &enc_b1, &enc_k2, &enc_b2, &enc_w, &enc_b, &dec_w,
                                &dec_b, &dec_k1, &dec_b1, &dec_k2, &dec_b2})
            if (t->defined()) out.push_back(*t);
        return out;
    }

    std::size_t latent_dim() const {
        return cfg.kind == EncoderKind::identity ? flat_in : cfg.latent_dim;
    }
};

namespace detail {

inline Tensor enc_act(const Tensor& x, Activation a) {
    return a == Activation::elu ? elu(x) : x;
}

// [N,1,H,W] -> [N, H*W]; 2-d input passes through.
inline Tensor flatten_input(const Tensor& x) {
    if (x.ndim() == 2) return reshape(x, x.shape());
    if (x.ndim() != 4)
        throw ShapeError("encoder: input must be [N x 1 x H x W] images or 2-d features, got " +
                         shape_str(x.shape()));
    return reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

}  // namespace detail

inline EncoderParams init_encoder(const EncoderConfig& cfg, const Shape& input_shape,
                                  std::uint64_t seed) {
    if (cfg.latent_dim < 1) throw ParamError("encoder: latent_dim must be positive");
    EncoderParams p;
    p.cfg = cfg;
    if (input_shape.size() == 2) {
        p.flat_in = input_shape[1];
    } else if (input_shape.size() == 4) {
        if (input_shape[1] != 1)
            throw ShapeError("encoder: expects single-channel images, got " +
                             shape_str(input_shape));
        p.in_h = input_shape[2];
        p.in_w = input_shape[3];
        p.flat_in = p.in_h * p.in_w;
    } else {
        throw ShapeError("encoder: input must be [N x 1 x H x W] or [N x D], got " +
                         shape_str(input_shape));
    }
    if (p.flat_in == 0) throw DataError("encoder: empty input features");

    auto rng = make_rng(seed);
    switch (cfg.kind) {
        case EncoderKind::identity:
            break;
        case EncoderKind::dense: {
            p.enc_w = Tensor::xavier_uniform({p.flat_in, cfg.latent_dim}, p.flat_in,
                                             cfg.latent_dim, rng)
                          .set_requires_grad(true);
            p.enc_b = Tensor::zeros({cfg.latent_dim}).set_requires_grad(true);
            p.dec_w = Tensor::xavier_uniform({cfg.latent_dim, p.flat_in}, cfg.latent_dim,
                                             p.flat_in, rng)
                          .set_requires_grad(true);
            p.dec_b = Tensor::zeros({p.flat_in}).set_requires_grad(true);
            break;
        }
        case EncoderKind::conv: {
            if (input_shape.size() != 4)
                throw ShapeError("encoder: conv kind needs [N x 1 x H x W] images");
            const std::size_t k = cfg.conv_kernel, s = cfg.conv_stride;
            if (s == 0) throw ParamError("encoder: conv_stride must be positive");
            if (p.in_h < k || p.in_w < k)
                throw ShapeError("encoder: kernel size " + std::to_string(k) +
                                 " exceeds image size " + std::to_string(p.in_h) + "x" +
                                 std::to_string(p.in_w));
            p.h1 = (p.in_h - k) / s + 1;
            p.w1 = (p.in_w - k) / s + 1;
            if (p.h1 < k || p.w1 < k)
                throw ShapeError("encoder: images too small for two conv stages");
            p.h2 = (p.h1 - k) / s + 1;
            p.w2 = (p.w1 - k) / s + 1;
            const std::size_t flat = cfg.conv_c2 * p.h2 * p.w2;
            const std::size_t kk = k * k;
            p.enc_k1 = Tensor::xavier_uniform({cfg.conv_c1, 1, k, k}, kk, cfg.conv_c1 * kk, rng)
                           .set_requires_grad(true);
            p.enc_b1 = Tensor::zeros({cfg.conv_c1}).set_requires_grad(true);
            p.enc_k2 = Tensor::xavier_uniform({cfg.conv_c2, cfg.conv_c1, k, k},
                                              cfg.conv_c1 * kk, cfg.conv_c2 * kk, rng)
                           .set_requires_grad(true);
            p.enc_b2 = Tensor::zeros({cfg.conv_c2}).set_requires_grad(true);
            p.enc_w = Tensor::xavier_uniform({flat, cfg.latent_dim}, flat, cfg.latent_dim, rng)
                          .set_requires_grad(true);
            p.enc_b = Tensor::zeros({cfg.latent_dim}).set_requires_grad(true);
            p.dec_w = Tensor::xavier_uniform({cfg.latent_dim, flat}, cfg.latent_dim, flat, rng)
                          .set_requires_grad(true);
            p.dec_b = Tensor::zeros({flat}).set_requires_grad(true);
            p.dec_k1 = Tensor::xavier_uniform({cfg.conv_c2, cfg.conv_c1, k, k},
                                              cfg.conv_c2 * kk, cfg.conv_c1 * kk, rng)
                           .set_requires_grad(true);
            p.dec_b1 = Tensor::zeros({cfg.conv_c1}).set_requires_grad(true);
            p.dec_k2 = Tensor::xavier_uniform({cfg.conv_c1, 1, k, k}, cfg.conv_c1 * kk, kk, rng)
                           .set_requires_grad(true);
            p.dec_b2 = Tensor::zeros({1}).set_requires_grad(true);
            break;
        }
    }
    return p;
}

// Encoder half, built on the parameter tensors themselves (differentiable
// when they require grad).
inline Tensor encoder_forward(const EncoderParams& p, const Tensor& x) {
    switch (p.cfg.kind) {
        case EncoderKind::identity:
            return detail::flatten_input(x);
        case EncoderKind::dense: {
            Tensor flat = detail::flatten_input(x);
            return detail::enc_act(add_row_bias(matmul(flat, p.enc_w), p.enc_b),
                                   p.cfg.activation);
        }
        default: {
            if (x.ndim() != 4)
                throw ShapeError("encoder: conv kind needs [N x 1 x H x W] images, got " +
                                 shape_str(x.shape()));
            const std::size_t s = p.cfg.conv_stride;
            Tensor h = add_channel_bias(conv2d(x, p.enc_k1, s), p.enc_b1);
            h = detail::enc_act(h, p.cfg.activation);
            h = add_channel_bias(conv2d(h, p.enc_k2, s), p.enc_b2);
            Tensor flat = reshape(h, {x.dim(0), p.cfg.conv_c2 * p.h2 * p.w2});
            return add_row_bias(matmul(flat, p.enc_w), p.enc_b);
        }
    }
}

// Decoder half (reconstruction from latent codes).
inline Tensor decoder_forward(const EncoderParams& p, const Tensor& z, std::size_t n) {
    switch (p.cfg.kind) {
        case EncoderKind::identity:
            return reshape(z, z.shape());
        case EncoderKind::dense:
            return add_row_bias(matmul(z, p.dec_w), p.dec_b);
        default: {
            const std::size_t s = p.cfg.conv_stride;
            Tensor d = detail::enc_act(add_row_bias(matmul(z, p.dec_w), p.dec_b),
                                       p.cfg.activation);
            d = reshape(d, {n, p.cfg.conv_c2, p.h2, p.w2});
            d = add_channel_bias(conv2d_transpose(d, p.dec_k1, s, p.h1, p.w1), p.dec_b1);
            d = detail::enc_act(d, p.cfg.activation);
            return add_channel_bias(conv2d_transpose(d, p.dec_k2, s, p.in_h, p.in_w), p.dec_b2);
        }
    }
}

struct PretrainResult {
    EncoderParams params;
    std::vector<double> loss_history;  // mean squared reconstruction error per epoch,
                                       // recorded before that epoch's update
};

// Full-batch Adam on the mean squared reconstruction error.
inline PretrainResult pretrain_autoencoder(const Tensor& images, const EncoderConfig& cfg,
                                           std::uint64_t seed) {
    for (double v : images.values())
        if (!std::isfinite(v)) throw DataError("pretrain_autoencoder: non-finite input");
    PretrainResult res;
    res.params = init_encoder(cfg, images.shape(), seed);
    if (cfg.kind == EncoderKind::identity) return res;  // nothing to train

    Tensor target = detail::flatten_input(images).detach();
    std::vector<Tensor> params = res.params.all();
    AdamState opt;
    const std::size_t n = images.dim(0);
    for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        Tensor z = encoder_forward(res.params, images);
        Tensor recon = decoder_forward(res.params, z, n);
        Tensor flat_recon = recon.ndim() == 2 ? recon : detail::flatten_input(recon);
        Tensor loss = mean(square(sub(flat_recon, target)));
        const double loss_value = loss.at(0);
        if (!std::isfinite(loss_value))
            throw DivergenceError(static_cast<int>(epoch), "reconstruction");
        res.loss_history.push_back(loss_value);
        zero_grad(params);
        backward(loss);
        adam_step(params, opt, cfg.pretrain_lr);
    }
    return res;
}

// Deterministic, tape-free feature extraction: [N x latent] constants.
inline Tensor encode(const Tensor& input, const EncoderParams& p) {
    EncoderParams frozen = p;
    for (Tensor* t : {&frozen.enc_k1, &frozen.enc_b1, &frozen.enc_k2, &frozen.enc_b2,
                      &frozen.enc_w, &frozen.enc_b})
        if (t->defined()) *t = t->detach();
    return encoder_forward(frozen, input).detach();
}

}  // namespace mmgf
