#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmgf/error.hpp"

namespace mmgf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    if (s.empty()) return "[scalar]";
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorImpl&)> backprop;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

// Global switch for the non-finite sentinel: when on, every op checks its
// result and throws DataError on NaN/Inf. Off by default (costs a pass over
// each result); tests and the trainer's divergence guard turn it on.
inline bool& finite_checks() {
    static bool on = false;
    return on;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->values = std::move(values);
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape shape, double v) {
        std::vector<double> vals(shape_numel(shape), v);
        return from(std::move(shape), std::move(vals));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<double> vals(shape_numel(shape));
        for (double& v : vals) v = dist(rng);
        return from(std::move(shape), std::move(vals));
    }

    static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(mean, stddev);
        std::vector<double> vals(shape_numel(shape));
        for (double& v : vals) v = dist(rng);
        return from(std::move(shape), std::move(vals));
    }

    // Xavier/Glorot uniform: U(-L, L) with L = sqrt(6 / (fan_in + fan_out)).
    static Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                                 std::mt19937_64& rng) {
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        return uniform(std::move(shape), -limit, limit, rng);
    }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->values.size(); }

    std::vector<double>& values() { return impl_->values; }
    const std::vector<double>& values() const { return impl_->values; }
    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }

    double& at(std::size_t i) { return impl_->values[i]; }
    double at(std::size_t i) const { return impl_->values[i]; }
    double& at(std::size_t i, std::size_t j) { return impl_->values[i * impl_->shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const {
        return impl_->values[i * impl_->shape[1] + j];
    }
    double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        const Shape& s = impl_->shape;
        return impl_->values[((b * s[1] + c) * s[2] + h) * s[3] + w];
    }
    double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        const Shape& s = impl_->shape;
        return impl_->values[((b * s[1] + c) * s[2] + h) * s[3] + w];
    }

    bool requires_grad() const { return impl_->requires_grad; }

    Tensor& set_requires_grad(bool on) {
        if (!impl_->leaf)
            throw ContractError("requires_grad may only be toggled on leaf tensors");
        impl_->requires_grad = on;
        if (on) impl_->ensure_grad();
        return *this;
    }

    bool is_leaf() const { return impl_->leaf; }

    const std::vector<double>& grad() const {
        if (impl_->grad.size() != impl_->values.size())
            throw ContractError("tensor has no gradient buffer");
        return impl_->grad;
    }

    std::vector<double>& grad() {
        if (impl_->grad.size() != impl_->values.size())
            throw ContractError("tensor has no gradient buffer");
        return impl_->grad;
    }

    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    // Leaf copy of the values, detached from any recorded graph.
    Tensor detach() const {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = impl_->shape;
        impl->values = impl_->values;
        return Tensor(std::move(impl));
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    // Used by ops to build result nodes. A result with no grad-requiring
    // parents is a plain constant; otherwise it joins the recorded graph.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<std::shared_ptr<detail::TensorImpl>> parents,
                              std::function<void(detail::TensorImpl&)> backprop,
                              const char* op_name) {
        if (finite_checks()) {
            for (double v : values)
                if (!std::isfinite(v))
                    throw DataError(std::string(op_name) + ": produced a non-finite value");
        }
        bool needs = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) needs = true;
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->values = std::move(values);
        if (needs) {
            impl->requires_grad = true;
            impl->leaf = false;
            impl->parents = std::move(parents);
            impl->backprop = std::move(backprop);
        }
        return Tensor(std::move(impl));
    }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// splitmix64 finalizer; used to derive independent seed streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace mmgf
