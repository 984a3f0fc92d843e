#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spt/errors.hpp"
#include "spt/rng.hpp"

namespace spt {

// Dense f64 tensor with tape-free reverse-mode autodiff: each op output
// holds its parents and a closure that routes the output gradient into
// them. The graph is rebuilt on every forward pass and dies when the
// last Tensor handle referencing it drops.
//
// Tensors are value types over a shared impl. Copies may cross threads;
// a live graph (between forward and backward) may not.
class Tensor {
public:
    struct Impl {
        std::vector<std::size_t> shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty until first accumulation
        bool requires_grad = false;
        std::vector<std::shared_ptr<Impl>> parents;
        std::function<void(const std::vector<double>&)> backward_fn;
    };

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(product(t.impl_->shape), 0.0);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        if (data.size() != t.impl_->data.size())
            throw DataError("tensor data length does not match shape");
        t.impl_->data = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    static Tensor randn(std::vector<std::size_t> shape, SplitMix64& rng, double stddev,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& x : t.impl_->data) x = rng.normal() * stddev;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t rows() const { return impl_->shape.empty() ? 1 : impl_->shape[0]; }
    std::size_t cols() const { return impl_->shape.size() < 2 ? 1 : impl_->shape[1]; }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    double value() const {
        if (numel() != 1) throw NumericError("value() requires a scalar tensor");
        return impl_->data[0];
    }

    double& at(std::size_t i) { return impl_->data[i]; }
    double at(std::size_t i) const { return impl_->data[i]; }
    double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) {
        impl_->requires_grad = flag;
        if (!flag) impl_->grad.clear();
    }

    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    const std::vector<double>& grad() const { return impl_->grad; }
    std::vector<double>& grad() { return impl_->grad; }

    void zero_grad() {
        if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    }
    void clear_grad() { impl_->grad.clear(); }

    // Deep copy of values only; the copy is detached from any graph.
    Tensor clone_detached() const {
        Tensor t = zeros(impl_->shape);
        t.impl_->data = impl_->data;
        return t;
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    static std::size_t product(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

private:
    std::shared_ptr<Impl> impl_;
};

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline void ensure_grad(Tensor::Impl& n) {
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording for its scope. Forward values are unchanged;
// outputs are plain constants.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate: leaves
// keep whatever was already in their grad buffer, so per-example losses
// in a batch can simply be backward()ed one after another.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw NumericError("backward requires scalar");
    Tensor::Impl* root = loss.impl().get();
    if (!root->requires_grad) return;  // no trainable leaf reachable

    // Post-order DFS over requires_grad parents; order is a pure function
    // of graph structure, so repeated runs are bit-identical.
    std::vector<Tensor::Impl*> topo;
    std::unordered_set<Tensor::Impl*> visited;
    std::vector<std::pair<Tensor::Impl*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto [node, next] = stack.back();
        if (next < node->parents.size()) {
            stack.back().second = next + 1;
            Tensor::Impl* p = node->parents[next].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    detail::ensure_grad(*root);
    root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor::Impl* node = *it;
        if (node->backward_fn) node->backward_fn(node->grad);
    }
}

// Central-difference gradient check. Returns
//   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
// f is re-evaluated at perturbed copies of x, so it must be a pure
// function of x's current values (plus constants).
inline double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor& x, double eps) {
    if (!(eps > 0)) throw NumericError("grad_check requires eps > 0");
    bool prev_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.clear_grad();
    Tensor loss = f(x);
    if (!std::isfinite(loss.value())) throw NumericError("non-finite objective");
    backward(loss);
    std::vector<double> analytic =
        x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);

    double max_rel = 0.0;
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double saved = x.at(i);
            x.at(i) = saved + eps;
            double fp = f(x).value();
            x.at(i) = saved - eps;
            double fm = f(x).value();
            x.at(i) = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("non-finite objective");
            double numeric = (fp - fm) / (2.0 * eps);
            double rel = std::abs(analytic[i] - numeric) /
                         std::max(1.0, std::abs(analytic[i]));
            if (rel > max_rel) max_rel = rel;
        }
    }
    x.set_requires_grad(prev_rg);
    return max_rel;
}

}  // namespace spt
