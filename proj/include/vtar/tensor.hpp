#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "vtar/common.hpp"

namespace vtar {

class Graph;

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool frozen = false;
    const Graph* producer = nullptr;  // graph that recorded the producing op
};

inline void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor rank must be >= 1");
    for (auto d : s) {
        if (d == 0) throw ShapeError(strf("tensor dimensions must be positive, got ", shape_str(s)));
    }
}

inline void validate_finite(const char* what, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericsError(strf(what, ": non-finite value ", v[i], " at flat index ", i));
        }
    }
}

}  // namespace detail

// Dense row-major tensor of 64-bit reals. A cheap shared handle: copies alias
// the same storage. Constructors reject non-finite values and zero dims.
class Tensor {
public:
    Tensor() = default;

    static Tensor values(Shape shape, std::vector<double> data) {
        return make(std::move(shape), std::move(data), false);
    }

    static Tensor param(Shape shape, std::vector<double> data) {
        return make(std::move(shape), std::move(data), true);
    }

    static Tensor zeros(Shape shape) {
        detail::validate_shape(shape);
        std::vector<double> d(shape_numel(shape), 0.0);
        return make(std::move(shape), std::move(d), false);
    }

    static Tensor full(Shape shape, double v) {
        detail::validate_shape(shape);
        std::vector<double> d(shape_numel(shape), v);
        return make(std::move(shape), std::move(d), false);
    }

    static Tensor scalar(double v) { return make({1}, {v}, false); }

    static Tensor randn(Shape shape, Rng& rng, double sigma, bool trainable = true) {
        detail::validate_shape(shape);
        std::vector<double> d(shape_numel(shape));
        for (auto& x : d) x = rng.normal(0.0, sigma);
        return make(std::move(shape), std::move(d), trainable);
    }

    bool valid() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t size() const { return n_->value.size(); }
    std::size_t rows() const {
        require_rank2("rows()");
        return n_->shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols()");
        return n_->shape[1];
    }

    double* data() { return n_->value.data(); }
    const double* data() const { return n_->value.data(); }
    const std::vector<double>& vec() const { return n_->value; }

    double at(std::size_t i) const { return n_->value.at(i); }
    double& at(std::size_t i) { return n_->value.at(i); }
    double at(std::size_t r, std::size_t c) const {
        require_rank2("at(r, c)");
        return n_->value.at(r * n_->shape[1] + c);
    }
    double& at(std::size_t r, std::size_t c) {
        require_rank2("at(r, c)");
        return n_->value.at(r * n_->shape[1] + c);
    }

    // Value of a 1-element tensor.
    double item() const {
        if (size() != 1) throw ShapeError(strf("item(): tensor is ", shape_str(shape()), ", not scalar"));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }

    void set_requires_grad(bool v) {
        if (v && n_->frozen) {
            throw NumericsError("set_requires_grad: tensor is frozen; gradients must not reach it");
        }
        n_->requires_grad = v;
    }

    // Marks the tensor permanently non-trainable. Any later attempt to route
    // gradients to it rejects.
    void freeze() {
        n_->requires_grad = false;
        n_->frozen = true;
        n_->grad.clear();
    }
    bool frozen() const { return n_->frozen; }

    bool has_grad() const { return !n_->grad.empty(); }

    void ensure_grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0);
    }

    double* grad() {
        ensure_grad();
        return n_->grad.data();
    }

    const std::vector<double>& grad_vec() const {
        if (n_->grad.empty()) throw NumericsError("grad_vec: no gradient has been accumulated");
        return n_->grad;
    }

    std::vector<double> grad_or_zeros() const {
        if (n_->grad.empty()) return std::vector<double>(n_->value.size(), 0.0);
        return n_->grad;
    }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Value copy detached from any graph; never requires grad.
    Tensor detach() const { return make(n_->shape, n_->value, false); }

    // Trainable deep copy (used when un-freezing a model for full fine-tuning).
    Tensor clone_trainable() const { return make(n_->shape, n_->value, true); }

    // In-place value overwrite, keeping flags. Validates finiteness.
    void assign_values(const std::vector<double>& v) {
        if (v.size() != n_->value.size()) {
            throw ShapeError(strf("assign_values: size ", v.size(), " vs ", n_->value.size()));
        }
        detail::validate_finite("assign_values", v);
        n_->value = v;
    }

    bool same_storage(const Tensor& other) const { return n_ == other.n_; }

    detail::TensorNode* node() { return n_.get(); }
    const detail::TensorNode* node() const { return n_.get(); }

private:
    static Tensor make(Shape shape, std::vector<double> data, bool requires_grad) {
        detail::validate_shape(shape);
        if (shape_numel(shape) != data.size()) {
            throw ShapeError(strf("tensor data length ", data.size(), " does not match shape ",
                                  shape_str(shape)));
        }
        detail::validate_finite("tensor", data);
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    void require_rank2(const char* what) const {
        if (n_->shape.size() != 2) {
            throw ShapeError(strf(what, " requires rank-2, got ", shape_str(n_->shape)));
        }
    }

    std::shared_ptr<detail::TensorNode> n_;
};

}  // namespace vtar
