#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <vector>

#include "vtar/graph.hpp"
#include "vtar/tensor.hpp"

// Forward op family with reverse-mode rules. Every op evaluates eagerly,
// validates shapes (naming the offending shapes) and output finiteness, and
// appends a record to the active Graph when any input requires grad. No
// implicit broadcasting; the only exception is scalar-times-tensor (and the
// matching scalar divisor).

namespace vtar {
namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(strf(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                              shape_str(b.shape())));
    }
}

inline void require_rank2(const char* op, const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError(strf(op, ": requires rank-2 operand, got ", shape_str(a.shape())));
    }
}

inline Tensor op_result(const char* op, Shape shape, std::vector<double> data, bool req) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericsError(strf(op, ": non-finite output ", data[i], " at flat index ", i));
        }
    }
    Tensor t = Tensor::values(std::move(shape), std::move(data));
    if (req) t.set_requires_grad(true);
    return t;
}

inline const double* grad_of(const Tensor& t) { return t.node()->grad.data(); }

inline void acc(Tensor t, const double* g, std::size_t n) {
    if (!t.requires_grad()) return;
    double* dst = t.grad();
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

template <typename Fn>
inline void acc_fn(Tensor t, Fn&& fn) {
    if (!t.requires_grad()) return;
    double* dst = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += fn(i);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("add", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("add").record("add", {a, b}, r, [a, b, r]() {
            const double* og = detail::grad_of(r);
            detail::acc(a, og, r.size());
            detail::acc(b, og, r.size());
        });
    }
    return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("sub", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("sub").record("sub", {a, b}, r, [a, b, r]() {
            const double* og = detail::grad_of(r);
            detail::acc(a, og, r.size());
            detail::acc_fn(b, [og](std::size_t i) { return -og[i]; });
        });
    }
    return r;
}

// Elementwise product; either operand may be a 1-element scalar.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    bool a_scalar = a.size() == 1 && b.size() != 1;
    bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!a_scalar && !b_scalar) detail::require_same_shape("mul", a, b);
    const Tensor& big = a_scalar ? b : a;
    std::vector<double> out(big.size());
    if (a_scalar) {
        double s = a.at(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * b.data()[i];
    } else if (b_scalar) {
        double s = b.at(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.data()[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    }
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("mul", big.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("mul").record("mul", {a, b}, r, [a, b, r, a_scalar, b_scalar]() {
            const double* og = detail::grad_of(r);
            if (a_scalar) {
                if (a.requires_grad()) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < r.size(); ++i) s += og[i] * b.data()[i];
                    a.grad()[0] += s;
                }
                detail::acc_fn(b, [og, &a](std::size_t i) { return og[i] * a.at(0); });
            } else if (b_scalar) {
                if (b.requires_grad()) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < r.size(); ++i) s += og[i] * a.data()[i];
                    b.grad()[0] += s;
                }
                detail::acc_fn(a, [og, &b](std::size_t i) { return og[i] * b.at(0); });
            } else {
                detail::acc_fn(a, [og, &b](std::size_t i) { return og[i] * b.data()[i]; });
                detail::acc_fn(b, [og, &a](std::size_t i) { return og[i] * a.data()[i]; });
            }
        });
    }
    return r;
}

// Elementwise quotient; the divisor may be a 1-element scalar.
inline Tensor div(const Tensor& a, const Tensor& b) {
    bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!b_scalar) detail::require_same_shape("div", a, b);
    std::vector<double> out(a.size());
    if (b_scalar) {
        double s = b.at(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / s;
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    }
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("div", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("div").record("div", {a, b}, r, [a, b, r, b_scalar]() {
            const double* og = detail::grad_of(r);
            if (b_scalar) {
                double s = b.at(0);
                detail::acc_fn(a, [og, s](std::size_t i) { return og[i] / s; });
                if (b.requires_grad()) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < r.size(); ++i) acc -= og[i] * a.data()[i] / (s * s);
                    b.grad()[0] += acc;
                }
            } else {
                detail::acc_fn(a, [og, &b](std::size_t i) { return og[i] / b.data()[i]; });
                detail::acc_fn(b, [og, &a, &b](std::size_t i) {
                    double d = b.data()[i];
                    return -og[i] * a.data()[i] / (d * d);
                });
            }
        });
    }
    return r;
}

// Multiplication by a compile-time-known constant.
inline Tensor scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw NumericsError(strf("scale: non-finite factor ", c));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
    bool req = a.requires_grad();
    Tensor r = detail::op_result("scale", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("scale").record("scale", {a}, r, [a, r, c]() {
            const double* og = detail::grad_of(r);
            detail::acc_fn(a, [og, c](std::size_t i) { return c * og[i]; });
        });
    }
    return r;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2("matmul", a);
    detail::require_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError(strf("matmul: inner dimensions disagree, ", shape_str(a.shape()), " vs ",
                              shape_str(b.shape())));
    }
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    {
        detail::ECMap A(a.data(), m, k), B(b.data(), k, n);
        detail::EMap C(out.data(), m, n);
        C.noalias() = A * B;
    }
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("matmul", {m, n}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("matmul").record("matmul", {a, b}, r, [a, b, r, m, k, n]() {
            detail::ECMap dC(detail::grad_of(r), m, n);
            if (a.requires_grad()) {
                detail::ECMap B(b.data(), k, n);
                detail::EMap dA(a.grad(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (b.requires_grad()) {
                detail::ECMap A(a.data(), m, k);
                detail::EMap dB(b.grad(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
    }
    return r;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2("transpose", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    bool req = a.requires_grad();
    Tensor r = detail::op_result("transpose", {n, m}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("transpose").record("transpose", {a}, r, [a, r, m, n]() {
            if (!a.requires_grad()) return;
            const double* og = detail::grad_of(r);
            double* dst = a.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += og[j * m + i];
        });
    }
    return r;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    if (axis > 1) throw ShapeError(strf("concat: axis must be 0 or 1, got ", axis));
    detail::require_rank2("concat", parts[0]);
    std::size_t rows0 = parts[0].rows(), cols0 = parts[0].cols();
    std::size_t total = 0;
    bool req = false;
    for (const auto& p : parts) {
        detail::require_rank2("concat", p);
        if (axis == 0 && p.cols() != cols0) {
            throw ShapeError(strf("concat axis 0: column mismatch ", shape_str(parts[0].shape()),
                                  " vs ", shape_str(p.shape())));
        }
        if (axis == 1 && p.rows() != rows0) {
            throw ShapeError(strf("concat axis 1: row mismatch ", shape_str(parts[0].shape()),
                                  " vs ", shape_str(p.shape())));
        }
        total += axis == 0 ? p.rows() : p.cols();
        req = req || p.requires_grad();
    }
    std::size_t out_rows = axis == 0 ? total : rows0;
    std::size_t out_cols = axis == 0 ? cols0 : total;
    std::vector<double> out(out_rows * out_cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            std::memcpy(out.data() + off * out_cols, p.data(), p.size() * sizeof(double));
            off += p.rows();
        } else {
            for (std::size_t i = 0; i < rows0; ++i)
                std::memcpy(out.data() + i * out_cols + off, p.data() + i * p.cols(),
                            p.cols() * sizeof(double));
            off += p.cols();
        }
    }
    Tensor r = detail::op_result("concat", {out_rows, out_cols}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("concat").record("concat", parts, r, [parts, r, axis, out_cols]() {
            const double* og = detail::grad_of(r);
            std::size_t off = 0;
            for (const auto& p : parts) {
                if (p.requires_grad()) {
                    double* dst = p.grad();  // NOLINT: handle copy shares storage
                    Tensor pc = p;
                    dst = pc.grad();
                    if (axis == 0) {
                        for (std::size_t i = 0; i < p.size(); ++i)
                            dst[i] += og[off * out_cols + i];
                    } else {
                        for (std::size_t i = 0; i < p.rows(); ++i)
                            for (std::size_t j = 0; j < p.cols(); ++j)
                                dst[i * p.cols() + j] += og[i * out_cols + off + j];
                    }
                }
                off += axis == 0 ? p.rows() : p.cols();
            }
        });
    }
    return r;
}

inline Tensor slice_rows(const Tensor& a, std::size_t row0, std::size_t nrows) {
    detail::require_rank2("slice_rows", a);
    if (row0 + nrows > a.rows() || nrows == 0) {
        throw ShapeError(strf("slice_rows: range [", row0, ", ", row0 + nrows, ") out of ",
                              shape_str(a.shape())));
    }
    std::size_t c = a.cols();
    std::vector<double> out(a.data() + row0 * c, a.data() + (row0 + nrows) * c);
    bool req = a.requires_grad();
    Tensor r = detail::op_result("slice_rows", {nrows, c}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("slice_rows").record("slice_rows", {a}, r, [a, r, row0, c]() {
            if (!a.requires_grad()) return;
            const double* og = detail::grad_of(r);
            double* dst = Tensor(a).grad();
            for (std::size_t i = 0; i < r.size(); ++i) dst[row0 * c + i] += og[i];
        });
    }
    return r;
}

inline Tensor slice_cols(const Tensor& a, std::size_t col0, std::size_t ncols) {
    detail::require_rank2("slice_cols", a);
    if (col0 + ncols > a.cols() || ncols == 0) {
        throw ShapeError(strf("slice_cols: range [", col0, ", ", col0 + ncols, ") out of ",
                              shape_str(a.shape())));
    }
    std::size_t m = a.rows(), c = a.cols();
    std::vector<double> out(m * ncols);
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * ncols, a.data() + i * c + col0, ncols * sizeof(double));
    bool req = a.requires_grad();
    Tensor r = detail::op_result("slice_cols", {m, ncols}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("slice_cols")
            .record("slice_cols", {a}, r, [a, r, col0, m, c, ncols]() {
                if (!a.requires_grad()) return;
                const double* og = detail::grad_of(r);
                double* dst = Tensor(a).grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < ncols; ++j)
                        dst[i * c + col0 + j] += og[i * ncols + j];
            });
    }
    return r;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw ShapeError(strf("reshape: ", shape_str(a.shape()), " has ", a.size(),
                              " elements, target ", shape_str(shape), " has ",
                              shape_numel(shape)));
    }
    std::vector<double> out(a.data(), a.data() + a.size());
    bool req = a.requires_grad();
    Tensor r = detail::op_result("reshape", std::move(shape), std::move(out), req);
    if (req) {
        Graph::active_or_throw("reshape").record("reshape", {a}, r, [a, r]() {
            detail::acc(a, detail::grad_of(r), r.size());
        });
    }
    return r;
}

// Row lookup by integer ids (embedding gather). Gradients scatter-add into the
// table; ids are not differentiable.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    detail::require_rank2("gather_rows", table);
    if (ids.empty()) throw ShapeError("gather_rows: empty id list");
    std::size_t c = table.cols();
    for (auto id : ids) {
        if (id >= table.rows()) {
            throw ShapeError(strf("gather_rows: id ", id, " out of range for ",
                                  shape_str(table.shape())));
        }
    }
    std::vector<double> out(ids.size() * c);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * c, table.data() + ids[i] * c, c * sizeof(double));
    bool req = table.requires_grad();
    Tensor r = detail::op_result("gather_rows", {ids.size(), c}, std::move(out), req);
    if (req) {
        Graph::active_or_throw("gather_rows").record("gather_rows", {table}, r, [table, r, ids, c]() {
            if (!table.requires_grad()) return;
            const double* og = detail::grad_of(r);
            double* dst = Tensor(table).grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) dst[ids[i] * c + j] += og[i * c + j];
        });
    }
    return r;
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    bool req = a.requires_grad();
    Tensor r = detail::op_result("relu", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("relu").record("relu", {a}, r, [a, r]() {
            const double* og = detail::grad_of(r);
            detail::acc_fn(a, [og, &a](std::size_t i) { return a.data()[i] > 0.0 ? og[i] : 0.0; });
        });
    }
    return r;
}

inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    bool req = a.requires_grad();
    Tensor r = detail::op_result("gelu", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("gelu").record("gelu", {a}, r, [a, r]() {
            const double* og = detail::grad_of(r);
            detail::acc_fn(a, [og, &a](std::size_t i) {
                double x = a.data()[i];
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                return og[i] * (cdf + x * pdf);
            });
        });
    }
    return r;
}

inline Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.data()[i]);
    bool req = a.requires_grad();
    Tensor r = detail::op_result("sqrt", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("sqrt").record("sqrt", {a}, r, [a, r]() {
            const double* og = detail::grad_of(r);
            detail::acc_fn(a, [og, &r](std::size_t i) { return og[i] * 0.5 / r.data()[i]; });
        });
    }
    return r;
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
    bool req = a.requires_grad();
    Tensor r = detail::op_result("log", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("log").record("log", {a}, r, [a, r]() {
            const double* og = detail::grad_of(r);
            detail::acc_fn(a, [og, &a](std::size_t i) { return og[i] / a.data()[i]; });
        });
    }
    return r;
}

namespace detail {

// Visits each 1-d slice of a rank-2 tensor along the chosen axis.
// axis=1: slices are rows (contiguous); axis=0: slices are columns.
template <typename Fn>
inline void for_each_slice(std::size_t rows, std::size_t cols, std::size_t axis, Fn&& fn) {
    if (axis == 1) {
        for (std::size_t i = 0; i < rows; ++i) fn(i * cols, 1, cols);
    } else {
        for (std::size_t j = 0; j < cols; ++j) fn(j, cols, rows);
    }
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, std::size_t axis) {
    detail::require_rank2("softmax", a);
    if (axis > 1) throw ShapeError(strf("softmax: axis must be 0 or 1, got ", axis));
    std::vector<double> out(a.size());
    detail::for_each_slice(a.rows(), a.cols(), axis,
                           [&](std::size_t base, std::size_t stride, std::size_t n) {
                               double mx = a.data()[base];
                               for (std::size_t i = 1; i < n; ++i)
                                   mx = std::max(mx, a.data()[base + i * stride]);
                               double sum = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                   double e = std::exp(a.data()[base + i * stride] - mx);
                                   out[base + i * stride] = e;
                                   sum += e;
                               }
                               for (std::size_t i = 0; i < n; ++i) out[base + i * stride] /= sum;
                           });
    bool req = a.requires_grad();
    Tensor r = detail::op_result("softmax", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("softmax").record("softmax", {a}, r, [a, r, axis]() {
            if (!a.requires_grad()) return;
            const double* og = detail::grad_of(r);
            const double* p = r.data();
            double* dst = Tensor(a).grad();
            detail::for_each_slice(r.rows(), r.cols(), axis,
                                   [&](std::size_t base, std::size_t stride, std::size_t n) {
                                       double dot = 0.0;
                                       for (std::size_t i = 0; i < n; ++i) {
                                           std::size_t k = base + i * stride;
                                           dot += og[k] * p[k];
                                       }
                                       for (std::size_t i = 0; i < n; ++i) {
                                           std::size_t k = base + i * stride;
                                           dst[k] += p[k] * (og[k] - dot);
                                       }
                                   });
        });
    }
    return r;
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) {
    detail::require_rank2("log_softmax", a);
    if (axis > 1) throw ShapeError(strf("log_softmax: axis must be 0 or 1, got ", axis));
    std::vector<double> out(a.size());
    detail::for_each_slice(a.rows(), a.cols(), axis,
                           [&](std::size_t base, std::size_t stride, std::size_t n) {
                               double mx = a.data()[base];
                               for (std::size_t i = 1; i < n; ++i)
                                   mx = std::max(mx, a.data()[base + i * stride]);
                               double sum = 0.0;
                               for (std::size_t i = 0; i < n; ++i)
                                   sum += std::exp(a.data()[base + i * stride] - mx);
                               double lse = mx + std::log(sum);
                               for (std::size_t i = 0; i < n; ++i)
                                   out[base + i * stride] = a.data()[base + i * stride] - lse;
                           });
    bool req = a.requires_grad();
    Tensor r = detail::op_result("log_softmax", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("log_softmax").record("log_softmax", {a}, r, [a, r, axis]() {
            if (!a.requires_grad()) return;
            const double* og = detail::grad_of(r);
            const double* lsm = r.data();
            double* dst = Tensor(a).grad();
            detail::for_each_slice(r.rows(), r.cols(), axis,
                                   [&](std::size_t base, std::size_t stride, std::size_t n) {
                                       double total = 0.0;
                                       for (std::size_t i = 0; i < n; ++i)
                                           total += og[base + i * stride];
                                       for (std::size_t i = 0; i < n; ++i) {
                                           std::size_t k = base + i * stride;
                                           dst[k] += og[k] - std::exp(lsm[k]) * total;
                                       }
                                   });
        });
    }
    return r;
}

// Per-row standardization to mean 0, variance 1 (no learned affine).
inline Tensor layer_norm(const Tensor& a) {
    detail::require_rank2("layer_norm", a);
    constexpr double eps = 1e-12;
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += x[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(n);
        double r = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (x[j] - mean) * r;
    }
    bool req = a.requires_grad();
    Tensor r = detail::op_result("layer_norm", a.shape(), std::move(out), req);
    if (req) {
        Graph::active_or_throw("layer_norm").record("layer_norm", {a}, r, [a, r, m, n]() {
            if (!a.requires_grad()) return;
            const double* og = detail::grad_of(r);
            const double* y = r.data();
            double* dst = Tensor(a).grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* x = a.data() + i * n;
                double mean = 0.0;
                for (std::size_t j = 0; j < n; ++j) mean += x[j];
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
                var /= static_cast<double>(n);
                double rstd = 1.0 / std::sqrt(var + 1e-12);
                double og_mean = 0.0, ogy_mean = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    og_mean += og[i * n + j];
                    ogy_mean += og[i * n + j] * y[i * n + j];
                }
                og_mean /= static_cast<double>(n);
                ogy_mean /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    dst[i * n + j] +=
                        rstd * (og[i * n + j] - og_mean - y[i * n + j] * ogy_mean);
                }
            }
        });
    }
    return r;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    bool req = a.requires_grad();
    Tensor r = detail::op_result("sum", {1}, {s}, req);
    if (req) {
        Graph::active_or_throw("sum").record("sum", {a}, r, [a, r]() {
            double g = detail::grad_of(r)[0];
            detail::acc_fn(a, [g](std::size_t) { return g; });
        });
    }
    return r;
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    double inv = 1.0 / static_cast<double>(a.size());
    bool req = a.requires_grad();
    Tensor r = detail::op_result("mean", {1}, {s * inv}, req);
    if (req) {
        Graph::active_or_throw("mean").record("mean", {a}, r, [a, r, inv]() {
            double g = detail::grad_of(r)[0] * inv;
            detail::acc_fn(a, [g](std::size_t) { return g; });
        });
    }
    return r;
}

// Sum of squared elementwise differences, as a scalar.
inline Tensor squared_distance(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("squared_distance", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    bool req = a.requires_grad() || b.requires_grad();
    Tensor r = detail::op_result("squared_distance", {1}, {s}, req);
    if (req) {
        Graph::active_or_throw("squared_distance")
            .record("squared_distance", {a, b}, r, [a, b, r]() {
                double g = detail::grad_of(r)[0];
                detail::acc_fn(a, [g, &a, &b](std::size_t i) {
                    return 2.0 * g * (a.data()[i] - b.data()[i]);
                });
                detail::acc_fn(b, [g, &a, &b](std::size_t i) {
                    return -2.0 * g * (a.data()[i] - b.data()[i]);
                });
            });
    }
    return r;
}

// ---- composite helpers built from the op family ----------------------------

// x @ w + bias, the bias row repeated via a ones column.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    Tensor prod = matmul(x, w);
    Tensor ones = Tensor::full({x.rows(), 1}, 1.0);
    return add(prod, matmul(ones, bias));
}

// Dot product of two 1 x d row vectors, as a 1 x 1 tensor.
inline Tensor row_dot(const Tensor& a, const Tensor& b) { return matmul(a, transpose(b)); }

// Rows of x scaled to unit L2 norm; tiny epsilon keeps zero rows finite.
inline Tensor normalize_rows(const Tensor& x) {
    detail::require_rank2("normalize_rows", x);
    std::vector<Tensor> rows;
    rows.reserve(x.rows());
    Tensor eps = Tensor::scalar(1e-24);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Tensor row = slice_rows(x, i, 1);
        Tensor norm = sqrt(add(sum(mul(row, row)), eps));
        rows.push_back(div(row, norm));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

}  // namespace vtar
