#include "forecaster/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "forecaster/error.hpp"

namespace forecaster::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
    return ConstMap(t.values.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMap view(const std::vector<double>& buf, std::size_t rows, std::size_t cols) {
    return ConstMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap view_mut(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
    return MutMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, std::string_view op) {
    if (t.rank() > 2) {
        fail(ErrorKind::Dimension, std::string(op) + ": expected rank <= 2, got " + shape_string(t.shape));
    }
}

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
    fail(ErrorKind::Dimension, std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

Tensor masked_copy(const Tensor& w, const Tensor* mask) {
    Tensor out(w.shape, w.values);
    if (!mask) return out;
    for (std::size_t k = 0; k < out.values.size(); ++k) {
        const double m = mask->values[k];
        if (m != 0.0 && m != 1.0) fail(ErrorKind::Dimension, "mask entries must be 0 or 1, got " + std::to_string(m));
        out.values[k] *= m;
    }
    return out;
}

// Strided iteration over one axis of a rank-2 tensor: `groups` independent
// lanes of `length` elements, lane g starting at offset(g) stepping `stride`.
struct AxisLanes {
    std::size_t groups, length, stride;
    std::size_t group_stride;
    std::size_t offset(std::size_t g) const { return g * group_stride; }
};

AxisLanes lanes(const Tensor& t, std::size_t axis, std::string_view op) {
    require_rank2(t, op);
    const std::size_t r = t.rows();
    const std::size_t c = t.cols();
    if (axis == 1) return {r, c, 1, c};
    if (axis == 0) return {c, r, c, 1};
    fail(ErrorKind::Dimension, std::string(op) + ": axis must be 0 or 1");
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape_, std::vector<double> values_, bool requires_grad_)
    : shape(std::move(shape_)), values(std::move(values_)), requires_grad(requires_grad_) {
    if (product(shape) != values.size()) {
        fail(ErrorKind::Dimension, "tensor buffer length " + std::to_string(values.size()) +
                                       " does not match shape " + shape_string(shape));
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

std::size_t Tensor::rows() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return 1;
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return shape[0];
    return product(shape) / shape[0];
}

void Tensor::zero_grad() {
    if (grad) {
        std::fill(grad->begin(), grad->end(), 0.0);
    } else {
        grad.emplace(values.size(), 0.0);
    }
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backprop) {
    if (backward_done_) fail(ErrorKind::StaleTape, "cannot record onto a tape after backward()");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id >= nodes_.size()) fail(ErrorKind::Dimension, "variable does not belong to this tape");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

std::span<const double> Tape::grad(Var v) const { return node(v).grad; }

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::parameter(Tensor& param) {
    if (!param.grad || param.grad->size() != param.values.size()) param.grad.emplace(param.values.size(), 0.0);
    return parameter(param, std::span<double>(*param.grad));
}

Var Tape::parameter(const Tensor& param, std::span<double> grad_sink) {
    if (grad_sink.size() != param.values.size()) {
        fail(ErrorKind::Dimension, "gradient sink size does not match parameter " + shape_string(param.shape));
    }
    Var v = push(Tensor(param.shape, param.values), true);
    nodes_[v.id].sink = grad_sink;
    return v;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require_rank2(A, "matmul");
    require_rank2(B, "matmul");
    if (A.cols() != B.rows()) shape_mismatch("matmul", A.shape, B.shape);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out = Tensor::zeros(m, n);
    view_mut(out.values, m, n).noalias() = view(A) * view(B);
    return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Tape& t, std::size_t self) {
        const auto dC = view(t.grad_of(self), m, n);
        if (t.needs(a)) view_mut(t.grad_of(a.id), m, k).noalias() += dC * view(t.value(b)).transpose();
        if (t.needs(b)) view_mut(t.grad_of(b.id), k, n).noalias() += view(t.value(a)).transpose() * dC;
    });
}

Var Tape::masked_matmul(Var weight, const Tensor& mask, Var input) {
    const Tensor& W = value(weight);
    const Tensor& X = value(input);
    require_rank2(W, "masked_matmul");
    require_rank2(X, "masked_matmul");
    if (mask.shape != W.shape && !(mask.rows() == W.rows() && mask.cols() == W.cols())) {
        shape_mismatch("masked_matmul (mask vs weight)", mask.shape, W.shape);
    }
    if (W.cols() != X.rows()) shape_mismatch("masked_matmul", W.shape, X.shape);
    const std::size_t m = W.rows(), k = W.cols(), n = X.cols();
    Tensor eff = masked_copy(W, &mask);
    Tensor out = Tensor::zeros(m, n);
    view_mut(out.values, m, n).noalias() = view(eff) * view(X);
    Tensor mask_copy(mask.shape, mask.values);
    return push(std::move(out), needs(weight) || needs(input),
                [weight, input, m, k, n, eff = std::move(eff), mask_copy = std::move(mask_copy)](Tape& t,
                                                                                                std::size_t self) {
                    const auto dY = view(t.grad_of(self), m, n);
                    if (t.needs(weight)) {
                        RowMat dW = dY * view(t.value(input)).transpose();
                        auto g = view_mut(t.grad_of(weight.id), m, k);
                        g.array() += dW.array() * view(mask_copy).array();
                    }
                    if (t.needs(input)) view_mut(t.grad_of(input.id), k, n).noalias() += view(eff).transpose() * dY;
                });
}

Var Tape::linear(Var input, Var weight, const Tensor* mask) {
    const Tensor& X = value(input);
    const Tensor& W = value(weight);
    require_rank2(X, "linear");
    require_rank2(W, "linear");
    if (mask && !(mask->rows() == W.rows() && mask->cols() == W.cols())) {
        shape_mismatch("linear (mask vs weight)", mask->shape, W.shape);
    }
    if (X.cols() != W.cols()) shape_mismatch("linear", X.shape, W.shape);
    const std::size_t rows = X.rows(), in = W.cols(), out_dim = W.rows();
    Tensor eff = masked_copy(W, mask);
    Tensor out = Tensor::zeros(rows, out_dim);
    view_mut(out.values, rows, out_dim).noalias() = view(X) * view(eff).transpose();
    std::optional<Tensor> mask_copy;
    if (mask) mask_copy.emplace(mask->shape, mask->values);
    return push(std::move(out), needs(input) || needs(weight),
                [input, weight, rows, in, out_dim, eff = std::move(eff), mask_copy = std::move(mask_copy)](
                    Tape& t, std::size_t self) {
                    const auto dY = view(t.grad_of(self), rows, out_dim);
                    if (t.needs(input)) view_mut(t.grad_of(input.id), rows, in).noalias() += dY * view(eff);
                    if (t.needs(weight)) {
                        auto g = view_mut(t.grad_of(weight.id), out_dim, in);
                        if (mask_copy) {
                            RowMat dW = dY.transpose() * view(t.value(input));
                            g.array() += dW.array() * view(*mask_copy).array();
                        } else {
                            g.noalias() += dY.transpose() * view(t.value(input));
                        }
                    }
                });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.values.size() != B.values.size() || A.rows() != B.rows()) shape_mismatch("add", A.shape, B.shape);
    Tensor out(A.shape, A.values);
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += B.values[k];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        for (Var v : {a, b}) {
            if (!t.needs(v)) continue;
            auto& dst = t.grad_of(v.id);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.values.size() != B.values.size() || A.rows() != B.rows()) shape_mismatch("sub", A.shape, B.shape);
    Tensor out(A.shape, A.values);
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] -= B.values[k];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        if (t.needs(a)) {
            auto& dst = t.grad_of(a.id);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
        if (t.needs(b)) {
            auto& dst = t.grad_of(b.id);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] -= g[k];
        }
    });
}

Var Tape::add_row_vector(Var x, Var row) {
    const Tensor& X = value(x);
    const Tensor& R = value(row);
    require_rank2(X, "add_row_vector");
    if (R.size() != X.cols()) shape_mismatch("add_row_vector", X.shape, R.shape);
    const std::size_t rows = X.rows(), cols = X.cols();
    Tensor out(X.shape, X.values);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out.values[r * cols + c] += R.values[c];
    }
    return push(std::move(out), needs(x) || needs(row), [x, row, rows, cols](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        if (t.needs(x)) {
            auto& dst = t.grad_of(x.id);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
        if (t.needs(row)) {
            auto& dst = t.grad_of(row.id);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
            }
        }
    });
}

Var Tape::concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) fail(ErrorKind::Dimension, "concat: no inputs");
    if (axis > 1) fail(ErrorKind::Dimension, "concat: axis must be 0 or 1");
    std::vector<Var> ids(parts.begin(), parts.end());
    const Tensor& first = value(ids[0]);
    std::size_t rows = 0, cols = 0;
    bool any_grad = false;
    for (Var v : ids) {
        const Tensor& p = value(v);
        require_rank2(p, "concat");
        any_grad = any_grad || needs(v);
        if (axis == 0) {
            if (p.cols() != first.cols()) shape_mismatch("concat", first.shape, p.shape);
            rows += p.rows();
            cols = p.cols();
        } else {
            if (p.rows() != first.rows()) shape_mismatch("concat", first.shape, p.shape);
            cols += p.cols();
            rows = p.rows();
        }
    }
    Tensor out = Tensor::zeros(rows, cols);
    std::size_t offset = 0;
    for (Var v : ids) {
        const Tensor& p = value(v);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            for (std::size_t c = 0; c < p.cols(); ++c) {
                if (axis == 0) {
                    out(offset + r, c) = p(r, c);
                } else {
                    out(r, offset + c) = p(r, c);
                }
            }
        }
        offset += axis == 0 ? p.rows() : p.cols();
    }
    return push(std::move(out), any_grad, [ids, axis, cols](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        std::size_t offset = 0;
        for (Var v : ids) {
            const Tensor& p = t.value(v);
            if (t.needs(v)) {
                auto& dst = t.grad_of(v.id);
                for (std::size_t r = 0; r < p.rows(); ++r) {
                    for (std::size_t c = 0; c < p.cols(); ++c) {
                        const std::size_t src = axis == 0 ? (offset + r) * cols + c : r * cols + offset + c;
                        dst[r * p.cols() + c] += g[src];
                    }
                }
            }
            offset += axis == 0 ? p.rows() : p.cols();
        }
    });
}

Var Tape::split(Var x, std::size_t axis, std::size_t begin, std::size_t count) {
    const Tensor& X = value(x);
    require_rank2(X, "split");
    if (axis > 1) fail(ErrorKind::Dimension, "split: axis must be 0 or 1");
    const std::size_t rows = X.rows(), cols = X.cols();
    const std::size_t extent = axis == 0 ? rows : cols;
    if (begin + count > extent) {
        fail(ErrorKind::Dimension, "split: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                       ") exceeds " + shape_string(X.shape));
    }
    const std::size_t out_rows = axis == 0 ? count : rows;
    const std::size_t out_cols = axis == 0 ? cols : count;
    Tensor out = Tensor::zeros(out_rows, out_cols);
    for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t c = 0; c < out_cols; ++c) {
            out(r, c) = axis == 0 ? X(begin + r, c) : X(r, begin + c);
        }
    }
    return push(std::move(out), needs(x), [x, axis, begin, cols, out_rows, out_cols](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t r = 0; r < out_rows; ++r) {
            for (std::size_t c = 0; c < out_cols; ++c) {
                const std::size_t idx = axis == 0 ? (begin + r) * cols + c : r * cols + begin + c;
                dst[idx] += g[r * out_cols + c];
            }
        }
    });
}

Var Tape::relu(Var x) {
    Tensor out(value(x).shape, value(x).values);
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), needs(x), [x](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& in = t.value(x).values;
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (in[k] > 0.0) dst[k] += g[k];
        }
    });
}

Var Tape::softmax(Var x, std::size_t axis) {
    const Tensor& X = value(x);
    const AxisLanes ln = lanes(X, axis, "softmax");
    Tensor out(X.shape, X.values);
    for (std::size_t g = 0; g < ln.groups; ++g) {
        const std::size_t base = ln.offset(g);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < ln.length; ++k) mx = std::max(mx, X.values[base + k * ln.stride]);
        double total = 0.0;
        for (std::size_t k = 0; k < ln.length; ++k) {
            const double e = std::exp(X.values[base + k * ln.stride] - mx);
            out.values[base + k * ln.stride] = e;
            total += e;
        }
        for (std::size_t k = 0; k < ln.length; ++k) out.values[base + k * ln.stride] /= total;
    }
    return push(std::move(out), needs(x), [x, ln](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.nodes_[self].value.values;
        auto& dst = t.grad_of(x.id);
        for (std::size_t grp = 0; grp < ln.groups; ++grp) {
            const std::size_t base = ln.offset(grp);
            double dot = 0.0;
            for (std::size_t k = 0; k < ln.length; ++k) {
                const std::size_t i = base + k * ln.stride;
                dot += g[i] * y[i];
            }
            for (std::size_t k = 0; k < ln.length; ++k) {
                const std::size_t i = base + k * ln.stride;
                dst[i] += y[i] * (g[i] - dot);
            }
        }
    });
}

Var Tape::causal_softmax(Var scores) {
    const Tensor& X = value(scores);
    require_rank2(X, "causal_softmax");
    const std::size_t rows = X.rows(), cols = X.cols();
    if (rows != cols) fail(ErrorKind::Dimension, "causal_softmax: expected square scores, got " + shape_string(X.shape));
    Tensor out = Tensor::zeros(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &X.values[r * cols];
        double* o = &out.values[r * cols];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c <= r; ++c) mx = std::max(mx, in[c]);
        double total = 0.0;
        for (std::size_t c = 0; c <= r; ++c) {
            o[c] = std::exp(in[c] - mx);
            total += o[c];
        }
        for (std::size_t c = 0; c <= r; ++c) o[c] /= total;
    }
    return push(std::move(out), needs(scores), [scores, rows, cols](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.nodes_[self].value.values;
        auto& dst = t.grad_of(scores.id);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c <= r; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c <= r; ++c) dst[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, std::size_t axis, double eps) {
    const Tensor& X = value(x);
    const AxisLanes ln = lanes(X, axis, "layer_norm");
    if (value(gain).size() != ln.length) shape_mismatch("layer_norm (gain)", X.shape, value(gain).shape);
    if (value(bias).size() != ln.length) shape_mismatch("layer_norm (bias)", X.shape, value(bias).shape);
    const auto& G = value(gain).values;
    const auto& B = value(bias).values;
    Tensor out(X.shape, X.values);
    std::vector<double> normalized(X.size());
    std::vector<double> inv_std(ln.groups);
    const double n = static_cast<double>(ln.length);
    for (std::size_t grp = 0; grp < ln.groups; ++grp) {
        const std::size_t base = ln.offset(grp);
        double mean = 0.0;
        for (std::size_t k = 0; k < ln.length; ++k) mean += X.values[base + k * ln.stride];
        mean /= n;
        double var = 0.0;
        for (std::size_t k = 0; k < ln.length; ++k) {
            const double d = X.values[base + k * ln.stride] - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[grp] = is;
        for (std::size_t k = 0; k < ln.length; ++k) {
            const std::size_t i = base + k * ln.stride;
            normalized[i] = (X.values[i] - mean) * is;
            out.values[i] = G[k] * normalized[i] + B[k];
        }
    }
    return push(std::move(out), needs(x) || needs(gain) || needs(bias),
                [x, gain, bias, ln, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                    Tape& t, std::size_t self) {
                    const auto& g = t.grad_of(self);
                    const auto& Gv = t.value(gain).values;
                    for (std::size_t grp = 0; grp < ln.groups; ++grp) {
                        const std::size_t base = ln.offset(grp);
                        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                        for (std::size_t k = 0; k < ln.length; ++k) {
                            const std::size_t i = base + k * ln.stride;
                            const double dxhat = g[i] * Gv[k];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * normalized[i];
                        }
                        mean_dxhat /= n;
                        mean_dxhat_xhat /= n;
                        if (t.needs(x)) {
                            auto& dst = t.grad_of(x.id);
                            for (std::size_t k = 0; k < ln.length; ++k) {
                                const std::size_t i = base + k * ln.stride;
                                const double dxhat = g[i] * Gv[k];
                                dst[i] += inv_std[grp] * (dxhat - mean_dxhat - normalized[i] * mean_dxhat_xhat);
                            }
                        }
                        if (t.needs(gain)) {
                            auto& dst = t.grad_of(gain.id);
                            for (std::size_t k = 0; k < ln.length; ++k) {
                                const std::size_t i = base + k * ln.stride;
                                dst[k] += g[i] * normalized[i];
                            }
                        }
                        if (t.needs(bias)) {
                            auto& dst = t.grad_of(bias.id);
                            for (std::size_t k = 0; k < ln.length; ++k) dst[k] += g[base + k * ln.stride];
                        }
                    }
                });
}

Var Tape::scale_by_vector(Var x, std::span<const double> r) {
    const Tensor& X = value(x);
    require_rank2(X, "scale_by_vector");
    const std::size_t rows = X.rows(), cols = X.cols();
    if (r.size() != cols) shape_mismatch("scale_by_vector", X.shape, Shape{r.size()});
    std::vector<double> factors(r.begin(), r.end());
    Tensor out(X.shape, X.values);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t c = 0; c < cols; ++c) out.values[i * cols + c] *= factors[c];
    }
    return push(std::move(out), needs(x), [x, rows, cols, factors = std::move(factors)](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t c = 0; c < cols; ++c) dst[i * cols + c] += g[i * cols + c] * factors[c];
        }
    });
}

Var Tape::scale(Var x, double s) {
    Tensor out(value(x).shape, value(x).values);
    for (double& v : out.values) v *= s;
    return push(std::move(out), needs(x), [x, s](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * s;
    });
}

Var Tape::mul(Var x, const Tensor& c) {
    const Tensor& X = value(x);
    if (c.size() != X.size()) shape_mismatch("mul", X.shape, c.shape);
    Tensor out(X.shape, X.values);
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] *= c.values[k];
    return push(std::move(out), needs(x), [x, factors = c.values](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * factors[k];
    });
}

Var Tape::transpose(Var x) {
    const Tensor& X = value(x);
    require_rank2(X, "transpose");
    const std::size_t rows = X.rows(), cols = X.cols();
    Tensor out = Tensor::zeros(cols, rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out.values[c * rows + r] = X.values[r * cols + c];
    }
    return push(std::move(out), needs(x), [x, rows, cols](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] += g[c * rows + r];
        }
    });
}

Var Tape::reshape(Var x, Shape shape) {
    const Tensor& X = value(x);
    if (product(shape) != X.size()) shape_mismatch("reshape", X.shape, shape);
    Tensor out(std::move(shape), X.values);
    return push(std::move(out), needs(x), [x](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
    });
}

Var Tape::square(Var x) {
    Tensor out(value(x).shape, value(x).values);
    for (double& v : out.values) v *= v;
    return push(std::move(out), needs(x), [x](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& in = t.value(x).values;
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += 2.0 * in[k] * g[k];
    });
}

Var Tape::abs(Var x) {
    Tensor out(value(x).shape, value(x).values);
    for (double& v : out.values) v = std::abs(v);
    return push(std::move(out), needs(x), [x](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& in = t.value(x).values;
        auto& dst = t.grad_of(x.id);
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (in[k] > 0.0) {
                dst[k] += g[k];
            } else if (in[k] < 0.0) {
                dst[k] -= g[k];
            }
        }
    });
}

Var Tape::sum(Var x) {
    const auto& in = value(x).values;
    double total = 0.0;
    for (double v : in) total += v;
    return push(Tensor({1}, {total}), needs(x), [x](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        auto& dst = t.grad_of(x.id);
        for (double& d : dst) d += g;
    });
}

void Tape::backward(Var loss) {
    if (backward_done_) fail(ErrorKind::StaleTape, "backward() called twice on the same tape; re-run forward first");
    if (nodes_.empty()) fail(ErrorKind::StaleTape, "backward() on an empty tape");
    const Tensor& L = value(loss);
    if (L.size() != 1) fail(ErrorKind::Dimension, "backward() needs a scalar loss, got " + shape_string(L.shape));
    backward_done_ = true;
    for (std::size_t id = 0; id <= loss.id; ++id) {
        if (nodes_[id].needs_grad) nodes_[id].grad.assign(nodes_[id].value.size(), 0.0);
    }
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad) continue;
        if (n.backprop) n.backprop(*this, id);
        if (!n.sink.empty()) {
            for (std::size_t k = 0; k < n.grad.size(); ++k) n.sink[k] += n.grad[k];
        }
    }
}

void check_finite_gradient(std::string_view name, std::span<const double> grad) {
    for (std::size_t k = 0; k < grad.size(); ++k) {
        if (!std::isfinite(grad[k])) {
            fail(ErrorKind::NonfiniteGradient,
                 "nonfinite gradient in parameter '" + std::string(name) + "' at entry " + std::to_string(k));
        }
    }
}

void adam_step(std::string_view name, Tensor& param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg) {
    const std::size_t n = param.values.size();
    if (grad.size() != n) fail(ErrorKind::Dimension, "adam_step: gradient size mismatch for '" + std::string(name) + "'");
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    if (state.m.size() != n || state.v.size() != n) {
        fail(ErrorKind::Dimension, "adam_step: moment buffers do not match '" + std::string(name) + "'");
    }
    check_finite_gradient(name, grad);
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < n; ++k) {
        const double g = grad[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[k] / c1;
        const double v_hat = state.v[k] / c2;
        param.values[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace forecaster::ad
