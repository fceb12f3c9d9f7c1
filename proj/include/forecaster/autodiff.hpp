#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense float64
// matrices. A Tape records operations in execution order; `backward` walks
// it once in reverse.
namespace forecaster::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> values;  // row-major
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor filled(std::size_t rows, std::size_t cols, double value);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    // Rank-1 tensors behave as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    void zero_grad();
};

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Leaf whose gradient is accumulated into `param.grad` by backward().
    Var parameter(Tensor& param);
    // Leaf whose gradient is accumulated into `grad_sink` (same size as param).
    Var parameter(const Tensor& param, std::span<double> grad_sink);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() loss w.r.t. v; empty if v needs none.
    std::span<const double> grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    // (weight ⊙ mask) · input
    Var masked_matmul(Var weight, const Tensor& mask, Var input);
    // input · (weight ⊙ mask)^T: applies the layer to every row of input.
    Var linear(Var input, Var weight, const Tensor* mask = nullptr);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    // x + 1 · row, broadcasting a 1 x C row over x's rows.
    Var add_row_vector(Var x, Var row);
    Var concat(std::span<const Var> parts, std::size_t axis);
    Var split(Var x, std::size_t axis, std::size_t begin, std::size_t count);
    Var relu(Var x);
    Var softmax(Var x, std::size_t axis);
    // Row-wise softmax over a square score matrix with entries j > i masked to -inf.
    Var causal_softmax(Var scores);
    Var layer_norm(Var x, Var gain, Var bias, std::size_t axis = 1, double eps = 1e-5);
    // Multiplies column c by r[c].
    Var scale_by_vector(Var x, std::span<const double> r);
    Var scale(Var x, double s);
    // Elementwise product with a constant tensor of the same shape.
    Var mul(Var x, const Tensor& c);
    Var transpose(Var x);
    Var reshape(Var x, Shape shape);
    Var square(Var x);
    Var abs(Var x);
    Var sum(Var x);

    void backward(Var loss);

   private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        std::span<double> sink;
        std::function<void(Tape&, std::size_t)> backprop;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backprop = {});
    const Node& node(Var v) const;
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    std::vector<double>& grad_of(std::size_t id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

// Throws NonfiniteGradient naming `name` if any entry is NaN or infinite.
void check_finite_gradient(std::string_view name, std::span<const double> grad);

// One bias-corrected Adam update of `param` in place.
void adam_step(std::string_view name, Tensor& param, std::span<const double> grad, AdamState& state,
               const AdamConfig& cfg);

}  // namespace forecaster::ad
