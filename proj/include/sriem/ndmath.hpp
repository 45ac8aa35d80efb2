#pragma once

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// Values are 64-bit doubles stored row-major. A Tensor is a cheap handle to a
// shared node; parameters are leaf tensors that outlive any single tape. Every
// primitive takes the Tape it records onto. A tape in inference mode records
// nothing, so the same model code runs with or without gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sriem::nd {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    std::string shape() const;
    bool operator==(const Matrix&) const = default;
};

// Row-major validity flags with the same shape as the tensor they mask.
struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> valid;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, bool fill = true) : rows(r), cols(c), valid(r * c, fill ? 1 : 0) {}

    // One flag per column, repeated for every row.
    static Mask columns(std::size_t rows, std::span<const std::uint8_t> column_valid);

    bool operator()(std::size_t i, std::size_t j) const { return valid[i * cols + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { valid[i * cols + j] = v ? 1 : 0; }
};

namespace detail {
struct Node {
    Matrix value;
    Matrix grad; // empty until a gradient reaches this node
    bool requires_grad = false;
    bool leaf = true;
    std::string name;

    Matrix& grad_buffer();
};
} // namespace detail

class Tape;

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Matrix value);
    static Tensor parameter(Matrix value, std::string name = {});

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Matrix& value() const { return node_->value; }
    // Direct write access for optimizers and checkpoint loading; never use
    // while a recording tape still references this tensor.
    Matrix& mutable_value() { return node_->value; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient buffer; a zero matrix of the right shape if nothing reached it.
    const Matrix& grad() const;
    void zero_grad();

    std::size_t rows() const { return node_->value.rows; }
    std::size_t cols() const { return node_->value.cols; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    double item() const;
    double at(std::size_t i, std::size_t j) const { return node_->value(i, j); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend class Tape;
    friend struct OpBuilder;
};

class Tape {
public:
    enum class Mode { record, inference };

    explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return mode_ == Mode::record; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::vector<std::string_view> op_names() const;

    // Propagates d(loss)/d(x) into every requires_grad tensor reachable from
    // `loss`. Leaf gradients accumulate across calls; call zero_grad on the
    // parameters between steps.
    void backward(const Tensor& loss);

    // Entry indices visited by the most recent backward, in visit order.
    const std::vector<std::size_t>& last_visit_order() const noexcept { return visit_order_; }

    void clear() { entries_.clear(); }

private:
    struct Entry {
        std::string_view op;
        std::shared_ptr<detail::Node> output;
        std::function<void(const Matrix&)> backward;
    };

    Mode mode_;
    std::vector<Entry> entries_;
    std::vector<std::size_t> visit_order_;

    friend struct OpBuilder;
};

// Primitives. Each checks shapes (DimensionError) and that the produced
// values are finite (NumericError).
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a · bᵀ without materialising the transpose.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// Adds a 1×c row to every row of an r×c tensor.
Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sigmoid(Tape& tape, const Tensor& a);

// Row-wise softmax with max subtraction. Masked entries get exactly 0; a row
// with no valid entry raises DegenerateRowError.
Tensor softmax_rows(Tape& tape, const Tensor& a);
Tensor softmax_rows(Tape& tape, const Tensor& a, const Mask& mask);

Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
// r×c → r×1
Tensor row_sums(Tape& tape, const Tensor& a);

// Rows `indices` of `table`; gradient scatter-adds back into the table.
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> indices);
Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);

// Per-row losses over probability rows (r×c) → r×1. Probabilities are clamped
// to [eps, 1 − eps] before the logarithm; the clamp passes no gradient.
inline constexpr double kProbEpsilon = 1e-12;
// −Σ_j [y_j log p_j + (1 − y_j) log(1 − p_j)], y one-hot at targets[i].
Tensor bce_sum_rows(Tape& tape, const Tensor& probs, std::span<const std::int32_t> targets);
// −log p_{targets[i]}
Tensor categorical_ce_rows(Tape& tape, const Tensor& probs, std::span<const std::int32_t> targets);

// Scalar helpers (no tape).
double sigmoid(double x) noexcept;
bool all_finite(const Matrix& m) noexcept;

} // namespace sriem::nd
