#include "sriem/ndmath.hpp"

#include "sriem/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sriem::nd {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw DimensionError("matrix data length " + std::to_string(data.size()) + " does not match shape " + shape());
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows = rows.size();
    m.cols = rows.size() == 0 ? 0 : rows.begin()->size();
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw DimensionError("ragged matrix literal");
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

Mask Mask::columns(std::size_t rows, std::span<const std::uint8_t> column_valid) {
    Mask m(rows, column_valid.size());
    for (std::size_t i = 0; i < rows; ++i)
        std::copy(column_valid.begin(), column_valid.end(), m.valid.begin() + i * m.cols);
    return m;
}

Matrix& detail::Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows, value.cols);
    return grad;
}

Tensor Tensor::constant(Matrix value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    if (!all_finite(node->value)) throw NumericError("non-finite value in constant tensor");
    return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value, std::string name) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->name = std::move(name);
    if (!all_finite(node->value)) throw NumericError("non-finite value in parameter " + node->name);
    return Tensor(std::move(node));
}

const Matrix& Tensor::grad() const {
    return node_->grad_buffer();
}

void Tensor::zero_grad() {
    std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
}

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw ContractError("item() on non-scalar tensor of shape " + value().shape());
    return node_->value.data[0];
}

std::vector<std::string_view> Tape::op_names() const {
    std::vector<std::string_view> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward requires a 1x1 loss, got " + (loss.defined() ? loss.value().shape() : "undefined"));
    }
    visit_order_.clear();
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const Entry& e) { return e.output == loss.node_; });
    if (it == entries_.end()) {
        if (loss.node_->leaf && loss.requires_grad()) {
            loss.node_->grad_buffer().data[0] += 1.0;
            return;
        }
        throw ContractError("backward: loss was not recorded on this tape");
    }
    const auto last = static_cast<std::size_t>(it - entries_.begin());
    // Intermediate gradients are per pass; only leaves accumulate.
    for (std::size_t i = 0; i <= last; ++i) {
        auto& g = entries_[i].output->grad;
        std::fill(g.data.begin(), g.data.end(), 0.0);
    }
    loss.node_->grad_buffer().data[0] = 1.0;
    for (std::size_t k = last + 1; k-- > 0;) {
        auto& e = entries_[k];
        if (e.output->grad.empty()) continue;
        visit_order_.push_back(k);
        e.backward(e.output->grad);
    }
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double z = std::exp(x);
    return z / (1.0 + z);
}

bool all_finite(const Matrix& m) noexcept {
    return std::all_of(m.data.begin(), m.data.end(), [](double v) { return std::isfinite(v); });
}

using NodePtr = std::shared_ptr<detail::Node>;

struct OpBuilder {
    static const NodePtr& node(const Tensor& t) {
        if (!t.defined()) throw ContractError("undefined tensor passed to a primitive");
        return t.node_;
    }

    // Adds `g` into the gradient of `n` when it participates in differentiation.
    static void accumulate(const NodePtr& n, const Matrix& g) {
        if (!n->requires_grad) return;
        auto& buf = n->grad_buffer();
        for (std::size_t i = 0; i < g.data.size(); ++i) buf.data[i] += g.data[i];
    }

    template <class MakeBackward>
    static Tensor emit(Tape& tape, std::string_view op, Matrix value, std::initializer_list<const Tensor*> inputs,
                       MakeBackward&& make_backward) {
        if (!all_finite(value)) throw NumericError(std::string("non-finite value produced by ") + std::string(op));
        auto out = std::make_shared<detail::Node>();
        out->value = std::move(value);
        out->leaf = false;
        bool needs = false;
        for (const Tensor* in : inputs) needs = needs || in->requires_grad();
        if (tape.recording() && needs) {
            out->requires_grad = true;
            tape.entries_.push_back({op, out, make_backward()});
        }
        return Tensor(std::move(out));
    }
};

namespace {

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape() + " vs " + b.value().shape());
    }
}

// out = a · b, out = a · bᵀ, out = aᵀ · b kernels on raw matrices.
Matrix mm(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix mm_nt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            out(i, j) = s;
        }
    }
    return out;
}

Matrix mm_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            double* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transposed(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

void check_targets(std::string_view op, const Tensor& probs, std::span<const std::int32_t> targets) {
    if (targets.size() != probs.rows()) {
        throw DimensionError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(probs.rows()) + " rows");
    }
    for (auto t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= probs.cols()) {
            throw ContractError(std::string(op) + ": target column " + std::to_string(t) + " outside [0, " +
                                std::to_string(probs.cols()) + ")");
        }
    }
}

} // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + a.value().shape() + " by " + b.value().shape());
    }
    return OpBuilder::emit(tape, "matmul", mm(a.value(), b.value()), {&a, &b}, [&] {
        return [na = OpBuilder::node(a), nb = OpBuilder::node(b)](const Matrix& g) {
            if (na->requires_grad) OpBuilder::accumulate(na, mm_nt(g, nb->value));
            if (nb->requires_grad) OpBuilder::accumulate(nb, mm_tn(na->value, g));
        };
    });
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: cannot multiply " + a.value().shape() + " by transpose of " +
                             b.value().shape());
    }
    return OpBuilder::emit(tape, "matmul_nt", mm_nt(a.value(), b.value()), {&a, &b}, [&] {
        return [na = OpBuilder::node(a), nb = OpBuilder::node(b)](const Matrix& g) {
            if (na->requires_grad) OpBuilder::accumulate(na, mm(g, nb->value));
            if (nb->requires_grad) OpBuilder::accumulate(nb, mm_tn(g, na->value));
        };
    });
}

Tensor transpose(Tape& tape, const Tensor& a) {
    return OpBuilder::emit(tape, "transpose", transposed(a.value()), {&a}, [&] {
        return [na = OpBuilder::node(a)](const Matrix& g) { OpBuilder::accumulate(na, transposed(g)); };
    });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
    return OpBuilder::emit(tape, "add", std::move(out), {&a, &b}, [&] {
        return [na = OpBuilder::node(a), nb = OpBuilder::node(b)](const Matrix& g) {
            OpBuilder::accumulate(na, g);
            OpBuilder::accumulate(nb, g);
        };
    });
}

Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row: row " + row.value().shape() + " does not broadcast over " + a.value().shape());
    }
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += row.value().data[j];
    return OpBuilder::emit(tape, "add_row", std::move(out), {&a, &row}, [&] {
        return [na = OpBuilder::node(a), nr = OpBuilder::node(row)](const Matrix& g) {
            OpBuilder::accumulate(na, g);
            if (nr->requires_grad) {
                Matrix gr(1, g.cols);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) gr.data[j] += g(i, j);
                OpBuilder::accumulate(nr, gr);
            }
        };
    });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
    return OpBuilder::emit(tape, "mul", std::move(out), {&a, &b}, [&] {
        return [na = OpBuilder::node(a), nb = OpBuilder::node(b)](const Matrix& g) {
            if (na->requires_grad) {
                Matrix ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] *= nb->value.data[i];
                OpBuilder::accumulate(na, ga);
            }
            if (nb->requires_grad) {
                Matrix gb = g;
                for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] *= na->value.data[i];
                OpBuilder::accumulate(nb, gb);
            }
        };
    });
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
    Matrix out = a.value();
    for (auto& v : out.data) v *= factor;
    return OpBuilder::emit(tape, "scale", std::move(out), {&a}, [&] {
        return [na = OpBuilder::node(a), factor](const Matrix& g) {
            Matrix ga = g;
            for (auto& v : ga.data) v *= factor;
            OpBuilder::accumulate(na, ga);
        };
    });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
    Matrix y = a.value();
    for (auto& v : y.data) v = sigmoid(v);
    Matrix ycopy = tape.recording() && a.requires_grad() ? y : Matrix{};
    return OpBuilder::emit(tape, "sigmoid", std::move(y), {&a}, [&] {
        return [na = OpBuilder::node(a), y = std::move(ycopy)](const Matrix& g) {
            Matrix ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] *= y.data[i] * (1.0 - y.data[i]);
            OpBuilder::accumulate(na, ga);
        };
    });
}

namespace {

Tensor softmax_impl(Tape& tape, const Tensor& a, const Mask* mask) {
    if (mask && (mask->rows != a.rows() || mask->cols != a.cols())) {
        throw DimensionError("softmax_rows: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                             " does not match " + a.value().shape());
    }
    const Matrix& x = a.value();
    Matrix y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < x.cols; ++j)
            if (!mask || (*mask)(i, j)) mx = std::max(mx, x(i, j));
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " has no valid entry");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            if (mask && !(*mask)(i, j)) continue;
            y(i, j) = std::exp(x(i, j) - mx);
            z += y(i, j);
        }
        for (std::size_t j = 0; j < x.cols; ++j) y(i, j) /= z;
    }
    Matrix ycopy = tape.recording() && a.requires_grad() ? y : Matrix{};
    return OpBuilder::emit(tape, "softmax_rows", std::move(y), {&a}, [&] {
        return [na = OpBuilder::node(a), y = std::move(ycopy)](const Matrix& g) {
            // dx_j = y_j (g_j − Σ_k g_k y_k); masked entries have y = 0.
            Matrix ga(g.rows, g.cols);
            for (std::size_t i = 0; i < g.rows; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < g.cols; ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
            }
            OpBuilder::accumulate(na, ga);
        };
    });
}

} // namespace

Tensor softmax_rows(Tape& tape, const Tensor& a) {
    return softmax_impl(tape, a, nullptr);
}

Tensor softmax_rows(Tape& tape, const Tensor& a, const Mask& mask) {
    return softmax_impl(tape, a, &mask);
}

Tensor sum(Tape& tape, const Tensor& a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return OpBuilder::emit(tape, "sum", Matrix(1, 1, s), {&a}, [&] {
        return [na = OpBuilder::node(a)](const Matrix& g) {
            OpBuilder::accumulate(na, Matrix(na->value.rows, na->value.cols, g.data[0]));
        };
    });
}

Tensor mean(Tape& tape, const Tensor& a) {
    if (a.value().empty()) throw ContractError("mean of an empty tensor");
    const double inv = 1.0 / static_cast<double>(a.value().size());
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return OpBuilder::emit(tape, "mean", Matrix(1, 1, s * inv), {&a}, [&] {
        return [na = OpBuilder::node(a), inv](const Matrix& g) {
            OpBuilder::accumulate(na, Matrix(na->value.rows, na->value.cols, g.data[0] * inv));
        };
    });
}

Tensor row_sums(Tape& tape, const Tensor& a) {
    Matrix out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (double v : a.value().row(i)) out.data[i] += v;
    return OpBuilder::emit(tape, "row_sums", std::move(out), {&a}, [&] {
        return [na = OpBuilder::node(a)](const Matrix& g) {
            Matrix ga(na->value.rows, na->value.cols);
            for (std::size_t i = 0; i < ga.rows; ++i)
                for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) = g.data[i];
            OpBuilder::accumulate(na, ga);
        };
    });
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int32_t> indices) {
    const Matrix& t = table.value();
    Matrix out(indices.size(), t.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto idx = indices[i];
        if (idx < 0 || static_cast<std::size_t>(idx) >= t.rows) {
            throw DimensionError("gather_rows: index " + std::to_string(idx) + " outside table of " +
                                 std::to_string(t.rows) + " rows");
        }
        std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(idx * t.cols), t.cols,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * t.cols));
    }
    return OpBuilder::emit(tape, "gather_rows", std::move(out), {&table}, [&] {
        return [nt = OpBuilder::node(table), idx = std::vector<std::int32_t>(indices.begin(), indices.end())](
                   const Matrix& g) {
            auto& buf = nt->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                double* dst = buf.data.data() + static_cast<std::size_t>(idx[i]) * buf.cols;
                for (std::size_t j = 0; j < g.cols; ++j) dst[j] += g(i, j);
            }
        };
    });
}

Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + a.value().shape());
    }
    const Matrix& x = a.value();
    Matrix out(end - begin, x.cols,
               std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(begin * x.cols),
                                   x.data.begin() + static_cast<std::ptrdiff_t>(end * x.cols)));
    return OpBuilder::emit(tape, "slice_rows", std::move(out), {&a}, [&] {
        return [na = OpBuilder::node(a), begin](const Matrix& g) {
            auto& buf = na->grad_buffer();
            double* dst = buf.data.data() + begin * buf.cols;
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data[i];
        };
    });
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row mismatch " + a.value().shape() + " vs " + b.value().shape());
    }
    const std::size_t ca = a.cols();
    const std::size_t cb = b.cols();
    Matrix out(a.rows(), ca + cb);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy_n(a.value().row(i).begin(), ca, out.row(i).begin());
        std::copy_n(b.value().row(i).begin(), cb, out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
    }
    return OpBuilder::emit(tape, "concat_cols", std::move(out), {&a, &b}, [&] {
        return [na = OpBuilder::node(a), nb = OpBuilder::node(b), ca, cb](const Matrix& g) {
            Matrix ga(g.rows, ca);
            Matrix gb(g.rows, cb);
            for (std::size_t i = 0; i < g.rows; ++i) {
                for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
                for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
            }
            OpBuilder::accumulate(na, ga);
            OpBuilder::accumulate(nb, gb);
        };
    });
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("concat_rows: column mismatch " + parts.front().value().shape() + " vs " +
                                 p.value().shape());
        }
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    bool needs = false;
    for (const auto& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.value().size();
        needs = needs || p.requires_grad();
    }
    // emit() only inspects requires_grad on the listed inputs; pass a proxy.
    const Tensor* proxy = &parts.front();
    for (const auto& p : parts)
        if (p.requires_grad()) proxy = &p;
    return OpBuilder::emit(tape, "concat_rows", std::move(out), {proxy}, [&] {
        std::vector<NodePtr> nodes;
        nodes.reserve(parts.size());
        for (const auto& p : parts) nodes.push_back(OpBuilder::node(p));
        return [nodes = std::move(nodes)](const Matrix& g) {
            std::size_t off = 0;
            for (const auto& n : nodes) {
                const std::size_t len = n->value.size();
                if (n->requires_grad) {
                    auto& buf = n->grad_buffer();
                    for (std::size_t i = 0; i < len; ++i) buf.data[i] += g.data[off + i];
                }
                off += len;
            }
        };
    });
}

Tensor bce_sum_rows(Tape& tape, const Tensor& probs, std::span<const std::int32_t> targets) {
    check_targets("bce_sum_rows", probs, targets);
    const Matrix& p = probs.value();
    Matrix out(p.rows, 1);
    for (std::size_t i = 0; i < p.rows; ++i) {
        double l = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) {
            const double q = std::clamp(p(i, j), kProbEpsilon, 1.0 - kProbEpsilon);
            l -= (static_cast<std::size_t>(targets[i]) == j) ? std::log(q) : std::log(1.0 - q);
        }
        out.data[i] = l;
    }
    return OpBuilder::emit(tape, "bce_sum_rows", std::move(out), {&probs}, [&] {
        return [np = OpBuilder::node(probs), tg = std::vector<std::int32_t>(targets.begin(), targets.end())](
                   const Matrix& g) {
            const Matrix& p = np->value;
            Matrix gp(p.rows, p.cols);
            for (std::size_t i = 0; i < p.rows; ++i) {
                for (std::size_t j = 0; j < p.cols; ++j) {
                    const double q = p(i, j);
                    if (q < kProbEpsilon || q > 1.0 - kProbEpsilon) continue;
                    gp(i, j) = g.data[i] * ((static_cast<std::size_t>(tg[i]) == j) ? -1.0 / q : 1.0 / (1.0 - q));
                }
            }
            OpBuilder::accumulate(np, gp);
        };
    });
}

Tensor categorical_ce_rows(Tape& tape, const Tensor& probs, std::span<const std::int32_t> targets) {
    check_targets("categorical_ce_rows", probs, targets);
    const Matrix& p = probs.value();
    Matrix out(p.rows, 1);
    for (std::size_t i = 0; i < p.rows; ++i) {
        out.data[i] = -std::log(std::clamp(p(i, static_cast<std::size_t>(targets[i])), kProbEpsilon, 1.0 - kProbEpsilon));
    }
    return OpBuilder::emit(tape, "categorical_ce_rows", std::move(out), {&probs}, [&] {
        return [np = OpBuilder::node(probs), tg = std::vector<std::int32_t>(targets.begin(), targets.end())](
                   const Matrix& g) {
            const Matrix& p = np->value;
            Matrix gp(p.rows, p.cols);
            for (std::size_t i = 0; i < p.rows; ++i) {
                const auto j = static_cast<std::size_t>(tg[i]);
                const double q = p(i, j);
                if (q < kProbEpsilon || q > 1.0 - kProbEpsilon) continue;
                gp(i, j) = -g.data[i] / q;
            }
            OpBuilder::accumulate(np, gp);
        };
    });
}

} // namespace sriem::nd
