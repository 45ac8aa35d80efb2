#include "sriem/error.hpp"
#include "sriem/ndmath.hpp"
#include "sriem/random.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace sriem::nd;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, sriem::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

// Central differences of a scalar function of `x`'s value.
Matrix numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-4) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double orig = x.value().data[k];
        x.mutable_value().data[k] = orig + h;
        const double up = f();
        x.mutable_value().data[k] = orig - h;
        const double down = f();
        x.mutable_value().data[k] = orig;
        g.data[k] = (up - down) / (2 * h);
    }
    return g;
}

void check_close(const Matrix& analytic, const Matrix& numeric, double rel) {
    REQUIRE(analytic.size() == numeric.size());
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double a = analytic.data[k], n = numeric.data[k];
        const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
        CHECK(std::abs(a - n) / denom <= rel);
    }
}

} // namespace

TEST_CASE("matmul small cases") {
    Tape tape;
    const auto i2 = Tensor::constant(Matrix::identity(2));
    const auto b = Tensor::constant(Matrix::from_rows({{1, 2}, {3, 4}}));
    CHECK(matmul(tape, i2, b).value() == Matrix::from_rows({{1, 2}, {3, 4}}));
    const auto row = Tensor::constant(Matrix::from_rows({{1, 2}}));
    const auto col = Tensor::constant(Matrix::from_rows({{3}, {4}}));
    CHECK(matmul(tape, row, col).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    const auto a = Tensor::constant(Matrix(2, 3));
    const auto b = Tensor::constant(Matrix(2, 3));
    try {
        matmul(tape, a, b);
        FAIL("expected a dimension error");
    } catch (const sriem::DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences") {
    sriem::Rng rng(7);
    auto a = Tensor::parameter(random_matrix(3, 4, rng));
    auto b = Tensor::parameter(random_matrix(4, 2, rng));
    Tape tape;
    tape.backward(sum(tape, matmul(tape, a, b)));
    auto f = [&] {
        Tape t(Tape::Mode::inference);
        return sum(t, matmul(t, a, b)).item();
    };
    check_close(a.grad(), numeric_grad(a, f), 1e-5);
    check_close(b.grad(), numeric_grad(b, f), 1e-5);
}

TEST_CASE("sigmoid values and gradient") {
    CHECK(sigmoid(0.0) == 0.5);
    const double tiny = sigmoid(-50.0);
    CHECK(tiny > 0.0);
    CHECK(tiny <= 1e-20);
    CHECK(sigmoid(800.0) == 1.0);

    auto x = Tensor::parameter(Matrix(2, 3, 0.0));
    Tape tape;
    tape.backward(sum(tape, sigmoid(tape, x)));
    for (double g : x.grad().data) CHECK(g == 0.25);
}

TEST_CASE("softmax rows") {
    Tape tape;
    const auto z = softmax_rows(tape, Tensor::constant(Matrix::from_rows({{0, 0}})));
    CHECK(z.at(0, 0) == 0.5);
    CHECK(z.at(0, 1) == 0.5);

    Mask mask(1, 3);
    mask.set(0, 2, false);
    const auto m = softmax_rows(tape, Tensor::constant(Matrix::from_rows({{1, 1, 1}})), mask);
    CHECK(m.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.at(0, 2) == 0.0);

    const auto big = softmax_rows(tape, Tensor::constant(Matrix::from_rows({{1000, 999, -1000}})));
    double s = 0.0;
    for (double v : big.value().data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
}

TEST_CASE("softmax with an all-masked row is degenerate") {
    Tape tape;
    Mask mask(2, 2);
    mask.set(1, 0, false);
    mask.set(1, 1, false);
    CHECK_THROWS_AS(softmax_rows(tape, Tensor::constant(Matrix(2, 2)), mask), sriem::DegenerateRowError);
}

TEST_CASE("softmax Jacobian-vector product matches finite differences") {
    sriem::Rng rng(11);
    auto x = Tensor::parameter(random_matrix(1, 6, rng, -3, 3));
    const auto v = Tensor::constant(random_matrix(1, 6, rng));
    auto f = [&] {
        Tape t(Tape::Mode::inference);
        return sum(t, mul(t, softmax_rows(t, x), v)).item();
    };
    Tape tape;
    tape.backward(sum(tape, mul(tape, softmax_rows(tape, x), v)));
    check_close(x.grad(), numeric_grad(x, f), 1e-5);

    Mask mask(1, 6);
    mask.set(0, 1, false);
    mask.set(0, 4, false);
    x.zero_grad();
    auto fm = [&] {
        Tape t(Tape::Mode::inference);
        return sum(t, mul(t, softmax_rows(t, x, mask), v)).item();
    };
    Tape tape2;
    tape2.backward(sum(tape2, mul(tape2, softmax_rows(tape2, x, mask), v)));
    check_close(x.grad(), numeric_grad(x, fm), 1e-5);
    CHECK(x.grad()(0, 1) == 0.0);
    CHECK(x.grad()(0, 4) == 0.0);
}

TEST_CASE("backward basics") {
    auto x = Tensor::parameter(Matrix(3, 2, 1.5));
    Tape tape;
    tape.backward(sum(tape, x));
    for (double g : x.grad().data) CHECK(g == 1.0);

    SUBCASE("repeated backward accumulates") {
        Tape again;
        again.backward(sum(again, x));
        for (double g : x.grad().data) CHECK(g == 2.0);
        x.zero_grad();
        for (double g : x.grad().data) CHECK(g == 0.0);
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = Tensor::parameter(Matrix(2, 2, 1.0));
    Tape tape;
    const auto y = sigmoid(tape, x);
    CHECK_THROWS_AS(tape.backward(y), sriem::ContractError);
    Tape other;
    const auto loss = sum(other, x);
    CHECK_THROWS_AS(tape.backward(loss), sriem::ContractError);
}

TEST_CASE("backward visits entries in reverse recording order") {
    auto x = Tensor::parameter(Matrix(2, 2, 0.3));
    Tape tape;
    auto y = sigmoid(tape, x);
    y = scale(tape, y, 2.0);
    y = mul(tape, y, y);
    const auto loss = sum(tape, y);
    REQUIRE(tape.size() == 4);
    tape.backward(loss);
    const auto& order = tape.last_visit_order();
    REQUIRE(order.size() == 4);
    for (std::size_t k = 0; k < order.size(); ++k) CHECK(order[k] == 3 - k);
}

TEST_CASE("inference tapes record nothing") {
    auto x = Tensor::parameter(Matrix(2, 2, 0.3));
    Tape tape(Tape::Mode::inference);
    sum(tape, sigmoid(tape, x));
    CHECK(tape.size() == 0);
}

TEST_CASE("composed graph gradient over every primitive") {
    sriem::Rng rng(3);
    auto e = Tensor::parameter(random_matrix(6, 4, rng));
    auto w = Tensor::parameter(random_matrix(4, 3, rng));
    auto b = Tensor::parameter(random_matrix(1, 3, rng));
    const std::vector<std::int32_t> idx{1, 3, 3, 5};
    const std::vector<std::int32_t> targets{0, 2, 1, 2};
    auto build = [&](Tape& t) {
        const auto g = gather_rows(t, e, idx);                      // 4x4
        const auto h = sigmoid(t, add_row(t, matmul(t, g, w), b));  // 4x3
        const auto a = matmul_nt(t, h, h);                          // 4x4
        const auto top = slice_rows(t, a, 0, 2);
        const auto bottom = slice_rows(t, a, 2, 4);
        const Tensor parts[] = {bottom, top};
        const auto stacked = concat_rows(t, parts);
        const auto both = concat_cols(t, stacked, transpose(t, stacked)); // 4x8
        const auto p = softmax_rows(t, scale(t, both, 0.5));
        const auto q = softmax_rows(t, add(t, h, mul(t, h, h)));
        const auto rs = row_sums(t, p);
        const auto l1 = bce_sum_rows(t, p, targets);
        const auto l2 = categorical_ce_rows(t, q, targets);
        return add(t, add(t, mean(t, l1), mean(t, l2)), mean(t, rs));
    };
    Tape tape;
    tape.backward(build(tape));
    auto f = [&] {
        Tape t(Tape::Mode::inference);
        return build(t).item();
    };
    check_close(e.grad(), numeric_grad(e, f), 1e-4);
    check_close(w.grad(), numeric_grad(w, f), 1e-4);
    check_close(b.grad(), numeric_grad(b, f), 1e-4);
    // rows of e never gathered get no gradient
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(e.grad()(0, j) == 0.0);
        CHECK(e.grad()(2, j) == 0.0);
        CHECK(e.grad()(4, j) == 0.0);
    }
}

TEST_CASE("bce clamps probabilities") {
    Tape tape;
    const auto p = Tensor::constant(Matrix::from_rows({{1.0, 0.0}}));
    const std::vector<std::int32_t> right{0};
    CHECK(bce_sum_rows(tape, p, right).item() == doctest::Approx(2e-12).epsilon(1e-3));
    // both terms saturate at -log(eps) when the target has probability 0
    const std::vector<std::int32_t> wrong{1};
    const auto l = bce_sum_rows(tape, p, wrong);
    CHECK(std::isfinite(l.item()));
    CHECK(l.item() == doctest::Approx(-2 * std::log(kProbEpsilon)));
}

TEST_CASE("non-finite outputs are rejected") {
    Tape tape;
    const auto a = Tensor::constant(Matrix::from_rows({{1e200}}));
    CHECK_THROWS_AS(matmul(tape, a, a), sriem::NumericError);
}
