#include "sriem/error.hpp"
#include "sriem/iem.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace sriem;
using namespace sriem::nd;
using testing::random_matrix;

namespace {

double plain_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::uint8_t> all_valid(std::size_t t) { return std::vector<std::uint8_t>(t, 1); }

iem::IemParams params_from(const Matrix& wq, const Matrix& wk) {
    return {Tensor::parameter(wq, "W_q"), Tensor::parameter(wk, "W_k"), wq.rows, wq.cols};
}

std::vector<double> weights_of(const Matrix& e, const iem::IemParams& p, std::span<const std::uint8_t> valid) {
    Tape tape(Tape::Mode::inference);
    return iem::snapshot(iem::extract_importance(tape, Tensor::constant(e), p, valid)).weights;
}

} // namespace

TEST_CASE("project_qk") {
    Tape tape;
    sriem::Rng rng(1);
    const auto p = iem::IemParams::init(4, 2, rng);

    SUBCASE("zero embeddings give one half everywhere") {
        const auto qk = iem::project_qk(tape, Tensor::constant(Matrix(3, 4)), p);
        for (double v : qk.query.value().data) CHECK(v == 0.5);
        for (double v : qk.key.value().data) CHECK(v == 0.5);
    }
    SUBCASE("single item keeps its shape") {
        const auto qk = iem::project_qk(tape, Tensor::constant(Matrix(1, 4, 0.3)), p);
        CHECK(qk.query.rows() == 1);
        CHECK(qk.query.cols() == 2);
    }
    SUBCASE("hand-filled weights match a loop oracle") {
        const auto e = random_matrix(3, 4, rng);
        const auto wq = Matrix::from_rows({{0.1, -0.2}, {0.3, 0.0}, {-0.5, 0.25}, {1.0, -1.0}});
        const auto wk = Matrix::from_rows({{0.0, 0.4}, {-0.7, 0.2}, {0.6, 0.1}, {0.05, 0.9}});
        const auto qk = iem::project_qk(tape, Tensor::constant(e), params_from(wq, wk));
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                double q = 0.0, k = 0.0;
                for (std::size_t m = 0; m < 4; ++m) {
                    q += e(i, m) * wq(m, j);
                    k += e(i, m) * wk(m, j);
                }
                CHECK(qk.query.at(i, j) == doctest::Approx(plain_sigmoid(q)).epsilon(1e-14));
                CHECK(qk.key.at(i, j) == doctest::Approx(plain_sigmoid(k)).epsilon(1e-14));
            }
        }
    }
    SUBCASE("wrong embedding width is a dimension error") {
        CHECK_THROWS_AS(iem::project_qk(tape, Tensor::constant(Matrix(3, 5)), p), DimensionError);
    }
}

TEST_CASE("affinity") {
    Tape tape;
    const auto zero = Tensor::constant(Matrix(3, 2));
    const auto c = iem::affinity(tape, zero, zero, 4);
    for (double v : c.value().data) CHECK(v == 0.25);

    sriem::Rng rng(2);
    const auto q = random_matrix(3, 2, rng, -3, 3);
    const auto k = random_matrix(3, 2, rng, -3, 3);
    const auto a = iem::affinity(tape, Tensor::constant(q), Tensor::constant(k), 9);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double dot = q(i, 0) * k(j, 0) + q(i, 1) * k(j, 1);
            CHECK(a.at(i, j) == doctest::Approx(plain_sigmoid(dot) / 3.0).epsilon(1e-14));
            CHECK(a.at(i, j) > 0.0);
            CHECK(a.at(i, j) <= 1.0 / 3.0);
        }
    }
}

TEST_CASE("importance scores") {
    Tape tape;
    SUBCASE("two by two hand case") {
        const auto c = Tensor::constant(Matrix::from_rows({{0.2, 0.4}, {0.3, 0.2}}));
        const auto a = iem::importance_scores(tape, c, all_valid(2));
        CHECK(a.at(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(a.at(0, 1) == doctest::Approx(0.15).epsilon(1e-15));
    }
    SUBCASE("single item has an empty sum") {
        const auto a = iem::importance_scores(tape, Tensor::constant(Matrix(1, 1, 0.4)), all_valid(1));
        CHECK(a.at(0, 0) == 0.0);
    }
    SUBCASE("equal off-diagonal entries") {
        Matrix m(5, 5, 0.17);
        for (std::size_t i = 0; i < 5; ++i) m(i, i) = 0.9;
        const auto a = iem::importance_scores(tape, Tensor::constant(m), all_valid(5));
        for (std::size_t i = 0; i < 5; ++i) CHECK(a.at(0, i) == doctest::Approx(0.17 * 4 / 5).epsilon(1e-14));
    }
    SUBCASE("pad rows and columns are excluded") {
        const auto c = Tensor::constant(Matrix::from_rows({{0.2, 0.4, 9.0}, {0.3, 0.2, 9.0}, {9.0, 9.0, 9.0}}));
        const std::vector<std::uint8_t> valid{1, 1, 0};
        const auto a = iem::importance_scores(tape, c, valid);
        CHECK(a.at(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(a.at(0, 1) == doctest::Approx(0.15).epsilon(1e-15));
        CHECK(a.at(0, 2) == 0.0);
    }
}

TEST_CASE("normalize importance") {
    Tape tape;
    const auto u = iem::normalize_importance(tape, Tensor::constant(Matrix(1, 4, 0.3)), all_valid(4));
    for (double v : u.value().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    const auto one = iem::normalize_importance(tape, Tensor::constant(Matrix(1, 1, 0.0)), all_valid(1));
    CHECK(one.at(0, 0) == 1.0);

    const auto b = iem::normalize_importance(tape, Tensor::constant(Matrix::from_rows({{0.2, 0.15}})), all_valid(2));
    const double e0 = std::exp(0.2), e1 = std::exp(0.15);
    CHECK(b.at(0, 0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-14));
    CHECK(b.at(0, 1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-14));
    CHECK(b.at(0, 0) == doctest::Approx(0.5125).epsilon(1e-3));
    CHECK(b.at(0, 1) == doctest::Approx(0.4875).epsilon(1e-3));

    const std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS_AS(iem::normalize_importance(tape, Tensor::constant(Matrix(1, 2)), none), DegenerateRowError);
}

TEST_CASE("importance invariants") {
    sriem::Rng rng(9);
    const std::size_t d = 6, l = 3;
    const auto p = iem::IemParams::init(d, l, rng);
    for (int draw = 0; draw < 50; ++draw) {
        const std::size_t t = 1 + rng.below(8);
        const auto e = random_matrix(t, d, rng, -2, 2);
        const auto beta = weights_of(e, p, all_valid(t));
        CHECK(std::abs(std::accumulate(beta.begin(), beta.end(), 0.0) - 1.0) <= 1e-9);

        // permutation equivariance
        std::vector<std::size_t> perm(t);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Matrix ep(t, d);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) ep(i, j) = e(perm[i], j);
        const auto beta_p = weights_of(ep, p, all_valid(t));
        for (std::size_t i = 0; i < t; ++i) CHECK(beta_p[i] == doctest::Approx(beta[perm[i]]).epsilon(1e-12));

        // pad positions do not move valid weights
        const std::size_t pads = 1 + rng.below(4);
        Matrix padded(t + pads, d);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < d; ++j) padded(i, j) = e(i, j);
        for (std::size_t i = t; i < t + pads; ++i)
            for (std::size_t j = 0; j < d; ++j) padded(i, j) = rng.uniform(-2, 2);
        std::vector<std::uint8_t> valid(t + pads, 0);
        std::fill(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(t), 1);
        const auto beta_pad = weights_of(padded, p, valid);
        for (std::size_t i = 0; i < t; ++i) CHECK(beta_pad[i] == doctest::Approx(beta[i]).epsilon(1e-12));
        for (std::size_t i = t; i < t + pads; ++i) CHECK(beta_pad[i] == 0.0);
    }
}

TEST_CASE("identical embeddings give uniform importance") {
    sriem::Rng rng(4);
    const auto p = iem::IemParams::init(5, 3, rng);
    Matrix e(4, 5);
    const auto row = random_matrix(1, 5, rng);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) e(i, j) = row(0, j);
    for (double b : weights_of(e, p, all_valid(4))) CHECK(b == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("raising one affinity row raises that item's weight") {
    Tape tape;
    sriem::Rng rng(8);
    auto c = random_matrix(4, 4, rng, 0.01, 0.3);
    auto weights = [&](const Matrix& m) {
        const auto a = iem::importance_scores(tape, Tensor::constant(m), all_valid(4));
        return iem::normalize_importance(tape, a, all_valid(4)).value().data;
    };
    const auto before = weights(c);
    for (std::size_t j = 0; j < 4; ++j) c(2, j) += 0.05;
    const auto after = weights(c);
    CHECK(after[2] > before[2]);
}

TEST_CASE("importance gradients match finite differences") {
    sriem::Rng rng(12);
    auto p = iem::IemParams::init(5, 3, rng);
    p.w_q.mutable_value() = random_matrix(5, 3, rng, -1.5, 1.5);
    p.w_k.mutable_value() = random_matrix(5, 3, rng, -1.5, 1.5);
    const auto e = Tensor::constant(random_matrix(4, 5, rng, -2, 2));
    const auto v = Tensor::constant(random_matrix(1, 4, rng));
    const auto valid = all_valid(4);
    auto build = [&](Tape& t) {
        const auto w = iem::extract_importance(t, e, p, valid).weights;
        return sum(t, mul(t, w, v));
    };
    Tape tape;
    tape.backward(build(tape));
    auto f = [&] {
        Tape t(Tape::Mode::inference);
        return build(t).item();
    };
    testing::GradCheckResult r;
    testing::check_tensor(p.w_q, f, 1e-4, 1e-4, 1e-6, r);
    testing::check_tensor(p.w_k, f, 1e-4, 1e-4, 1e-6, r);
    CHECK(r.checked > 20);
    CHECK(r.failures.empty());
}

TEST_CASE("scale switch divides by the attention width") {
    sriem::Rng rng(3);
    const auto p = iem::IemParams::init(16, 4, rng);
    const auto e = Tensor::constant(random_matrix(3, 16, rng));
    Tape tape;
    const auto by_d = iem::extract_importance(tape, e, p, all_valid(3), iem::AttentionScale::sqrt_d);
    const auto by_l = iem::extract_importance(tape, e, p, all_valid(3), iem::AttentionScale::sqrt_l);
    for (std::size_t k = 0; k < 9; ++k)
        CHECK(by_l.affinity.value().data[k] == doctest::Approx(2.0 * by_d.affinity.value().data[k]).epsilon(1e-14));
}
