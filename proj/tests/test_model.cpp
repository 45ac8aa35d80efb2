#include "sriem/error.hpp"
#include "sriem/model.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace sriem;
using namespace sriem::nd;
using testing::random_matrix;

namespace {

model::ModelParams tiny(model::Variant v, model::LossMode loss, std::uint64_t seed = 1) {
    model::ModelConfig cfg;
    cfg.d = 8;
    cfg.l = 4;
    cfg.n = 30;
    cfg.variant = v;
    cfg.loss = loss;
    return model::ModelParams::init(cfg, seed);
}

data::Batch random_batch(sriem::Rng& rng, std::size_t rows, std::size_t n, std::size_t max_t, std::size_t max_len) {
    std::vector<data::Example> ex;
    for (std::size_t r = 0; r < rows; ++r) {
        data::Example e;
        const std::size_t t = 1 + rng.below(max_t);
        for (std::size_t j = 0; j < t; ++j) e.prefix.push_back(static_cast<data::ItemIndex>(1 + rng.below(n)));
        e.target = static_cast<data::ItemIndex>(1 + rng.below(n));
        ex.push_back(e);
    }
    return data::batchify(ex, rows, max_len, std::nullopt).front();
}

const model::Variant kVariants[] = {model::Variant::iem, model::Variant::sat, model::Variant::stamp};
const model::LossMode kLosses[] = {model::LossMode::bce_sum, model::LossMode::categorical_ce};

} // namespace

TEST_CASE("long-term preference") {
    Tape tape;
    const auto e = Tensor::constant(Matrix::from_rows({{1, 0}, {0, 1}}));
    const auto z = model::long_term_preference(tape, Tensor::constant(Matrix::from_rows({{0.3, 0.7}})), e);
    CHECK(z.at(0, 0) == doctest::Approx(0.3));
    CHECK(z.at(0, 1) == doctest::Approx(0.7));

    const auto single = Tensor::constant(Matrix::from_rows({{0.4, -2.0, 1.5}}));
    const auto z1 = model::long_term_preference(tape, Tensor::constant(Matrix(1, 1, 1.0)), single);
    CHECK(z1.value() == single.value());

    const auto same = Tensor::constant(Matrix::from_rows({{0.5, 0.25}, {0.5, 0.25}}));
    const auto z2 = model::long_term_preference(tape, Tensor::constant(Matrix::from_rows({{0.9, 0.1}})), same);
    CHECK(z2.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(z2.at(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("fusion") {
    Tape tape;
    sriem::Rng rng(5);
    const std::size_t d = 3;
    const auto session = Tensor::constant(random_matrix(4, d, rng));
    const auto z_l = Tensor::constant(random_matrix(1, d, rng));

    Matrix left(d, 2 * d), right(d, 2 * d);
    for (std::size_t i = 0; i < d; ++i) {
        left(i, i) = 1.0;
        right(i, d + i) = 1.0;
    }
    CHECK(model::fuse(tape, z_l, session, Tensor::constant(left)).z_h.value() == z_l.value());
    const auto f = model::fuse(tape, z_l, session, Tensor::constant(right));
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(f.z_s.at(0, j) == session.at(3, j));
        CHECK(f.z_h.at(0, j) == session.at(3, j));
    }

    const auto w = random_matrix(d, 2 * d, rng);
    const auto r = model::fuse(tape, z_l, session, Tensor::constant(w));
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += w(i, j) * z_l.at(0, j) + w(i, d + j) * session.at(3, j);
        CHECK(r.z_h.at(0, i) == doctest::Approx(acc).epsilon(1e-14));
    }
    CHECK_THROWS_AS(model::fuse(tape, z_l, Tensor::constant(Matrix(0, d)), Tensor::constant(w)), ContractError);
}

TEST_CASE("candidate scoring") {
    Tape tape;
    SUBCASE("orthogonal preference gives uniform probabilities") {
        Matrix table(4, 2);
        for (std::size_t i = 1; i < 4; ++i) table(i, 0) = static_cast<double>(i);
        const auto c = model::score_candidates(tape, Tensor::constant(Matrix::from_rows({{0, 1}})),
                                               Tensor::constant(table));
        REQUIRE(c.scores.cols() == 3);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(c.scores.at(0, j) == 0.0);
            CHECK(c.probs.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));
        }
    }
    SUBCASE("self-similarity wins with orthonormal embeddings") {
        Matrix table(5, 4);
        for (std::size_t i = 1; i < 5; ++i) table(i, i - 1) = 1.0;
        const auto c = model::score_candidates(tape, Tensor::constant(Matrix::from_rows({{0, 0, 1, 0}})),
                                               Tensor::constant(table));
        const auto& p = c.probs.value().data;
        CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 2);
    }
    SUBCASE("random case matches exp-normalize of hand dot products") {
        sriem::Rng rng(6);
        const auto table = random_matrix(6, 3, rng);
        const auto z = random_matrix(1, 3, rng);
        const auto c = model::score_candidates(tape, Tensor::constant(z), Tensor::constant(table));
        std::vector<double> dots;
        for (std::size_t i = 1; i < 6; ++i) dots.push_back(z(0, 0) * table(i, 0) + z(0, 1) * table(i, 1) + z(0, 2) * table(i, 2));
        double total = 0.0;
        for (double v : dots) total += std::exp(v);
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(c.scores.at(0, j) == doctest::Approx(dots[j]).epsilon(1e-14));
            CHECK(c.probs.at(0, j) == doctest::Approx(std::exp(dots[j]) / total).epsilon(1e-13));
        }
    }
}

TEST_CASE("loss") {
    Tape tape;
    const std::vector<data::ItemIndex> first{1};
    const auto half = Tensor::constant(Matrix::from_rows({{0.5, 0.5}}));
    CHECK(model::loss_rows(tape, half, first, model::LossMode::bce_sum).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
    CHECK(model::loss_rows(tape, half, first, model::LossMode::categorical_ce).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Matrix onehot(1, 30);
    onehot(0, 6) = 1.0;
    const std::vector<data::ItemIndex> seventh{7};
    const double l = model::loss_rows(tape, Tensor::constant(onehot), seventh, model::LossMode::bce_sum).item();
    CHECK(l >= 0.0);
    CHECK(l <= 30 * 1e-11);

    const std::vector<data::ItemIndex> bad{3};
    CHECK_THROWS_AS(model::loss_rows(tape, half, bad, model::LossMode::bce_sum), ContractError);
    const std::vector<data::ItemIndex> zero{0};
    CHECK_THROWS_AS(model::loss_rows(tape, half, zero, model::LossMode::bce_sum), ContractError);
}

TEST_CASE("forward shapes and normalisation for every variant") {
    sriem::Rng rng(10);
    for (auto v : kVariants) {
        CAPTURE(model::to_string(v));
        auto p = tiny(v, model::LossMode::bce_sum);
        for (int draw = 0; draw < 10; ++draw) {
            const auto batch = random_batch(rng, 5, 30, 12, 10);
            Tape tape;
            const auto r = model::forward(tape, p, batch);
            REQUIRE(r.rows.size() == 5);
            CHECK(r.candidates.probs.rows() == 5);
            CHECK(r.candidates.probs.cols() == 30);
            for (std::size_t b = 0; b < 5; ++b) {
                const auto& w = r.rows[b].attention.weights.value().data;
                CHECK(w.size() == batch.lengths[b]);
                CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-9);
                double s = 0.0;
                for (std::size_t j = 0; j < 30; ++j) {
                    const double pj = r.candidates.probs.at(b, j);
                    CHECK(pj >= 0.0);
                    CHECK(pj <= 1.0);
                    s += pj;
                }
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }
            double mean = 0.0;
            for (std::size_t b = 0; b < 5; ++b) mean += r.losses.at(b, 0) / 5.0;
            CHECK(r.mean_loss.item() == doctest::Approx(mean).epsilon(1e-14));
        }
    }
}

TEST_CASE("single-item sessions and duplicated rows") {
    for (auto v : kVariants) {
        CAPTURE(model::to_string(v));
        const auto p = tiny(v, model::LossMode::bce_sum);
        data::Batch b = data::batchify({{{4}, 2}, {{4}, 2}}, 2, 10, std::nullopt).front();
        Tape tape;
        const auto r = model::forward(tape, p, b);
        CHECK(r.rows[0].attention.weights.at(0, 0) == 1.0);
        CHECK(r.candidates.probs.value().row(0)[5] == r.candidates.probs.value().row(1)[5]);
        CHECK(r.losses.at(0, 0) == r.losses.at(1, 0));
        // with one item the long-term preference is that item
        if (v != model::Variant::sat) {
            for (std::size_t j = 0; j < 8; ++j)
                CHECK(r.rows[0].attention.z_l.at(0, j) == doctest::Approx(p.embeddings.at(4, j)).epsilon(1e-15));
        }
    }
}

TEST_CASE("sat attention") {
    const auto p = tiny(model::Variant::sat, model::LossMode::bce_sum);
    Tape tape;
    SUBCASE("rows sum to one and identical inputs attend identically") {
        Matrix e(4, 8);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 8; ++j) e(i, j) = 0.1 * static_cast<double>(j) - 0.3;
        const auto a = model::variant_sat(tape, p, Tensor::constant(e));
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += a.affinity.at(i, j);
            CHECK(std::abs(s - 1.0) <= 1e-9);
            CHECK(a.affinity.at(i, i) == 0.0);
        }
        for (double w : a.weights.value().data) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("single item attends to itself") {
        sriem::Rng rng(2);
        const auto e = Tensor::constant(random_matrix(1, 8, rng));
        const auto a = model::variant_sat(tape, p, e);
        CHECK(a.affinity.at(0, 0) == 1.0);
        // z_l is the single attended vector V·W_o
        const auto v = matmul(tape, matmul(tape, e, p.sat->w_v), p.sat->w_o);
        for (std::size_t j = 0; j < 8; ++j) CHECK(a.z_l.at(0, j) == doctest::Approx(v.at(0, j)).epsilon(1e-14));
    }
}

TEST_CASE("stamp attention permutes with items when the last slot is fixed") {
    const auto p = tiny(model::Variant::stamp, model::LossMode::bce_sum);
    sriem::Rng rng(3);
    const auto e = random_matrix(5, 8, rng);
    Matrix ep = e;
    // swap rows 0 and 2, keep the last row
    for (std::size_t j = 0; j < 8; ++j) std::swap(ep(0, j), ep(2, j));
    Tape tape;
    const auto a = model::variant_stamp(tape, p, Tensor::constant(e));
    const auto b = model::variant_stamp(tape, p, Tensor::constant(ep));
    CHECK(b.weights.at(0, 0) == doctest::Approx(a.weights.at(0, 2)).epsilon(1e-13));
    CHECK(b.weights.at(0, 2) == doctest::Approx(a.weights.at(0, 0)).epsilon(1e-13));
    CHECK(b.weights.at(0, 4) == doctest::Approx(a.weights.at(0, 4)).epsilon(1e-13));
}

TEST_CASE("shifting every score leaves the ranking unchanged") {
    sriem::Rng rng(4);
    const auto z = random_matrix(1, 20, rng, -3, 3);
    Matrix shifted = z;
    for (auto& v : shifted.data) v += 7.5;
    Tape tape;
    const auto a = softmax_rows(tape, Tensor::constant(z)).value().data;
    const auto b = softmax_rows(tape, Tensor::constant(shifted)).value().data;
    std::vector<std::size_t> ia(20), ib(20);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::sort(ia.begin(), ia.end(), [&](auto x, auto y) { return a[x] > a[y]; });
    std::sort(ib.begin(), ib.end(), [&](auto x, auto y) { return b[x] > b[y]; });
    CHECK(ia == ib);
}

TEST_CASE("full model gradients match finite differences") {
    for (auto v : kVariants) {
        for (auto loss : kLosses) {
            CAPTURE(model::to_string(v));
            CAPTURE(model::to_string(loss));
            sriem::Rng rng(20);
            auto p = tiny(v, loss, 7);
            const auto batch = random_batch(rng, 4, 30, 5, 10);
            Tape tape;
            tape.backward(model::forward(tape, p, batch).mean_loss);
            auto f = [&] {
                Tape t(Tape::Mode::inference);
                return model::forward(t, p, batch).mean_loss.item();
            };
            testing::GradCheckResult r;
            for (auto& t : p.parameters()) testing::check_tensor(t, f, 1e-4, 1e-4, 1e-6, r);
            CHECK(r.checked > 100);
            CHECK(r.failures.empty());
            CHECK(r.worst_relative <= 1e-4);
        }
    }
}

TEST_CASE("pad row receives no gradient") {
    sriem::Rng rng(30);
    for (auto v : kVariants) {
        auto p = tiny(v, model::LossMode::bce_sum);
        const auto batch = random_batch(rng, 6, 30, 12, 10);
        Tape tape;
        tape.backward(model::forward(tape, p, batch).mean_loss);
        for (std::size_t j = 0; j < 8; ++j) CHECK(p.embeddings.grad()(0, j) == 0.0);
    }
}

TEST_CASE("initialisation and parameter sets") {
    const auto a = tiny(model::Variant::iem, model::LossMode::bce_sum, 3);
    const auto b = tiny(model::Variant::iem, model::LossMode::bce_sum, 3);
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    REQUIRE(pa.size() == 4);
    const double bound = 1.0 / std::sqrt(8.0);
    for (std::size_t k = 0; k < pa.size(); ++k) {
        CHECK(pa[k].value() == pb[k].value());
        for (double x : pa[k].value().data) CHECK(std::abs(x) <= bound);
    }
    for (std::size_t j = 0; j < 8; ++j) CHECK(a.embeddings.at(0, j) == 0.0);
    CHECK(a.fusion.rows() == 8);
    CHECK(a.fusion.cols() == 16);
    CHECK(tiny(model::Variant::sat, model::LossMode::bce_sum).parameters().size() == 6);
    CHECK(tiny(model::Variant::stamp, model::LossMode::bce_sum).parameters().size() == 7);

    auto c = a.clone();
    c.embeddings.mutable_value()(1, 0) += 1.0;
    CHECK(c.embeddings.at(1, 0) != a.embeddings.at(1, 0));
}

TEST_CASE("names parse and print") {
    CHECK(model::parse_variant("stamp") == model::Variant::stamp);
    CHECK(model::to_string(model::parse_loss_mode("categorical-ce")) == "categorical-ce");
    CHECK(model::parse_scale("sqrt-l") == iem::AttentionScale::sqrt_l);
    CHECK_THROWS_AS(model::parse_variant("gru"), ConfigError);
}
