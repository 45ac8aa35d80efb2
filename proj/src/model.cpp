#include "sriem/model.hpp"

#include "sriem/error.hpp"
#include "sriem/random.hpp"

#include <cmath>

namespace sriem::model {

Variant parse_variant(const std::string& name) {
    if (name == "iem") return Variant::iem;
    if (name == "sat") return Variant::sat;
    if (name == "stamp") return Variant::stamp;
    throw ConfigError("unknown variant '" + name + "' (expected iem, sat or stamp)");
}

std::string to_string(Variant v) {
    switch (v) {
    case Variant::iem: return "iem";
    case Variant::sat: return "sat";
    case Variant::stamp: return "stamp";
    }
    return "unknown";
}

LossMode parse_loss_mode(const std::string& name) {
    if (name == "bce-sum") return LossMode::bce_sum;
    if (name == "categorical-ce") return LossMode::categorical_ce;
    throw ConfigError("unknown loss mode '" + name + "' (expected bce-sum or categorical-ce)");
}

std::string to_string(LossMode m) {
    return m == LossMode::bce_sum ? "bce-sum" : "categorical-ce";
}

iem::AttentionScale parse_scale(const std::string& name) {
    if (name == "sqrt-d") return iem::AttentionScale::sqrt_d;
    if (name == "sqrt-l") return iem::AttentionScale::sqrt_l;
    throw ConfigError("unknown attention scale '" + name + "' (expected sqrt-d or sqrt-l)");
}

std::string to_string(iem::AttentionScale s) {
    return s == iem::AttentionScale::sqrt_d ? "sqrt-d" : "sqrt-l";
}

namespace {

nd::Tensor uniform_parameter(std::size_t rows, std::size_t cols, double bound, Rng& rng, std::string name) {
    nd::Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.uniform(-bound, bound);
    return nd::Tensor::parameter(std::move(m), std::move(name));
}

nd::Tensor copy_parameter(const nd::Tensor& t) {
    return nd::Tensor::parameter(t.value(), t.name());
}

nd::Tensor uniform_row(std::size_t t) {
    return nd::Tensor::constant(nd::Matrix(1, t, 1.0 / static_cast<double>(t)));
}

} // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    if (config.d == 0 || config.l == 0) throw ConfigError("model dimensions d and l must be positive");
    if (config.n == 0) throw ConfigError("model needs at least one item");
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
    const std::size_t d = config.d;
    const std::size_t l = config.l;

    ModelParams p;
    p.config = config;
    {
        nd::Matrix table(config.n + 1, d);
        for (std::size_t i = d; i < table.size(); ++i) table.data[i] = rng.uniform(-bound, bound);
        p.embeddings = nd::Tensor::parameter(std::move(table), "embeddings");
    }
    if (config.variant != Variant::stamp) p.iem = iem::IemParams::init(d, l, rng);
    p.iem.d = d;
    p.iem.l = l;
    p.fusion = uniform_parameter(d, 2 * d, bound, rng, "W_0");
    if (config.variant == Variant::sat) {
        p.sat = SatParams{uniform_parameter(d, l, bound, rng, "W_v"), uniform_parameter(l, d, bound, rng, "W_o")};
    }
    if (config.variant == Variant::stamp) {
        p.stamp = StampParams{uniform_parameter(d, l, bound, rng, "W_1"), uniform_parameter(d, l, bound, rng, "W_2"),
                              uniform_parameter(d, l, bound, rng, "W_3"), uniform_parameter(1, l, bound, rng, "b"),
                              uniform_parameter(l, 1, bound, rng, "w")};
    }
    return p;
}

std::vector<nd::Tensor> ModelParams::parameters() const {
    std::vector<nd::Tensor> out{embeddings};
    if (config.variant != Variant::stamp) {
        out.push_back(iem.w_q);
        out.push_back(iem.w_k);
    }
    out.push_back(fusion);
    if (sat) {
        out.push_back(sat->w_v);
        out.push_back(sat->w_o);
    }
    if (stamp) {
        out.insert(out.end(), {stamp->w_1, stamp->w_2, stamp->w_3, stamp->bias, stamp->w});
    }
    return out;
}

void ModelParams::zero_grad() const {
    for (auto t : parameters()) t.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.config = config;
    p.embeddings = copy_parameter(embeddings);
    p.iem.d = iem.d;
    p.iem.l = iem.l;
    if (iem.w_q.defined()) {
        p.iem.w_q = copy_parameter(iem.w_q);
        p.iem.w_k = copy_parameter(iem.w_k);
    }
    p.fusion = copy_parameter(fusion);
    if (sat) p.sat = SatParams{copy_parameter(sat->w_v), copy_parameter(sat->w_o)};
    if (stamp) {
        p.stamp = StampParams{copy_parameter(stamp->w_1), copy_parameter(stamp->w_2), copy_parameter(stamp->w_3),
                              copy_parameter(stamp->bias), copy_parameter(stamp->w)};
    }
    return p;
}

void ModelParams::validate() const {
    const std::size_t d = config.d;
    const std::size_t l = config.l;
    auto expect = [](const nd::Tensor& t, std::size_t r, std::size_t c, const char* what) {
        if (!t.defined() || t.rows() != r || t.cols() != c) {
            throw DimensionError(std::string(what) + " must be " + std::to_string(r) + "x" + std::to_string(c) +
                                 (t.defined() ? ", got " + t.value().shape() : ", got nothing"));
        }
        if (!nd::all_finite(t.value())) throw NumericError(std::string("non-finite entry in ") + what);
    };
    expect(embeddings, config.n + 1, d, "embeddings");
    for (std::size_t j = 0; j < d; ++j)
        if (embeddings.value()(0, j) != 0.0) throw ContractError("pad embedding row must be zero");
    expect(fusion, d, 2 * d, "W_0");
    if (config.variant != Variant::stamp) iem.validate();
    if (config.variant == Variant::sat) {
        if (!sat) throw ContractError("sat variant without its parameters");
        expect(sat->w_v, d, l, "W_v");
        expect(sat->w_o, l, d, "W_o");
    }
    if (config.variant == Variant::stamp) {
        if (!stamp) throw ContractError("stamp variant without its parameters");
        expect(stamp->w_1, d, l, "W_1");
        expect(stamp->w_2, d, l, "W_2");
        expect(stamp->w_3, d, l, "W_3");
        expect(stamp->bias, 1, l, "b");
        expect(stamp->w, l, 1, "w");
    }
}

nd::Tensor long_term_preference(nd::Tape& tape, const nd::Tensor& weights, const nd::Tensor& session_embeddings) {
    if (weights.rows() != 1 || weights.cols() != session_embeddings.rows()) {
        throw DimensionError("long_term_preference: weights " + weights.value().shape() + " for " +
                             std::to_string(session_embeddings.rows()) + " items");
    }
    return nd::matmul(tape, weights, session_embeddings);
}

Fusion fuse(nd::Tape& tape, const nd::Tensor& z_l, const nd::Tensor& session_embeddings, const nd::Tensor& fusion) {
    const std::size_t t = session_embeddings.rows();
    if (t == 0) throw ContractError("fuse: empty session");
    if (fusion.cols() != 2 * z_l.cols() || fusion.rows() != z_l.cols()) {
        throw DimensionError("fuse: W_0 " + fusion.value().shape() + " does not map 2d=" +
                             std::to_string(2 * z_l.cols()) + " to d");
    }
    Fusion out;
    out.z_s = nd::slice_rows(tape, session_embeddings, t - 1, t);
    out.z_h = nd::matmul_nt(tape, nd::concat_cols(tape, z_l, out.z_s), fusion);
    return out;
}

CandidateScores score_candidates(nd::Tape& tape, const nd::Tensor& z_h, const nd::Tensor& embeddings) {
    const auto items = nd::slice_rows(tape, embeddings, 1, embeddings.rows());
    CandidateScores out;
    out.scores = nd::matmul_nt(tape, z_h, items);
    out.probs = nd::softmax_rows(tape, out.scores);
    return out;
}

nd::Tensor loss_rows(nd::Tape& tape, const nd::Tensor& probs, std::span<const data::ItemIndex> targets, LossMode mode) {
    std::vector<std::int32_t> columns;
    columns.reserve(targets.size());
    for (auto t : targets) {
        if (t < 1 || static_cast<std::size_t>(t) > probs.cols()) {
            throw ContractError("loss: target item " + std::to_string(t) + " outside [1, " +
                                std::to_string(probs.cols()) + "]");
        }
        columns.push_back(t - 1);
    }
    return mode == LossMode::bce_sum ? nd::bce_sum_rows(tape, probs, columns)
                                     : nd::categorical_ce_rows(tape, probs, columns);
}

SessionAttention variant_iem(nd::Tape& tape, const ModelParams& params, const nd::Tensor& e) {
    const std::vector<std::uint8_t> valid(e.rows(), 1);
    const auto imp = iem::extract_importance(tape, e, params.iem, valid, params.config.scale);
    SessionAttention out;
    out.weights = imp.weights;
    out.affinity = imp.affinity;
    out.raw_scores = imp.raw_scores;
    out.z_l = long_term_preference(tape, out.weights, e);
    return out;
}

SessionAttention variant_sat(nd::Tape& tape, const ModelParams& params, const nd::Tensor& e) {
    if (!params.sat) throw ContractError("variant_sat: model has no self-attention parameters");
    const std::size_t t = e.rows();
    const auto q = nd::matmul(tape, e, params.iem.w_q);
    const auto k = nd::matmul(tape, e, params.iem.w_k);
    const auto v = nd::matmul(tape, e, params.sat->w_v);
    const auto logits = nd::scale(tape, nd::matmul_nt(tape, q, k), 1.0 / std::sqrt(static_cast<double>(params.config.l)));
    // A single item can only attend to itself.
    nd::Mask mask(t, t, true);
    if (t > 1)
        for (std::size_t i = 0; i < t; ++i) mask.set(i, i, false);
    SessionAttention out;
    out.affinity = nd::softmax_rows(tape, logits, mask);
    const auto attended = nd::matmul(tape, nd::matmul(tape, out.affinity, v), params.sat->w_o);
    const auto pool = uniform_row(t);
    // Average pooling of attended rows equals weighting the projected values by
    // the column means of the attention matrix.
    out.weights = nd::matmul(tape, pool, out.affinity);
    out.z_l = nd::matmul(tape, pool, attended);
    return out;
}

SessionAttention variant_stamp(nd::Tape& tape, const ModelParams& params, const nd::Tensor& e) {
    if (!params.stamp) throw ContractError("variant_stamp: model has no STAMP parameters");
    const auto& sp = *params.stamp;
    const std::size_t t = e.rows();
    const auto session_mean = nd::matmul(tape, uniform_row(t), e);
    const auto last = nd::slice_rows(tape, e, t - 1, t);
    const auto query = nd::add(tape, nd::add(tape, nd::matmul(tape, session_mean, sp.w_2), nd::matmul(tape, last, sp.w_3)),
                               sp.bias);
    const auto hidden = nd::sigmoid(tape, nd::add_row(tape, nd::matmul(tape, e, sp.w_1), query));
    SessionAttention out;
    out.raw_scores = nd::transpose(tape, nd::matmul(tape, hidden, sp.w));
    out.weights = nd::softmax_rows(tape, out.raw_scores);
    out.z_l = long_term_preference(tape, out.weights, e);
    return out;
}

SessionAttention attend(nd::Tape& tape, const ModelParams& params, const nd::Tensor& e) {
    switch (params.config.variant) {
    case Variant::iem: return variant_iem(tape, params, e);
    case Variant::sat: return variant_sat(tape, params, e);
    case Variant::stamp: return variant_stamp(tape, params, e);
    }
    throw ContractError("unknown variant");
}

SessionEncoding encode_session(nd::Tape& tape, const ModelParams& params, std::span<const data::ItemIndex> items) {
    if (items.empty()) throw ContractError("encode_session: empty session");
    for (auto it : items) {
        if (it < 1 || static_cast<std::size_t>(it) > params.config.n) {
            throw ContractError("encode_session: item " + std::to_string(it) + " outside [1, " +
                                std::to_string(params.config.n) + "]");
        }
    }
    const auto e = nd::gather_rows(tape, params.embeddings, items);
    SessionEncoding enc;
    enc.attention = attend(tape, params, e);
    enc.fusion = fuse(tape, enc.attention.z_l, e, params.fusion);
    return enc;
}

ForwardResult forward(nd::Tape& tape, const ModelParams& params, const data::Batch& batch) {
    if (batch.size == 0) throw ContractError("forward: empty batch");
    ForwardResult out;
    out.rows.reserve(batch.size);
    std::vector<nd::Tensor> z_rows;
    z_rows.reserve(batch.size);
    for (std::size_t r = 0; r < batch.size; ++r) {
        out.rows.push_back(encode_session(tape, params, batch.row(r)));
        z_rows.push_back(out.rows.back().fusion.z_h);
    }
    const auto z_h = nd::concat_rows(tape, z_rows);
    out.candidates = score_candidates(tape, z_h, params.embeddings);
    out.losses = loss_rows(tape, out.candidates.probs, batch.targets, params.config.loss);
    out.mean_loss = nd::mean(tape, out.losses);
    return out;
}

} // namespace sriem::model
