#include "sriem/iem.hpp"

#include "sriem/error.hpp"

#include <cmath>

namespace sriem::iem {

namespace {

nd::Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    nd::Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.uniform(-bound, bound);
    return m;
}

std::size_t count_valid(std::span<const std::uint8_t> valid) {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
}

} // namespace

IemParams IemParams::init(std::size_t d, std::size_t l, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    IemParams p;
    p.d = d;
    p.l = l;
    p.w_q = nd::Tensor::parameter(uniform_matrix(d, l, bound, rng), "W_q");
    p.w_k = nd::Tensor::parameter(uniform_matrix(d, l, bound, rng), "W_k");
    return p;
}

void IemParams::validate() const {
    for (const auto* w : {&w_q, &w_k}) {
        if (!w->defined() || w->rows() != d || w->cols() != l) {
            throw DimensionError("IEM projection must be " + std::to_string(d) + "x" + std::to_string(l) +
                                 (w->defined() ? ", got " + w->value().shape() : ", got nothing"));
        }
        if (!nd::all_finite(w->value())) throw NumericError("non-finite entry in " + w->name());
    }
}

QueryKey project_qk(nd::Tape& tape, const nd::Tensor& embeddings, const IemParams& params) {
    if (embeddings.cols() != params.d) {
        throw DimensionError("project_qk: embeddings " + embeddings.value().shape() + " do not have d=" +
                             std::to_string(params.d) + " columns");
    }
    return {nd::sigmoid(tape, nd::matmul(tape, embeddings, params.w_q)),
            nd::sigmoid(tape, nd::matmul(tape, embeddings, params.w_k))};
}

nd::Tensor affinity(nd::Tape& tape, const nd::Tensor& query, const nd::Tensor& key, std::size_t scale_dim) {
    if (query.rows() != key.rows() || query.cols() != key.cols()) {
        throw DimensionError("affinity: query " + query.value().shape() + " and key " + key.value().shape() +
                             " differ in shape");
    }
    const auto logits = nd::matmul_nt(tape, query, key);
    return nd::scale(tape, nd::sigmoid(tape, logits), 1.0 / std::sqrt(static_cast<double>(scale_dim)));
}

nd::Tensor importance_scores(nd::Tape& tape, const nd::Tensor& c, std::span<const std::uint8_t> valid) {
    const std::size_t t = c.rows();
    if (c.cols() != t) throw DimensionError("importance_scores: affinity " + c.value().shape() + " is not square");
    if (valid.size() != t) {
        throw DimensionError("importance_scores: mask of length " + std::to_string(valid.size()) + " for " +
                             std::to_string(t) + " positions");
    }
    const std::size_t t_valid = count_valid(valid);
    nd::Matrix keep(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) keep(i, j) = (i != j && valid[i] && valid[j]) ? 1.0 : 0.0;
    const auto masked = nd::mul(tape, c, nd::Tensor::constant(std::move(keep)));
    const auto summed = nd::transpose(tape, nd::row_sums(tape, masked));
    return nd::scale(tape, summed, t_valid == 0 ? 0.0 : 1.0 / static_cast<double>(t_valid));
}

nd::Tensor normalize_importance(nd::Tape& tape, const nd::Tensor& scores, std::span<const std::uint8_t> valid) {
    if (scores.rows() != 1 || scores.cols() != valid.size()) {
        throw DimensionError("normalize_importance: scores " + scores.value().shape() + " with mask of length " +
                             std::to_string(valid.size()));
    }
    return nd::softmax_rows(tape, scores, nd::Mask::columns(1, valid));
}

ImportanceTensors extract_importance(nd::Tape& tape, const nd::Tensor& embeddings, const IemParams& params,
                                     std::span<const std::uint8_t> valid, AttentionScale scale) {
    const auto qk = project_qk(tape, embeddings, params);
    const std::size_t scale_dim = scale == AttentionScale::sqrt_d ? params.d : params.l;
    ImportanceTensors out;
    out.affinity = affinity(tape, qk.query, qk.key, scale_dim);
    out.raw_scores = importance_scores(tape, out.affinity, valid);
    out.weights = normalize_importance(tape, out.raw_scores, valid);
    return out;
}

ImportanceResult snapshot(const ImportanceTensors& t) {
    return {t.affinity.value(), t.raw_scores.value().data, t.weights.value().data};
}

} // namespace sriem::iem
