#pragma once

// Importance extraction: per-item weights from the average masked affinity of
// each session item to the others.
//
//   Q = sigmoid(E·W_q), K = sigmoid(E·W_k)            E: t×d, W_q, W_k: d×l
//   C = sigmoid(Q·Kᵀ) / √d
//   α_i = (1/t) Σ_{j≠i} C_ij
//   β = softmax(α)
//
// Every function accepts a validity mask so padded sessions give the same β
// on their valid positions as the unpadded session.

#include "sriem/ndmath.hpp"
#include "sriem/random.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sriem::iem {

enum class AttentionScale { sqrt_d, sqrt_l };

struct IemParams {
    nd::Tensor w_q; // d×l
    nd::Tensor w_k; // d×l
    std::size_t d = 0;
    std::size_t l = 0;

    static IemParams init(std::size_t d, std::size_t l, Rng& rng);
    // Throws DimensionError / NumericError when shapes or values are off.
    void validate() const;
};

struct QueryKey {
    nd::Tensor query; // t×l
    nd::Tensor key;   // t×l
};

QueryKey project_qk(nd::Tape& tape, const nd::Tensor& embeddings, const IemParams& params);

// sigmoid(Q·Kᵀ) / √scale_dim
nd::Tensor affinity(nd::Tape& tape, const nd::Tensor& query, const nd::Tensor& key, std::size_t scale_dim);

// 1×t importance scores; diagonal, pad rows and pad columns excluded, divided
// by the number of valid positions.
nd::Tensor importance_scores(nd::Tape& tape, const nd::Tensor& affinity, std::span<const std::uint8_t> valid);

// 1×t masked softmax; pads get exactly zero.
nd::Tensor normalize_importance(nd::Tape& tape, const nd::Tensor& scores, std::span<const std::uint8_t> valid);

struct ImportanceTensors {
    nd::Tensor affinity;   // t×t
    nd::Tensor raw_scores; // 1×t
    nd::Tensor weights;    // 1×t
};

ImportanceTensors extract_importance(nd::Tape& tape, const nd::Tensor& embeddings, const IemParams& params,
                                     std::span<const std::uint8_t> valid,
                                     AttentionScale scale = AttentionScale::sqrt_d);

// Plain-value snapshot of ImportanceTensors.
struct ImportanceResult {
    nd::Matrix affinity;
    std::vector<double> raw_scores;
    std::vector<double> weights;
};

ImportanceResult snapshot(const ImportanceTensors& t);

} // namespace sriem::iem
