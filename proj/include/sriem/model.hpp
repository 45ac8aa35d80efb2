#pragma once

// The full recommender: item embeddings → session attention → preference
// fusion → candidate scoring → loss.
//
// The session attention is one of three interchangeable variants:
//   iem   importance extraction (see iem.hpp)
//   sat   scaled dot-product self-attention with average pooling
//   stamp additive attention whose query mixes the session mean and last item
//
// Long-term preference z_l and current interest z_s (the last item) are
// concatenated and mapped by W_0 (d×2d) to z_h, which scores every item by a
// dot product with the shared embedding table.

#include "sriem/dataset.hpp"
#include "sriem/iem.hpp"
#include "sriem/ndmath.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sriem::model {

enum class Variant { iem, sat, stamp };
enum class LossMode { bce_sum, categorical_ce };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
LossMode parse_loss_mode(const std::string& name);
std::string to_string(LossMode m);
iem::AttentionScale parse_scale(const std::string& name);
std::string to_string(iem::AttentionScale s);

struct ModelConfig {
    std::size_t d = 200;
    std::size_t l = 100;
    std::size_t n = 0; // number of real items; the table has n + 1 rows
    Variant variant = Variant::iem;
    LossMode loss = LossMode::bce_sum;
    iem::AttentionScale scale = iem::AttentionScale::sqrt_d;
};

// Self-attention extras; its query/key projections reuse IemParams.
struct SatParams {
    nd::Tensor w_v; // d×l
    nd::Tensor w_o; // l×d
};

struct StampParams {
    nd::Tensor w_1;  // d×l, applied to each item
    nd::Tensor w_2;  // d×l, applied to the session mean
    nd::Tensor w_3;  // d×l, applied to the last item
    nd::Tensor bias; // 1×l
    nd::Tensor w;    // l×1
};

struct ModelParams {
    ModelConfig config;
    nd::Tensor embeddings; // (n+1)×d, row 0 is the frozen zero pad row
    iem::IemParams iem;    // iem and sat variants
    nd::Tensor fusion;     // W_0, d×2d
    std::optional<SatParams> sat;
    std::optional<StampParams> stamp;

    // Uniform in [−1/√d, 1/√d] for every trainable matrix; pad row zero.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    // Trainable tensors in a fixed order (also the checkpoint order).
    std::vector<nd::Tensor> parameters() const;
    void zero_grad() const;
    // Deep copy of all values into fresh parameter tensors.
    ModelParams clone() const;
    void validate() const;
};

// Attention stage output for one session of t valid items.
struct SessionAttention {
    nd::Tensor weights;    // 1×t, sums to 1
    nd::Tensor z_l;        // 1×d
    nd::Tensor affinity;   // t×t; iem: C, sat: attention matrix, stamp: undefined
    nd::Tensor raw_scores; // 1×t; iem: α, stamp: pre-softmax scores, sat: undefined
};

// z_l = Σ β_i e_i
nd::Tensor long_term_preference(nd::Tape& tape, const nd::Tensor& weights, const nd::Tensor& session_embeddings);

struct Fusion {
    nd::Tensor z_s; // 1×d, last item embedding
    nd::Tensor z_h; // 1×d
};

// z_s = last row of session_embeddings, z_h = W_0 [z_l; z_s].
Fusion fuse(nd::Tape& tape, const nd::Tensor& z_l, const nd::Tensor& session_embeddings, const nd::Tensor& fusion);

struct CandidateScores {
    nd::Tensor scores; // B×n, column j is item j + 1
    nd::Tensor probs;  // B×n
};

// Scores every real item (pad row excluded) against each row of z_h (B×d).
CandidateScores score_candidates(nd::Tape& tape, const nd::Tensor& z_h, const nd::Tensor& embeddings);

// Per-row loss (B×1). Targets are item indices in [1, n].
nd::Tensor loss_rows(nd::Tape& tape, const nd::Tensor& probs, std::span<const data::ItemIndex> targets, LossMode mode);

// Attention variants over the t×d embeddings of one session.
SessionAttention variant_iem(nd::Tape& tape, const ModelParams& params, const nd::Tensor& session_embeddings);
SessionAttention variant_sat(nd::Tape& tape, const ModelParams& params, const nd::Tensor& session_embeddings);
SessionAttention variant_stamp(nd::Tape& tape, const ModelParams& params, const nd::Tensor& session_embeddings);
SessionAttention attend(nd::Tape& tape, const ModelParams& params, const nd::Tensor& session_embeddings);

struct SessionEncoding {
    SessionAttention attention;
    Fusion fusion;
};

// Embeds and encodes one session (all items valid, at least one).
SessionEncoding encode_session(nd::Tape& tape, const ModelParams& params, std::span<const data::ItemIndex> items);

struct ForwardResult {
    std::vector<SessionEncoding> rows;
    CandidateScores candidates;
    nd::Tensor losses;    // B×1
    nd::Tensor mean_loss; // 1×1
};

ForwardResult forward(nd::Tape& tape, const ModelParams& params, const data::Batch& batch);

} // namespace sriem::model
