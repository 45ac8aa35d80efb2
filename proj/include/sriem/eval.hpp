#pragma once

// Ranking metrics and session-length bucketed evaluation.

#include "sriem/dataset.hpp"
#include "sriem/model.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sriem::eval {

// 1 + #{strictly greater scores} + #{equal scores at a smaller position}.
// `target` is a position in `scores`.
std::size_t rank_of_target(std::span<const double> scores, std::size_t target);

// Fraction of ranks ≤ n.
double recall_at_n(std::span<const std::size_t> ranks, std::size_t n);
// Mean of 1/rank for ranks ≤ n, 0 otherwise.
double mrr_at_n(std::span<const std::size_t> ranks, std::size_t n);

struct BucketMetrics {
    double recall = 0.0;
    double mrr = 0.0;
    std::size_t count = 0;
};

struct EvalReport {
    double recall = 0.0;
    double mrr = 0.0;
    std::size_t cutoff = 20;
    std::size_t max_len = 10;
    std::size_t example_count = 0;
    // prefix length 1..max_len; longer prefixes pool into max_len
    std::map<std::size_t, BucketMetrics> buckets;
};

struct EvalOptions {
    std::size_t cutoff = 20;
    std::size_t max_len = 10;
    std::size_t batch_size = 256;
    std::size_t threads = 1;
};

// Rank of each example's target under the model, in example order.
std::vector<std::size_t> rank_examples(const model::ModelParams& params, const std::vector<data::Example>& examples,
                                       const EvalOptions& options);

EvalReport report_from_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> prefix_lengths,
                             const EvalOptions& options);

// Scores every prefix-split pair of `sessions`.
EvalReport evaluate(const model::ModelParams& params, const std::vector<data::Session>& sessions,
                    const EvalOptions& options);

std::string report_to_json(const EvalReport& report);
// One row per bucket plus an "all" row: bucket,count,recall,mrr
std::string report_to_csv(const EvalReport& report);

} // namespace sriem::eval
