#include "sriem/eval.hpp"

#include "sriem/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>
#include <thread>

namespace sriem::eval {

std::size_t rank_of_target(std::span<const double> scores, std::size_t target) {
    if (target >= scores.size()) {
        throw ContractError("rank_of_target: target " + std::to_string(target) + " outside " +
                            std::to_string(scores.size()) + " scores");
    }
    const double s = scores[target];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > s || (scores[i] == s && i < target)) ++rank;
    }
    return rank;
}

double recall_at_n(std::span<const std::size_t> ranks, std::size_t n) {
    if (ranks.empty()) return 0.0;
    std::size_t hits = 0;
    for (auto r : ranks) {
        if (r == 0) throw ContractError("ranks start at 1");
        hits += r <= n ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_at_n(std::span<const std::size_t> ranks, std::size_t n) {
    if (ranks.empty()) return 0.0;
    double total = 0.0;
    for (auto r : ranks) {
        if (r == 0) throw ContractError("ranks start at 1");
        if (r <= n) total += 1.0 / static_cast<double>(r);
    }
    return total / static_cast<double>(ranks.size());
}

namespace {

void rank_batches(const model::ModelParams& params, const std::vector<data::Batch>& batches, std::size_t first,
                  std::size_t stride, std::vector<std::vector<std::size_t>>& out) {
    for (std::size_t b = first; b < batches.size(); b += stride) {
        const auto& batch = batches[b];
        nd::Tape tape(nd::Tape::Mode::inference);
        const auto result = model::forward(tape, params, batch);
        const auto& scores = result.candidates.scores.value();
        auto& ranks = out[b];
        ranks.resize(batch.size);
        for (std::size_t r = 0; r < batch.size; ++r) {
            ranks[r] = rank_of_target(scores.row(r), static_cast<std::size_t>(batch.targets[r] - 1));
        }
    }
}

} // namespace

std::vector<std::size_t> rank_examples(const model::ModelParams& params, const std::vector<data::Example>& examples,
                                       const EvalOptions& options) {
    const auto batches = data::batchify(examples, options.batch_size, options.max_len, std::nullopt);
    std::vector<std::vector<std::size_t>> per_batch(batches.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, batches.size()));
    if (workers == 1) {
        rank_batches(params, batches, 0, 1, per_batch);
    } else {
        // Each worker owns a strided set of batches; the model is only read.
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    rank_batches(params, batches, w, workers, per_batch);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    std::vector<std::size_t> ranks;
    ranks.reserve(examples.size());
    for (const auto& r : per_batch) ranks.insert(ranks.end(), r.begin(), r.end());
    return ranks;
}

EvalReport report_from_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> prefix_lengths,
                             const EvalOptions& options) {
    if (ranks.size() != prefix_lengths.size()) throw DimensionError("report_from_ranks: ranks and lengths differ in size");
    EvalReport report;
    report.cutoff = options.cutoff;
    report.max_len = options.max_len;
    report.example_count = ranks.size();
    report.recall = recall_at_n(ranks, options.cutoff);
    report.mrr = mrr_at_n(ranks, options.cutoff);
    std::map<std::size_t, std::vector<std::size_t>> grouped;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        grouped[std::clamp<std::size_t>(prefix_lengths[i], 1, options.max_len)].push_back(ranks[i]);
    }
    for (const auto& [len, rs] : grouped) {
        report.buckets[len] = {recall_at_n(rs, options.cutoff), mrr_at_n(rs, options.cutoff), rs.size()};
    }
    return report;
}

EvalReport evaluate(const model::ModelParams& params, const std::vector<data::Session>& sessions,
                    const EvalOptions& options) {
    const auto examples = data::prefix_split(sessions);
    const auto ranks = rank_examples(params, examples, options);
    std::vector<std::size_t> lengths;
    lengths.reserve(examples.size());
    for (const auto& ex : examples) lengths.push_back(ex.prefix.size());
    return report_from_ranks(ranks, lengths, options);
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["cutoff"] = report.cutoff;
    j["max_len"] = report.max_len;
    j["example_count"] = report.example_count;
    j["recall"] = report.recall;
    j["mrr"] = report.mrr;
    auto buckets = nlohmann::json::array();
    for (const auto& [len, m] : report.buckets) {
        buckets.push_back({{"length", len}, {"count", m.count}, {"recall", m.recall}, {"mrr", m.mrr}});
    }
    j["buckets"] = std::move(buckets);
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "bucket,count,recall,mrr\n";
    for (const auto& [len, m] : report.buckets) {
        out << len << (len == report.max_len ? "+" : "") << ',' << m.count << ',' << m.recall << ',' << m.mrr << '\n';
    }
    out << "all," << report.example_count << ',' << report.recall << ',' << report.mrr << '\n';
    return out.str();
}

} // namespace sriem::eval
