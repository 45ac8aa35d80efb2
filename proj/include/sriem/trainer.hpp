#pragma once

// Training loop: Adam with step-decayed learning rate, coupled L2, per-epoch
// validation on a held-out slice of the training sessions, best-MRR
// checkpoint selection and patience-based early stopping.

#include "sriem/dataset.hpp"
#include "sriem/model.hpp"
#include "sriem/ndmath.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sriem::train {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    double lr0 = 1e-3;
    double decay_factor = 0.1;
    std::size_t decay_every = 3; // epochs
    std::size_t batch_size = 128;
    double l2 = 1e-5;
    std::size_t epochs = 30;
    std::size_t patience = 3;
    std::size_t max_len = 10;
    std::size_t eval_cutoff = 20;
    double valid_fraction = 0.1;
    std::uint64_t seed = 0;
    AdamConfig adam;

    void validate() const;
};

// lr0 · decay_factor^⌊epoch / decay_every⌋
double schedule(std::size_t epoch, const TrainConfig& config);

struct AdamState {
    std::vector<nd::Matrix> m;
    std::vector<nd::Matrix> v;
    std::uint64_t step = 0;
};

// One Adam update over `params` using their current gradients. The L2 term
// adds 2·l2·w to each gradient before the moment updates. A non-finite
// gradient throws NumericError naming the tensor and leaves params untouched.
void adam_step(std::span<nd::Tensor> params, AdamState& state, double lr, double l2, const AdamConfig& adam = {});

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double valid_recall = 0.0;
    double valid_mrr = 0.0;
    double learning_rate = 0.0;
    double wall_seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    std::string stop_reason;
    bool aborted = false; // true when a numeric failure ended training
    std::size_t train_examples = 0;
    std::size_t valid_examples = 0;
};

// Wall times are excluded unless requested so that identical runs produce
// identical files.
std::string report_to_csv(const TrainReport& report, bool include_timing = false);
std::string report_to_json(const TrainReport& report, bool include_timing = false);

struct TrainResult {
    model::ModelParams best;
    TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// The model's n is taken from the corpus vocabulary.
TrainResult train(const data::SessionCorpus& corpus, model::ModelConfig model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Checkpoint container: "SRIEM1", u64 little-endian header length, JSON
// header {version, d, l, n, variant, loss, scale, vocab_hash, vocab, tensors},
// then each tensor's row-major doubles in header order.
void save_checkpoint(const model::ModelParams& params, const data::Vocabulary& vocab,
                     const std::filesystem::path& path);

struct Checkpoint {
    model::ModelParams params;
    data::Vocabulary vocab;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint trained on a different vocabulary.
Checkpoint load_checkpoint(const std::filesystem::path& path, const data::Vocabulary& expected_vocab);

} // namespace sriem::train
