#include "sriem/trainer.hpp"

#include "sriem/error.hpp"
#include "sriem/eval.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sriem::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
    if (decay_every == 0) throw ConfigError("decay_every must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (l2 < 0.0) throw ConfigError("l2 must be non-negative");
    if (max_len == 0) throw ConfigError("max_len must be at least 1");
    if (eval_cutoff == 0) throw ConfigError("eval cutoff must be at least 1");
    if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) throw ConfigError("valid_fraction must be in [0, 1)");
}

double schedule(std::size_t epoch, const TrainConfig& config) {
    const auto k = static_cast<double>(epoch / config.decay_every);
    // Dividing by an exact integer power keeps lr0 = 1e-3 landing on 1e-4,
    // 1e-5, ... exactly; repeated multiplication by 0.1 drifts.
    const double inverse = 1.0 / config.decay_factor;
    if (inverse == std::round(inverse)) return config.lr0 / std::pow(inverse, k);
    return config.lr0 * std::pow(config.decay_factor, k);
}

void adam_step(std::span<nd::Tensor> params, AdamState& state, double lr, double l2, const AdamConfig& adam) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.rows(), p.cols());
            state.v.emplace_back(p.rows(), p.cols());
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
    for (const auto& p : params) {
        if (!nd::all_finite(p.grad())) throw NumericError("non-finite gradient in " + p.name());
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& w = params[k].mutable_value().data;
        const auto& g = params[k].grad().data;
        auto& m = state.m[k].data;
        auto& v = state.v[k].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + 2.0 * l2 * w[i];
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
            w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam.epsilon);
        }
        if (!nd::all_finite(params[k].value())) throw NumericError("non-finite value in " + params[k].name() + " after update");
    }
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void zero_pad_row(model::ModelParams& params) {
    auto& table = params.embeddings.mutable_value();
    std::fill(table.data.begin(), table.data.begin() + static_cast<std::ptrdiff_t>(table.cols), 0.0);
}

} // namespace

TrainResult train(const data::SessionCorpus& corpus, model::ModelConfig model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (corpus.train.empty()) throw ContractError("train: corpus has no training sessions");
    model_config.n = corpus.vocab.size();

    // The most recent sessions form the validation slice.
    const std::size_t total = corpus.train.size();
    std::size_t n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(total) * config.valid_fraction));
    if (config.valid_fraction > 0.0 && n_valid == 0 && total > 1) n_valid = 1;
    const std::vector<data::Session> fit_sessions(corpus.train.begin(),
                                                  corpus.train.end() - static_cast<std::ptrdiff_t>(n_valid));
    const std::vector<data::Session> valid_sessions =
        n_valid == 0 ? fit_sessions
                     : std::vector<data::Session>(corpus.train.end() - static_cast<std::ptrdiff_t>(n_valid),
                                                  corpus.train.end());

    const auto fit_examples = data::prefix_split(fit_sessions);
    const auto valid_examples = data::prefix_split(valid_sessions);
    std::vector<std::size_t> valid_lengths;
    for (const auto& ex : valid_examples) valid_lengths.push_back(ex.prefix.size());

    auto params = model::ModelParams::init(model_config, mix_seed(config.seed, 0));
    auto trainable = params.parameters();
    AdamState adam;

    TrainResult result{params.clone(), {}};
    result.report.train_examples = fit_examples.size();
    result.report.valid_examples = valid_examples.size();
    double best_mrr = -1.0;
    const eval::EvalOptions eval_options{config.eval_cutoff, config.max_len, 256, 1};

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = schedule(epoch, config);
        try {
            const auto batches =
                data::batchify(fit_examples, config.batch_size, config.max_len, mix_seed(config.seed, epoch + 1));
            double loss_sum = 0.0;
            std::size_t seen = 0;
            for (const auto& batch : batches) {
                params.zero_grad();
                nd::Tape tape;
                const auto out = model::forward(tape, params, batch);
                tape.backward(out.mean_loss);
                adam_step(trainable, adam, rec.learning_rate, config.l2, config.adam);
                zero_pad_row(params);
                loss_sum += out.mean_loss.item() * static_cast<double>(batch.size);
                seen += batch.size;
            }
            rec.mean_loss = seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
            if (!std::isfinite(rec.mean_loss)) throw NumericError("mean training loss is not finite");
            const auto ranks = eval::rank_examples(params, valid_examples, eval_options);
            const auto report = eval::report_from_ranks(ranks, valid_lengths, eval_options);
            rec.valid_recall = report.recall;
            rec.valid_mrr = report.mrr;
        } catch (const NumericError& e) {
            result.report.aborted = true;
            result.report.stop_reason = std::string("numeric failure in epoch ") + std::to_string(epoch) + ": " + e.what();
            break;
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.valid_mrr > best_mrr) {
            best_mrr = rec.valid_mrr;
            result.report.best_epoch = epoch;
            result.best = params.clone();
        }
        if (epoch - result.report.best_epoch >= config.patience) {
            result.report.stop_reason = "no validation improvement for " + std::to_string(config.patience) + " epochs";
            break;
        }
    }
    if (result.report.stop_reason.empty()) result.report.stop_reason = "reached epoch limit";
    return result;
}

std::string report_to_csv(const TrainReport& report, bool include_timing) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,mean_loss,valid_recall,valid_mrr,learning_rate,best" << (include_timing ? ",wall_seconds" : "") << '\n';
    for (const auto& e : report.epochs) {
        out << e.epoch << ',' << e.mean_loss << ',' << e.valid_recall << ',' << e.valid_mrr << ',' << e.learning_rate
            << ',' << (e.epoch == report.best_epoch ? 1 : 0);
        if (include_timing) out << ',' << e.wall_seconds;
        out << '\n';
    }
    return out.str();
}

std::string report_to_json(const TrainReport& report, bool include_timing) {
    nlohmann::json j;
    auto epochs = nlohmann::json::array();
    for (const auto& e : report.epochs) {
        nlohmann::json row{{"epoch", e.epoch},
                           {"mean_loss", e.mean_loss},
                           {"valid_recall", e.valid_recall},
                           {"valid_mrr", e.valid_mrr},
                           {"learning_rate", e.learning_rate}};
        if (include_timing) row["wall_seconds"] = e.wall_seconds;
        epochs.push_back(std::move(row));
    }
    j["epochs"] = std::move(epochs);
    j["best_epoch"] = report.best_epoch;
    j["stop_reason"] = report.stop_reason;
    j["aborted"] = report.aborted;
    j["train_examples"] = report.train_examples;
    j["valid_examples"] = report.valid_examples;
    return j.dump(2);
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'S', 'R', 'I', 'E', 'M', '1'};
constexpr int kCheckpointVersion = 1;

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << v;
    return out.str();
}

} // namespace

void save_checkpoint(const model::ModelParams& params, const data::Vocabulary& vocab,
                     const std::filesystem::path& path) {
    params.validate();
    if (vocab.size() != params.config.n) {
        throw CheckpointError("vocabulary of " + std::to_string(vocab.size()) + " items does not match model n=" +
                              std::to_string(params.config.n));
    }
    const auto tensors = params.parameters();
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["d"] = params.config.d;
    header["l"] = params.config.l;
    header["n"] = params.config.n;
    header["variant"] = model::to_string(params.config.variant);
    header["loss"] = model::to_string(params.config.loss);
    header["scale"] = model::to_string(params.config.scale);
    header["vocab_hash"] = hex64(vocab.hash());
    header["vocab"] = vocab.keys();
    auto list = nlohmann::json::array();
    for (const auto& t : tensors) list.push_back({{"name", t.name()}, {"rows", t.rows()}, {"cols", t.cols()}});
    header["tensors"] = std::move(list);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
        out.write(reinterpret_cast<const char*>(t.value().data.data()),
                  static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    const std::string where = path.string() + ": ";

    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(where + "not a checkpoint (bad magic)");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ULL << 32)) throw CheckpointError(where + "truncated or corrupt header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError(where + "truncated header");

    Checkpoint ck;
    model::ModelConfig cfg;
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> layout;
    try {
        const auto header = nlohmann::json::parse(text);
        if (header.at("version").get<int>() != kCheckpointVersion) {
            throw CheckpointError(where + "unsupported checkpoint version " + header.at("version").dump());
        }
        cfg.d = header.at("d").get<std::size_t>();
        cfg.l = header.at("l").get<std::size_t>();
        cfg.n = header.at("n").get<std::size_t>();
        cfg.variant = model::parse_variant(header.at("variant").get<std::string>());
        cfg.loss = model::parse_loss_mode(header.at("loss").get<std::string>());
        cfg.scale = model::parse_scale(header.at("scale").get<std::string>());
        ck.vocab = data::Vocabulary::from_keys(header.at("vocab").get<std::vector<std::string>>());
        if (hex64(ck.vocab.hash()) != header.at("vocab_hash").get<std::string>()) {
            throw CheckpointError(where + "vocabulary does not match its recorded hash");
        }
        for (const auto& t : header.at("tensors")) {
            layout.emplace_back(t.at("name").get<std::string>(), t.at("rows").get<std::size_t>(),
                                t.at("cols").get<std::size_t>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "malformed header (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw CheckpointError(where + e.what());
    }
    if (ck.vocab.size() != cfg.n) throw CheckpointError(where + "vocabulary size does not match n");

    // Build the expected layout from a fresh model and compare shapes before
    // reading any values.
    auto params = model::ModelParams::init(cfg, 0);
    auto tensors = params.parameters();
    if (tensors.size() != layout.size()) throw CheckpointError(where + "tensor count does not match the variant");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const auto& [name, rows, cols] = layout[k];
        if (name != tensors[k].name() || rows != tensors[k].rows() || cols != tensors[k].cols()) {
            throw CheckpointError(where + "tensor " + name + " " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " does not match expected " + tensors[k].name() + " " + tensors[k].value().shape());
        }
    }
    for (auto& t : tensors) {
        auto& data = t.mutable_value().data;
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw CheckpointError(where + "truncated tensor data for " + t.name());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(where + "trailing bytes after tensor data");
    try {
        params.validate();
    } catch (const Error& e) {
        throw CheckpointError(where + e.what());
    }
    ck.params = std::move(params);
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const data::Vocabulary& expected_vocab) {
    auto ck = load_checkpoint(path);
    if (ck.vocab.hash() != expected_vocab.hash() || ck.vocab.keys() != expected_vocab.keys()) {
        throw CheckpointError(path.string() + ": incompatible checkpoint, vocabulary hash " + hex64(ck.vocab.hash()) +
                              " differs from corpus hash " + hex64(expected_vocab.hash()));
    }
    return ck;
}

} // namespace sriem::train
