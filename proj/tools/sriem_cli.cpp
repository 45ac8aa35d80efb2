// sriem: prepare, train, eval, predict, inspect and bench from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

#include "sriem/bench.hpp"
#include "sriem/config.hpp"
#include "sriem/dataset.hpp"
#include "sriem/error.hpp"
#include "sriem/eval.hpp"
#include "sriem/model.hpp"
#include "sriem/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : sriem::Error {
    explicit UsageError(const std::string& what) : sriem::Error("usage", what) {}
};

// Flags shared by every subcommand; each maps onto a config key.
const std::vector<std::pair<std::string, std::string>> kCommonFlags = {
    {"--seed", "seed"},
    {"--data", "data"},
    {"--out", "out"},
    {"--format,--dataset-format", "format"},
    {"--variant", "variant"},
    {"--loss", "loss"},
    {"--scale-by", "scale-by"},
    {"--d", "d"},
    {"--l", "l"},
    {"--max-len", "max-len"},
    {"--batch", "batch"},
    {"--lr", "lr"},
    {"--decay-factor", "decay-factor"},
    {"--decay-every", "decay-every"},
    {"--l2", "l2"},
    {"--epochs", "epochs"},
    {"--patience", "patience"},
    {"--n", "n"},
    {"--min-item-support", "min-item-support"},
    {"--test-days", "test-days"},
    {"--threads", "threads"},
    {"--checkpoint", "checkpoint"},
};

const std::map<std::string, std::string> kFlagHelp = {
    {"seed", "random seed for initialisation and shuffling"},
    {"data", "raw click file or corpus cache (.json)"},
    {"out", "base directory for run directories"},
    {"format", "raw data format: yoochoose-csv | diginetica-csv | simple-sessions"},
    {"variant", "attention variant: iem | sat | stamp"},
    {"loss", "training objective: bce-sum | categorical-ce"},
    {"scale-by", "affinity scaling: sqrt-d | sqrt-l"},
    {"d", "item embedding dimension"},
    {"l", "attention dimension"},
    {"max-len", "most recent items kept per session"},
    {"batch", "training batch size"},
    {"lr", "initial learning rate"},
    {"decay-factor", "learning-rate decay factor"},
    {"decay-every", "epochs between learning-rate decays"},
    {"l2", "L2 regularisation strength"},
    {"epochs", "maximum number of epochs"},
    {"patience", "epochs without validation improvement before stopping"},
    {"n", "ranking cutoff N for Recall@N / MRR@N"},
    {"min-item-support", "minimum occurrences for an item to be kept"},
    {"test-days", "trailing days held out as test"},
    {"threads", "evaluation worker threads"},
    {"checkpoint", "model checkpoint file"},
};

struct CommonOptions {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
};

void add_common(CLI::App& app, CommonOptions& common) {
    app.add_option("--config", common.config_path, "flat key=value config file; flags override it");
    for (const auto& [flag, key] : kCommonFlags) {
        common.options[key] = app.add_option(flag, common.values[key], kFlagHelp.at(key));
    }
}

sriem::RunConfig resolve(const CommonOptions& common) {
    sriem::RunConfig cfg;
    if (!common.config_path.empty()) sriem::apply_config_file(cfg, common.config_path);
    for (const auto& [key, opt] : common.options) {
        if (opt->count() > 0) sriem::apply_setting(cfg, key, common.values.at(key));
    }
    return cfg;
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return out.str();
}

fs::path make_run_dir(const sriem::RunConfig& cfg, const std::string& command) {
    const std::string base = timestamp_now() + "-" + command + "-seed" + std::to_string(cfg.train.seed);
    fs::path dir = fs::path(cfg.out) / base;
    for (int k = 1; fs::exists(dir); ++k) dir = fs::path(cfg.out) / (base + "-" + std::to_string(k));
    fs::create_directories(dir);
    std::ofstream(dir / "config.txt") << sriem::to_text(cfg);
    return dir;
}

json config_json(const sriem::RunConfig& cfg) {
    json j = json::object();
    for (const auto& [k, v] : sriem::to_settings(cfg)) j[k] = v;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw sriem::IoError("cannot write " + path.string());
    out << text;
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string("missing --") + what);
    if (!fs::exists(path)) throw sriem::IoError(std::string(what) + " not found: " + path);
}

bool looks_like_cache(const fs::path& path) {
    return path.extension() == ".json";
}

sriem::data::SessionCorpus load_or_prepare(const sriem::RunConfig& cfg) {
    require_file(cfg.data, "data");
    if (looks_like_cache(cfg.data)) return sriem::data::load_corpus(cfg.data);
    auto loaded = sriem::data::load_clicks(cfg.data, cfg.format);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    return sriem::data::preprocess(loaded.events, cfg.preprocess);
}

json stats_json(const sriem::data::CorpusStats& s) {
    return {{"clicks", s.clicks},         {"train_sessions", s.train_sessions}, {"test_sessions", s.test_sessions},
            {"train_pairs", s.train_pairs}, {"test_pairs", s.test_pairs},       {"items", s.items},
            {"average_length", s.average_length}};
}

void print_stats(const sriem::data::CorpusStats& s) {
    std::cout << "# clicks            " << s.clicks << '\n'
              << "# training sessions " << s.train_sessions << " (" << s.train_pairs << " prefix pairs)\n"
              << "# test sessions     " << s.test_sessions << " (" << s.test_pairs << " prefix pairs)\n"
              << "# items             " << s.items << '\n'
              << "Average length      " << std::fixed << std::setprecision(2) << s.average_length << '\n';
    std::cout.unsetf(std::ios::fixed);
}

std::vector<std::string> split_keys(const std::string& text) {
    std::vector<std::string> keys;
    std::string cur;
    for (char c : text) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) keys.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) keys.push_back(cur);
    return keys;
}

std::vector<std::size_t> parse_grid(const std::string& text) {
    std::vector<std::size_t> out;
    for (const auto& k : split_keys(text)) {
        try {
            std::size_t pos = 0;
            const auto v = std::stoull(k, &pos);
            if (pos != k.size() || v == 0) throw std::invalid_argument(k);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("invalid grid value '" + k + "'");
        }
    }
    if (out.empty()) throw UsageError("empty grid");
    return out;
}

// Maps external keys to indices, keeping the most recent max_len items.
std::vector<sriem::data::ItemIndex> map_session(const sriem::data::Vocabulary& vocab,
                                                const std::vector<std::string>& keys, std::size_t max_len) {
    std::vector<std::string> unknown;
    std::vector<sriem::data::ItemIndex> items;
    for (const auto& k : keys) {
        if (auto idx = vocab.find(k)) {
            items.push_back(*idx);
        } else {
            unknown.push_back(k);
        }
    }
    if (!unknown.empty()) {
        std::string msg = "unknown item key(s):";
        for (const auto& k : unknown) msg += " " + k;
        throw UsageError(msg);
    }
    if (items.empty()) throw UsageError("empty session");
    if (items.size() > max_len) items.erase(items.begin(), items.end() - static_cast<std::ptrdiff_t>(max_len));
    return items;
}

int cmd_prepare(const sriem::RunConfig& cfg) {
    require_file(cfg.data, "data");
    auto loaded = sriem::data::load_clicks(cfg.data, cfg.format);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    const auto corpus = sriem::data::preprocess(loaded.events, cfg.preprocess);
    const auto dir = make_run_dir(cfg, "prepare");
    sriem::data::save_corpus(corpus, dir / "corpus.json");
    json report{{"config", config_json(cfg)}, {"stats", stats_json(corpus.stats)},
                {"malformed_lines", loaded.malformed_lines}};
    write_text(dir / "stats.json", report.dump(2) + "\n");
    print_stats(corpus.stats);
    std::cout << "corpus cache: " << (dir / "corpus.json").string() << '\n';
    return 0;
}

int cmd_train(const sriem::RunConfig& cfg) {
    const auto corpus = load_or_prepare(cfg);
    const auto dir = make_run_dir(cfg, "train");
    std::ofstream timing(dir / "timing.csv");
    timing << "epoch,wall_seconds\n";
    auto result = sriem::train::train(corpus, cfg.model, cfg.train, [&](const sriem::train::EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << "  loss " << e.mean_loss << "  valid R@" << cfg.train.eval_cutoff << " "
                  << e.valid_recall << "  MRR@" << cfg.train.eval_cutoff << " " << e.valid_mrr << "  lr "
                  << e.learning_rate << "  " << e.wall_seconds << "s\n";
        timing << e.epoch << ',' << e.wall_seconds << '\n';
    });
    sriem::train::save_checkpoint(result.best, corpus.vocab, dir / "checkpoint.bin");
    write_text(dir / "train_report.csv", sriem::train::report_to_csv(result.report));
    json report = json::parse(sriem::train::report_to_json(result.report));
    report["config"] = config_json(cfg);
    if (!corpus.test.empty()) {
        const sriem::eval::EvalOptions opts{cfg.train.eval_cutoff, cfg.train.max_len, 256, cfg.threads};
        const auto test_report = sriem::eval::evaluate(result.best, corpus.test, opts);
        report["test"] = json::parse(sriem::eval::report_to_json(test_report));
    }
    write_text(dir / "train_report.json", report.dump(2) + "\n");
    std::cout << "checkpoint: " << (dir / "checkpoint.bin").string() << '\n';
    if (result.report.aborted) {
        std::cerr << "error: " << result.report.stop_reason << " (best checkpoint so far was kept)\n";
        return kExitRuntime;
    }
    return 0;
}

int cmd_eval(const sriem::RunConfig& cfg) {
    require_file(cfg.checkpoint, "checkpoint");
    const auto corpus = load_or_prepare(cfg);
    const auto ck = sriem::train::load_checkpoint(cfg.checkpoint, corpus.vocab);
    const sriem::eval::EvalOptions opts{cfg.train.eval_cutoff, cfg.train.max_len, 256, cfg.threads};
    const auto report = sriem::eval::evaluate(ck.params, corpus.test, opts);
    const auto dir = make_run_dir(cfg, "eval");
    json j = json::parse(sriem::eval::report_to_json(report));
    j["config"] = config_json(cfg);
    write_text(dir / "eval_report.json", j.dump(2) + "\n");
    write_text(dir / "eval_report.csv", sriem::eval::report_to_csv(report));
    std::cout << "Recall@" << report.cutoff << " " << report.recall << "  MRR@" << report.cutoff << " " << report.mrr
              << "  (" << report.example_count << " examples)\n"
              << "report: " << (dir / "eval_report.json").string() << '\n';
    return 0;
}

int cmd_predict(const sriem::RunConfig& cfg, const std::string& session_text, std::size_t k) {
    require_file(cfg.checkpoint, "checkpoint");
    const auto ck = sriem::train::load_checkpoint(cfg.checkpoint);
    const auto items = map_session(ck.vocab, split_keys(session_text), cfg.train.max_len);
    const std::size_t n = ck.params.config.n;
    if (k > n) {
        std::cerr << "warning: k=" << k << " exceeds the " << n << " known items; returning " << n << '\n';
        k = n;
    }
    sriem::nd::Tape tape(sriem::nd::Tape::Mode::inference);
    const auto enc = sriem::model::encode_session(tape, ck.params, items);
    const auto cand = sriem::model::score_candidates(tape, enc.fusion.z_h, ck.params.embeddings);
    const auto& scores = cand.scores.value().data;
    const auto& probs = cand.probs.value().data;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
    json out;
    json session = json::array();
    for (auto it : items) session.push_back(ck.vocab.key(it));
    out["session"] = session;
    out["k"] = k;
    json recs = json::array();
    for (std::size_t r = 0; r < k; ++r) {
        const auto col = order[r];
        recs.push_back({{"rank", r + 1},
                        {"item", ck.vocab.key(static_cast<sriem::data::ItemIndex>(col + 1))},
                        {"probability", probs[col]},
                        {"score", scores[col]}});
    }
    out["recommendations"] = recs;
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_inspect(const sriem::RunConfig& cfg, const std::vector<std::string>& sessions, std::size_t limit) {
    require_file(cfg.checkpoint, "checkpoint");
    const auto ck = sriem::train::load_checkpoint(cfg.checkpoint);
    std::vector<std::vector<sriem::data::ItemIndex>> inputs;
    for (const auto& s : sessions) inputs.push_back(map_session(ck.vocab, split_keys(s), cfg.train.max_len));
    if (inputs.empty()) {
        if (cfg.data.empty()) throw UsageError("inspect needs --session or --data");
        const auto corpus = load_or_prepare(cfg);
        const auto ck2 = sriem::train::load_checkpoint(cfg.checkpoint, corpus.vocab);
        for (const auto& s : corpus.test) {
            if (inputs.size() >= limit) break;
            auto items = s;
            if (items.size() > cfg.train.max_len)
                items.erase(items.begin(), items.end() - static_cast<std::ptrdiff_t>(cfg.train.max_len));
            inputs.push_back(std::move(items));
        }
    }
    json out = json::array();
    for (const auto& items : inputs) {
        sriem::nd::Tape tape(sriem::nd::Tape::Mode::inference);
        const auto enc = sriem::model::encode_session(tape, ck.params, items);
        json entry;
        json keys = json::array();
        for (auto it : items) keys.push_back(ck.vocab.key(it));
        entry["session"] = keys;
        entry["variant"] = sriem::model::to_string(ck.params.config.variant);
        entry["weights"] = enc.attention.weights.value().data;
        if (enc.attention.raw_scores.defined()) entry["raw_scores"] = enc.attention.raw_scores.value().data;
        out.push_back(entry);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_bench(const sriem::RunConfig& cfg, const std::string& t_grid_text, const std::string& d_grid_text,
              std::size_t t_fixed, std::size_t reps, double l_ratio, bool all_variants) {
    const auto t_grid = parse_grid(t_grid_text);
    std::vector<sriem::model::Variant> variants{cfg.model.variant};
    if (all_variants) variants = {sriem::model::Variant::iem, sriem::model::Variant::sat, sriem::model::Variant::stamp};
    std::vector<sriem::bench::BenchRecord> records;
    json summary = json::array();
    for (auto v : variants) {
        auto mc = cfg.model;
        mc.variant = v;
        const auto by_t = sriem::bench::bench_forward(mc, t_grid, reps, cfg.train.seed);
        records.insert(records.end(), by_t.records.begin(), by_t.records.end());
        json entry{{"variant", sriem::model::to_string(v)}, {"sweep", "t"}, {"slope", by_t.slope}};
        summary.push_back(entry);
        std::cout << sriem::model::to_string(v) << ": time ~ t^" << by_t.slope << '\n';
        if (!d_grid_text.empty()) {
            const auto d_grid = parse_grid(d_grid_text);
            const auto by_d = sriem::bench::bench_forward_dims(mc, t_fixed, d_grid, reps, cfg.train.seed, l_ratio);
            records.insert(records.end(), by_d.records.begin(), by_d.records.end());
            summary.push_back({{"variant", sriem::model::to_string(v)}, {"sweep", "d"}, {"t", t_fixed}, {"slope", by_d.slope}});
            std::cout << sriem::model::to_string(v) << ": time ~ d^" << by_d.slope << " at t=" << t_fixed << '\n';
        }
    }
    const auto dir = make_run_dir(cfg, "bench");
    write_text(dir / "bench.csv", sriem::bench::to_csv(records));
    write_text(dir / "bench.json", json{{"config", config_json(cfg)}, {"fits", summary}}.dump(2) + "\n");
    std::cout << "bench csv: " << (dir / "bench.csv").string() << '\n';
    return 0;
}

int exit_code_for(const sriem::Error& e) {
    const auto& k = e.kind();
    if (k == "usage" || k == "io" || k == "format" || k == "config" || k == "checkpoint") return kExitUsage;
    return kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Session-based next-item recommendation with importance extraction"};
    app.require_subcommand(1);

    CommonOptions prepare_opts, train_opts, eval_opts, predict_opts, inspect_opts, bench_opts;
    auto* prepare = app.add_subcommand("prepare", "load and preprocess a click log into a corpus cache");
    add_common(*prepare, prepare_opts);
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint and reports");
    add_common(*train, train_opts);
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test sessions of a corpus");
    add_common(*eval, eval_opts);

    auto* predict = app.add_subcommand("predict", "top-k next items for one session");
    add_common(*predict, predict_opts);
    std::string predict_session;
    std::size_t k = 20;
    predict->add_option("--session", predict_session, "item keys, space or comma separated")->required();
    predict->add_option("--k", k, "number of recommendations")->check(CLI::PositiveNumber);

    auto* inspect = app.add_subcommand("inspect", "per-item importance weights as JSON");
    add_common(*inspect, inspect_opts);
    std::vector<std::string> inspect_sessions;
    std::size_t limit = 10;
    inspect->add_option("--session", inspect_sessions, "item keys of a session (repeatable)");
    inspect->add_option("--limit", limit, "test sessions to inspect when reading --data");

    auto* bench = app.add_subcommand("bench", "time the session encoder across session lengths");
    add_common(*bench, bench_opts);
    std::string t_grid = "8,16,32,64,128";
    std::string d_grid;
    std::size_t t_fixed = 16;
    std::size_t reps = 30;
    double l_ratio = 0.0;
    bool all_variants = false;
    bench->add_option("--t-grid", t_grid, "comma-separated session lengths");
    bench->add_option("--d-grid", d_grid, "comma-separated embedding sizes for a d sweep at --t");
    bench->add_option("--t", t_fixed, "session length for the d sweep");
    bench->add_option("--l-ratio", l_ratio, "tie l to d in the d sweep (l = ratio * d); 0 keeps --l")
        ->check(CLI::NonNegativeNumber);
    bench->add_option("--reps", reps, "timed repetitions per point (at least 30)");
    bench->add_flag("--all-variants", all_variants, "bench iem, sat and stamp");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*prepare) return cmd_prepare(resolve(prepare_opts));
        if (*train) return cmd_train(resolve(train_opts));
        if (*eval) return cmd_eval(resolve(eval_opts));
        if (*predict) return cmd_predict(resolve(predict_opts), predict_session, k);
        if (*inspect) return cmd_inspect(resolve(inspect_opts), inspect_sessions, limit);
        if (*bench) return cmd_bench(resolve(bench_opts), t_grid, d_grid, t_fixed, reps, l_ratio, all_variants);
    } catch (const sriem::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
