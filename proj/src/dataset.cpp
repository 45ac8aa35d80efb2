#include "sriem/dataset.hpp"

#include "sriem/error.hpp"
#include "sriem/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace sriem::data {

namespace {

constexpr int kCorpusVersion = 1;
constexpr double kSecondsPerDay = 86400.0;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(s);
    while (std::getline(in, field, sep)) out.push_back(trim(field));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

} // namespace

ClickFormat parse_click_format(const std::string& name) {
    if (name == "yoochoose-csv") return ClickFormat::yoochoose_csv;
    if (name == "diginetica-csv") return ClickFormat::diginetica_csv;
    if (name == "simple-sessions") return ClickFormat::simple_sessions;
    throw ConfigError("unknown dataset format '" + name + "' (expected yoochoose-csv, diginetica-csv or simple-sessions)");
}

std::string to_string(ClickFormat format) {
    switch (format) {
    case ClickFormat::yoochoose_csv: return "yoochoose-csv";
    case ClickFormat::diginetica_csv: return "diginetica-csv";
    case ClickFormat::simple_sessions: return "simple-sessions";
    }
    return "unknown";
}

std::optional<double> parse_iso8601(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    int consumed = 0;
    const std::string s = trim(text);
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3 || consumed != 10) return std::nullopt;
    if (s.size() > 10) {
        if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
        int tail = 0;
        if (std::sscanf(s.c_str() + 11, "%2d:%2d:%lf%n", &h, &mi, &sec, &tail) != 3) return std::nullopt;
        const std::string rest = s.substr(11 + static_cast<std::size_t>(tail));
        if (!rest.empty() && rest != "Z") return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec < 0.0 || sec >= 61.0) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    return static_cast<double>(days) * kSecondsPerDay + h * 3600.0 + mi * 60.0 + sec;
}

LoadResult load_clicks(const std::filesystem::path& path, ClickFormat format) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());

    LoadResult result;
    std::vector<std::string> samples;
    std::size_t data_lines = 0;
    std::size_t line_no = 0;
    std::size_t session_line = 0;
    std::string line;
    bool header_pending = format == ClickFormat::diginetica_csv;

    auto reject = [&](const std::string& raw) {
        ++result.malformed_lines;
        if (samples.size() < 5) samples.push_back("line " + std::to_string(line_no) + ": " + raw);
    };

    while (std::getline(in, line)) {
        ++line_no;
        const std::string raw = trim(line);
        if (raw.empty()) continue;
        if (header_pending) {
            header_pending = false;
            if (raw.rfind("sessionId", 0) == 0) continue;
        }
        ++data_lines;
        switch (format) {
        case ClickFormat::yoochoose_csv: {
            const auto f = split(raw, ',');
            if (f.size() < 3 || f.size() > 4 || f[0].empty() || f[2].empty()) {
                reject(raw);
                break;
            }
            const auto ts = parse_iso8601(f[1]);
            if (!ts || *ts < 0.0) {
                reject(raw);
                break;
            }
            result.events.push_back({f[0], *ts, f[2]});
            break;
        }
        case ClickFormat::diginetica_csv: {
            // sessionId;userId;itemId;timeframe;eventdate
            const auto f = split(raw, ';');
            double timeframe = 0.0;
            if (f.size() != 5 || f[0].empty() || f[2].empty() || !parse_number(f[3], timeframe)) {
                reject(raw);
                break;
            }
            const auto date = parse_iso8601(f[4]);
            if (!date || *date < 0.0 || timeframe < 0.0) {
                reject(raw);
                break;
            }
            result.events.push_back({f[0], *date + timeframe / 1000.0, f[2]});
            break;
        }
        case ClickFormat::simple_sessions: {
            std::istringstream tokens(raw);
            std::string key;
            tokens >> key;
            std::vector<std::string> items;
            for (std::string item; tokens >> item;) items.push_back(item);
            if (items.empty()) {
                reject(raw);
                break;
            }
            const double start = static_cast<double>(session_line++) * 3600.0;
            for (std::size_t j = 0; j < items.size(); ++j)
                result.events.push_back({key, start + static_cast<double>(j), items[j]});
            break;
        }
        }
    }
    if (in.bad()) throw IoError("read error on " + path.string());

    if (data_lines == 0) {
        result.warnings.push_back(path.string() + " contains no click events");
    } else if (result.malformed_lines * 100 > data_lines) {
        std::string msg = path.string() + ": " + std::to_string(result.malformed_lines) + " of " +
                          std::to_string(data_lines) + " lines are malformed for format " + to_string(format);
        for (const auto& s : samples) msg += "\n  " + s;
        throw FormatError(msg);
    } else if (result.malformed_lines > 0) {
        result.warnings.push_back("skipped " + std::to_string(result.malformed_lines) + " malformed lines");
    }
    return result;
}

ItemIndex Vocabulary::add(const std::string& key) {
    if (auto it = index_.find(key); it != index_.end()) return it->second;
    keys_.push_back(key);
    const auto idx = static_cast<ItemIndex>(keys_.size());
    index_.emplace(key, idx);
    return idx;
}

std::optional<ItemIndex> Vocabulary::find(const std::string& key) const {
    if (auto it = index_.find(key); it != index_.end()) return it->second;
    return std::nullopt;
}

const std::string& Vocabulary::key(ItemIndex index) const {
    if (index < 1 || static_cast<std::size_t>(index) > keys_.size()) {
        throw ContractError("item index " + std::to_string(index) + " outside vocabulary of " +
                            std::to_string(keys_.size()));
    }
    return keys_[static_cast<std::size_t>(index) - 1];
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (const auto& k : keys_) {
        for (unsigned char c : k) mix(c);
        mix(0xff); // separator
    }
    return h;
}

Vocabulary Vocabulary::from_keys(const std::vector<std::string>& keys) {
    Vocabulary v;
    for (const auto& k : keys) {
        if (v.find(k)) throw FormatError("duplicate vocabulary key '" + k + "'");
        v.add(k);
    }
    return v;
}

CorpusStats compute_stats(const std::vector<Session>& train, const std::vector<Session>& test, std::size_t items) {
    CorpusStats s;
    s.train_sessions = train.size();
    s.test_sessions = test.size();
    s.items = items;
    for (const auto* part : {&train, &test}) {
        for (const auto& sess : *part) {
            s.clicks += sess.size();
            (part == &train ? s.train_pairs : s.test_pairs) += sess.size() - 1;
        }
    }
    const std::size_t n = train.size() + test.size();
    s.average_length = n == 0 ? 0.0 : static_cast<double>(s.clicks) / static_cast<double>(n);
    return s;
}

namespace {

using KeySession = std::vector<std::string>;

struct Seq {
    KeySession items;
    double end = 0.0; // timestamp of the last click
};

std::vector<Seq> wrap(const std::vector<KeySession>& sessions) {
    std::vector<Seq> out;
    for (const auto& s : sessions) out.push_back({s, 0.0});
    return out;
}

struct FilterTrace {
    std::vector<std::string> stages;
    void note(const std::string& stage, const std::vector<Seq>& train, const std::vector<Seq>& test) {
        std::size_t clicks = 0;
        for (const auto& s : train) clicks += s.items.size();
        for (const auto& s : test) clicks += s.items.size();
        stages.push_back(stage + ": " + std::to_string(train.size() + test.size()) + " sessions, " +
                         std::to_string(clicks) + " clicks");
    }
    std::string str() const {
        std::string out;
        for (const auto& s : stages) out += "\n  " + s;
        return out;
    }
};

// Applies the support, length and (when `test` is non-empty) test-vocabulary
// filters jointly until a full pass changes nothing.
void filter_to_fixed_point(std::vector<Seq>& train, std::vector<Seq>& test, std::size_t min_support,
                           FilterTrace& trace) {
    for (int pass = 1;; ++pass) {
        bool changed = false;
        std::unordered_map<std::string, std::size_t> support;
        for (const auto* part : {&train, &test})
            for (const auto& s : *part)
                for (const auto& item : s.items) ++support[item];

        auto drop_items = [&](std::vector<Seq>& part, auto&& keep) {
            for (auto& s : part) {
                auto& v = s.items;
                const auto before = v.size();
                v.erase(std::remove_if(v.begin(), v.end(), [&](const std::string& k) { return !keep(k); }), v.end());
                changed = changed || v.size() != before;
            }
        };
        auto supported = [&](const std::string& k) { return support[k] >= min_support; };
        drop_items(train, supported);
        drop_items(test, supported);

        std::unordered_set<std::string> train_items;
        for (const auto& s : train) train_items.insert(s.items.begin(), s.items.end());
        drop_items(test, [&](const std::string& k) { return train_items.count(k) > 0; });

        for (auto* part : {&train, &test}) {
            const auto before = part->size();
            part->erase(std::remove_if(part->begin(), part->end(), [](const Seq& s) { return s.items.size() < 2; }),
                        part->end());
            changed = changed || part->size() != before;
        }
        trace.note("filter pass " + std::to_string(pass), train, test);
        if (!changed) return;
    }
}

SessionCorpus finish_corpus(const std::vector<Seq>& train, const std::vector<Seq>& test) {
    SessionCorpus corpus;
    for (const auto& s : train) {
        Session mapped;
        mapped.reserve(s.items.size());
        for (const auto& k : s.items) mapped.push_back(corpus.vocab.add(k));
        corpus.train.push_back(std::move(mapped));
    }
    for (const auto& s : test) {
        Session mapped;
        mapped.reserve(s.items.size());
        for (const auto& k : s.items) mapped.push_back(*corpus.vocab.find(k));
        corpus.test.push_back(std::move(mapped));
    }
    corpus.stats = compute_stats(corpus.train, corpus.test, corpus.vocab.size());
    return corpus;
}

} // namespace

SessionCorpus preprocess(const std::vector<ClickEvent>& events, const PreprocessConfig& config) {
    if (events.empty()) throw PreprocessError("no click events to preprocess");
    if (config.test_days < 0.0) throw ConfigError("test_days must be non-negative");

    struct Click {
        double ts;
        std::size_t seq;
        const std::string* item;
    };
    struct Grouped {
        std::string key;
        std::vector<Click> clicks;
    };
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<Grouped> groups;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.timestamp < 0.0) throw FormatError("negative timestamp in session " + e.session_key);
        auto [it, inserted] = slot.emplace(e.session_key, groups.size());
        if (inserted) groups.push_back({e.session_key, {}});
        groups[it->second].clicks.push_back({e.timestamp, i, &e.item_key});
    }

    struct Timed {
        double start;
        double end;
        std::string key;
        KeySession items;
    };
    std::vector<Timed> sessions;
    sessions.reserve(groups.size());
    for (auto& g : groups) {
        std::sort(g.clicks.begin(), g.clicks.end(),
                  [](const Click& a, const Click& b) { return a.ts != b.ts ? a.ts < b.ts : a.seq < b.seq; });
        Timed t{g.clicks.front().ts, g.clicks.back().ts, g.key, {}};
        for (const auto& c : g.clicks) t.items.push_back(*c.item);
        sessions.push_back(std::move(t));
    }
    std::sort(sessions.begin(), sessions.end(),
              [](const Timed& a, const Timed& b) { return a.start != b.start ? a.start < b.start : a.key < b.key; });

    FilterTrace trace;
    std::vector<Seq> all;
    all.reserve(sessions.size());
    for (auto& s : sessions) all.push_back({std::move(s.items), s.end});
    std::vector<Seq> none;
    trace.note("grouped", all, none);

    // Settle the pre-split filters first so the test window is anchored at the
    // last surviving click.
    filter_to_fixed_point(all, none, config.min_item_support, trace);
    if (all.empty()) throw PreprocessError("corpus is empty after filtering:" + trace.str());

    double max_end = 0.0;
    for (const auto& s : all) max_end = std::max(max_end, s.end);
    const double cutoff = max_end - config.test_days * kSecondsPerDay;
    std::vector<Seq> train;
    std::vector<Seq> test;
    for (auto& s : all) (s.end > cutoff ? test : train).push_back(std::move(s));
    trace.note("time split", train, test);

    filter_to_fixed_point(train, test, config.min_item_support, trace);
    if (train.empty()) throw PreprocessError("no training sessions survive preprocessing:" + trace.str());
    return finish_corpus(train, test);
}

SessionCorpus corpus_from_sessions(const std::vector<std::vector<std::string>>& train,
                                   const std::vector<std::vector<std::string>>& test, std::size_t min_item_support) {
    auto tr = wrap(train);
    auto te = wrap(test);
    FilterTrace trace;
    trace.note("input", tr, te);
    filter_to_fixed_point(tr, te, min_item_support, trace);
    if (tr.empty()) throw PreprocessError("no training sessions survive preprocessing:" + trace.str());
    return finish_corpus(tr, te);
}

std::vector<Example> prefix_split(const std::vector<Session>& sessions) {
    std::vector<Example> out;
    for (const auto& s : sessions) {
        for (std::size_t k = 1; k < s.size(); ++k) out.push_back({Session(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k)), s[k]});
    }
    return out;
}

std::vector<Batch> batchify(const std::vector<Example>& examples, std::size_t batch_size, std::size_t max_len,
                            std::optional<std::uint64_t> shuffle_seed) {
    if (batch_size == 0) throw ContractError("batch_size must be at least 1");
    if (max_len == 0) throw ContractError("max_len must be at least 1");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t b = std::min(batch_size, order.size() - start);
        Batch batch;
        batch.size = b;
        batch.max_len = max_len;
        batch.items.assign(b * max_len, kPadIndex);
        batch.mask.assign(b * max_len, 0);
        for (std::size_t r = 0; r < b; ++r) {
            const auto& ex = examples[order[start + r]];
            if (ex.prefix.empty()) throw ContractError("example with empty prefix");
            const std::size_t keep = std::min(ex.prefix.size(), max_len);
            const std::size_t skip = ex.prefix.size() - keep;
            for (std::size_t j = 0; j < keep; ++j) {
                const auto item = ex.prefix[skip + j];
                if (item == kPadIndex) throw ContractError("padding index inside a session prefix");
                batch.items[r * max_len + j] = item;
                batch.mask[r * max_len + j] = 1;
            }
            batch.lengths.push_back(keep);
            batch.original_lengths.push_back(ex.prefix.size());
            batch.targets.push_back(ex.target);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

void save_corpus(const SessionCorpus& corpus, const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kCorpusVersion;
    j["vocab"] = corpus.vocab.keys();
    j["train"] = corpus.train;
    j["test"] = corpus.test;
    const auto& s = corpus.stats;
    j["stats"] = {{"clicks", s.clicks},           {"train_sessions", s.train_sessions},
                  {"test_sessions", s.test_sessions}, {"train_pairs", s.train_pairs},
                  {"test_pairs", s.test_pairs},   {"items", s.items},
                  {"average_length", s.average_length}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

SessionCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": not a corpus cache (" + e.what() + ")");
    }
    try {
        if (j.at("version").get<int>() != kCorpusVersion) {
            throw FormatError(path.string() + ": unsupported corpus cache version " + j.at("version").dump());
        }
        SessionCorpus c;
        c.vocab = Vocabulary::from_keys(j.at("vocab").get<std::vector<std::string>>());
        c.train = j.at("train").get<std::vector<Session>>();
        c.test = j.at("test").get<std::vector<Session>>();
        const auto n = static_cast<ItemIndex>(c.vocab.size());
        for (const auto* part : {&c.train, &c.test}) {
            for (const auto& s : *part) {
                if (s.size() < 2) throw FormatError(path.string() + ": session shorter than 2 items");
                for (auto item : s)
                    if (item < 1 || item > n) throw FormatError(path.string() + ": item index out of range");
            }
        }
        c.stats = compute_stats(c.train, c.test, c.vocab.size());
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed corpus cache (" + e.what() + ")");
    }
}

} // namespace sriem::data
