#pragma once

// Click-log ingestion, session preprocessing, prefix splitting and batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sriem::data {

using ItemIndex = std::int32_t; // 0 is the padding index; real items are 1..n
inline constexpr ItemIndex kPadIndex = 0;

struct ClickEvent {
    std::string session_key;
    double timestamp = 0.0; // seconds since epoch
    std::string item_key;
};

enum class ClickFormat { yoochoose_csv, diginetica_csv, simple_sessions };

ClickFormat parse_click_format(const std::string& name);
std::string to_string(ClickFormat format);

struct LoadResult {
    std::vector<ClickEvent> events;
    std::size_t malformed_lines = 0;
    std::vector<std::string> warnings;
};

// Malformed lines are skipped and counted; more than 1% of data lines being
// malformed is a FormatError quoting a few of them. An unreadable file is an
// IoError.
//
// simple-sessions: one session per line, "<session-key> <item-key>...". Line k
// (0-based, counting non-blank lines) starts at k·3600 s and its clicks are 1 s
// apart.
LoadResult load_clicks(const std::filesystem::path& path, ClickFormat format);

// Seconds since epoch for "YYYY-MM-DDThh:mm:ss[.fff][Z]" or "YYYY-MM-DD".
std::optional<double> parse_iso8601(const std::string& text);

using Session = std::vector<ItemIndex>;

class Vocabulary {
public:
    // Returns the internal index, assigning the next free one for unseen keys.
    ItemIndex add(const std::string& key);
    std::optional<ItemIndex> find(const std::string& key) const;
    const std::string& key(ItemIndex index) const;
    std::size_t size() const noexcept { return keys_.size(); }
    const std::vector<std::string>& keys() const noexcept { return keys_; }
    // FNV-1a over the keys in index order; identifies a vocabulary in checkpoints.
    std::uint64_t hash() const;

    static Vocabulary from_keys(const std::vector<std::string>& keys);

private:
    std::vector<std::string> keys_; // keys_[i] is item i + 1
    std::unordered_map<std::string, ItemIndex> index_;
};

struct CorpusStats {
    std::size_t clicks = 0;
    std::size_t train_sessions = 0;
    std::size_t test_sessions = 0;
    std::size_t train_pairs = 0;
    std::size_t test_pairs = 0;
    std::size_t items = 0;
    double average_length = 0.0; // over train and test sessions

    bool operator==(const CorpusStats&) const = default;
};

struct SessionCorpus {
    Vocabulary vocab;
    std::vector<Session> train; // chronological by session start
    std::vector<Session> test;
    CorpusStats stats;
};

CorpusStats compute_stats(const std::vector<Session>& train, const std::vector<Session>& test, std::size_t items);

struct PreprocessConfig {
    std::size_t min_item_support = 5;
    double test_days = 1.0; // trailing window held out as test (fractional days allowed)
};

// Groups events into time-ordered sessions, drops length-1 sessions and items
// seen fewer than min_item_support times until nothing changes, holds out the
// sessions ending inside the final test window, and removes test items absent
// from training. Throws PreprocessError with per-stage counts when nothing
// survives.
SessionCorpus preprocess(const std::vector<ClickEvent>& events, const PreprocessConfig& config);

// Builds a corpus from already-split sessions of external keys (used by the
// synthetic generators and tests); applies the same filters as preprocess.
SessionCorpus corpus_from_sessions(const std::vector<std::vector<std::string>>& train,
                                   const std::vector<std::vector<std::string>>& test,
                                   std::size_t min_item_support);

struct Example {
    Session prefix; // full prefix, before any truncation
    ItemIndex target = kPadIndex;
};

// [x1..xt] → ([x1],x2), ([x1,x2],x3), …, ([x1..x(t−1)],xt).
std::vector<Example> prefix_split(const std::vector<Session>& sessions);

struct Batch {
    std::size_t size = 0;    // rows B
    std::size_t max_len = 0; // L_max
    std::vector<ItemIndex> items;   // B×L_max, left-aligned, 0 = pad
    std::vector<std::uint8_t> mask; // B×L_max, 1 iff items != 0
    std::vector<std::size_t> lengths;          // valid entries per row, 1..L_max
    std::vector<std::size_t> original_lengths; // prefix length before truncation
    std::vector<ItemIndex> targets;

    std::span<const ItemIndex> row(std::size_t i) const {
        return {items.data() + i * max_len, lengths[i]};
    }
};

// Truncates each prefix to its most recent max_len items, pads on the right,
// and cuts batches in order after a seed-deterministic shuffle (no shuffle
// when shuffle_seed is empty). The last partial batch is kept.
std::vector<Batch> batchify(const std::vector<Example>& examples, std::size_t batch_size, std::size_t max_len,
                            std::optional<std::uint64_t> shuffle_seed);

// Corpus cache: {version, vocab, train, test, stats}.
void save_corpus(const SessionCorpus& corpus, const std::filesystem::path& path);
SessionCorpus load_corpus(const std::filesystem::path& path);

} // namespace sriem::data
