#include "sriem/config.hpp"

#include "sriem/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>

namespace sriem {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) throw ConfigError("invalid value '" + text + "' for " + key);
    return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    return parse_value<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
    return parse_value<double>(key, text);
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        t.push_back({"format",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.format = data::parse_click_format(v); },
                      [](const RunConfig& c) { return data::to_string(c.format); }}});
        t.push_back({"min-item-support",
                     {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.preprocess.min_item_support = parse_count(k, v);
                      },
                      [](const RunConfig& c) { return std::to_string(c.preprocess.min_item_support); }}});
        t.push_back({"test-days",
                     {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.preprocess.test_days = parse_real(k, v);
                      },
                      [](const RunConfig& c) { return format_real(c.preprocess.test_days); }}});
        t.push_back({"max-len",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.max_len = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.max_len); }}});
        t.push_back({"d",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.d = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.model.d); }}});
        t.push_back({"l",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.l = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.model.l); }}});
        t.push_back({"variant",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = model::parse_variant(v); },
                      [](const RunConfig& c) { return model::to_string(c.model.variant); }}});
        t.push_back({"loss",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.model.loss = model::parse_loss_mode(v); },
                      [](const RunConfig& c) { return model::to_string(c.model.loss); }}});
        t.push_back({"scale-by",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.model.scale = model::parse_scale(v); },
                      [](const RunConfig& c) { return model::to_string(c.model.scale); }}});
        t.push_back({"lr",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr0 = parse_real(k, v); },
                      [](const RunConfig& c) { return format_real(c.train.lr0); }}});
        t.push_back({"decay-factor",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.decay_factor = parse_real(k, v); },
                      [](const RunConfig& c) { return format_real(c.train.decay_factor); }}});
        t.push_back({"decay-every",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.decay_every = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.decay_every); }}});
        t.push_back({"batch",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.batch_size); }}});
        t.push_back({"l2",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.l2 = parse_real(k, v); },
                      [](const RunConfig& c) { return format_real(c.train.l2); }}});
        t.push_back({"epochs",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.epochs); }}});
        t.push_back({"patience",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.patience = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.patience); }}});
        t.push_back({"seed",
                     {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.train.seed = parse_value<std::uint64_t>(k, v);
                      },
                      [](const RunConfig& c) { return std::to_string(c.train.seed); }}});
        t.push_back({"n",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.eval_cutoff = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.train.eval_cutoff); }}});
        t.push_back({"threads",
                     {[](RunConfig& c, const std::string& k, const std::string& v) { c.threads = parse_count(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.threads); }}});
        t.push_back({"data",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.data = v; },
                      [](const RunConfig& c) { return c.data; }}});
        t.push_back({"out",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
                      [](const RunConfig& c) { return c.out; }}});
        t.push_back({"checkpoint",
                     {[](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; },
                      [](const RunConfig& c) { return c.checkpoint; }}});
        return t;
    }();
    return table;
}

} // namespace

const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : fields()) k.push_back(name);
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& [name, f] : fields()) {
        if (name == key) {
            f.set(config, key, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        }
        try {
            apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

std::vector<std::pair<std::string, std::string>> to_settings(const RunConfig& config) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(config));
    return out;
}

std::string to_text(const RunConfig& config) {
    std::string out;
    for (const auto& [k, v] : to_settings(config)) out += k + " = " + v + "\n";
    return out;
}

} // namespace sriem
