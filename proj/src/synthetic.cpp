#include "sriem/synthetic.hpp"

#include "sriem/error.hpp"
#include "sriem/random.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace sriem::data {

TransitionCorpus make_transition_corpus(const TransitionCorpusConfig& config) {
    if (config.items < 2) throw ConfigError("transition corpus needs at least two items");
    if (config.min_length < 2 || config.max_length < config.min_length) {
        throw ConfigError("transition corpus lengths must satisfy 2 <= min_length <= max_length");
    }
    if (config.alternatives == 0 || config.alternatives >= config.items) {
        throw ConfigError("alternatives must be in [1, items)");
    }
    Rng rng(config.seed);
    const std::size_t n = config.items;

    // successor: a random cyclic permutation, so no item maps to itself.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::size_t> successor(n);
    for (std::size_t k = 0; k < n; ++k) successor[order[k]] = order[(k + 1) % n];

    std::vector<std::vector<std::size_t>> neighbours(n);
    for (std::size_t k = 0; k < n; ++k) {
        while (neighbours[k].size() < config.alternatives) {
            const auto c = static_cast<std::size_t>(rng.below(n));
            if (c == k || c == successor[k]) continue;
            if (std::find(neighbours[k].begin(), neighbours[k].end(), c) != neighbours[k].end()) continue;
            neighbours[k].push_back(c);
        }
    }

    auto key = [](std::size_t k) { return "i" + std::to_string(k); };
    std::vector<std::vector<std::string>> sessions;
    sessions.reserve(config.sessions);
    for (std::size_t s = 0; s < config.sessions; ++s) {
        const std::size_t len =
            config.min_length + static_cast<std::size_t>(rng.below(config.max_length - config.min_length + 1));
        std::vector<std::string> items;
        std::size_t current = static_cast<std::size_t>(rng.below(n));
        items.push_back(key(current));
        for (std::size_t j = 1; j < len; ++j) {
            if (config.noise_rate > 0.0 && rng.bernoulli(config.noise_rate)) {
                items.push_back(key(static_cast<std::size_t>(rng.below(n))));
            }
            current = rng.bernoulli(config.follow_prob) ? successor[current]
                                                        : neighbours[current][rng.below(config.alternatives)];
            items.push_back(key(current));
        }
        sessions.push_back(std::move(items));
    }

    const auto n_test = static_cast<std::size_t>(static_cast<double>(sessions.size()) * config.test_fraction);
    std::vector<std::vector<std::string>> train(sessions.begin(), sessions.end() - static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::vector<std::string>> test(sessions.end() - static_cast<std::ptrdiff_t>(n_test), sessions.end());
    return {corpus_from_sessions(train, test, 1), std::move(successor)};
}

} // namespace sriem::data
