#pragma once

// Synthetic session corpora with a known first-order transition structure.

#include "sriem/dataset.hpp"

#include <cstdint>
#include <vector>

namespace sriem::data {

struct TransitionCorpusConfig {
    std::size_t sessions = 2000;
    std::size_t items = 50;
    std::size_t min_length = 3;
    std::size_t max_length = 12;
    // Probability that the next clean item is successor(current); otherwise it
    // is drawn uniformly from the current item's `alternatives` fixed
    // neighbours.
    double follow_prob = 0.9;
    std::size_t alternatives = 4;
    // Expected injected noise clicks per clean click; noise items are uniform
    // over the catalogue and do not advance the transition chain.
    double noise_rate = 0.0;
    double test_fraction = 0.2; // trailing sessions held out as test
    std::uint64_t seed = 0;
};

struct TransitionCorpus {
    SessionCorpus corpus;
    // successor[k] is the external key of f(item k); keys are "i0".."i{items-1}".
    std::vector<std::size_t> successor;
};

TransitionCorpus make_transition_corpus(const TransitionCorpusConfig& config);

} // namespace sriem::data
