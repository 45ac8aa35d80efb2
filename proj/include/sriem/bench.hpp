#pragma once

// Forward-pass timing of the session encoder and log-log scaling fits.
//
// The timed region is embedding lookup → attention variant → fusion for one
// session; candidate scoring is excluded because its O(n·d) cost does not
// depend on the session length.

#include "sriem/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sriem::bench {

inline constexpr std::size_t kMinReps = 30;

struct BenchRecord {
    std::string variant;
    std::size_t t = 0;
    std::size_t d = 0;
    std::size_t l = 0;
    std::size_t reps = 0;
    double median_ns = 0.0;
    double iqr_ns = 0.0;
};

struct BenchResult {
    std::vector<BenchRecord> records;
    double slope = 0.0; // least-squares slope of log(median) against log(swept value)
};

// Sweeps session length t at the config's d and l.
BenchResult bench_forward(const model::ModelConfig& config, std::span<const std::size_t> t_grid, std::size_t reps,
                          std::uint64_t seed = 0);

// Sweeps d at fixed t. With l_ratio > 0 the attention width follows d as
// l = round(l_ratio·d); otherwise the config's l is kept.
BenchResult bench_forward_dims(const model::ModelConfig& config, std::size_t t, std::span<const std::size_t> d_grid,
                               std::size_t reps, std::uint64_t seed = 0, double l_ratio = 0.0);

// Times a single (variant, t, d, l) point.
BenchRecord time_point(const model::ModelConfig& config, std::size_t t, std::size_t reps, std::uint64_t seed);

// Least-squares slope of log(y) on log(x).
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

// variant,t,d,l,reps,median_ns,iqr_ns
std::string to_csv(std::span<const BenchRecord> records);

} // namespace sriem::bench
