#include "sriem/bench.hpp"

#include "sriem/error.hpp"
#include "sriem/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace sriem::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Each repetition runs the forward pass enough times to last about this long,
// so short sessions are not dominated by clock resolution.
constexpr double kTargetRepNs = 200'000.0;

double quantile(std::vector<double> sorted, double q) {
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

volatile double g_sink = 0.0;

double run_once(const model::ModelParams& params, std::span<const data::ItemIndex> items) {
    nd::Tape tape(nd::Tape::Mode::inference);
    const auto enc = model::encode_session(tape, params, items);
    return enc.fusion.z_h.value().data[0];
}

} // namespace

namespace {

struct Point {
    model::ModelParams params;
    std::vector<data::ItemIndex> items;
    std::size_t inner = 1;
    std::vector<double> samples;
};

Point make_point(const model::ModelConfig& config, std::size_t t, std::uint64_t seed) {
    if (t == 0) throw ContractError("session length must be positive");
    auto cfg = config;
    cfg.n = std::max<std::size_t>(cfg.n, t);
    Point p{model::ModelParams::init(cfg, seed), std::vector<data::ItemIndex>(t), 1, {}};
    Rng rng(seed ^ 0x5eed);
    for (auto& it : p.items) it = static_cast<data::ItemIndex>(1 + rng.below(cfg.n));

    // Warm up and calibrate the inner loop count.
    const auto start = Clock::now();
    std::size_t calib = 0;
    double elapsed = 0.0;
    do {
        g_sink = g_sink + run_once(p.params, p.items);
        ++calib;
        elapsed = std::chrono::duration<double, std::nano>(Clock::now() - start).count();
    } while (elapsed < kTargetRepNs && calib < 100000);
    p.inner = std::max<std::size_t>(1, static_cast<std::size_t>(kTargetRepNs / (elapsed / static_cast<double>(calib))));
    return p;
}

// Repetitions are interleaved across points so that slow drift of the host
// affects every point alike instead of biasing the fitted slope.
std::vector<BenchRecord> measure(std::vector<Point>& points, std::size_t reps) {
    if (reps < kMinReps) throw ContractError("benchmarks need at least " + std::to_string(kMinReps) + " repetitions");
    for (std::size_t r = 0; r < reps; ++r) {
        for (auto& p : points) {
            const auto start = Clock::now();
            for (std::size_t k = 0; k < p.inner; ++k) g_sink = g_sink + run_once(p.params, p.items);
            p.samples.push_back(std::chrono::duration<double, std::nano>(Clock::now() - start).count() /
                                static_cast<double>(p.inner));
        }
    }
    std::vector<BenchRecord> out;
    for (const auto& p : points) {
        BenchRecord rec;
        rec.variant = model::to_string(p.params.config.variant);
        rec.t = p.items.size();
        rec.d = p.params.config.d;
        rec.l = p.params.config.l;
        rec.reps = reps;
        rec.median_ns = quantile(p.samples, 0.5);
        rec.iqr_ns = quantile(p.samples, 0.75) - quantile(p.samples, 0.25);
        out.push_back(rec);
    }
    return out;
}

} // namespace

BenchRecord time_point(const model::ModelConfig& config, std::size_t t, std::size_t reps, std::uint64_t seed) {
    if (reps < kMinReps) throw ContractError("benchmarks need at least " + std::to_string(kMinReps) + " repetitions");
    std::vector<Point> points;
    points.push_back(make_point(config, t, seed));
    return measure(points, reps).front();
}

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("slope fit needs at least two paired points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0 && y[i] > 0.0)) throw ContractError("log-log fit needs positive values");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxx == 0.0 ? 0.0 : sxy / sxx;
}

BenchResult bench_forward(const model::ModelConfig& config, std::span<const std::size_t> t_grid, std::size_t reps,
                          std::uint64_t seed) {
    if (reps < kMinReps) throw ContractError("benchmarks need at least " + std::to_string(kMinReps) + " repetitions");
    std::vector<Point> points;
    for (auto t : t_grid) points.push_back(make_point(config, t, seed));
    BenchResult result;
    result.records = measure(points, reps);
    std::vector<double> xs, ys;
    for (const auto& r : result.records) {
        xs.push_back(static_cast<double>(r.t));
        ys.push_back(r.median_ns);
    }
    result.slope = fit_loglog_slope(xs, ys);
    return result;
}

BenchResult bench_forward_dims(const model::ModelConfig& config, std::size_t t, std::span<const std::size_t> d_grid,
                               std::size_t reps, std::uint64_t seed, double l_ratio) {
    if (reps < kMinReps) throw ContractError("benchmarks need at least " + std::to_string(kMinReps) + " repetitions");
    std::vector<Point> points;
    for (auto d : d_grid) {
        auto cfg = config;
        cfg.d = d;
        if (l_ratio > 0.0) cfg.l = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(l_ratio * static_cast<double>(d))));
        points.push_back(make_point(cfg, t, seed));
    }
    BenchResult result;
    result.records = measure(points, reps);
    std::vector<double> xs, ys;
    for (const auto& r : result.records) {
        xs.push_back(static_cast<double>(r.d));
        ys.push_back(r.median_ns);
    }
    result.slope = fit_loglog_slope(xs, ys);
    return result;
}

std::string to_csv(std::span<const BenchRecord> records) {
    std::ostringstream out;
    out << "variant,t,d,l,reps,median_ns,iqr_ns\n";
    out.precision(10);
    for (const auto& r : records) {
        out << r.variant << ',' << r.t << ',' << r.d << ',' << r.l << ',' << r.reps << ',' << r.median_ns << ','
            << r.iqr_ns << '\n';
    }
    return out.str();
}

} // namespace sriem::bench
