#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qdlab/coefficients.hpp"
#include "qdlab/errors.hpp"
#include "qdlab/geometry.hpp"
#include "qdlab/rng.hpp"

namespace qdlab {

struct SimConfig {
    double dt = 1e-4;
    double max_time = 64.0;
    std::uint64_t seed = 1;
    bool bridge_correction = true;
    std::uint64_t n_paths = 1000;

    /// Throws InputDomainError unless 0 < dt <= max_time and n_paths >= 1.
    void validate() const;

    /// Defaults for a domain of length scale r: dt = 1e-4 min(1, r^2), max_time = 64 r^2.
    static SimConfig for_scale(double scale, std::uint64_t n_paths, std::uint64_t seed);
};

/// One simulated trajectory on the uniform grid (last step may be partial).
struct Path {
    SpaceTimePoint start;
    std::vector<double> times;
    std::vector<Vec> states;
    std::uint64_t stream_id = 0;
};

struct ExitRecord {
    double exit_time = 0.0;
    Vec exit_point;
    ExitFace face = ExitFace::lateral;
    bool corrected = false;  ///< exit triggered by the Brownian-bridge test
    bool censored = false;   ///< max_time reached inside the domain
    std::uint64_t steps = 0;
};

/// Euler-Maruyama stepper for dx = b(s+t, x) dt + sqrt(2a(s+t, x)) dw, with
/// Gaussian increments from the (seed, path_index) counter stream.
class EulerStepper {
public:
    EulerStepper(const CoefficientField& field, double s, const Vec& x, std::uint64_t seed,
                 std::uint64_t path_index);

    /// Advances by h; coefficients are frozen at the start of the step.
    void step(double h);

    double elapsed() const { return t_; }
    double absolute_time() const { return s_ + t_; }
    const Vec& state() const { return x_; }
    const Vec& previous_state() const { return x_prev_; }
    /// Diffusion matrix used by the most recent step.
    const Mat& frozen_a() const { return a_; }
    /// Drift used by the most recent step.
    const Vec& frozen_b() const { return b_; }
    std::uint64_t steps() const { return steps_; }
    void set_elapsed(double t) { t_ = t; }
    /// Uniform for the bridge test, indexed by (step, slot) in a separate lane.
    double bridge_uniform(int slot) const;

private:
    const CoefficientField& field_;
    double s_;
    double t_ = 0.0;
    Vec x_, x_prev_, b_, noise_;
    Mat a_, sigma_;
    RandomStream normals_;
    RandomStream bridge_;
    std::uint64_t steps_ = 0;
};

/// Simulates on [0, cfg.max_time] storing every grid state.
Path simulate_path(const CoefficientField& field, double s, const Vec& x, const SimConfig& cfg,
                   std::uint64_t path_index);

/// State at elapsed time `horizon` (no storage). Same stream as simulate_path.
Vec terminal_state(const CoefficientField& field, double s, const Vec& x, double horizon, const SimConfig& cfg,
                   std::uint64_t path_index);

/// Brownian-bridge crossing probability exp(-2 d1 d2 / (sigma_n^2 h)) for a
/// locally flat boundary; d1, d2 are distances to it at both step ends.
double bridge_crossing_probability(double d1, double d2, double normal_variance, double h);

namespace detail {

inline constexpr double kTimeSnap = 1e-12;

/// Core exit loop. `observer(absolute_time, x)` sees the start point and every
/// grid state that is still inside the domain; returning true stops the path
/// early (recorded as censored=false, exit_time = current elapsed time).
template <class Observer>
ExitRecord run_exit(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                    const SimConfig& cfg, std::uint64_t path_index, Observer&& observer) {
    ExitRecord rec;
    const auto terminal = domain.terminal_time();
    if (!domain.contains(s, x)) {
        rec.exit_time = 0.0;
        rec.exit_point = x;
        rec.face = (terminal && s >= *terminal - kTimeSnap) ? ExitFace::top : ExitFace::lateral;
        return rec;
    }
    if (observer(s, x)) {
        rec.exit_point = x;
        return rec;
    }

    double limit = cfg.max_time;
    bool limit_is_terminal = false;
    if (terminal && *terminal - s <= limit) {
        limit = *terminal - s;
        limit_is_terminal = true;
    }

    EulerStepper stepper(field, s, x, cfg.seed, path_index);
    Domain::PieceArray before{}, after{};
    int cached = -1;  // pieces at the current state, carried over from the previous step
    std::uint64_t k = 0;
    while (true) {
        double t_next = static_cast<double>(k + 1) * cfg.dt;
        bool final_step = false;
        if (t_next >= limit - kTimeSnap * std::max(1.0, limit)) {
            t_next = limit;
            final_step = true;
        }
        const double t_now = stepper.elapsed();
        int pieces = 0;
        if (cfg.bridge_correction) pieces = cached >= 0 ? cached : domain.boundary_pieces(stepper.state(), before);
        stepper.step(t_next - t_now);
        stepper.set_elapsed(t_next);
        ++k;
        const Vec& xn = stepper.state();
        const double t_abs_start = s + t_now;

        if (!domain.contains(t_abs_start, xn)) {
            int worst = 0;
            const int n_after = domain.boundary_pieces(xn, after);
            for (int i = 1; i < n_after; ++i)
                if (after[i].distance < after[worst].distance) worst = i;
            rec.exit_time = t_next;
            rec.exit_point = domain.project(xn, worst);
            rec.face = ExitFace::lateral;
            rec.steps = k;
            return rec;
        }
        if (pieces > 0) {
            cached = domain.boundary_pieces(xn, after);
            const double h = t_next - t_now;
            for (int i = 0; i < pieces; ++i) {
                const Vec& n = before[i].normal;
                const double normal_variance = 2.0 * n.dot(stepper.frozen_a() * n);
                const double p = bridge_crossing_probability(before[i].distance, after[i].distance, normal_variance, h);
                if (p > 0.0 && stepper.bridge_uniform(i) < p) {
                    rec.exit_time = t_next;
                    rec.exit_point = domain.project(xn, i);
                    rec.face = ExitFace::lateral;
                    rec.corrected = true;
                    rec.steps = k;
                    return rec;
                }
            }
        }
        if (cached >= 0) std::swap(before, after);
        if (final_step) {
            rec.exit_time = t_next;
            rec.exit_point = xn;
            rec.steps = k;
            if (limit_is_terminal) {
                rec.face = ExitFace::top;
            } else {
                rec.censored = true;
            }
            return rec;
        }
        if (observer(s + t_next, xn)) {
            rec.exit_time = t_next;
            rec.exit_point = xn;
            rec.steps = k;
            return rec;
        }
    }
}

}  // namespace detail

/// First exit of (s + t, x_t) from `domain`. Grid crossings are exact; with
/// bridge_correction an in-domain step also exits with the flat-boundary bridge
/// probability. Cylinder tops are hit exactly in time. Reaching max_time yields
/// a censored record.
ExitRecord exit_sample(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                       const SimConfig& cfg, std::uint64_t path_index);

template <class Observer>
ExitRecord exit_sample_observed(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                                const SimConfig& cfg, std::uint64_t path_index, Observer&& observer) {
    return detail::run_exit(field, s, x, domain, cfg, path_index, std::forward<Observer>(observer));
}

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleStats {
    std::uint64_t paths = 0;
    double seconds = 0.0;
    double paths_per_second = 0.0;
    int workers = 1;
};

template <class Acc>
struct EnsembleResult {
    Acc value;
    EnsembleStats stats;
};

/// Worker count used when run_ensemble is called with workers <= 0: the value
/// set here, else $QDLAB_WORKERS, else hardware concurrency.
int default_workers();
void set_default_workers(int workers);

/// Paths per work unit. Fixed so the merge tree never depends on worker count.
inline constexpr std::uint64_t kEnsembleChunk = 256;

/// Runs `per_path(path_index, acc)` for every path. Chunks of kEnsembleChunk
/// consecutive paths are reduced into private copies of `identity` and merged
/// in chunk order, so the result is bit-identical for any worker count.
template <class Acc, class PerPath>
EnsembleResult<Acc> run_ensemble(std::uint64_t n_paths, const Acc& identity, PerPath&& per_path, int workers = 0) {
    if (n_paths < 1) throw InputDomainError("run_ensemble: n_paths must be >= 1");
    if (workers <= 0) workers = default_workers();
    const std::uint64_t n_chunks = (n_paths + kEnsembleChunk - 1) / kEnsembleChunk;
    workers = static_cast<int>(std::min<std::uint64_t>(static_cast<std::uint64_t>(workers), n_chunks));

    std::vector<std::optional<Acc>> partial(n_chunks);
    std::atomic<std::uint64_t> next{0};
    std::atomic<std::uint64_t> completed{0};
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    std::string error_message;
    std::exception_ptr error_cause;

    auto work = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::uint64_t chunk = next.fetch_add(1);
            if (chunk >= n_chunks) return;
            Acc acc = identity;
            const std::uint64_t begin = chunk * kEnsembleChunk;
            const std::uint64_t end = std::min(n_paths, begin + kEnsembleChunk);
            try {
                for (std::uint64_t i = begin; i < end; ++i) {
                    per_path(i, acc);
                    completed.fetch_add(1, std::memory_order_relaxed);
                }
            } catch (const std::exception& e) {
                std::lock_guard lock(error_mutex);
                if (!failed.exchange(true)) {
                    error_message = e.what();
                    error_cause = std::current_exception();
                }
                return;
            }
            partial[chunk].emplace(std::move(acc));
        }
    };

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (failed) throw EnsembleError("per-path functional failed: " + error_message, completed.load(), error_cause);

    EnsembleResult<Acc> result{identity, {}};
    for (auto& p : partial) result.value.merge(*p);
    result.stats.paths = n_paths;
    result.stats.seconds = seconds;
    result.stats.paths_per_second = seconds > 0.0 ? static_cast<double>(n_paths) / seconds : 0.0;
    result.stats.workers = workers;
    return result;
}

/// Little-endian dump: per path a header {u32 d, u64 n_steps, f64 dt} followed by
/// (n_steps + 1) * d f64 states, the initial state first.
void write_trajectory_dump(std::ostream& out, const std::vector<Path>& paths, double dt);

}  // namespace qdlab
