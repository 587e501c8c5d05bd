#include "qdlab/sde_engine.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <type_traits>
#include <ostream>

namespace qdlab {

void SimConfig::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InputDomainError("SimConfig: dt must be > 0");
    if (!(max_time >= dt) || !std::isfinite(max_time)) throw InputDomainError("SimConfig: require dt <= max_time");
    if (n_paths < 1) throw InputDomainError("SimConfig: n_paths must be >= 1");
}

SimConfig SimConfig::for_scale(double scale, std::uint64_t n_paths, std::uint64_t seed) {
    SimConfig cfg;
    cfg.dt = 1e-4 * std::min(1.0, scale * scale);
    cfg.max_time = 64.0 * scale * scale;
    cfg.n_paths = n_paths;
    cfg.seed = seed;
    return cfg;
}

EulerStepper::EulerStepper(const CoefficientField& field, double s, const Vec& x, std::uint64_t seed,
                           std::uint64_t path_index)
    : field_(field),
      s_(s),
      x_(x),
      x_prev_(x),
      noise_(x.size()),
      normals_(seed, path_index, Lane::gaussian),
      bridge_(seed, path_index, Lane::bridge) {
    if (x.size() != field.dimension()) throw InputDomainError("EulerStepper: start point dimension mismatch");
    if (!std::isfinite(s) || !x.allFinite()) throw InputDomainError("EulerStepper: non-finite start");
}

void EulerStepper::step(double h) {
    field_.evaluate(s_ + t_, x_, a_, b_);
    const bool diagonal = diffusion_sqrt_into(a_, sigma_);
    const Eigen::Index d = x_.size();
    for (Eigen::Index i = 0; i < d; ++i) noise_[i] = normals_.normal();
    x_prev_ = x_;
    const double root_h = std::sqrt(h);
    if (diagonal) {
        for (Eigen::Index i = 0; i < d; ++i) x_[i] += b_[i] * h + sigma_(i, i) * noise_[i] * root_h;
    } else {
        x_.noalias() += b_ * h;
        x_.noalias() += sigma_ * noise_ * root_h;
    }
    t_ += h;
    ++steps_;
    if (!x_.allFinite()) throw SimulationError("non-finite state in Euler step", steps_);
}

double EulerStepper::bridge_uniform(int slot) const {
    return bridge_.uniform_at(steps_ * static_cast<std::uint64_t>(Domain::kMaxPieces) + static_cast<std::uint64_t>(slot));
}

double bridge_crossing_probability(double d1, double d2, double normal_variance, double h) {
    if (d1 <= 0.0 || d2 <= 0.0) return 1.0;
    const double exponent = 2.0 * d1 * d2 / (normal_variance * h);
    return exponent > 745.0 ? 0.0 : std::exp(-exponent);
}

Path simulate_path(const CoefficientField& field, double s, const Vec& x, const SimConfig& cfg,
                   std::uint64_t path_index) {
    cfg.validate();
    Path path;
    path.start = {s, x};
    path.stream_id = path_index;
    const auto n_full = static_cast<std::uint64_t>(std::floor(cfg.max_time / cfg.dt * (1.0 + 1e-12)));
    path.times.reserve(n_full + 2);
    path.states.reserve(n_full + 2);
    path.times.push_back(0.0);
    path.states.push_back(x);
    EulerStepper stepper(field, s, x, cfg.seed, path_index);
    std::uint64_t k = 0;
    while (true) {
        double t_next = static_cast<double>(k + 1) * cfg.dt;
        const bool last = t_next >= cfg.max_time - detail::kTimeSnap * std::max(1.0, cfg.max_time);
        if (last) t_next = cfg.max_time;
        stepper.step(t_next - stepper.elapsed());
        stepper.set_elapsed(t_next);
        ++k;
        path.times.push_back(t_next);
        path.states.push_back(stepper.state());
        if (last) break;
    }
    return path;
}

Vec terminal_state(const CoefficientField& field, double s, const Vec& x, double horizon, const SimConfig& cfg,
                   std::uint64_t path_index) {
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw InputDomainError("terminal_state: horizon must be >= 0");
    if (horizon == 0.0) return x;
    EulerStepper stepper(field, s, x, cfg.seed, path_index);
    std::uint64_t k = 0;
    while (true) {
        double t_next = static_cast<double>(k + 1) * cfg.dt;
        const bool last = t_next >= horizon - detail::kTimeSnap * std::max(1.0, horizon);
        if (last) t_next = horizon;
        stepper.step(t_next - stepper.elapsed());
        stepper.set_elapsed(t_next);
        ++k;
        if (last) return stepper.state();
    }
}

ExitRecord exit_sample(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                       const SimConfig& cfg, std::uint64_t path_index) {
    return detail::run_exit(field, s, x, domain, cfg, path_index, [](double, const Vec&) { return false; });
}

namespace {
int g_default_workers = 0;
}

int default_workers() {
    if (g_default_workers > 0) return g_default_workers;
    if (const char* env = std::getenv("QDLAB_WORKERS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void set_default_workers(int workers) { g_default_workers = workers; }

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
    out.write(bytes, sizeof(U));
}

}  // namespace

void write_trajectory_dump(std::ostream& out, const std::vector<Path>& paths, double dt) {
    for (const auto& path : paths) {
        const auto d = static_cast<std::uint32_t>(path.start.x.size());
        put_le(out, d);
        put_le(out, static_cast<std::uint64_t>(path.states.size() - 1));
        put_le(out, dt);
        for (const auto& state : path.states)
            for (Eigen::Index i = 0; i < state.size(); ++i) put_le(out, state[i]);
    }
}

}  // namespace qdlab
