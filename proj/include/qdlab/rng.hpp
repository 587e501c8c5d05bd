#pragma once

#include <array>
#include <cstdint>

namespace qdlab {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as easy
/// as 1, 2, 3"). Pure function of (counter, key).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter counter, Key key) noexcept;
};

/// Lanes partition the counter space of one stream so independent consumers
/// (Gaussian increments, bridge uniforms, sampling) never share numbers.
enum class Lane : std::uint32_t { gaussian = 0, bridge = 1, sampling = 2, auxiliary = 3 };

/// Counter-based stream keyed by (seed, stream id, lane). Two streams with the
/// same key produce identical sequences regardless of which thread owns them.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream_id, Lane lane = Lane::gaussian) noexcept;

    /// Uniform in the open interval (0, 1), 53-bit resolution.
    double uniform() noexcept;
    /// Standard normal variate (Box-Muller on consecutive uniform pairs).
    double normal() noexcept;
    /// Random access: the index-th uniform of this stream, independent of the cursor.
    double uniform_at(std::uint64_t index) const noexcept;

    std::uint64_t stream_id() const noexcept { return stream_id_; }

private:
    Philox4x32::Counter counter_for(std::uint64_t block_index) const noexcept;

    Philox4x32::Key key_;
    std::uint64_t stream_id_;
    std::uint32_t lane_;
    std::uint64_t next_block_ = 0;
    std::array<double, 2> buffered_{};
    int buffered_count_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// splitmix64 finalizer; used to derive sub-seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

}  // namespace qdlab
