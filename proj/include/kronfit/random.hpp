#pragma once

#include <array>
#include <cstdint>

namespace kronfit {

/// Philox4x32-10 block function.
[[nodiscard]] std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                                      std::array<std::uint32_t, 2> key) noexcept;

/// Counter-based stream: key = seed, counter = (block lo, block hi, stream, substream).
/// Streams with different (stream, substream) never overlap, so each subject can
/// draw from its own stream regardless of generation order.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint32_t stream, std::uint32_t substream = 0) noexcept;

    [[nodiscard]] std::uint64_t next_u64() noexcept;
    /// Uniform on the open interval (0, 1) with 53 random bits.
    [[nodiscard]] double uniform() noexcept;
    /// Standard normal by inverse-CDF transform (one uniform per draw).
    [[nodiscard]] double normal() noexcept;
    /// Uniform integer in [lo, hi].
    [[nodiscard]] std::int64_t integer(std::int64_t lo, std::int64_t hi) noexcept;

private:
    void refill() noexcept;

    std::array<std::uint32_t, 2> key_{};
    std::uint32_t stream_ = 0;
    std::uint32_t substream_ = 0;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int used_ = 4;
};

/// Inverse standard normal CDF, accurate to about 1e-15 relative on (0, 1).
[[nodiscard]] double normal_quantile(double p);

}  // namespace kronfit
