#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>

namespace utraj {

/// Worker count: explicit request if positive, else UNCERTAIN_TRAJ_THREADS, else 1.
int resolve_threads(std::optional<int> requested = std::nullopt);

/// Runs fn(i) for i in [0, n) on up to `threads` workers using a static
/// contiguous partition. Callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// SplitMix64 finalizer; used to derive independent seed streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace utraj
