#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ssa {

// Derives an independent RNG stream from a base seed and a stream tag.
// splitmix64 finalizer; stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

// Shortest text form of a double that round-trips bit-exactly (<= 17
// significant digits).
std::string format_double(double value);

}  // namespace ssa
