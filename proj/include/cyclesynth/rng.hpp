#pragma once

#include <cstdint>
#include <initializer_list>

namespace cyclesynth {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seed for (run seed, purpose, index...). Every random
// decision in training is drawn from a stream derived this way, so resuming
// at an epoch boundary reproduces the uninterrupted schedule.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = splitmix64(seed);
    for (auto p : path)
        h = splitmix64(h ^ (p + 0x632be59bd9b4e019ULL));
    return h;
}

} // namespace cyclesynth
