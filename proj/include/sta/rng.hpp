#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace sta {

// splitmix64 mixing step. Used to derive independent sub-seeds from a root
// seed plus a handful of context words, so that every consumer of randomness
// (data generation, parameter init, augmentation, shuffling, ...) owns a
// stream that is a pure function of (root seed, context) and nothing else.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a sub-seed by folding each context word into the running state.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> context) {
    uint64_t s = splitmix64(root);
    for (uint64_t w : context) {
        s = splitmix64(s ^ w);
    }
    return s;
}

// Stable 64-bit hash of a short tag string, for use as a context word.
inline uint64_t tag_hash(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::mt19937_64 make_rng(uint64_t root, std::initializer_list<uint64_t> context) {
    return std::mt19937_64(derive_seed(root, context));
}

}  // namespace sta
