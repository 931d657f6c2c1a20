#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "hystar/tensor.hpp"

namespace hystar {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of a named sub-stream ("data", "init", "batching", ...) of a root
/// seed, optionally further split by integer coordinates.
template <typename... Ints>
std::uint64_t stream_seed(std::uint64_t root, std::string_view name, Ints... coords) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
    std::uint64_t s = splitmix64(root ^ splitmix64(h));
    ((s = splitmix64(s ^ static_cast<std::uint64_t>(coords))), ...);
    return s;
}

template <typename... Ints>
Rng make_rng(std::uint64_t root, std::string_view name, Ints... coords) {
    return Rng(stream_seed(root, name, coords...));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double stddev = 1.0) {
    return std::normal_distribution<double>(0.0, stddev)(rng);
}

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, Rng& rng, double stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(gaussian(rng, stddev));
    return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(uniform(rng, lo, hi));
    return t;
}

} // namespace hystar
