#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

#include <ATen/core/Generator.h>

namespace latentvol {

/// The toolkit's host-side random engine. Only its raw 64-bit output is used,
/// never the implementation-defined std distributions, so streams are
/// reproducible across standard libraries.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for an independent stream, namespaced by an integer index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seed for an independent stream, namespaced by purpose ("vqgan-data", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

/// Unbiased uniform integer in [0, n). n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// True with probability p.
bool bernoulli(Rng& rng, double p);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Index drawn at global position `position` of a stream that walks through a
/// fresh seeded permutation of [0, n) every epoch (epoch = position / n).
std::size_t epoch_order_index(std::uint64_t seed, std::uint64_t position, std::size_t n);

/// A CPU torch generator seeded deterministically.
at::Generator torch_generator(std::uint64_t seed);

}  // namespace latentvol
