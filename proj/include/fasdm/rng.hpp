#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fasdm {

using Rng = std::mt19937_64;

// Independent stream for (seed, tags...): every consumer of randomness gets
// its own engine derived from the config seed plus stable integer tags.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {});

double standard_normal(Rng& rng);
double uniform01(Rng& rng);

}  // namespace fasdm
