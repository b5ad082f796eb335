#pragma once

#include <cstdint>
#include <random>

namespace triseg {

using Rng = std::mt19937_64;

/// Deterministic, independent stream for (seed, index). Used so that every
/// sample, iteration or worker draws from its own stream without shared state.
Rng fork_rng(std::uint64_t seed, std::uint64_t index);

double uniform(Rng& rng, double lo, double hi);
bool bernoulli(Rng& rng, double p);
double normal(Rng& rng, double mean, double stddev);
/// Uniform integer in [lo, hi].
int uniform_int(Rng& rng, int lo, int hi);

}  // namespace triseg
