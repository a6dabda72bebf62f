#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ipo/common.hpp"

namespace ipo {

/// Derives an independent 64-bit seed for a named substream of `root`.
/// Stream names are hierarchical by convention ("sim1/trial/17"), so adding
/// streams never perturbs the draws of existing ones.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

/// Engine seeded from a named substream of `root`.
std::mt19937_64 make_rng(std::uint64_t root, std::string_view stream);

/// Vector of independent standard normals.
Vector normal_vector(Index n, std::mt19937_64& rng);

/// Draw from N(mean, L L^T) given the lower Cholesky factor L.
Vector mvn_sample(const Vector& mean, const Matrix& chol_lower, std::mt19937_64& rng);

}  // namespace ipo
