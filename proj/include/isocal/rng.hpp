#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace isocal {

/// Seeded pseudorandom source.
///
/// Engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniforms take the top 53 bits of one engine draw; normals use
/// the Box-Muller transform on two uniforms and cache the second deviate.
/// The standard library distributions are avoided because their output is
/// implementation-defined.
class Rng {
public:
    static constexpr std::string_view algorithm = "mt19937_64/u53/box-muller";

    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    // Uniform on [0, 1).
    double uniform();
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    double gaussian();
    std::vector<double> gaussian(std::size_t n);

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace isocal
