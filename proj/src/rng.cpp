#include "blendiff/rng.hpp"

#include <cmath>
#include <numbers>

#include "blendiff/tensor.hpp"

namespace blendiff {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

void Rng::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

ImageTensor Rng::normal_like(const ImageTensor& like) {
    ImageTensor out = ImageTensor::zeros(like.shape());
    fill_normal(out.data());
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
    // splitmix64 finalizer over (seed, stream)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(stream) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace blendiff
