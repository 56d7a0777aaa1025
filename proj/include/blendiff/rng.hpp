#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace blendiff {

class ImageTensor;

// Seeded generator with a fixed, portable draw procedure: 64-bit Mersenne
// Twister words, 53-bit uniforms, Box-Muller normals produced in pairs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    void fill_normal(std::span<double> out);
    ImageTensor normal_like(const ImageTensor& like);

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent stream ids for one sampling run.
enum class Stream : std::uint64_t { init = 1, foreground = 2, background = 3, augment = 4 };

std::uint64_t derive_seed(std::uint64_t seed, Stream stream);

}  // namespace blendiff
