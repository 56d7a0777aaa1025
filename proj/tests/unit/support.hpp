#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include <json.hpp>

#include "blendiff/imaging.hpp"
#include "blendiff/rng.hpp"
#include "blendiff/tensor.hpp"

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(BLENDIFF_TEST_DATA_DIR) + "/" + name; }

inline const nlohmann::json& goldens() {
    static const nlohmann::json g = [] {
        std::ifstream in(data_path("goldens.json"));
        std::stringstream ss;
        ss << in.rdbuf();
        return nlohmann::json::parse(ss.str());
    }();
    return g;
}

// Channel-major uniform draws, matching the oracle script's uniform_image.
inline blendiff::ImageTensor uniform_image(std::uint64_t seed, int c, int h, int w, double lo = -1.0,
                                           double hi = 1.0) {
    blendiff::Rng rng(seed);
    blendiff::ImageTensor out(h, w, c);
    for (double& v : out.data()) v = rng.uniform(lo, hi);
    return out;
}

inline blendiff::Mask center_mask(int h, int w) {
    blendiff::Mask m(h, w);
    for (int y = h / 4; y < h - h / 4; ++y)
        for (int x = w / 4; x < w - w / 4; ++x) m.at(y, x) = 1.0;
    return m;
}

inline blendiff::Mask random_mask(std::uint64_t seed, int h, int w) {
    blendiff::Rng rng(seed);
    blendiff::Mask m(h, w);
    const int y0 = static_cast<int>(rng.uniform() * h / 2), x0 = static_cast<int>(rng.uniform() * w / 2);
    const int y1 = y0 + 1 + static_cast<int>(rng.uniform() * (h - y0 - 1));
    const int x1 = x0 + 1 + static_cast<int>(rng.uniform() * (w - x0 - 1));
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1.0;
    return m;
}

// Pixels where the mask is 0 are identical in both images.
inline bool outside_equal(const blendiff::ImageTensor& a, const blendiff::ImageTensor& b, const blendiff::Mask& m) {
    if (a.shape() != b.shape()) return false;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x)
                if (m.at(y, x) == 0.0 && a.at(c, y, x) != b.at(c, y, x)) return false;
    return true;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("blendiff_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

  private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

}  // namespace testing
