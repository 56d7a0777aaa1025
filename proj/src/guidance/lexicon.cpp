#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blendiff/guidance.hpp"
#include "blendiff/imaging.hpp"

namespace blendiff {
namespace {

constexpr double kLumR = 0.299;
constexpr double kLumG = 0.587;
constexpr double kLumB = 0.114;
constexpr double kStdEps = 1e-12;
constexpr double kMagEps = 1e-12;
constexpr double kRatioEps = 1e-12;

std::vector<double> luminance(const ImageTensor& img) {
    if (img.channels() == 1) return {img.plane(0).begin(), img.plane(0).end()};
    if (img.channels() != 3) throw InvalidArgument("statistics need 1 or 3 channels");
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    std::vector<double> l(r.size());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = kLumR * r[i] + kLumG * g[i] + kLumB * b[i];
    return l;
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

struct Sobel {
    double gx;
    double gy;
};

// Horizontal and vertical Sobel responses at interior pixel (y, x).
Sobel sobel_at(const std::vector<double>& l, int w, int y, int x) {
    const auto at = [&](int yy, int xx) { return l[static_cast<std::size_t>(yy) * w + xx]; };
    const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
    const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                      (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
    return {gx, gy};
}

// Adds cx * d(gx)/dL + cy * d(gy)/dL at (y, x) into gl.
void sobel_adjoint_at(std::vector<double>& gl, int w, int y, int x, double cx, double cy) {
    const auto add = [&](int yy, int xx, double v) { gl[static_cast<std::size_t>(yy) * w + xx] += v; };
    add(y - 1, x + 1, cx);
    add(y, x + 1, 2.0 * cx);
    add(y + 1, x + 1, cx);
    add(y - 1, x - 1, -cx);
    add(y, x - 1, -2.0 * cx);
    add(y + 1, x - 1, -cx);
    add(y + 1, x - 1, cy);
    add(y + 1, x, 2.0 * cy);
    add(y + 1, x + 1, cy);
    add(y - 1, x - 1, -cy);
    add(y - 1, x, -2.0 * cy);
    add(y - 1, x + 1, -cy);
}

void check_size(const ImageTensor& img) {
    if (img.height() < 4 || img.width() < 4) throw InvalidArgument("statistics need images of at least 4x4");
}

}  // namespace

bool GuidanceModel::knows(const std::string& prompt) const {
    const auto all = prompts();
    return std::find(all.begin(), all.end(), prompt) != all.end();
}

LexiconEmbedder::Stats LexiconEmbedder::statistics(const ImageTensor& img) {
    check_size(img);
    const int h = img.height(), w = img.width();
    const std::vector<double> l = luminance(img);
    Stats s{};
    if (img.channels() == 3) {
        s[0] = mean_of(img.plane(0));
        s[1] = mean_of(img.plane(1));
        s[2] = mean_of(img.plane(2));
    } else {
        s[0] = s[1] = s[2] = mean_of(l);
    }

    const double mu = mean_of(l);
    double var = 0.0;
    for (double v : l) var += (v - mu) * (v - mu);
    var /= static_cast<double>(l.size());
    s[3] = std::sqrt(var + kStdEps);

    double mag_sum = 0.0, eh = 0.0, ev = 0.0;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            const Sobel g = sobel_at(l, w, y, x);
            mag_sum += std::sqrt(g.gx * g.gx + g.gy * g.gy + kMagEps);
            eh += g.gx * g.gx;
            ev += g.gy * g.gy;
        }
    s[4] = mag_sum / static_cast<double>((h - 2) * (w - 2));
    s[5] = eh / (eh + ev + kRatioEps);

    std::size_t bright = 0;
    for (double v : l) bright += v > 0.0 ? 1 : 0;
    s[6] = static_cast<double>(bright) / static_cast<double>(l.size());

    const int ph = h / 4 * 4, pw = w / 4 * 4;
    double pooled = 0.0;
    for (int by = 0; by < ph; by += 4)
        for (int bx = 0; bx < pw; bx += 4) {
            double block = 0.0;
            for (int y = by; y < by + 4; ++y)
                for (int x = bx; x < bx + 4; ++x) block += l[static_cast<std::size_t>(y) * w + x];
            pooled += block / 16.0;
        }
    s[7] = pooled / static_cast<double>((ph / 4) * (pw / 4));
    return s;
}

ImageTensor LexiconEmbedder::statistics_vjp(const ImageTensor& img, const Stats& c) {
    check_size(img);
    const int h = img.height(), w = img.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const std::vector<double> l = luminance(img);
    std::vector<double> gl(n, 0.0);

    const double mu = mean_of(l);
    double var = 0.0;
    for (double v : l) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var + kStdEps);
    for (std::size_t i = 0; i < n; ++i) gl[i] += c[3] * (l[i] - mu) / (static_cast<double>(n) * sd);

    double eh = 0.0, ev = 0.0;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            const Sobel g = sobel_at(l, w, y, x);
            eh += g.gx * g.gx;
            ev += g.gy * g.gy;
        }
    const double denom = eh + ev + kRatioEps;
    const double d_eh = c[5] * (ev + kRatioEps) / (denom * denom);
    const double d_ev = -c[5] * eh / (denom * denom);
    const double inner = static_cast<double>((h - 2) * (w - 2));
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            const Sobel g = sobel_at(l, w, y, x);
            const double mag = std::sqrt(g.gx * g.gx + g.gy * g.gy + kMagEps);
            const double cx = c[4] * g.gx / (mag * inner) + d_eh * 2.0 * g.gx;
            const double cy = c[4] * g.gy / (mag * inner) + d_ev * 2.0 * g.gy;
            sobel_adjoint_at(gl, w, y, x, cx, cy);
        }

    // s[6] is piecewise constant: no gradient.
    const int ph = h / 4 * 4, pw = w / 4 * 4;
    const double pooled_w = c[7] / static_cast<double>(ph * pw);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) gl[static_cast<std::size_t>(y) * w + x] += pooled_w;

    ImageTensor out = ImageTensor::zeros(img.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    if (img.channels() == 3) {
        const double lum[3] = {kLumR, kLumG, kLumB};
        for (int ch = 0; ch < 3; ++ch) {
            auto p = out.plane(ch);
            for (std::size_t i = 0; i < n; ++i) p[i] = c[ch] * inv_n + lum[ch] * gl[i];
        }
    } else {
        auto p = out.plane(0);
        for (std::size_t i = 0; i < n; ++i) p[i] = (c[0] + c[1] + c[2]) * inv_n + gl[i];
    }
    return out;
}

LexiconEmbedder::LexiconEmbedder(std::map<std::string, std::vector<double>> lexicon, int input_size)
    : input_size_(input_size) {
    if (input_size != 0 && input_size < 4) throw InvalidArgument("embedder input size must be >= 4");
    for (auto& [prompt, vec] : lexicon) {
        if (vec.size() != kDim)
            throw InvalidArgument("lexicon entry '" + prompt + "' has " + std::to_string(vec.size()) +
                                  " values, expected " + std::to_string(kDim));
        double norm = 0.0;
        for (double v : vec) norm += v * v;
        norm = std::sqrt(norm);
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw InvalidArgument("lexicon entry '" + prompt + "' is zero or non-finite");
        for (double& v : vec) v /= norm;
        lexicon_.emplace(prompt, std::move(vec));
    }
}

LexiconEmbedder LexiconEmbedder::load(const std::string& path, int input_size) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), input_size);
}

LexiconEmbedder LexiconEmbedder::parse(const std::string& json_text, int input_size) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed lexicon JSON: ") + e.what());
    }
    std::map<std::string, std::vector<double>> lexicon;
    for (const auto& [key, value] : j.at("prompts").items()) lexicon.emplace(key, value.get<std::vector<double>>());
    return LexiconEmbedder(std::move(lexicon), input_size);
}

std::vector<double> LexiconEmbedder::embed_image(const ImageTensor& image) const {
    const Stats s = statistics(image);
    double norm = 0.0;
    for (double v : s) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> e(kDim, 0.0);
    if (norm < 1e-12) return e;
    for (std::size_t i = 0; i < kDim; ++i) e[i] = s[i] / norm;
    return e;
}

ImageTensor LexiconEmbedder::embed_image_vjp(const ImageTensor& image, std::span<const double> cot) const {
    if (cot.size() != kDim) throw ShapeMismatch("cotangent has the wrong dimension");
    const Stats s = statistics(image);
    double norm = 0.0;
    for (double v : s) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) return ImageTensor::zeros(image.shape());
    double proj = 0.0;
    for (std::size_t i = 0; i < kDim; ++i) proj += (s[i] / norm) * cot[i];
    Stats weights{};
    for (std::size_t i = 0; i < kDim; ++i) weights[i] = (cot[i] - (s[i] / norm) * proj) / norm;
    return statistics_vjp(image, weights);
}

std::vector<double> LexiconEmbedder::embed_text(const std::string& prompt) const {
    const auto it = lexicon_.find(prompt);
    if (it == lexicon_.end()) throw UnknownPrompt(prompt, prompts());
    return it->second;
}

std::vector<std::string> LexiconEmbedder::prompts() const {
    std::vector<std::string> keys;
    keys.reserve(lexicon_.size());
    for (const auto& [k, v] : lexicon_) keys.push_back(k);
    return keys;
}

namespace {

ImageTensor to_model_input(const GuidanceModel& model, const ImageTensor& masked) {
    const int s = model.input_size();
    if (s == 0) return masked;
    return resize(masked, s, s, ResizeMode::bilinear);
}

}  // namespace

double clip_distance(const GuidanceModel& model, const ImageTensor& image, const Mask& mask,
                     const std::string& prompt) {
    require_mask_fits(image, mask, "clip_distance");
    const std::vector<double> text = model.embed_text(prompt);
    const std::vector<double> emb = model.embed_image(to_model_input(model, apply_mask(image, mask)));
    double dot = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) dot += emb[i] * text[i];
    return std::clamp(1.0 - dot, 0.0, 2.0);
}

ImageTensor clip_distance_grad(const GuidanceModel& model, const ImageTensor& image, const Mask& mask,
                               const std::string& prompt) {
    require_mask_fits(image, mask, "clip_distance_grad");
    std::vector<double> cot = model.embed_text(prompt);
    for (double& v : cot) v = -v;
    const ImageTensor input = to_model_input(model, apply_mask(image, mask));
    const ImageTensor g_input = model.embed_image_vjp(input, cot);
    const ImageTensor g_masked = model.input_size() == 0
                                     ? g_input
                                     : resize_adjoint(g_input, image.height(), image.width(), ResizeMode::bilinear);
    return apply_mask(g_masked, mask);
}

}  // namespace blendiff
