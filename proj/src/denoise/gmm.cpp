#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "blendiff/denoiser.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/rng.hpp"
#include "blendiff/simd/kernels.hpp"

namespace blendiff {

namespace {
constexpr double kVarianceFloor = 1e-12;
}

GaussianMixturePrior::GaussianMixturePrior(std::vector<GmmComponent> components) : components_(std::move(components)) {
    if (components_.empty()) throw InvalidArgument("mixture prior needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
        if (!(c.weight > 0.0)) throw InvalidArgument("mixture weights must be positive");
        if (!(c.sigma >= 0.0) || !std::isfinite(c.sigma)) throw InvalidArgument("mixture sigma must be >= 0");
        if (c.mean.empty()) throw InvalidArgument("mixture component has no mean image");
        require_same_shape(components_.front().mean, c.mean, "mixture prior");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("mixture weights must sum to 1");
}

GaussianMixturePrior GaussianMixturePrior::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prior file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), std::filesystem::path(path).parent_path().string());
}

GaussianMixturePrior GaussianMixturePrior::parse(const std::string& json_text, const std::string& base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed prior JSON: ") + e.what());
    }
    const int h = j.value("height", 0);
    const int w = j.value("width", 0);
    const int c = j.value("channels", 3);
    std::vector<GmmComponent> comps;
    for (const auto& item : j.at("components")) {
        GmmComponent comp;
        comp.weight = item.at("weight").get<double>();
        comp.sigma = item.at("sigma").get<double>();
        const auto& mean = item.contains("mean_path_or_const") ? item.at("mean_path_or_const") : item.at("mean");
        if (mean.is_number()) {
            if (h <= 0 || w <= 0) throw InvalidArgument("constant means need top-level height/width");
            comp.mean = ImageTensor(h, w, c, mean.get<double>());
        } else if (mean.is_array()) {
            // per-channel constant
            const auto values = mean.get<std::vector<double>>();
            if (static_cast<int>(values.size()) != c) throw InvalidArgument("per-channel mean needs one value per channel");
            comp.mean = ImageTensor(h, w, c);
            for (int ch = 0; ch < c; ++ch)
                std::fill(comp.mean.plane(ch).begin(), comp.mean.plane(ch).end(), values[ch]);
        } else {
            const std::filesystem::path p = std::filesystem::path(base_dir) / mean.get<std::string>();
            comp.mean = load_tensor(p.string());
        }
        comps.push_back(std::move(comp));
    }
    return GaussianMixturePrior(std::move(comps));
}

ImageTensor GaussianMixturePrior::mean() const {
    ImageTensor out = ImageTensor::zeros(shape());
    const auto& k = simd::active_kernels();
    for (const auto& c : components_)
        k.axpby(1.0, out.data().data(), c.weight, c.mean.data().data(), out.data().data(), out.size());
    return out;
}

ImageTensor GaussianMixturePrior::variance() const {
    const ImageTensor mu = mean();
    ImageTensor out = ImageTensor::zeros(shape());
    auto o = out.data();
    for (const auto& c : components_) {
        const auto m = c.mean.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += c.weight * (c.sigma * c.sigma + m[i] * m[i]);
    }
    const auto mm = mu.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= mm[i] * mm[i];
    return out;
}

ImageTensor GaussianMixturePrior::sample(Rng& rng) const {
    double u = rng.uniform();
    const GmmComponent* pick = &components_.back();
    for (const auto& c : components_) {
        if (u < c.weight) {
            pick = &c;
            break;
        }
        u -= c.weight;
    }
    ImageTensor z = rng.normal_like(pick->mean);
    ImageTensor out = ImageTensor::zeros(shape());
    simd::active_kernels().axpby(1.0, pick->mean.data().data(), pick->sigma, z.data().data(), out.data().data(),
                                 out.size());
    return out;
}

bool GaussianMixturePrior::spatially_constant() const {
    for (const auto& c : components_)
        for (int ch = 0; ch < c.mean.channels(); ++ch) {
            const auto plane = c.mean.plane(ch);
            if (std::any_of(plane.begin(), plane.end(), [&](double v) { return v != plane.front(); })) return false;
        }
    return true;
}

GaussianMixturePrior GaussianMixturePrior::broadcast_to(Shape target) const {
    if (target == shape()) return *this;
    if (target.channels != shape().channels)
        throw ShapeMismatch("prior has " + std::to_string(shape().channels) + " channels, image has " +
                            std::to_string(target.channels));
    if (!spatially_constant())
        throw ShapeMismatch("prior is " + std::to_string(shape().height) + "x" + std::to_string(shape().width) +
                            " and not spatially constant; image is " + std::to_string(target.height) + "x" +
                            std::to_string(target.width));
    std::vector<GmmComponent> comps;
    for (const auto& c : components_) {
        GmmComponent out{c.weight, ImageTensor::zeros(target), c.sigma};
        for (int ch = 0; ch < target.channels; ++ch) {
            const double v = c.mean.plane(ch).front();
            std::fill(out.mean.plane(ch).begin(), out.mean.plane(ch).end(), v);
        }
        comps.push_back(std::move(out));
    }
    return GaussianMixturePrior(std::move(comps));
}

GmmPosterior gmm_posterior(const GaussianMixturePrior& prior, const ImageTensor& x_t, int t,
                           const NoiseSchedule& sched) {
    require_same_shape(prior.components().front().mean, x_t, "gmm_predict_eps");
    const double abar = sched.alpha_bar(t);
    const double root = std::sqrt(abar);
    const double noise_var = std::max(1.0 - abar, kVarianceFloor);
    const auto& k = simd::active_kernels();
    const auto& comps = prior.components();
    const double dim = static_cast<double>(x_t.size());

    std::vector<double> logr(comps.size());
    std::vector<double> marginal_var(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double s2 = std::max(comps[i].sigma * comps[i].sigma, kVarianceFloor);
        const double v = std::max(abar * s2 + (1.0 - abar), kVarianceFloor);
        marginal_var[i] = v;
        const double d2 = k.sqdist_scaled(x_t.data().data(), root, comps[i].mean.data().data(), x_t.size());
        logr[i] = std::log(comps[i].weight) - 0.5 * dim * std::log(2.0 * std::numbers::pi * v) - 0.5 * d2 / v;
    }
    const double top = *std::max_element(logr.begin(), logr.end());
    double norm = 0.0;
    for (double& l : logr) {
        l = std::exp(l - top);
        norm += l;
    }
    for (double& l : logr) l /= norm;

    GmmPosterior post{std::move(logr), ImageTensor::zeros(x_t.shape())};
    auto out = post.x0_mean.data();
    double x_coef = 0.0;
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double r = post.responsibilities[i];
        if (r == 0.0) continue;
        const double s2 = std::max(comps[i].sigma * comps[i].sigma, kVarianceFloor);
        const double gain = root * s2 / marginal_var[i];
        // (1 - abar s2 / v) mu_i, accumulated; the x_t part is shared
        const double mu_coef = r * (noise_var / marginal_var[i]);
        k.axpby(1.0, out.data(), mu_coef, comps[i].mean.data().data(), out.data(), out.size());
        x_coef += r * gain;
    }
    k.axpby(1.0, out.data(), x_coef, x_t.data().data(), out.data(), out.size());
    return post;
}

ImageTensor gmm_predict_eps(const GaussianMixturePrior& prior, const ImageTensor& x_t, int t,
                            const NoiseSchedule& sched) {
    const double abar = sched.alpha_bar(t);
    if (1.0 - abar <= 0.0) throw DegenerateError("noise prediction undefined where alpha_bar == 1");
    const GmmPosterior post = gmm_posterior(prior, x_t, t, sched);
    const double inv = 1.0 / std::sqrt(1.0 - abar);
    ImageTensor eps = ImageTensor::zeros(x_t.shape());
    simd::active_kernels().axpby(inv, x_t.data().data(), -std::sqrt(abar) * inv, post.x0_mean.data().data(),
                                 eps.data().data(), eps.size());
    return eps;
}

ImageTensor GmmDenoiser::predict_eps(const ImageTensor& x_t, int t, const NoiseSchedule& sched) const {
    if (x_t.shape() == prior_.shape()) return gmm_predict_eps(prior_, x_t, t, sched);
    return gmm_predict_eps(prior_.broadcast_to(x_t.shape()), x_t, t, sched);
}

std::string GmmDenoiser::describe() const {
    return "gmm(" + std::to_string(prior_.components().size()) + " components)";
}

}  // namespace blendiff
