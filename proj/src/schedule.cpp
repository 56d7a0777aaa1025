#include "blendiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blendiff/simd/kernels.hpp"

namespace blendiff {

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::cosine: return "cosine";
        case ScheduleKind::custom: return "custom";
    }
    return "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "custom") return ScheduleKind::custom;
    throw InvalidArgument("unknown schedule kind '" + s + "'");
}

void to_json(nlohmann::json& j, const ScheduleSpec& spec) {
    j = nlohmann::json{{"kind", to_string(spec.kind)},
                       {"T", spec.T},
                       {"beta_start", spec.beta_start},
                       {"beta_end", spec.beta_end},
                       {"respaced_steps", spec.respaced_steps}};
    if (spec.kind == ScheduleKind::custom) j["betas"] = spec.betas;
}

void from_json(const nlohmann::json& j, ScheduleSpec& spec) {
    spec.kind = schedule_kind_from_string(j.value("kind", std::string("linear")));
    spec.T = j.value("T", 1000);
    spec.beta_start = j.value("beta_start", 1e-4);
    spec.beta_end = j.value("beta_end", 0.02);
    spec.respaced_steps = j.value("respaced_steps", 0);
    spec.betas = j.value("betas", std::vector<double>{});
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int T, double beta_start, double beta_end) {
    if (T < 1) throw InvalidArgument("schedule needs T >= 1");
    NoiseSchedule s;
    s.kind_ = kind;
    s.betas_.resize(T);
    if (kind == ScheduleKind::linear) {
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
            throw InvalidArgument("linear schedule needs 0 < beta_start <= beta_end < 1");
        for (int i = 0; i < T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
            s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
        }
    } else if (kind == ScheduleKind::cosine) {
        constexpr double offset = 0.008;
        const auto f = [&](int t) {
            const double c = std::cos((static_cast<double>(t) / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0);
        for (int t = 1; t <= T; ++t) {
            const double ratio = (f(t) / f0) / (f(t - 1) / f0);
            s.betas_[t - 1] = std::clamp(1.0 - ratio, 1e-12, 0.999);
        }
    } else {
        throw InvalidArgument("custom schedules are built with from_betas");
    }
    s.spec_ = ScheduleSpec{kind, T, beta_start, beta_end, 0, {}};
    s.finish();
    return s;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw InvalidArgument("schedule needs at least one beta");
    for (double b : betas)
        if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("every beta must lie in (0, 1)");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::custom;
    s.betas_ = std::move(betas);
    s.spec_ = ScheduleSpec{ScheduleKind::custom, static_cast<int>(s.betas_.size()), s.betas_.front(), s.betas_.back(),
                           0, s.betas_};
    s.finish();
    return s;
}

NoiseSchedule NoiseSchedule::from_spec(const ScheduleSpec& spec) {
    NoiseSchedule base = spec.kind == ScheduleKind::custom ? from_betas(spec.betas)
                                                            : make(spec.kind, spec.T, spec.beta_start, spec.beta_end);
    if (spec.respaced_steps > 0 && spec.respaced_steps != base.steps()) return base.respaced(spec.respaced_steps);
    return base;
}

void NoiseSchedule::finish() {
    const std::size_t T = betas_.size();
    alphas_.resize(T);
    alpha_bars_.resize(T);
    double running = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        alphas_[i] = 1.0 - betas_[i];
        running *= alphas_[i];
        alpha_bars_[i] = running;
    }
    if (source_timesteps_.empty()) {
        source_timesteps_.resize(T);
        for (std::size_t i = 0; i < T; ++i) source_timesteps_[i] = static_cast<int>(i) + 1;
    }
}

NoiseSchedule NoiseSchedule::respaced(int steps) const {
    const int T = this->steps();
    if (steps < 1 || steps > T) throw InvalidArgument("respaced step count must lie in [1, T]");
    std::vector<int> taken(steps);
    if (steps == 1) {
        taken[0] = T - 1;
    } else {
        const double stride = static_cast<double>(T - 1) / (steps - 1);
        for (int i = 0; i < steps; ++i) taken[i] = static_cast<int>(std::lround(i * stride));
    }
    NoiseSchedule s;
    s.kind_ = kind_;
    s.betas_.resize(steps);
    double prev = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double abar = alpha_bars_[taken[i]];
        s.betas_[i] = 1.0 - abar / prev;
        prev = abar;
    }
    s.source_timesteps_.resize(steps);
    for (int i = 0; i < steps; ++i) s.source_timesteps_[i] = source_timesteps_[taken[i]];
    s.spec_ = spec_;
    s.spec_.respaced_steps = steps;
    s.finish();
    // Keep alpha_bar identical to the parent at the taken indices.
    for (int i = 0; i < steps; ++i) s.alpha_bars_[i] = alpha_bars_[taken[i]];
    return s;
}

int NoiseSchedule::checked(int t) const {
    if (t < 1 || t > steps()) throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, T]");
    return t;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_.at(checked(t) - 1);
}

double NoiseSchedule::posterior_variance(int t) const {
    checked(t);
    if (t == 1) return 0.0;
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

NoiseSchedule default_schedule() {
    return NoiseSchedule::from_spec(ScheduleSpec{});
}

namespace {

void check_step(int t, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.steps())
        throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.steps()) + "]");
}

}  // namespace

ImageTensor q_sample(const ImageTensor& x0, int t, const ImageTensor& noise, const NoiseSchedule& sched) {
    require_same_shape(x0, noise, "q_sample");
    check_step(t, sched);
    const double abar = sched.alpha_bar(t);
    ImageTensor out = ImageTensor::zeros(x0.shape());
    simd::active_kernels().axpby(std::sqrt(abar), x0.data().data(), std::sqrt(1.0 - abar), noise.data().data(),
                                 out.data().data(), out.size());
    return out;
}

ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, const NoiseSchedule& sched) {
    require_same_shape(x_t, eps_hat, "predict_x0");
    check_step(t, sched);
    const double abar = sched.alpha_bar(t);
    const double root = std::sqrt(abar);
    ImageTensor out = ImageTensor::zeros(x_t.shape());
    simd::active_kernels().axpby(1.0 / root, x_t.data().data(), -std::sqrt(1.0 - abar) / root, eps_hat.data().data(),
                                 out.data().data(), out.size());
    return out;
}

PosteriorParams posterior_params(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                                 const NoiseSchedule& sched) {
    require_same_shape(x_t, eps_hat, "posterior_params");
    const double beta = sched.beta(t);
    const double inv_root_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
    PosteriorParams p{ImageTensor::zeros(x_t.shape()), sched.posterior_variance(t)};
    simd::active_kernels().axpby(inv_root_alpha, x_t.data().data(), -inv_root_alpha * coef, eps_hat.data().data(),
                                 p.mean.data().data(), p.mean.size());
    return p;
}

}  // namespace blendiff
