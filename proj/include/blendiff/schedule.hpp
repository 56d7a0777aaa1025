#pragma once

// Noise schedules and the closed-form forward/reverse diffusion algebra.
// Timesteps are 1-based; alpha_bar(0) == 1.

#include <string>
#include <vector>

#include <json.hpp>

#include "blendiff/tensor.hpp"

namespace blendiff {

enum class ScheduleKind { linear, cosine, custom };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Reproducible description of a schedule. respaced_steps == 0 means "use all T steps".
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::linear;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int respaced_steps = 100;
    std::vector<double> betas;  // custom kind only
};

void to_json(nlohmann::json& j, const ScheduleSpec& spec);
void from_json(const nlohmann::json& j, ScheduleSpec& spec);

class NoiseSchedule {
  public:
    static NoiseSchedule make(ScheduleKind kind, int T, double beta_start = 1e-4, double beta_end = 0.02);
    static NoiseSchedule from_betas(std::vector<double> betas);
    static NoiseSchedule from_spec(const ScheduleSpec& spec);

    // Evenly spaced subsequence of `steps` timesteps with beta recomputed from
    // consecutive alpha_bar ratios.
    NoiseSchedule respaced(int steps) const;

    ScheduleKind kind() const { return kind_; }
    int steps() const { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_.at(checked(t) - 1); }
    double alpha(int t) const { return alphas_.at(checked(t) - 1); }
    double alpha_bar(int t) const;
    // Fixed posterior variance beta_tilde_t; zero at t == 1.
    double posterior_variance(int t) const;

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }
    // Original-schedule timestep (1-based) that each step maps to.
    const std::vector<int>& source_timesteps() const { return source_timesteps_; }

    const ScheduleSpec& spec() const { return spec_; }

  private:
    NoiseSchedule() = default;
    void finish();
    int checked(int t) const;

    ScheduleKind kind_ = ScheduleKind::linear;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<int> source_timesteps_;
    ScheduleSpec spec_;
};

// Default: linear, T=1000, beta 1e-4..0.02, respaced to 100 steps.
NoiseSchedule default_schedule();

struct PosteriorParams {
    ImageTensor mean;
    double variance = 0.0;
};

// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
ImageTensor q_sample(const ImageTensor& x0, int t, const ImageTensor& noise, const NoiseSchedule& sched);

// Clean-image estimate from a noise prediction; exact inverse of q_sample.
ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, const NoiseSchedule& sched);

PosteriorParams posterior_params(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                                 const NoiseSchedule& sched);

}  // namespace blendiff
