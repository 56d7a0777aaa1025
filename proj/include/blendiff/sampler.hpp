#pragma once

// Guided reverse-diffusion samplers for local editing.
//
// RNG contract: a run with seed s uses four independent streams derived from
// s (see Stream): the initial noising draw, one foreground draw per step, one
// background draw per step, and the augmentation transforms per step. Within
// each stream draws happen in step order k, k-1, ..., 1.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "blendiff/denoiser.hpp"
#include "blendiff/guidance.hpp"
#include "blendiff/schedule.hpp"

namespace blendiff {

enum class SamplerKind { local_guided, blended, ddim_blended, naive_blend };

std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& s);

struct SampleRequest {
    ImageTensor source;
    Mask mask;
    std::string prompt;  // empty: unguided (removal / pure inpainting)
    int k = 75;
    SamplerKind sampler = SamplerKind::blended;
    double lambda = 1000.0;  // local_guided only
    int augmentations = 16;
    std::uint64_t seed = 0;
    double guidance_scale = 1.0;
    // Noise the background with alpha_bar_{t-1} instead of alpha_bar_t.
    bool bg_index_shift = false;
    bool augment_bg_loss = false;
};

struct TraceRecord {
    int t = 0;
    ImageTensor x_t;
    ImageTensor x0_hat;
    double loss = 0.0;
    double grad_norm = 0.0;
};

struct Trace {
    bool keep_images = true;
    bool compute_loss = false;
    std::vector<TraceRecord> steps;

    void write_jsonl(std::ostream& out) const;
};

struct SamplerContext {
    const Denoiser& denoiser;
    const GuidanceModel& guidance;
    const NoiseSchedule& schedule;
    Trace* trace = nullptr;
    // Called after every step with (steps done, steps total).
    std::function<void(int, int)> on_step;
};

void validate(const SampleRequest& req, const NoiseSchedule& sched);

ImageTensor sample_blended(const SampleRequest& req, const SamplerContext& ctx);
ImageTensor sample_local_guided(const SampleRequest& req, const SamplerContext& ctx);
ImageTensor sample_ddim_blended(const SampleRequest& req, const SamplerContext& ctx);
ImageTensor sample_naive_blend(const SampleRequest& req, const SamplerContext& ctx);

// Dispatches on req.sampler.
ImageTensor sample(const SampleRequest& req, const SamplerContext& ctx);

// Runs `count` independent samples with seeds base_seed + i on up to
// `workers` threads (0 = hardware concurrency). Output order follows i.
std::vector<ImageTensor> sample_batch(const SampleRequest& req, const SamplerContext& ctx, int count,
                                      unsigned workers = 0);

}  // namespace blendiff
