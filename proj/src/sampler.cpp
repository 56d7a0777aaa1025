#include "blendiff/sampler.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "blendiff/base64.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/parallel.hpp"
#include "blendiff/rng.hpp"
#include "blendiff/simd/kernels.hpp"

namespace blendiff {

std::string to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::local_guided: return "local";
        case SamplerKind::blended: return "blended";
        case SamplerKind::ddim_blended: return "ddim";
        case SamplerKind::naive_blend: return "naive";
    }
    return "blended";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
    if (s == "local" || s == "local_guided") return SamplerKind::local_guided;
    if (s == "blended") return SamplerKind::blended;
    if (s == "ddim" || s == "ddim_blended") return SamplerKind::ddim_blended;
    if (s == "naive" || s == "naive_blend") return SamplerKind::naive_blend;
    throw InvalidArgument("unknown sampler '" + s + "' (expected blended, local, ddim or naive)");
}

void Trace::write_jsonl(std::ostream& out) const {
    for (const auto& r : steps) {
        nlohmann::json j{{"t", r.t}, {"loss", r.loss}, {"grad_norm", r.grad_norm}};
        if (keep_images && !r.x_t.empty()) {
            j["shape"] = {r.x_t.height(), r.x_t.width(), r.x_t.channels()};
            const auto encode = [](const ImageTensor& img) {
                return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(img.data().data()),
                                               img.size() * sizeof(double)));
            };
            j["x_t_f64"] = encode(r.x_t);
            j["x0_hat_f64"] = encode(r.x0_hat);
        }
        out << j.dump() << '\n';
    }
}

void validate(const SampleRequest& req, const NoiseSchedule& sched) {
    if (req.source.empty()) throw InvalidArgument("request has no source image");
    require_mask_fits(req.source, req.mask, "sample request");
    if (req.k < 0 || req.k > sched.steps())
        throw InvalidArgument("k must lie in [0, " + std::to_string(sched.steps()) + "], got " + std::to_string(req.k));
    if (!(req.lambda >= 0.0) || !std::isfinite(req.lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    if (req.augmentations < 1) throw InvalidArgument("augmentation count must be >= 1");
    if (!std::isfinite(req.guidance_scale)) throw InvalidArgument("guidance scale must be finite");
}

namespace {

enum class Mode { local, blended, ddim };

ImageTensor run_chain(const SampleRequest& req, const SamplerContext& ctx, Mode mode, double lambda) {
    const NoiseSchedule& sched = ctx.schedule;
    validate(req, sched);
    const bool use_prompt = !req.prompt.empty() && req.guidance_scale != 0.0;
    if (use_prompt && !ctx.guidance.knows(req.prompt)) throw UnknownPrompt(req.prompt, ctx.guidance.prompts());
    const bool use_bg_term = mode == Mode::local && lambda > 0.0 && req.guidance_scale != 0.0;
    const bool guided = use_prompt || use_bg_term;
    const bool blending = mode != Mode::local;

    if (req.k == 0) return req.source;

    const auto& kern = simd::active_kernels();
    Rng init_rng(derive_seed(req.seed, Stream::init));
    Rng fg_rng(derive_seed(req.seed, Stream::foreground));
    Rng bg_rng(derive_seed(req.seed, Stream::background));
    Rng aug_rng(derive_seed(req.seed, Stream::augment));

    ImageTensor x = q_sample(req.source, req.k, init_rng.normal_like(req.source), sched);
    ImageTensor fg = ImageTensor::zeros(x.shape());
    ImageTensor z_fg = ImageTensor::zeros(x.shape());
    ImageTensor z_bg = ImageTensor::zeros(x.shape());
    const std::size_t n = x.size();

    GuidanceOptions gopts;
    gopts.augmentations = req.augmentations;
    gopts.lambda = use_bg_term ? lambda : 0.0;
    gopts.augment_bg_loss = req.augment_bg_loss;
    const std::string prompt = use_prompt ? req.prompt : std::string();

    for (int t = req.k; t >= 1; --t) {
        if (mode != Mode::ddim) fg_rng.fill_normal(z_fg.data());
        if (blending) bg_rng.fill_normal(z_bg.data());

        const ImageTensor eps = ctx.denoiser.predict_eps(x, t, sched);
        const ImageTensor x0_hat = predict_x0(x, eps, t, sched);

        ImageTensor g;
        double grad_norm = 0.0;
        if (guided) {
            g = guidance_gradient(ctx.guidance, x0_hat, req.source, req.mask, prompt, gopts, aug_rng);
            grad_norm = l2_norm(g);
        }

        if (mode == Mode::ddim) {
            const double abar = sched.alpha_bar(t);
            const double abar_prev = sched.alpha_bar(t - 1);
            ImageTensor eps_hat = eps;
            if (guided)
                kern.axpby(1.0, eps.data().data(), -std::sqrt(1.0 - abar) * req.guidance_scale, g.data().data(),
                           eps_hat.data().data(), n);
            const ImageTensor x0_guided = predict_x0(x, eps_hat, t, sched);
            kern.axpby(std::sqrt(abar_prev), x0_guided.data().data(), std::sqrt(1.0 - abar_prev),
                       eps_hat.data().data(), fg.data().data(), n);
        } else {
            const PosteriorParams post = posterior_params(x, eps, t, sched);
            const double sigma = std::sqrt(post.variance);
            if (guided) {
                kern.xpaypbz(post.mean.data().data(), post.variance * req.guidance_scale, g.data().data(), sigma,
                             z_fg.data().data(), fg.data().data(), n);
            } else {
                kern.axpby(1.0, post.mean.data().data(), sigma, z_fg.data().data(), fg.data().data(), n);
            }
        }

        if (blending) {
            const int t_bg = req.bg_index_shift ? t - 1 : t;
            const ImageTensor x_bg = q_sample(req.source, t_bg, z_bg, sched);
            x = blend(fg, x_bg, req.mask);
        } else {
            x = fg;
        }

        if (!x.all_finite()) throw SamplingError("non-finite latent", t, grad_norm);

        if (ctx.trace) {
            TraceRecord rec;
            rec.t = t;
            rec.grad_norm = grad_norm;
            if (ctx.trace->keep_images) {
                rec.x_t = x;
                rec.x0_hat = x0_hat;
            }
            if (ctx.trace->compute_loss && use_prompt)
                rec.loss = clip_distance(ctx.guidance, x0_hat, req.mask, req.prompt);
            ctx.trace->steps.push_back(std::move(rec));
        }
        if (ctx.on_step) ctx.on_step(req.k - t + 1, req.k);
    }
    return fg;
}

}  // namespace

ImageTensor sample_blended(const SampleRequest& req, const SamplerContext& ctx) {
    const ImageTensor fg = run_chain(req, ctx, Mode::blended, 0.0);
    return paste(fg, req.source, req.mask);
}

ImageTensor sample_local_guided(const SampleRequest& req, const SamplerContext& ctx) {
    return run_chain(req, ctx, Mode::local, req.lambda);
}

ImageTensor sample_ddim_blended(const SampleRequest& req, const SamplerContext& ctx) {
    const ImageTensor fg = run_chain(req, ctx, Mode::ddim, 0.0);
    return paste(fg, req.source, req.mask);
}

ImageTensor sample_naive_blend(const SampleRequest& req, const SamplerContext& ctx) {
    const ImageTensor generated = run_chain(req, ctx, Mode::local, 0.0);
    return paste(generated, req.source, req.mask);
}

ImageTensor sample(const SampleRequest& req, const SamplerContext& ctx) {
    switch (req.sampler) {
        case SamplerKind::local_guided: return sample_local_guided(req, ctx);
        case SamplerKind::blended: return sample_blended(req, ctx);
        case SamplerKind::ddim_blended: return sample_ddim_blended(req, ctx);
        case SamplerKind::naive_blend: return sample_naive_blend(req, ctx);
    }
    throw InvalidArgument("unknown sampler");
}

std::vector<ImageTensor> sample_batch(const SampleRequest& req, const SamplerContext& ctx, int count,
                                      unsigned workers) {
    std::vector<ImageTensor> out(std::max(count, 0));
    SamplerContext local{ctx.denoiser, ctx.guidance, ctx.schedule, nullptr, nullptr};
    parallel_for(count, workers, [&](int i) {
        SampleRequest r = req;
        r.seed = req.seed + static_cast<std::uint64_t>(i);
        out[i] = sample(r, local);
    });
    return out;
}

}  // namespace blendiff
