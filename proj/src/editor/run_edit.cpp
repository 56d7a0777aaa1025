#include <algorithm>
#include <atomic>
#include <mutex>

#include "blendiff/editor.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/parallel.hpp"

namespace blendiff {

std::string to_string(Application app) {
    switch (app) {
        case Application::object_edit: return "object_edit";
        case Application::background_replace: return "background_replace";
        case Application::scribble: return "scribble";
        case Application::extrapolate: return "extrapolate";
    }
    return "object_edit";
}

Application application_from_string(const std::string& s) {
    if (s == "object_edit" || s == "edit") return Application::object_edit;
    if (s == "background_replace" || s == "background") return Application::background_replace;
    if (s == "scribble") return Application::scribble;
    if (s == "extrapolate") return Application::extrapolate;
    throw InvalidArgument("unknown application '" + s + "'");
}

void validate(const EditJob& job, const NoiseSchedule& sched) {
    if (job.num_samples < 1) throw InvalidArgument("num_samples must be >= 1");
    const bool needs_scribble = job.application == Application::scribble;
    const bool needs_extrapolate = job.application == Application::extrapolate;
    if (needs_scribble != job.scribble.has_value())
        throw InvalidArgument(needs_scribble ? "scribble job needs scribble parameters"
                                             : "scribble parameters given for a non-scribble job");
    if (needs_extrapolate != job.extrapolate.has_value())
        throw InvalidArgument(needs_extrapolate ? "extrapolate job needs extrapolation parameters"
                                                : "extrapolation parameters given for a non-extrapolate job");
    if (needs_extrapolate) {
        const auto& p = *job.extrapolate;
        if (job.request.source.empty()) throw InvalidArgument("request has no source image");
        if (p.segments_left < 0 || p.segments_right < 0) throw InvalidArgument("segment counts must be >= 0");
        if (job.request.source.width() % 4 != 0)
            throw InvalidArgument("extrapolation needs a width divisible by 4, got " +
                                  std::to_string(job.request.source.width()));
        if (p.k_min < 0 || p.k_max > sched.steps() || p.k_min > p.k_max || p.k_denoise < 0 ||
            p.k_denoise > sched.steps())
            throw InvalidArgument("extrapolation step counts out of range");
        if (p.samples_per_segment < 1) throw InvalidArgument("samples_per_segment must be >= 1");
        return;
    }
    SampleRequest probe = job.request;
    if (needs_scribble) {
        const auto& s = *job.scribble;
        if (!s.mask.any()) throw InvalidArgument("scribble mask is empty");
        require_mask_fits(probe.source, s.mask, "scribble mask");
        require_same_shape(probe.source, s.layer, "scribble layer");
        if (s.edit_mask) require_mask_fits(probe.source, *s.edit_mask, "scribble edit mask");
        if (s.dilate_radius < 0) throw InvalidArgument("dilation radius must be >= 0");
        probe.mask = Mask(probe.source.height(), probe.source.width(), 1.0);
    }
    validate(probe, sched);
}

double score_image(const GuidanceModel& model, const ImageTensor& image, const Mask& mask, const std::string& prompt) {
    if (prompt.empty()) return 0.0;
    return -clip_distance(model, image, mask, prompt);
}

namespace {

// Effective request of an object/background/scribble job.
SampleRequest effective_request(const EditJob& job) {
    SampleRequest req = job.request;
    if (job.application == Application::scribble) {
        req.source = composite_scribble(job.request.source, *job.scribble);
        req.mask = scribble_edit_mask(*job.scribble);
    }
    if (req.prompt.empty()) req.guidance_scale = 0.0;
    return req;
}

double extrapolation_score(const GuidanceModel& model, const ImageTensor& out, int width,
                           const ExtrapolateParams& p) {
    double total = 0.0;
    int terms = 0;
    const Mask full(out.height(), width, 1.0);
    if (p.segments_left > 0 && !p.prompt_left.empty()) {
        total += score_image(model, crop_columns(out, 0, width), full, p.prompt_left);
        ++terms;
    }
    if (p.segments_right > 0 && !p.prompt_right.empty()) {
        total += score_image(model, crop_columns(out, out.width() - width, width), full, p.prompt_right);
        ++terms;
    }
    return terms ? total / terms : 0.0;
}

}  // namespace

EditOutcome run_edit_outcome(const EditJob& job, const EditEngine& engine, const ProgressFn& progress) {
    validate(job, engine.schedule);
    const int n = job.num_samples;
    EditOutcome outcome;

    SampleRequest req;
    if (job.application == Application::extrapolate) {
        req = job.request;
        if (req.prompt.empty() && job.extrapolate->prompt_left.empty() && job.extrapolate->prompt_right.empty())
            req.guidance_scale = 0.0;
    } else {
        req = effective_request(job);
        if (!req.prompt.empty() && !engine.guidance.knows(req.prompt))
            throw UnknownPrompt(req.prompt, engine.guidance.prompts());
        outcome.effective_mask = req.mask;
        outcome.effective_source = req.source;
    }

    std::vector<std::optional<EditResult>> slots(n);
    std::vector<std::string> errors(n);
    std::atomic<int> done{0};
    std::mutex progress_mutex;
    const SamplerContext ctx{engine.denoiser, engine.guidance, engine.schedule, nullptr, nullptr};
    // Samples run one per worker; nested extrapolation edits stay sequential.
    const EditEngine inner{engine.denoiser, engine.guidance, engine.schedule, 1};

    parallel_for(n, engine.workers, [&](int i) {
        const std::uint64_t seed = req.seed + static_cast<std::uint64_t>(i);
        try {
            EditResult r;
            r.seed = seed;
            if (job.application == Application::extrapolate) {
                SampleRequest base = req;
                base.seed = seed;
                r.image = extrapolate(req.source, *job.extrapolate, base, inner);
                r.score = extrapolation_score(engine.guidance, r.image, req.source.width(), *job.extrapolate);
            } else {
                SampleRequest one = req;
                one.seed = seed;
                r.image = sample(one, ctx);
                r.score = score_image(engine.guidance, r.image, one.mask, one.prompt);
            }
            slots[i] = std::move(r);
        } catch (const UnknownPrompt&) {
            throw;
        } catch (const InvalidArgument&) {
            throw;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
        const int finished = ++done;
        if (progress) {
            std::lock_guard lock(progress_mutex);
            progress(finished, n);
        }
    });

    for (int i = 0; i < n; ++i) {
        if (slots[i])
            outcome.results.push_back(std::move(*slots[i]));
        else
            outcome.failures.push_back({req.seed + static_cast<std::uint64_t>(i), errors[i]});
    }
    if (outcome.results.empty())
        throw SamplingError("all " + std::to_string(n) + " samples failed; first: " + outcome.failures.front().message,
                            0, 0.0);
    std::stable_sort(outcome.results.begin(), outcome.results.end(), [](const EditResult& a, const EditResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.seed < b.seed;
    });
    for (std::size_t i = 0; i < outcome.results.size(); ++i) outcome.results[i].rank = static_cast<int>(i) + 1;
    return outcome;
}

std::vector<EditResult> run_edit(const EditJob& job, const EditEngine& engine, const ProgressFn& progress) {
    return run_edit_outcome(job, engine, progress).results;
}

}  // namespace blendiff
