#pragma once

// Applications built on the samplers: ranked multi-sample edits, scribble
// edits, background replacement, extrapolation and iterative sessions.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blendiff/sampler.hpp"

namespace blendiff {

enum class Application { object_edit, background_replace, scribble, extrapolate };

std::string to_string(Application app);
Application application_from_string(const std::string& s);

struct ScribbleParams {
    ImageTensor layer;  // same shape as the base image
    Mask mask;          // where the layer is painted
    // User-supplied edit mask; when absent the scribble mask is dilated.
    std::optional<Mask> edit_mask;
    int dilate_radius = 3;
};

struct ExtrapolateParams {
    std::string prompt_left;
    std::string prompt_right;
    int segments_left = 0;
    int segments_right = 0;
    int k_min = 40;
    int k_max = 75;
    int k_denoise = 20;
    // Samples drawn per segment; the best-scoring one is kept.
    int samples_per_segment = 1;
};

inline constexpr int kScribbleDefaultK = 60;
inline constexpr int kBackgroundDefaultK = 67;

struct EditJob {
    SampleRequest request;
    int num_samples = 64;
    Application application = Application::object_edit;
    std::optional<ScribbleParams> scribble;
    std::optional<ExtrapolateParams> extrapolate;
};

void validate(const EditJob& job, const NoiseSchedule& sched);

struct EditResult {
    ImageTensor image;
    double score = 0.0;  // -clip_distance, higher is better
    std::uint64_t seed = 0;
    int rank = 0;
};

struct SampleFailure {
    std::uint64_t seed = 0;
    std::string message;
};

struct EditOutcome {
    std::vector<EditResult> results;  // sorted, ranks 1..n
    std::vector<SampleFailure> failures;
    Mask effective_mask;              // mask the background guarantee holds on
    ImageTensor effective_source;     // image the guarantee refers to
};

struct EditEngine {
    const Denoiser& denoiser;
    const GuidanceModel& guidance;
    const NoiseSchedule& schedule;
    unsigned workers = 0;  // 0 = hardware concurrency
};

using ProgressFn = std::function<void(int done, int total)>;

// Score of a finished image: -clip_distance over the full-resolution mask,
// 0 when there is no prompt.
double score_image(const GuidanceModel& model, const ImageTensor& image, const Mask& mask, const std::string& prompt);

// Runs num_samples samplers with seeds seed + i, scores and ranks them.
// Throws SamplingError only if every sample failed.
EditOutcome run_edit_outcome(const EditJob& job, const EditEngine& engine, const ProgressFn& progress = {});
std::vector<EditResult> run_edit(const EditJob& job, const EditEngine& engine, const ProgressFn& progress = {});

// Pastes the scribble layer onto the base image.
ImageTensor composite_scribble(const ImageTensor& base, const ScribbleParams& scribble);
Mask scribble_edit_mask(const ScribbleParams& scribble);

std::vector<EditResult> scribble_edit(const ImageTensor& base, const ScribbleParams& scribble,
                                      const std::string& prompt, const EditEngine& engine, int k = kScribbleDefaultK,
                                      int num_samples = 1, std::uint64_t seed = 0);

// The user masks the background; this is object_edit with a different default k.
std::vector<EditResult> background_replace(const ImageTensor& image, const Mask& background_mask,
                                           const std::string& prompt, const EditEngine& engine,
                                           int k = kBackgroundDefaultK, int num_samples = 1, std::uint64_t seed = 0);

// Step count for segment i of n, growing linearly from k_min to k_max.
int extrapolation_k(int segment, int segments, int k_min, int k_max);

// Widens the image by W/4 per segment on each side. `base` carries the
// sampler settings (sampler kind, lambda, augmentations, guidance scale).
ImageTensor extrapolate(const ImageTensor& image, const ExtrapolateParams& params, const SampleRequest& base,
                        const EditEngine& engine);

struct SessionStep {
    EditJob job;
    std::vector<EditResult> results;  // images may be dropped after a choice
    std::optional<int> chosen_rank;
    ImageTensor chosen;
};

// Ordered chain of edits; step i's source is step i-1's chosen output.
class Session {
  public:
    Session() = default;
    Session(std::string id, ImageTensor canvas);

    const std::string& id() const { return id_; }
    const ImageTensor& canvas() const { return canvas_; }
    const ImageTensor& initial() const { return initial_; }
    const std::vector<SessionStep>& steps() const { return steps_; }

    // Adds a pending step whose source is the current canvas.
    // Throws IllegalTransition if the previous step has no choice yet.
    void append(EditJob job);
    void attach_results(std::vector<EditResult> results);
    // Makes result `rank` of the last step the new canvas.
    void choose(int rank);
    bool pending() const;
    // Drops a pending step that has no chosen result (e.g. its job failed).
    void abandon_pending();

    std::string export_json() const;
    static Session import_json(const std::string& text);

  private:
    std::string id_;
    ImageTensor initial_;
    ImageTensor canvas_;
    std::vector<SessionStep> steps_;
};

}  // namespace blendiff
