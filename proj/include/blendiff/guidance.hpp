#pragma once

// Guidance losses: masked embedding distance, background preservation,
// the perceptual proxy, and gradient averaging over projective augmentations.

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "blendiff/rng.hpp"
#include "blendiff/tensor.hpp"
#include "blendiff/warp.hpp"

namespace blendiff {

// Joint image/text embedder with a pullback for image gradients.
class GuidanceModel {
  public:
    virtual ~GuidanceModel() = default;

    virtual std::size_t dim() const = 0;
    // Square side images are resized to before embedding; 0 keeps the native size.
    virtual int input_size() const = 0;

    // Unit-norm embedding of an image already at the model's input size.
    virtual std::vector<double> embed_image(const ImageTensor& image) const = 0;
    // Gradient w.r.t. the image of <embed_image(image), cotangent>.
    virtual ImageTensor embed_image_vjp(const ImageTensor& image, std::span<const double> cotangent) const = 0;
    // Unit-norm embedding of a prompt; throws UnknownPrompt.
    virtual std::vector<double> embed_text(const std::string& prompt) const = 0;
    virtual std::vector<std::string> prompts() const = 0;

    bool knows(const std::string& prompt) const;
};

// Reference embedder: eight differentiable image statistics matched against
// a lexicon of prompt vectors.
class LexiconEmbedder final : public GuidanceModel {
  public:
    static constexpr std::size_t kDim = 8;
    using Stats = std::array<double, kDim>;

    explicit LexiconEmbedder(std::map<std::string, std::vector<double>> lexicon, int input_size = 64);

    // JSON {"prompts": {"<prompt>": [8 numbers]}}.
    static LexiconEmbedder load(const std::string& path, int input_size = 64);
    static LexiconEmbedder parse(const std::string& json_text, int input_size = 64);

    // mean R, mean G, mean B, luminance std, mean Sobel magnitude,
    // horizontal/vertical edge-energy ratio, bright fraction, 4x-pooled mean luminance
    static Stats statistics(const ImageTensor& image);
    // Gradient w.r.t. the image of <statistics(image), weights>.
    static ImageTensor statistics_vjp(const ImageTensor& image, const Stats& weights);

    std::size_t dim() const override { return kDim; }
    int input_size() const override { return input_size_; }
    std::vector<double> embed_image(const ImageTensor& image) const override;
    ImageTensor embed_image_vjp(const ImageTensor& image, std::span<const double> cotangent) const override;
    std::vector<double> embed_text(const std::string& prompt) const override;
    std::vector<std::string> prompts() const override;

  private:
    std::map<std::string, std::vector<double>> lexicon_;
    int input_size_;
};

// 1 - <embed_image(resize(image * mask)), embed_text(prompt)>, in [0, 2].
double clip_distance(const GuidanceModel& model, const ImageTensor& image, const Mask& mask,
                     const std::string& prompt);
ImageTensor clip_distance_grad(const GuidanceModel& model, const ImageTensor& image, const Mask& mask,
                               const std::string& prompt);

// Multi-scale seeded filter-bank distance standing in for a learned perceptual metric.
double perceptual_proxy(const ImageTensor& x1, const ImageTensor& x2);
// Gradient w.r.t. x2.
ImageTensor perceptual_proxy_grad(const ImageTensor& x1, const ImageTensor& x2);
// The 8 normalized 3x3 filters (row-major), exposed for inspection and tests.
const std::array<std::array<double, 9>, 8>& perceptual_filters();

double mse(const ImageTensor& a, const ImageTensor& b);

// 1/2 (MSE + proxy) between x1 and x2 outside the mask.
double bg_distance(const ImageTensor& x1, const ImageTensor& x2, const Mask& mask);
// Gradient w.r.t. x2.
ImageTensor bg_distance_grad(const ImageTensor& x1, const ImageTensor& x2, const Mask& mask);

struct Augmentation {
    ImageTensor image;
    Mask mask;
    ProjectiveTransform transform;
};

inline constexpr double kDefaultCornerJitter = 0.10;

// First transform is the identity; the rest jitter each image corner
// uniformly within +-jitter of the side length. Draws 8 uniforms per
// non-identity transform, corner by corner (x then y).
std::vector<ProjectiveTransform> draw_augmentation_transforms(int height, int width, int count, Rng& rng,
                                                              double jitter = kDefaultCornerJitter);
std::vector<Augmentation> extending_augmentations(const ImageTensor& image, const Mask& mask, int count, Rng& rng,
                                                  double jitter = kDefaultCornerJitter);

struct GuidanceOptions {
    int augmentations = 16;
    double lambda = 0.0;
    // Evaluate the background term on the augmented copies as well.
    bool augment_bg_loss = false;
    double jitter = kDefaultCornerJitter;
};

// Total loss averaged over the given transforms (forward only).
double guidance_loss(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                     const Mask& mask, const std::string& prompt, std::span<const ProjectiveTransform> transforms,
                     double lambda, bool augment_bg_loss = false);

// Gradient of guidance_loss w.r.t. x0_hat; augmented gradients are mapped
// back through each warp's adjoint before averaging.
ImageTensor guidance_loss_grad(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                               const Mask& mask, const std::string& prompt,
                               std::span<const ProjectiveTransform> transforms, double lambda,
                               bool augment_bg_loss = false);

// Draws N augmentations from rng and returns the descent direction
// -grad(D_CLIP averaged over augmentations + lambda * D_bg).
ImageTensor guidance_gradient(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                              const Mask& mask, const std::string& prompt, const GuidanceOptions& options, Rng& rng);

}  // namespace blendiff
