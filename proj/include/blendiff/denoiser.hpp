#pragma once

// Noise predictors eps(x_t, t). The Gaussian-mixture denoiser is the exact
// Bayes-optimal predictor for a known mixture prior; LoadedNet runs a small
// feed-forward network read from a weights file.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blendiff/schedule.hpp"
#include "blendiff/tensor.hpp"

namespace blendiff {

class Rng;

class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual ImageTensor predict_eps(const ImageTensor& x_t, int t, const NoiseSchedule& sched) const = 0;
    virtual std::string describe() const = 0;
};

struct GmmComponent {
    double weight = 1.0;
    ImageTensor mean;
    double sigma = 1.0;
};

class GaussianMixturePrior {
  public:
    explicit GaussianMixturePrior(std::vector<GmmComponent> components);

    // JSON: {"height", "width", "channels", "components": [{"weight", "mean_path_or_const", "sigma"}]}.
    // A string mean is an image path relative to the JSON file.
    static GaussianMixturePrior load(const std::string& path);
    static GaussianMixturePrior parse(const std::string& json_text, const std::string& base_dir = ".");

    const std::vector<GmmComponent>& components() const { return components_; }
    Shape shape() const { return components_.front().mean.shape(); }

    ImageTensor mean() const;
    // Per-element variance of the mixture (diagonal of its covariance).
    ImageTensor variance() const;

    // Draws exact samples from the prior.
    ImageTensor sample(Rng& rng) const;

    // True when every component mean is constant within each channel.
    bool spatially_constant() const;
    // Same mixture on another canvas size; requires spatially_constant().
    GaussianMixturePrior broadcast_to(Shape shape) const;

  private:
    std::vector<GmmComponent> components_;
};

struct GmmPosterior {
    std::vector<double> responsibilities;
    ImageTensor x0_mean;
};

// Mixture posterior over x0 given x_t; responsibilities computed in log space.
GmmPosterior gmm_posterior(const GaussianMixturePrior& prior, const ImageTensor& x_t, int t,
                           const NoiseSchedule& sched);
ImageTensor gmm_predict_eps(const GaussianMixturePrior& prior, const ImageTensor& x_t, int t,
                            const NoiseSchedule& sched);

class GmmDenoiser final : public Denoiser {
  public:
    explicit GmmDenoiser(GaussianMixturePrior prior) : prior_(std::move(prior)) {}
    // Priors with per-channel constant means follow the input's size.
    ImageTensor predict_eps(const ImageTensor& x_t, int t, const NoiseSchedule& sched) const override;
    std::string describe() const override;
    const GaussianMixturePrior& prior() const { return prior_; }

  private:
    GaussianMixturePrior prior_;
};

enum class Activation { relu, tanh, identity };

struct DenseLayer {
    int rows = 0;  // outputs
    int cols = 0;  // inputs
    Activation activation = Activation::identity;
    std::vector<float> weights;  // rows x cols, row-major
    std::vector<float> bias;     // rows
};

// Weights file: "BDNET1\n", one line of JSON
// {"layers":[{"rows","cols","activation"}], "input_shape":[H,W,C], "output_shape":[H,W,C]},
// then little-endian float32 weights-then-bias for each layer.
class LoadedNet {
  public:
    LoadedNet(std::vector<DenseLayer> layers, Shape input_shape, Shape output_shape);

    static LoadedNet load(const std::string& path);
    static LoadedNet parse(std::span<const std::uint8_t> bytes);
    std::vector<std::uint8_t> serialize() const;

    const std::vector<DenseLayer>& layers() const { return layers_; }
    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return output_shape_; }
    std::size_t input_size() const { return static_cast<std::size_t>(layers_.front().cols); }

    std::vector<double> forward(std::span<const double> input) const;

  private:
    std::vector<DenseLayer> layers_;
    Shape input_shape_;
    Shape output_shape_;
};

// Runs the network on [flatten(x_t), t / T].
ImageTensor net_predict_eps(const LoadedNet& net, const ImageTensor& x_t, int t, int T);

class NetDenoiser final : public Denoiser {
  public:
    explicit NetDenoiser(LoadedNet net) : net_(std::move(net)) {}
    ImageTensor predict_eps(const ImageTensor& x_t, int t, const NoiseSchedule& sched) const override {
        return net_predict_eps(net_, x_t, t, sched.steps());
    }
    std::string describe() const override { return "loaded-net"; }

  private:
    LoadedNet net_;
};

}  // namespace blendiff
