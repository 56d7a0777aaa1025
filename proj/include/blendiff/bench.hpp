#pragma once

// Moment-matching benchmark: unguided blended sampling from a Gaussian
// mixture prior compared with the prior's analytic mean and variance.

#include <string>
#include <vector>

#include <json.hpp>

#include "blendiff/sampler.hpp"

namespace blendiff {

struct GmmComponentSpec {
    double weight = 1.0;
    double mean = 0.0;  // constant mean image value
    double sigma = 1.0;
};

// "w:mean:sigma[,w:mean:sigma...]"; a single "mean:sigma" pair means weight 1.
std::vector<GmmComponentSpec> parse_component_spec(const std::string& spec);
GaussianMixturePrior make_constant_prior(const std::vector<GmmComponentSpec>& comps, Shape shape);

struct GmmBenchConfig {
    std::vector<GmmComponentSpec> components{{1.0, 0.5, 0.2}};
    int height = 8;
    int width = 8;
    int channels = 3;
    int steps = 100;  // respaced steps of the default linear schedule
    int runs = 10000;
    std::uint64_t seed = 0;
    SamplerKind sampler = SamplerKind::blended;
    unsigned workers = 0;
    double mean_tolerance = 0.05;
    double variance_tolerance = 0.10;
};

struct GmmBenchReport {
    ImageTensor analytic_mean;
    ImageTensor analytic_variance;
    ImageTensor empirical_mean;
    ImageTensor empirical_variance;
    // Largest per-pixel relative error.
    double mean_rel_error = 0.0;
    double variance_rel_error = 0.0;
    bool mean_ok = false;
    bool variance_ok = false;
    double seconds = 0.0;

    nlohmann::json to_json(const GmmBenchConfig& config) const;
};

GmmBenchReport run_gmm_bench(const GmmBenchConfig& config);

}  // namespace blendiff
