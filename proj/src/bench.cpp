#include "blendiff/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "blendiff/parallel.hpp"

namespace blendiff {

std::vector<GmmComponentSpec> parse_component_spec(const std::string& spec) {
    std::vector<GmmComponentSpec> out;
    std::stringstream items(spec);
    std::string item;
    while (std::getline(items, item, ',')) {
        std::vector<double> values;
        std::stringstream fields(item);
        std::string f;
        while (std::getline(fields, f, ':')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(f, &used));
                if (used != f.size()) throw std::invalid_argument(f);
            } catch (const std::exception&) {
                throw InvalidArgument("bad number '" + f + "' in component spec '" + spec + "'");
            }
        }
        if (values.size() == 2)
            out.push_back({1.0, values[0], values[1]});
        else if (values.size() == 3)
            out.push_back({values[0], values[1], values[2]});
        else
            throw InvalidArgument("component '" + item + "' must be w:mean:sigma or mean:sigma");
    }
    if (out.empty()) throw InvalidArgument("empty component spec");
    return out;
}

GaussianMixturePrior make_constant_prior(const std::vector<GmmComponentSpec>& comps, Shape shape) {
    std::vector<GmmComponent> out;
    for (const auto& c : comps) out.push_back({c.weight, ImageTensor::filled(shape, c.mean), c.sigma});
    return GaussianMixturePrior(std::move(out));
}

namespace {

double max_rel_error(const ImageTensor& estimate, const ImageTensor& truth) {
    double worst = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double t = truth.data()[i];
        const double err = std::abs(estimate.data()[i] - t);
        worst = std::max(worst, std::abs(t) > 1e-12 ? err / std::abs(t) : err);
    }
    return worst;
}

}  // namespace

GmmBenchReport run_gmm_bench(const GmmBenchConfig& config) {
    if (config.runs < 2) throw InvalidArgument("bench needs at least 2 runs");
    const Shape shape{config.height, config.width, config.channels};
    const GaussianMixturePrior prior = make_constant_prior(config.components, shape);
    const GmmDenoiser denoiser(prior);
    ScheduleSpec spec;
    spec.respaced_steps = config.steps;
    const NoiseSchedule sched = NoiseSchedule::from_spec(spec);
    // No prompt: the embedder is never consulted.
    const LexiconEmbedder unused({{"none", std::vector<double>(LexiconEmbedder::kDim, 1.0)}}, 0);
    const SamplerContext ctx{denoiser, unused, sched, nullptr, nullptr};

    SampleRequest req;
    req.source = ImageTensor::zeros(shape);
    req.mask = Mask(shape.height, shape.width, 1.0);
    req.k = sched.steps();
    req.sampler = config.sampler;
    req.guidance_scale = 0.0;
    req.seed = config.seed;

    const auto t0 = std::chrono::steady_clock::now();
    const int chunk = 256;
    const std::size_t n = shape.size();
    std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
    for (int start = 0; start < config.runs; start += chunk) {
        const int count = std::min(chunk, config.runs - start);
        SampleRequest r = req;
        r.seed = config.seed + static_cast<std::uint64_t>(start);
        const auto batch = sample_batch(r, ctx, count, config.workers);
        for (const auto& img : batch)
            for (std::size_t i = 0; i < n; ++i) {
                sum[i] += img.data()[i];
                sumsq[i] += img.data()[i] * img.data()[i];
            }
    }
    GmmBenchReport rep;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double runs = config.runs;
    rep.empirical_mean = ImageTensor::zeros(shape);
    rep.empirical_variance = ImageTensor::zeros(shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = sum[i] / runs;
        rep.empirical_mean.data()[i] = m;
        rep.empirical_variance.data()[i] = (sumsq[i] - runs * m * m) / (runs - 1.0);
    }
    rep.analytic_mean = prior.mean();
    rep.analytic_variance = prior.variance();
    rep.mean_rel_error = max_rel_error(rep.empirical_mean, rep.analytic_mean);
    rep.variance_rel_error = max_rel_error(rep.empirical_variance, rep.analytic_variance);
    rep.mean_ok = rep.mean_rel_error < config.mean_tolerance;
    rep.variance_ok = rep.variance_rel_error < config.variance_tolerance;
    return rep;
}

nlohmann::json GmmBenchReport::to_json(const GmmBenchConfig& config) const {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : config.components) comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"sigma", c.sigma}});
    const auto avg = [](const ImageTensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v;
        return s / static_cast<double>(t.size());
    };
    return {{"components", comps},
            {"canvas", {config.height, config.width, config.channels}},
            {"steps", config.steps},
            {"runs", config.runs},
            {"seed", config.seed},
            {"sampler", to_string(config.sampler)},
            {"analytic_mean", avg(analytic_mean)},
            {"analytic_variance", avg(analytic_variance)},
            {"empirical_mean_avg", avg(empirical_mean)},
            {"empirical_variance_avg", avg(empirical_variance)},
            {"mean_rel_error_max", mean_rel_error},
            {"variance_rel_error_max", variance_rel_error},
            {"mean_ok", mean_ok},
            {"variance_ok", variance_ok},
            {"pass", mean_ok && variance_ok},
            {"seconds", seconds}};
}

}  // namespace blendiff
