// Acceptance checks: one PASS/FAIL line per criterion, plus INFO lines with
// the measured quantities. Exit status is nonzero if any criterion fails.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "blendiff/base64.hpp"
#include "blendiff/bench.hpp"
#include "blendiff/editor.hpp"
#include "blendiff/engine.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/warp.hpp"
#include "../unit/support.hpp"

using namespace blendiff;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { pass, fail, warn };

struct Outcome {
    Status status = Status::fail;
    std::string detail;
};

const GaussianMixturePrior& shipped_prior() {
    static const GaussianMixturePrior p = GaussianMixturePrior::load(default_data_dir() + "/prior.json");
    return p;
}

const LexiconEmbedder& lexicon(int input_size) {
    static std::map<int, LexiconEmbedder> cache;
    static std::mutex m;
    std::lock_guard lock(m);
    auto it = cache.find(input_size);
    if (it == cache.end())
        it = cache.emplace(input_size, LexiconEmbedder::load(default_data_dir() + "/lexicon.json", input_size)).first;
    return it->second;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

void info(const std::string& line) { std::cout << "  INFO " << line << std::endl; }

ImageTensor prior_sample(std::uint64_t seed, int size) {
    Rng rng(seed);
    return shipped_prior().broadcast_to({size, size, 3}).sample(rng);
}

Mask box_mask(int h, int w, int y0, int y1, int x0, int x1) {
    Mask m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1.0;
    return m;
}

// ---------------------------------------------------------------- 1

Outcome background_exactness() {
    const auto& prompts = lexicon(0).prompts();
    const GmmDenoiser den(shipped_prior());
    const NoiseSchedule sched = default_schedule();
    const EditEngine engine{den, lexicon(0), sched, 1};
    const SamplerContext ctx{den, lexicon(0), sched, nullptr, nullptr};
    int checks = 0, violations = 0;
    const auto expect = [&](bool ok, const std::string& what, int fixture) {
        ++checks;
        if (!ok) {
            ++violations;
            info("fixture " + std::to_string(fixture) + ": " + what + " changed pixels outside the mask");
        }
    };
    for (int f = 0; f < 20; ++f) {
        Rng rng(4242 + f);
        const int size = 8 + 4 * static_cast<int>(rng.uniform() * 3);  // 8, 12 or 16
        const ImageTensor src = testing::uniform_image(700 + f, 3, size, size);
        Mask mask = testing::random_mask(800 + f, size, size);
        if (f % 3 == 0) {
            // Irregular mask with fractional values inside.
            for (double& v : mask.data())
                if (rng.uniform() < 0.3) v = rng.uniform() < 0.5 ? 1.0 : 0.6;
        }
        const std::string prompt = f % 5 == 4 ? "" : prompts[static_cast<std::size_t>(f) % prompts.size()];

        SampleRequest req;
        req.source = src;
        req.mask = mask;
        req.prompt = prompt;
        req.k = 5 + static_cast<int>(rng.uniform() * 40);
        req.seed = 1000 + f;
        req.augmentations = 2;
        req.guidance_scale = f % 4 == 0 ? 10.0 : 1.0;
        req.bg_index_shift = f % 2 == 1;
        for (SamplerKind kind : {SamplerKind::blended, SamplerKind::ddim_blended, SamplerKind::naive_blend}) {
            req.sampler = kind;
            expect(testing::outside_equal(sample(req, ctx), src, mask), to_string(kind), f);
        }

        EditJob job;
        job.request = req;
        job.request.sampler = SamplerKind::blended;
        job.num_samples = 2;
        for (const auto& r : run_edit(job, engine)) expect(testing::outside_equal(r.image, src, mask), "object_edit", f);

        const Mask bg = threshold(mask).inverted();
        if (bg.any())
            for (const auto& r : background_replace(src, bg, prompt, engine, req.k, 1, req.seed))
                expect(testing::outside_equal(r.image, src, bg), "background_replace", f);

        ScribbleParams sp;
        sp.layer = testing::uniform_image(900 + f, 3, size, size);
        sp.mask = box_mask(size, size, size / 4, size / 2, size / 4, size / 2);
        if (f % 2 == 0) sp.edit_mask = testing::random_mask(950 + f, size, size);
        const Mask edit_mask = scribble_edit_mask(sp);
        for (const auto& r : scribble_edit(src, sp, prompt, engine, req.k, 1, req.seed))
            expect(testing::outside_equal(r.image, src, edit_mask), "scribble", f);

        ExtrapolateParams ep;
        ep.segments_left = f % 2;
        ep.segments_right = 1 + f % 2;
        ep.prompt_left = prompt;
        ep.prompt_right = prompt;
        ep.k_min = 5;
        ep.k_max = 15;
        ep.k_denoise = 5;
        SampleRequest base = req;
        base.source = {};
        base.mask = {};
        const ImageTensor wide = extrapolate(src, ep, base, engine);
        ++checks;
        if (crop_columns(wide, ep.segments_left * size / 4, size) != src) {
            ++violations;
            info("fixture " + std::to_string(f) + ": extrapolate changed the original columns");
        }
    }
    return {violations == 0 ? Status::pass : Status::fail,
            std::to_string(checks) + " checks over 20 fixtures, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------- 2

Outcome diffusion_algebra() {
    double roundtrip = 0.0, identity = 0.0, golden = 0.0;
    ScheduleSpec full;
    full.respaced_steps = 0;
    const std::vector<NoiseSchedule> schedules{NoiseSchedule::from_spec(full), default_schedule(),
                                               NoiseSchedule::make(ScheduleKind::cosine, 1000)};
    Rng rng(2024);
    const NoiseSchedule& s0 = schedules[0];
    for (int i = 0; i < 100; ++i) {
        const ImageTensor x0 = testing::uniform_image(5000 + i, 3, 8, 8, -1.0, 1.0);
        const ImageTensor eps = rng.normal_like(x0);
        const int t = 1 + static_cast<int>(rng.uniform() * s0.steps());
        const ImageTensor back = predict_x0(q_sample(x0, t, eps, s0), eps, t, s0);
        for (std::size_t j = 0; j < x0.size(); ++j) roundtrip = std::max(roundtrip, std::abs(back.data()[j] - x0.data()[j]));
    }
    for (const auto& s : schedules) {
        identity = std::max(identity, std::abs(s.alpha_bar(0) - 1.0));
        for (int t = 1; t <= s.steps(); ++t) {
            identity = std::max(identity, std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * (1.0 - s.beta(t))));
            identity = std::max(identity, std::abs(s.alpha(t) - (1.0 - s.beta(t))));
            const double tilde = t == 1 ? 0.0 : (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
            identity = std::max(identity, std::abs(s.posterior_variance(t) - tilde));
        }
    }
    const auto& g = testing::goldens()["schedule"];
    golden = std::max(golden, std::abs(s0.alpha_bar(1000) - g["linear_1000_abar_T"].get<double>()));
    golden = std::max(golden, std::abs(s0.alpha_bar(500) - g["linear_1000_abar_500"].get<double>()));
    ScheduleSpec t4;
    t4.kind = ScheduleKind::custom;
    t4.T = 4;
    t4.respaced_steps = 0;
    t4.betas = {0.1, 0.2, 0.3, 0.4};
    const NoiseSchedule s4 = NoiseSchedule::from_spec(t4);
    const auto abar4 = g["t4_abar"].get<std::vector<double>>();
    for (int t = 1; t <= 4; ++t) golden = std::max(golden, std::abs(s4.alpha_bar(t) - abar4[t - 1]));
    golden = std::max(golden, std::abs(s4.posterior_variance(3) - g["t4_posterior_variance_3"].get<double>()));
    const bool ok = roundtrip < 1e-8 && identity <= 1e-12 && golden <= 1e-12;
    return {ok ? Status::pass : Status::fail, "round-trip max err " + fmt(roundtrip, 3) + ", identity max err " +
                                                  fmt(identity, 3) + ", reference values max err " + fmt(golden, 3)};
}

// ---------------------------------------------------------------- 3

// Mean and variance of the sampler's output for a Gaussian prior, by
// propagating the linear Gaussian chain step by step.
std::pair<double, double> chain_moments(double mu, double sigma, const NoiseSchedule& s) {
    const int K = s.steps();
    double m = 0.0, v = 1.0 - s.alpha_bar(K);
    for (int t = K; t >= 1; --t) {
        const double ab = s.alpha_bar(t);
        const double mt = std::sqrt(ab) * mu;
        const double vt = ab * sigma * sigma + 1.0 - ab;
        const double a = (1.0 - s.beta(t) / vt) / std::sqrt(s.alpha(t));
        const double b = s.beta(t) * mt / (vt * std::sqrt(s.alpha(t)));
        m = a * m + b;
        v = a * a * v + s.posterior_variance(t);
    }
    return {m, v};
}

Outcome gmm_fidelity() {
    GmmBenchConfig cfg;
    cfg.components = {{1.0, 0.5, 0.5}};
    cfg.steps = 100;
    cfg.runs = 10000;
    cfg.workers = 0;
    const GmmBenchReport rep = run_gmm_bench(cfg);
    const auto avg = [](const ImageTensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v;
        return s / static_cast<double>(t.size());
    };
    const auto [cm, cv] = chain_moments(0.5, 0.5, default_schedule());
    info("analytic mean 0.5 var 0.25; empirical avg mean " + fmt(avg(rep.empirical_mean), 6) + " var " +
         fmt(avg(rep.empirical_variance), 6) + " (" + fmt(rep.seconds, 3) + " s)");
    info("discrete-chain prediction for this schedule: mean " + fmt(cm, 6) + " var " + fmt(cv, 6) + " (" +
         fmt(100.0 * (cv - 0.25) / 0.25, 3) + "% from the prior variance)");
    const double chain_err = std::abs(avg(rep.empirical_variance) - cv) / cv;
    info(std::string("empirical variance vs discrete-chain prediction: ") + fmt(100.0 * chain_err, 3) + "% " +
         (chain_err < 0.03 ? "(consistent)" : "(INCONSISTENT)"));
    return {rep.mean_ok && rep.variance_ok ? Status::pass : Status::fail,
            "max per-pixel rel error mean " + fmt(rep.mean_rel_error, 3) + " (< 0.05), variance " +
                fmt(rep.variance_rel_error, 3) + " (< 0.10)"};
}

// ---------------------------------------------------------------- 4

Outcome guidance_efficacy() {
    const int size = 32;
    const GmmDenoiser den(shipped_prior());
    const NoiseSchedule sched = default_schedule();
    const SamplerContext ctx{den, lexicon(size), sched, nullptr, nullptr};
    const Mask m = testing::center_mask(size, size);
    int wins = 0;
    double guided = 0.0, plain = 0.0;
    for (int s = 0; s < 50; ++s) {
        SampleRequest q;
        q.source = prior_sample(1000 + s, size);
        q.mask = m;
        q.prompt = "red";
        q.seed = s;
        q.augmentations = 16;
        q.guidance_scale = 1.0;
        const double d1 = clip_distance(lexicon(size), sample(q, ctx), m, "red");
        q.guidance_scale = 0.0;
        const double d0 = clip_distance(lexicon(size), sample(q, ctx), m, "red");
        wins += d1 < d0;
        guided += d1 / 50;
        plain += d0 / 50;
    }
    info("mean clip_distance guided " + fmt(guided) + " vs unguided " + fmt(plain));
    return {wins >= 45 ? Status::pass : Status::fail, std::to_string(wins) + "/50 pairs improved (need >= 45)"};
}

// ---------------------------------------------------------------- 5

Outcome lambda_tradeoff() {
    const int size = 32;
    const GmmDenoiser den(shipped_prior());
    const NoiseSchedule sched = default_schedule();
    const SamplerContext ctx{den, lexicon(size), sched, nullptr, nullptr};
    const Mask m = box_mask(size, size, 0, size, 0, size / 2);
    const Mask bg = m.inverted();
    std::vector<double> mse_med, clip_med;
    int failures = 0;
    for (double lambda : {100.0, 1000.0, 10000.0}) {
        std::vector<double> mse, clip;
        for (int s = 0; s < 20; ++s) {
            Rng r(1000 + s);
            ImageTensor src = shipped_prior().broadcast_to({size, size, 3}).components()[0].mean;
            const ImageTensor z = r.normal_like(src);
            for (std::size_t i = 0; i < src.size(); ++i) src.data()[i] += 0.3 * z.data()[i];
            SampleRequest q;
            q.source = src;
            q.mask = m;
            q.prompt = "red";
            q.seed = s;
            q.augmentations = 16;
            q.lambda = lambda;
            q.sampler = SamplerKind::local_guided;
            try {
                const ImageTensor out = sample(q, ctx);
                double e = 0.0;
                int c = 0;
                for (int ch = 0; ch < 3; ++ch)
                    for (int y = 0; y < size; ++y)
                        for (int x = 0; x < size; ++x)
                            if (bg.at(y, x) > 0) {
                                const double d = out.at(ch, y, x) - src.at(ch, y, x);
                                e += d * d;
                                ++c;
                            }
                mse.push_back(e / c);
                clip.push_back(clip_distance(lexicon(size), out, m, "red"));
            } catch (const SamplingError&) {
                ++failures;
            }
        }
        mse_med.push_back(median(mse));
        clip_med.push_back(median(clip));
        info("lambda " + fmt(lambda) + ": median background MSE " + fmt(mse_med.back(), 5) + ", median clip_distance " +
             fmt(clip_med.back(), 6));
    }
    const bool ok = failures == 0 && mse_med[0] > mse_med[1] && mse_med[1] > mse_med[2] && clip_med[0] <= clip_med[1] &&
                    clip_med[1] <= clip_med[2];
    return {ok ? Status::pass : Status::fail,
            "MSE strictly decreasing and clip non-decreasing in lambda; " + std::to_string(failures) + " diverged runs"};
}

// ---------------------------------------------------------------- 6

double fd_relative_error(const std::function<double(const ImageTensor&)>& f, const ImageTensor& x,
                         const ImageTensor& grad, double h = 1e-4) {
    double worst = 0.0, scale = 0.0;
    ImageTensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        probe.data()[i] = v + h;
        const double up = f(probe);
        probe.data()[i] = v - h;
        const double down = f(probe);
        probe.data()[i] = v;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad.data()[i]));
        scale = std::max(scale, std::abs(fd));
    }
    return worst / scale;
}

Outcome gradient_correctness() {
    double clip_err = 0.0, total_err = 0.0, avg_err = 0.0;
    for (int input_size : {0, 24}) {
        const auto& model = lexicon(input_size);
        for (int trial = 0; trial < 3; ++trial) {
            const ImageTensor img = testing::uniform_image(6000 + trial, 3, 16, 16);
            const ImageTensor src = testing::uniform_image(6100 + trial, 3, 16, 16);
            const Mask m = testing::random_mask(6200 + trial, 16, 16);
            const std::string prompt = model.prompts()[static_cast<std::size_t>(trial * 5) % model.prompts().size()];
            clip_err = std::max(clip_err, fd_relative_error([&](const ImageTensor& x) { return clip_distance(model, x, m, prompt); },
                                                            img, clip_distance_grad(model, img, m, prompt)));
            GuidanceOptions opt;
            opt.augmentations = 4;
            opt.lambda = 5.0;
            opt.augment_bg_loss = trial == 2;
            Rng a(6300 + trial), b(6300 + trial);
            ImageTensor dir = guidance_gradient(model, img, src, m, prompt, opt, a);
            const auto ts = draw_augmentation_transforms(16, 16, 4, b);
            for (double& v : dir.data()) v = -v;
            total_err = std::max(total_err, fd_relative_error(
                                                [&](const ImageTensor& x) {
                                                    return guidance_loss(model, x, src, m, prompt, ts, 5.0,
                                                                         opt.augment_bg_loss);
                                                },
                                                img, dir));

            Rng r(6400 + trial);
            const auto many = draw_augmentation_transforms(16, 16, 16, r);
            const auto avg = guidance_loss_grad(model, img, src, m, prompt, many, 0.0);
            ImageTensor manual = ImageTensor::zeros(img.shape());
            for (const auto& t : many) {
                const WarpPlan plan(16, 16, t);
                const auto g = plan.adjoint(clip_distance_grad(model, plan.apply(img), plan.apply(m), prompt));
                for (std::size_t i = 0; i < g.size(); ++i) manual.data()[i] += g.data()[i] / 16.0;
            }
            for (std::size_t i = 0; i < avg.size(); ++i)
                avg_err = std::max(avg_err, std::abs(avg.data()[i] - manual.data()[i]));
        }
    }
    const bool ok = clip_err < 1e-3 && total_err < 1e-3 && avg_err <= 1e-9;
    return {ok ? Status::pass : Status::fail, "clip_distance_grad rel err " + fmt(clip_err, 3) +
                                                  ", guidance_gradient rel err " + fmt(total_err, 3) +
                                                  ", augmentation average abs err " + fmt(avg_err, 3)};
}

// ---------------------------------------------------------------- 7

Outcome augmentation_effect() {
    const int size = 16;
    const std::string prompt = "stone wall";
    const auto& model = lexicon(size);
    const Mask m = testing::center_mask(size, size);
    int wins = 0;
    std::vector<double> gap;
    for (int s = 0; s < 20; ++s) {
        const ImageTensor init = prior_sample(500 + s, size);
        double held[2];
        const int counts[2] = {1, 16};
        for (int k = 0; k < 2; ++k) {
            ImageTensor x = init;
            Rng ar(9000 + s);
            for (int it = 0; it < 50; ++it) {
                const auto ts = draw_augmentation_transforms(size, size, counts[k], ar);
                const ImageTensor g = guidance_loss_grad(model, x, x, m, prompt, ts, 0.0);
                const double norm = l2_norm(g);
                if (norm == 0.0) break;
                const double c = 0.02 * std::sqrt(static_cast<double>(g.size())) / norm;
                for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = std::clamp(x.data()[i] - c * g.data()[i], -1.0, 1.0);
            }
            Rng hr(77777 + s);
            const auto held_out = draw_augmentation_transforms(size, size, 65, hr);
            double total = 0.0;
            for (int i = 1; i < 65; ++i) {
                const WarpPlan p(size, size, held_out[i]);
                total += clip_distance(model, p.apply(x), p.apply(m), prompt);
            }
            held[k] = total / 64;
        }
        wins += held[1] < held[0];
        gap.push_back(held[0] - held[1]);
    }
    info("median held-out distance gap (N=1 minus N=16) " + fmt(median(gap)));
    return {wins >= 16 ? Status::pass : Status::fail, std::to_string(wins) + "/20 trials favour N=16 (need >= 16)"};
}

// ---------------------------------------------------------------- helpers for subprocesses

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" BLENDIFF_CLI_PATH "' " + args + " >/dev/null 2>cli_err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------- 8

Outcome determinism() {
    testing::TempDir dir("accept8");
    save_image((dir.path() / "img.png").string(), from_diffusion_domain(prior_sample(88, 32)));
    save_image((dir.path() / "mask.png").string(), mask_to_raster(testing::center_mask(32, 32)));
    int identical = 0, total = 0;
    for (const std::string sampler : {"blended", "local", "ddim", "naive"}) {
        const std::string args = "edit --image img.png --mask mask.png --prompt fire --samples 3 --seed 7 --k 40 "
                                 "--n-aug 8 --embed-size 32 --sampler " + sampler + " --out ";
        if (run_cli(dir.path(), args + sampler + "_a") != 0 || run_cli(dir.path(), args + sampler + "_b") != 0)
            return {Status::fail, "CLI invocation failed: " + slurp(dir.path() / "cli_err.txt")};
        for (const auto& e : fs::directory_iterator(dir.path() / (sampler + "_a"))) {
            ++total;
            identical += slurp(e.path()) == slurp(dir.path() / (sampler + "_b") / e.path().filename());
        }
    }
    return {identical == total && total == 16 ? Status::pass : Status::fail,
            std::to_string(identical) + "/" + std::to_string(total) + " output files byte-identical across runs"};
}

// ---------------------------------------------------------------- 9

// Mean squared horizontal difference over the column pairs selected by `use`.
double horizontal_energy(const ImageTensor& img, const std::function<bool(int)>& use) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x + 1 < img.width(); ++x)
                if (use(x)) {
                    const double d = img.at(c, y, x + 1) - img.at(c, y, x);
                    sum += d * d;
                    ++n;
                }
    return sum / n;
}

Outcome extrapolation_geometry() {
    const int size = 32, strip = size / 4;
    const GmmDenoiser den(shipped_prior());
    const NoiseSchedule sched = default_schedule();
    const EditEngine engine{den, lexicon(size), sched, 0};
    std::vector<double> ratios;
    bool widths = true;
    for (int s = 0; s < 5; ++s) {
        const ImageTensor img = prior_sample(3000 + s, size);
        ExtrapolateParams p;
        p.segments_right = 4;
        p.prompt_right = "water";
        SampleRequest base;
        base.seed = 40 + s;
        base.augmentations = 8;
        const ImageTensor wide = extrapolate(img, p, base, engine);
        widths = widths && wide.width() == 2 * size && wide.height() == size;
        // Junction j sits between columns j-1 and j; the band is the pairs
        // touching the two columns on either side.
        const auto in_band = [&](int x) {
            for (int j = size; j < wide.width(); j += strip)
                if (x >= j - 2 && x <= j) return true;
            return false;
        };
        const double band = horizontal_energy(wide, in_band);
        const double interior = horizontal_energy(wide, [&](int x) { return !in_band(x); });
        ratios.push_back(band / interior);
    }
    std::string r;
    for (double v : ratios) r += fmt(v, 3) + " ";
    info("seam/interior energy ratios: " + r);
    const bool ok = widths && median(ratios) <= 3.0;
    return {ok ? Status::pass : Status::fail, std::string("width ") + (widths ? "doubled" : "WRONG") +
                                                  ", median seam/interior energy ratio " + fmt(median(ratios), 3) +
                                                  " (<= 3)"};
}

// ---------------------------------------------------------------- 10

double mixture_cdf(const std::vector<GmmComponentSpec>& comps, double x) {
    double total = 0.0, weight = 0.0;
    for (const auto& c : comps) {
        total += c.weight * 0.5 * std::erfc(-(x - c.mean) / (c.sigma * std::sqrt(2.0)));
        weight += c.weight;
    }
    return total / weight;
}

// Integral of |F_n - F| with the integrand evaluated on a fine grid.
double wasserstein1(std::vector<double> samples, const std::vector<GmmComponentSpec>& comps) {
    std::sort(samples.begin(), samples.end());
    const double lo = std::min(samples.front(), -4.0), hi = std::max(samples.back(), 4.0);
    const int grid = 200000;
    const double dx = (hi - lo) / grid;
    double w = 0.0;
    std::size_t below = 0;
    for (int i = 0; i < grid; ++i) {
        const double x = lo + (i + 0.5) * dx;
        while (below < samples.size() && samples[below] <= x) ++below;
        w += std::abs(static_cast<double>(below) / samples.size() - mixture_cdf(comps, x)) * dx;
    }
    return w;
}

Outcome step_study() {
    const std::vector<GmmComponentSpec> comps{{0.5, -0.6, 0.15}, {0.5, 0.6, 0.15}};
    const GmmDenoiser den(make_constant_prior(comps, {1, 1, 1}));
    const LexiconEmbedder unused({{"none", std::vector<double>(LexiconEmbedder::kDim, 1.0)}}, 0);
    double w[2][2];
    const int steps[2] = {25, 100};
    for (int si = 0; si < 2; ++si) {
        ScheduleSpec spec;
        spec.respaced_steps = steps[si];
        const NoiseSchedule sched = NoiseSchedule::from_spec(spec);
        const SamplerContext ctx{den, unused, sched, nullptr, nullptr};
        for (int ki = 0; ki < 2; ++ki) {
            SampleRequest req;
            req.source = ImageTensor::zeros({1, 1, 1});
            req.mask = Mask(1, 1, 1.0);
            req.k = sched.steps();
            req.guidance_scale = 0.0;
            req.sampler = ki == 0 ? SamplerKind::blended : SamplerKind::ddim_blended;
            req.seed = 123456;
            std::vector<double> xs;
            for (const auto& img : sample_batch(req, ctx, 5000, 0)) xs.push_back(img.data()[0]);
            w[si][ki] = wasserstein1(std::move(xs), comps);
        }
        info(std::to_string(steps[si]) + " steps: W1 DDPM " + fmt(w[si][0]) + ", DDIM " + fmt(w[si][1]));
    }
    const bool ok = w[0][1] <= w[0][0] && w[1][0] <= 1.1 * w[1][1];
    return {ok ? Status::pass : Status::warn, "25 steps DDIM <= DDPM: " + std::string(w[0][1] <= w[0][0] ? "yes" : "no") +
                                                  "; 100 steps DDPM <= 1.1 DDIM: " +
                                                  (w[1][0] <= 1.1 * w[1][1] ? "yes" : "no")};
}

// ---------------------------------------------------------------- 11

struct ServeProcess {
    pid_t pid = -1;
    int port = -1;

    ServeProcess(const fs::path& workspace) {
        int fds[2];
        if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
        pid = fork();
        if (pid == 0) {
            dup2(fds[1], STDOUT_FILENO);
            close(fds[0]);
            close(fds[1]);
            const std::string ws = workspace.string();
            execl(BLENDIFF_CLI_PATH, BLENDIFF_CLI_PATH, "serve", "--port", "0", "--workspace", ws.c_str(), "--workers",
                  "2", "--embed-size", "16", static_cast<char*>(nullptr));
            _exit(127);
        }
        close(fds[1]);
        std::string line;
        char ch;
        while (read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
        close(fds[0]);
        const auto colon = line.rfind(':');
        if (line.rfind("listening on", 0) != 0 || colon == std::string::npos)
            throw std::runtime_error("unexpected serve output '" + line + "'");
        port = std::stoi(line.substr(colon + 1));
    }
    void kill_hard() {
        if (pid > 0) {
            ::kill(pid, SIGKILL);
            waitpid(pid, nullptr, 0);
            pid = -1;
        }
    }
    ~ServeProcess() { kill_hard(); }
};

std::string png64(const ImageTensor& img) { return base64_encode(encode_png(from_diffusion_domain(img))); }

json edit_payload(const ImageTensor& img, const Mask& m, const std::string& prompt, std::uint64_t seed, int samples) {
    return {{"image", png64(img)}, {"mask", base64_encode(encode_png(mask_to_raster(m)))},
            {"prompt", prompt},   {"k", 30},
            {"n_aug", 4},         {"samples", samples},
            {"seed", seed}};
}

json wait_job(httplib::Client& c, const std::string& id) {
    for (int i = 0; i < 12000; ++i) {
        const auto res = c.Get("/api/edits/" + id);
        if (!res) throw std::runtime_error("poll failed");
        const json j = json::parse(res->body);
        if (j["state"] == "done" || j["state"] == "failed") return j;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    throw std::runtime_error("job " + id + " did not finish");
}

std::string submit(httplib::Client& c, const json& payload) {
    const auto res = c.Post("/api/edits", payload.dump(), "application/json");
    if (!res || res->status != 202) throw std::runtime_error("submit failed");
    return json::parse(res->body)["job_id"];
}

Outcome service_integration() {
    testing::TempDir ws("accept11");
    const ImageTensor img_a = to_diffusion_domain(from_diffusion_domain(prior_sample(11, 16)));
    const ImageTensor img_b = to_diffusion_domain(from_diffusion_domain(prior_sample(12, 16)));
    const Mask m = testing::center_mask(16, 16);
    std::vector<std::string> problems;
    std::string done_id, png_a, png_b;
    std::vector<std::string> concurrent_ids;
    {
        ServeProcess server(ws.path());
        httplib::Client c("127.0.0.1", server.port);
        c.set_read_timeout(60, 0);
        if (!c.Get("/health")) return {Status::fail, "service did not answer /health"};

        // Happy path: submit, poll, fetch.
        done_id = submit(c, edit_payload(img_a, m, "red", 5, 2));
        const json rec = wait_job(c, done_id);
        if (rec["state"] != "done" || rec["results"].size() != 2) problems.push_back("happy-path job did not complete");
        else {
            const auto png = c.Get(rec["results"][0]["url"].get<std::string>());
            if (!png || png->status != 200) problems.push_back("result fetch failed");
            else {
                png_a = png->body;
                const std::vector<std::uint8_t> bytes(png_a.begin(), png_a.end());
                if (!testing::outside_equal(to_diffusion_domain(decode_png(bytes)), img_a, m))
                    problems.push_back("fetched result changed the background");
            }
        }

        // Concurrent submissions from two clients.
        auto fa = std::async(std::launch::async, [&] {
            httplib::Client ca("127.0.0.1", server.port);
            return submit(ca, edit_payload(img_a, m, "red", 5, 2));
        });
        auto fb = std::async(std::launch::async, [&] {
            httplib::Client cb("127.0.0.1", server.port);
            return submit(cb, edit_payload(img_b, m, "blue sky", 9, 2));
        });
        concurrent_ids = {fa.get(), fb.get()};
        const json ra = wait_job(c, concurrent_ids[0]), rb = wait_job(c, concurrent_ids[1]);
        if (ra["state"] != "done" || rb["state"] != "done") problems.push_back("concurrent jobs did not complete");
        else {
            if (c.Get(ra["results"][0]["url"].get<std::string>())->body != png_a)
                problems.push_back("concurrent job differs from the same job run alone");
            png_b = c.Get(rb["results"][0]["url"].get<std::string>())->body;
            const std::vector<std::uint8_t> bytes(png_b.begin(), png_b.end());
            if (!testing::outside_equal(to_diffusion_domain(decode_png(bytes)), img_b, m))
                problems.push_back("concurrent job B changed its background");
            if (rb["prompt"] != "blue sky" || ra["prompt"] != "red") problems.push_back("job records mixed up");
        }
        // Leave a long job in flight when the process dies.
        json slow = edit_payload(img_b, m, "fire", 1, 64);
        slow["k"] = 100;
        slow["n_aug"] = 16;
        submit(c, slow);
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
        server.kill_hard();
    }
    {
        ServeProcess server(ws.path());
        httplib::Client c("127.0.0.1", server.port);
        c.set_read_timeout(60, 0);
        const auto list = c.Get("/api/edits");
        if (!list) return {Status::fail, "restarted service did not answer"};
        const json jobs = json::parse(list->body)["jobs"];
        int done = 0, failed = 0;
        for (const auto& j : jobs) {
            done += j["state"] == "done";
            failed += j["state"] == "failed";
        }
        if (done != 3) problems.push_back("restart lists " + std::to_string(done) + " completed jobs, expected 3");
        if (failed != 1) problems.push_back("interrupted job not marked failed");
        const auto rec = c.Get("/api/edits/" + done_id);
        if (!rec || rec->status != 200) problems.push_back("completed job missing after restart");
        else {
            const json j = json::parse(rec->body);
            const auto png = c.Get(j["results"][0]["url"].get<std::string>());
            if (!png || png->body != png_a) problems.push_back("result bytes changed across restart");
        }
        info("after restart: " + std::to_string(done) + " done, " + std::to_string(failed) + " failed jobs listed");
    }
    std::string detail = problems.empty() ? "happy path, restart recovery and concurrent isolation hold" : "";
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
    return {problems.empty() ? Status::pass : Status::fail, detail};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "background exactness", background_exactness},
        {2, "diffusion algebra", diffusion_algebra},
        {3, "GMM sampling fidelity", gmm_fidelity},
        {4, "guidance efficacy", guidance_efficacy},
        {5, "lambda trade-off", lambda_tradeoff},
        {6, "gradient correctness", gradient_correctness},
        {7, "extending-augmentations effect", augmentation_effect},
        {8, "determinism and reproducibility", determinism},
        {9, "extrapolation geometry", extrapolation_geometry},
        {10, "DDPM vs DDIM step study", step_study},
        {11, "service integration", service_integration},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {Status::fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::warn ? "WARN" : "FAIL";
        std::cout << "CRITERION " << c.id << " " << tag << " " << c.name << ": " << o.detail << " [" << fmt(secs, 3)
                  << " s]" << std::endl;
        failed += o.status == Status::fail;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
