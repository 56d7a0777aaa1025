#include <algorithm>
#include <atomic>
#include <cmath>

#include <doctest.h>

#include "blendiff/editor.hpp"
#include "blendiff/engine.hpp"
#include "blendiff/imaging.hpp"
#include "support.hpp"

using namespace blendiff;

namespace {

struct Fixture {
    GmmDenoiser denoiser{GaussianMixturePrior::load(default_data_dir() + "/prior.json")};
    LexiconEmbedder guidance{LexiconEmbedder::load(default_data_dir() + "/lexicon.json", 16)};
    NoiseSchedule schedule = default_schedule();
    EditEngine engine(unsigned workers = 1) const { return {denoiser, guidance, schedule, workers}; }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

ImageTensor prior_image(std::uint64_t seed, int h = 16, int w = 16) {
    Rng rng(seed);
    return fixture().denoiser.prior().broadcast_to({h, w, 3}).sample(rng);
}

EditJob edit_job(std::uint64_t seed, const std::string& prompt, int samples, int k = 20) {
    EditJob job;
    job.request.source = prior_image(seed);
    job.request.mask = testing::center_mask(16, 16);
    job.request.prompt = prompt;
    job.request.k = k;
    job.request.seed = seed;
    job.request.augmentations = 4;
    job.num_samples = samples;
    return job;
}

// Fails on its first call, then defers to the shipped prior.
class FlakyDenoiser final : public Denoiser {
  public:
    explicit FlakyDenoiser(int failures) : remaining_(failures) {}
    ImageTensor predict_eps(const ImageTensor& x, int t, const NoiseSchedule& s) const override {
        if (remaining_.fetch_sub(1) > 0) throw Error("injected failure");
        return fixture().denoiser.predict_eps(x, t, s);
    }
    std::string describe() const override { return "flaky"; }

  private:
    mutable std::atomic<int> remaining_;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_SUITE("editor") {
    TEST_CASE("application names round-trip") {
        for (auto a : {Application::object_edit, Application::background_replace, Application::scribble, Application::extrapolate})
            CHECK(application_from_string(to_string(a)) == a);
        CHECK_THROWS_AS(application_from_string("collage"), InvalidArgument);
    }

    TEST_CASE("single sample gives rank 1") {
        const auto results = run_edit(edit_job(1, "red", 1), fixture().engine());
        REQUIRE(results.size() == 1);
        CHECK(results[0].rank == 1);
        CHECK(results[0].seed == 1);
    }

    TEST_CASE("ranking follows clip distance then seed") {
        const auto job = edit_job(2, "blue sky", 6);
        const auto results = run_edit(job, fixture().engine(2));
        REQUIRE(results.size() == 6);
        for (std::size_t i = 0; i < results.size(); ++i) {
            CHECK(results[i].rank == static_cast<int>(i) + 1);
            const double d = clip_distance(fixture().guidance, results[i].image, job.request.mask, "blue sky");
            CHECK(results[i].score == -d);
            if (i > 0) {
                CHECK(results[i - 1].score >= results[i].score);
                if (results[i - 1].score == results[i].score) CHECK(results[i - 1].seed < results[i].seed);
            }
            CHECK(testing::outside_equal(results[i].image, job.request.source, job.request.mask));
        }
    }

    TEST_CASE("empty prompt is pure inpainting ranked by seed") {
        auto job = edit_job(3, "", 3);
        job.request.guidance_scale = 5.0;
        const auto results = run_edit(job, fixture().engine());
        const SamplerContext ctx{fixture().denoiser, fixture().guidance, fixture().schedule, nullptr, nullptr};
        for (std::size_t i = 0; i < results.size(); ++i) {
            CHECK(results[i].score == 0.0);
            CHECK(results[i].seed == 3 + i);
            SampleRequest plain = job.request;
            plain.seed = results[i].seed;
            plain.guidance_scale = 0.0;
            CHECK(results[i].image == sample(plain, ctx));
        }
    }

    TEST_CASE("results do not depend on the worker count") {
        const auto job = edit_job(4, "fire", 4);
        const auto a = run_edit(job, fixture().engine(1));
        const auto b = run_edit(job, fixture().engine(3));
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].seed == b[i].seed);
            CHECK(a[i].image == b[i].image);
        }
    }

    TEST_CASE("failed samples are reported and the rest ranked") {
        const FlakyDenoiser flaky(1);
        const EditEngine engine{flaky, fixture().guidance, fixture().schedule, 1};
        const auto outcome = run_edit_outcome(edit_job(5, "red", 3), engine);
        CHECK(outcome.results.size() == 2);
        REQUIRE(outcome.failures.size() == 1);
        CHECK(outcome.failures[0].seed == 5);
        const FlakyDenoiser broken(1 << 30);
        const EditEngine dead{broken, fixture().guidance, fixture().schedule, 1};
        CHECK_THROWS_AS(run_edit(edit_job(5, "red", 2), dead), SamplingError);
        CHECK_THROWS_AS(run_edit(edit_job(5, "no such prompt", 2), fixture().engine()), UnknownPrompt);
    }

    TEST_CASE("progress reaches the total") {
        int last = 0;
        run_edit(edit_job(6, "", 3, 5), fixture().engine(), [&](int done, int total) {
            CHECK(total == 3);
            last = std::max(last, done);
        });
        CHECK(last == 3);
    }

    TEST_CASE("job validation") {
        auto job = edit_job(7, "red", 0);
        CHECK_THROWS_AS(validate(job, fixture().schedule), InvalidArgument);
        job = edit_job(7, "red", 1);
        job.application = Application::scribble;
        CHECK_THROWS_AS(validate(job, fixture().schedule), InvalidArgument);
        job = edit_job(7, "red", 1);
        job.extrapolate = ExtrapolateParams{};
        CHECK_THROWS_AS(validate(job, fixture().schedule), InvalidArgument);
    }

    TEST_CASE("scribble composite and masks") {
        const ImageTensor base = prior_image(8);
        ScribbleParams p;
        p.layer = ImageTensor::filled(base.shape(), 0.9);
        p.mask = Mask(16, 16);
        for (int y = 6; y < 9; ++y)
            for (int x = 6; x < 10; ++x) p.mask.at(y, x) = 1.0;
        const ImageTensor comp = composite_scribble(base, p);
        CHECK(comp.at(0, 7, 7) == 0.9);
        CHECK(comp.at(0, 0, 0) == base.at(0, 0, 0));
        const Mask auto_mask = scribble_edit_mask(p);
        CHECK(auto_mask == dilate(p.mask, 3));
        Mask user(16, 16);
        user.at(0, 0) = 1.0;
        p.edit_mask = user;
        const Mask merged = scribble_edit_mask(p);
        CHECK(merged.at(0, 0) == 1.0);
        CHECK(merged.at(7, 7) == 1.0);
        CHECK(merged.at(12, 12) == 0.0);
        p.mask = Mask(16, 16);
        CHECK_THROWS_AS(scribble_edit_mask(p), InvalidArgument);
    }

    TEST_CASE("scribble edits keep the base outside the mask and k = 0 returns the composite") {
        const ImageTensor base = prior_image(9);
        ScribbleParams p;
        p.layer = ImageTensor::filled(base.shape(), -0.9);
        p.mask = Mask(16, 16);
        for (int y = 5; y < 11; ++y)
            for (int x = 5; x < 11; ++x) p.mask.at(y, x) = 1.0;
        const auto r0 = scribble_edit(base, p, "red", fixture().engine(), 0);
        CHECK(r0.front().image == composite_scribble(base, p));
        const auto r = scribble_edit(base, p, "red", fixture().engine(), 30, 2, 4);
        for (const auto& res : r) CHECK(testing::outside_equal(res.image, base, scribble_edit_mask(p)));
    }

    TEST_CASE("more diffusion steps move further from the scribble colour") {
        std::vector<double> low, high;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const ImageTensor base = prior_image(100 + seed);
            ScribbleParams p;
            p.layer = ImageTensor::zeros(base.shape());
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    p.layer.at(0, y, x) = 0.9;
                    p.layer.at(1, y, x) = -0.8;
                    p.layer.at(2, y, x) = 0.7;
                }
            p.mask = testing::center_mask(16, 16);
            const auto distance = [&](const ImageTensor& img) {
                double d = 0.0;
                int n = 0;
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x)
                        if (p.mask.at(y, x) == 1.0) {
                            for (int c = 0; c < 3; ++c) d += std::abs(img.at(c, y, x) - p.layer.at(c, y, x));
                            ++n;
                        }
                return d / (3.0 * n);
            };
            low.push_back(distance(scribble_edit(base, p, "purple", fixture().engine(), 20, 1, seed).front().image));
            high.push_back(distance(scribble_edit(base, p, "purple", fixture().engine(), 80, 1, seed).front().image));
        }
        MESSAGE("median distance to scribble colour k=20: " << median(low) << ", k=80: " << median(high));
        CHECK(median(high) > median(low));
    }

    TEST_CASE("background replacement keeps the foreground") {
        const ImageTensor img = prior_image(10);
        const Mask bg = testing::center_mask(16, 16).inverted();
        const auto r = background_replace(img, bg, "green grass", fixture().engine(), kBackgroundDefaultK, 2, 1);
        for (const auto& res : r) CHECK(testing::outside_equal(res.image, img, bg));
    }

    TEST_CASE("extrapolation step schedule") {
        CHECK(extrapolation_k(0, 4, 40, 75) == 40);
        CHECK(extrapolation_k(1, 4, 40, 75) == 52);
        CHECK(extrapolation_k(2, 4, 40, 75) == 63);
        CHECK(extrapolation_k(3, 4, 40, 75) == 75);
        CHECK(extrapolation_k(0, 1, 40, 75) == 40);
    }

    TEST_CASE("extrapolation geometry") {
        const ImageTensor img = prior_image(11, 16, 16);
        SampleRequest base;
        base.seed = 3;
        base.augmentations = 2;
        ExtrapolateParams p;
        p.k_min = 5;
        p.k_max = 10;
        p.k_denoise = 3;
        CHECK(extrapolate(img, p, base, fixture().engine()) == img);
        p.segments_right = 4;
        p.prompt_right = "water";
        const ImageTensor wide = extrapolate(img, p, base, fixture().engine());
        CHECK(wide.width() == 32);
        CHECK(crop_columns(wide, 0, 16) == img);
        p.segments_right = 1;
        p.segments_left = 2;
        p.prompt_left = "fire";
        const ImageTensor both = extrapolate(img, p, base, fixture().engine());
        CHECK(both.width() == 16 + 3 * 4);
        CHECK(crop_columns(both, 8, 16) == img);
        CHECK_THROWS_AS(extrapolate(ImageTensor::zeros({16, 18, 3}), p, base, fixture().engine()), InvalidArgument);
    }

    TEST_CASE("extrapolation through run_edit") {
        EditJob job;
        job.application = Application::extrapolate;
        job.request.source = prior_image(12, 16, 16);
        job.request.augmentations = 2;
        job.num_samples = 2;
        ExtrapolateParams p;
        p.segments_right = 1;
        p.prompt_right = "fire";
        p.k_min = p.k_max = 6;
        job.extrapolate = p;
        const auto results = run_edit(job, fixture().engine());
        REQUIRE(results.size() == 2);
        CHECK(results[0].image.width() == 20);
        CHECK(results[0].score >= results[1].score);
    }
}
