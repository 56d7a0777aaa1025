#include <doctest.h>

#include "blendiff/editor.hpp"
#include "blendiff/engine.hpp"
#include "support.hpp"

using namespace blendiff;

namespace {

struct Fixture {
    GmmDenoiser denoiser{GaussianMixturePrior::load(default_data_dir() + "/prior.json")};
    LexiconEmbedder guidance{LexiconEmbedder::load(default_data_dir() + "/lexicon.json", 16)};
    NoiseSchedule schedule = default_schedule();
    EditEngine engine() const { return {denoiser, guidance, schedule, 1}; }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

EditJob step_job(const std::string& prompt, const Mask& mask, std::uint64_t seed) {
    EditJob job;
    job.request.mask = mask;
    job.request.prompt = prompt;
    job.request.k = 15;
    job.request.seed = seed;
    job.request.augmentations = 2;
    job.num_samples = 3;
    return job;
}

Mask box(int y0, int y1, int x0, int x1) {
    Mask m(16, 16);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1.0;
    return m;
}

// Runs the pending step against the current canvas and attaches its results.
void run_pending(Session& s) {
    EditJob job = s.steps().back().job;
    job.request.source = s.canvas();
    s.attach_results(run_edit(job, fixture().engine()));
}

}  // namespace

TEST_SUITE("session") {
    TEST_CASE("chained steps use the chosen result as the next source") {
        const ImageTensor initial = testing::uniform_image(1, 3, 16, 16);
        Session s("s1", initial);
        CHECK(s.canvas() == initial);
        CHECK_FALSE(s.pending());

        s.append(step_job("red", box(2, 8, 2, 8), 10));
        CHECK(s.pending());
        CHECK(s.steps().back().job.request.source == initial);
        CHECK_THROWS_AS(s.append(step_job("red", box(2, 8, 2, 8), 11)), IllegalTransition);
        run_pending(s);
        const ImageTensor chosen = s.steps().back().results[1].image;
        s.choose(2);
        CHECK_FALSE(s.pending());
        CHECK(s.canvas() == chosen);
        CHECK(*s.steps().back().chosen_rank == 2);
        CHECK_THROWS_AS(s.choose(1), IllegalTransition);

        s.append(step_job("blue sky", box(8, 14, 8, 14), 20));
        CHECK(s.steps().back().job.request.source == chosen);
        run_pending(s);
        s.choose(1);
        CHECK(s.steps().size() == 2);
        CHECK(s.initial() == initial);
    }

    TEST_CASE("choose validates its state and rank") {
        Session s("s2", testing::uniform_image(2, 3, 16, 16));
        CHECK_THROWS_AS(s.choose(1), IllegalTransition);
        s.append(step_job("", box(4, 12, 4, 12), 1));
        CHECK_THROWS_AS(s.choose(1), IllegalTransition);
        run_pending(s);
        CHECK_THROWS_AS(s.choose(0), InvalidArgument);
        CHECK_THROWS_AS(s.choose(4), InvalidArgument);
    }

    TEST_CASE("abandoning a pending step restores the previous state") {
        const ImageTensor initial = testing::uniform_image(3, 3, 16, 16);
        Session s("s3", initial);
        s.append(step_job("fire", box(4, 12, 4, 12), 1));
        s.abandon_pending();
        CHECK_FALSE(s.pending());
        CHECK(s.steps().empty());
        CHECK(s.canvas() == initial);
        CHECK_THROWS_AS(s.abandon_pending(), IllegalTransition);
    }

    TEST_CASE("export and import round trip") {
        Session s("s4", testing::uniform_image(4, 3, 16, 16));
        s.append(step_job("red", box(2, 8, 2, 8), 10));
        run_pending(s);
        s.choose(1);
        s.append(step_job("fire", box(8, 14, 8, 14), 20));
        const Session back = Session::import_json(s.export_json());
        CHECK(back.id() == "s4");
        CHECK(back.canvas() == s.canvas());
        CHECK(back.initial() == s.initial());
        CHECK(back.pending());
        REQUIRE(back.steps().size() == 2);
        CHECK(back.steps()[0].chosen_rank == 1);
        CHECK(back.steps()[0].chosen == s.steps()[0].chosen);
        CHECK(back.steps()[1].job.request.prompt == "fire");
        CHECK(back.steps()[1].job.request.mask == box(8, 14, 8, 14));
        CHECK(back.export_json() == s.export_json());
        CHECK_THROWS(Session::import_json("{\"format\":\"other\"}"));
    }

    TEST_CASE("unguided refinement only changes the new mask") {
        Session s("s5", testing::uniform_image(5, 3, 16, 16));
        s.append(step_job("red", box(2, 12, 2, 12), 10));
        run_pending(s);
        s.choose(1);
        const ImageTensor before = s.canvas();
        const Mask sub = box(4, 8, 4, 8);
        s.append(step_job("", sub, 30));
        run_pending(s);
        s.choose(1);
        CHECK(testing::outside_equal(s.canvas(), before, sub));
        CHECK_FALSE(s.canvas() == before);
    }
}
