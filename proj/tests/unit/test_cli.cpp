#include <sys/wait.h>

#include <cstdlib>

#include <doctest.h>

#include "blendiff/imaging.hpp"
#include "support.hpp"

using namespace blendiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" BLENDIFF_CLI_PATH "' " + args + " >stdout.txt 2>stderr.txt";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir / "stdout.txt");
    r.err = slurp(dir / "stderr.txt");
    return r;
}

void write_inputs(const fs::path& dir) {
    save_image((dir / "img.png").string(), from_diffusion_domain(testing::uniform_image(1, 3, 16, 16)));
    save_image((dir / "mask.png").string(), mask_to_raster(testing::center_mask(16, 16)));
}

const std::string kFast = " --k 10 --n-aug 2 --embed-size 16 ";

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("edit is reproducible for every sampler") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        for (const std::string sampler : {"blended", "local", "ddim", "naive"}) {
            const std::string base = "edit --image img.png --mask mask.png --prompt red --samples 1 --seed 7 --sampler " +
                                     sampler + kFast;
            REQUIRE(run(dir.path(), base + "--out a").code == 0);
            REQUIRE(run(dir.path(), base + "--out b").code == 0);
            CHECK(slurp(dir.path() / "a" / "rank_001.png") == slurp(dir.path() / "b" / "rank_001.png"));
            const json report = json::parse(slurp(dir.path() / "a" / "report.json"));
            CHECK(report["config"]["sampler"] == sampler);
            CHECK(report["results"][0]["seed"] == 7);
            const ImageTensor out = load_tensor((dir.path() / "a" / "rank_001.png").string());
            if (sampler != "local")
                CHECK(testing::outside_equal(out, load_tensor((dir.path() / "img.png").string()), testing::center_mask(16, 16)));
        }
    }

    TEST_CASE("prompt is optional and samples are ranked") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        REQUIRE(run(dir.path(), "edit --image img.png --mask mask.png --samples 3 --out o" + kFast).code == 0);
        const json report = json::parse(slurp(dir.path() / "o" / "report.json"));
        REQUIRE(report["results"].size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(report["results"][i]["rank"] == i + 1);
            CHECK(fs::exists(dir.path() / "o" / report["results"][i]["file"].get<std::string>()));
        }
    }

    TEST_CASE("trace output") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        REQUIRE(run(dir.path(), "edit --image img.png --mask mask.png --samples 1 --trace t.jsonl --out o" + kFast).code ==
              0);
        const std::string trace = slurp(dir.path() / "t.jsonl");
        CHECK(std::count(trace.begin(), trace.end(), '\n') == 10);
    }

    TEST_CASE("exit codes and JSON errors") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        auto r = run(dir.path(), "edit --image img.png --mask mask.png --prompt nope --samples 1 --out o --json");
        CHECK(r.code == 2);
        json err = json::parse(r.err);
        CHECK(err["kind"] == "unknown_prompt");
        CHECK(err["available"].size() > 0);
        r = run(dir.path(), "edit --image missing.png --mask mask.png --out o --json");
        CHECK(r.code == 3);
        CHECK(json::parse(r.err)["kind"] == "io");
        r = run(dir.path(), "edit --image img.png --mask mask.png --k 5000 --out o --json");
        CHECK(r.code == 2);
        CHECK(json::parse(r.err)["kind"] == "invalid_argument");
        CHECK(run(dir.path(), "edit --image img.png --out o").code == 2);
        CHECK(run(dir.path(), "").code == 2);
        std::ofstream(dir.path() / "bad.png") << "not an image";
        CHECK(run(dir.path(), "edit --image bad.png --mask mask.png --out o").code == 3);
    }

    TEST_CASE("config files") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        std::ofstream(dir.path() / "cfg.toml") << "[edit]\nprompt = \"fire\"\nseed = 11\nk = 8\nn-aug = 2\nembed-size = 16\n";
        REQUIRE(run(dir.path(), "--config cfg.toml edit --image img.png --mask mask.png --samples 1 --out o").code == 0);
        json report = json::parse(slurp(dir.path() / "o" / "report.json"));
        CHECK(report["config"]["prompt"] == "fire");
        CHECK(report["config"]["seed"] == 11);
        std::ofstream(dir.path() / "cfg.json") << R"({"edit": {"prompt": "water", "k": 6, "n-aug": 2, "embed-size": 16}})";
        REQUIRE(run(dir.path(), "--config cfg.json edit --image img.png --mask mask.png --samples 1 --out p").code == 0);
        report = json::parse(slurp(dir.path() / "p" / "report.json"));
        CHECK(report["config"]["prompt"] == "water");
        CHECK(report["config"]["k"] == 6);
    }

    TEST_CASE("other subcommands") {
        testing::TempDir dir("cli");
        write_inputs(dir.path());
        REQUIRE(run(dir.path(), "background --image img.png --mask mask.png --prompt water --samples 1 --out bg" + kFast)
                    .code == 0);
        REQUIRE(run(dir.path(), "scribble --image img.png --scribble img.png --scribble-mask mask.png --samples 1 --out s" +
                                    kFast)
                    .code == 0);
        REQUIRE(run(dir.path(), "extrapolate --image img.png --prompt-right water --right 1 --k-min 4 --k-max 4 "
                                "--k-denoise 2 --n-aug 2 --embed-size 16 --out e")
                    .code == 0);
        CHECK(load_tensor((dir.path() / "e" / "rank_001.png").string()).width() == 20);

        auto r = run(dir.path(), "bench gmm --runs 200 --size 2 --steps 50");
        REQUIRE(r.code == 0);
        const json bench = json::parse(r.out);
        CHECK(bench["mean_ok"] == true);
        CHECK(bench["runs"] == 200);
    }
}
