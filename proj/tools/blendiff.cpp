// blendiff command-line tool: local edits, applications, benchmarks and the HTTP service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "blendiff/bench.hpp"
#include "blendiff/engine.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blendiff;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kSampling = 4 };

struct EngineOptions {
    std::string prior;
    std::string net;
    std::string lexicon;
    int embed_size = 64;
    int schedule_steps = 100;
};

struct SamplerOptions {
    std::string prompt;
    std::string sampler = "blended";
    int k = -1;
    double lambda = 1000.0;
    int n_aug = 16;
    int samples = 64;
    std::uint64_t seed = 0;
    double guidance_scale = 1.0;
    bool bg_index_shift = false;
    unsigned workers = 0;
    std::string out;
    std::string trace;
};

void add_engine_options(CLI::App* cmd, EngineOptions& o) {
    cmd->add_option("--prior", o.prior, "Gaussian-mixture prior JSON (default: data dir prior.json)");
    cmd->add_option("--net", o.net, "BDNET1 weights file; replaces the mixture prior");
    cmd->add_option("--lexicon", o.lexicon, "Lexicon JSON (default: data dir lexicon.json)");
    cmd->add_option("--embed-size", o.embed_size, "Embedder input size (0 keeps native size)")->capture_default_str();
    cmd->add_option("--schedule-steps", o.schedule_steps, "Respaced sampling steps")->capture_default_str();
}

void add_sampler_options(CLI::App* cmd, SamplerOptions& o, int default_samples) {
    o.samples = default_samples;
    cmd->add_option("--prompt", o.prompt, "Lexicon prompt; empty disables guidance");
    cmd->add_option("--sampler", o.sampler, "blended|local|ddim|naive")->capture_default_str();
    cmd->add_option("--k", o.k, "Start step (respaced)");
    cmd->add_option("--lambda", o.lambda, "Background weight for the local sampler")->capture_default_str();
    cmd->add_option("--n-aug", o.n_aug, "Augmentations per gradient")->capture_default_str();
    cmd->add_option("--samples", o.samples, "Number of samples to rank")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Base seed")->capture_default_str();
    cmd->add_option("--guidance-scale", o.guidance_scale, "Multiplier on the text gradient")->capture_default_str();
    cmd->add_flag("--bg-index-shift", o.bg_index_shift, "Noise the background to level t-1");
    cmd->add_option("--workers", o.workers, "Sampling threads (0 = all cores)");
    cmd->add_option("--out", o.out, "Output directory")->required();
    cmd->add_option("--trace", o.trace, "Write a JSON-lines trace of the first sample");
}

EngineBundle make_engine(const EngineOptions& o) {
    EngineConfig c = default_engine_config();
    if (!o.prior.empty()) c.prior_path = o.prior;
    c.net_path = o.net;
    if (!o.lexicon.empty()) c.lexicon_path = o.lexicon;
    c.embed_size = o.embed_size;
    c.schedule.respaced_steps = o.schedule_steps;
    return load_engine(c);
}

void fill_request(SampleRequest& r, const SamplerOptions& o, int default_k) {
    r.prompt = o.prompt;
    r.sampler = sampler_kind_from_string(o.sampler);
    r.k = o.k >= 0 ? o.k : default_k;
    r.lambda = o.lambda;
    r.augmentations = o.n_aug;
    r.seed = o.seed;
    r.guidance_scale = o.guidance_scale;
    r.bg_index_shift = o.bg_index_shift;
}

json request_json(const EditJob& job, const EngineBundle& engine) {
    const auto& r = job.request;
    json sched;
    to_json(sched, engine.schedule.spec());
    return {{"application", to_string(job.application)},
            {"prompt", r.prompt},
            {"sampler", to_string(r.sampler)},
            {"k", r.k},
            {"lambda", r.lambda},
            {"n_aug", r.augmentations},
            {"samples", job.num_samples},
            {"seed", r.seed},
            {"guidance_scale", r.guidance_scale},
            {"bg_index_shift", r.bg_index_shift},
            {"denoiser", engine.denoiser->describe()},
            {"schedule", sched}};
}

int run_job_to_dir(const EditJob& job, const EngineBundle& engine, const SamplerOptions& o) {
    const EditOutcome outcome = run_edit_outcome(job, engine.engine(o.workers));
    fs::create_directories(o.out);
    json results = json::array();
    for (const auto& r : outcome.results) {
        char name[32];
        std::snprintf(name, sizeof name, "rank_%03d.png", r.rank);
        save_tensor((fs::path(o.out) / name).string(), r.image);
        results.push_back({{"rank", r.rank}, {"score", r.score}, {"seed", r.seed}, {"file", name}});
    }
    json failures = json::array();
    for (const auto& f : outcome.failures) failures.push_back({{"seed", f.seed}, {"message", f.message}});
    const json report{{"config", request_json(job, engine)}, {"results", results}, {"failures", failures}};
    std::ofstream(fs::path(o.out) / "report.json") << report.dump(2) << '\n';

    if (!o.trace.empty() && job.application != Application::extrapolate) {
        Trace trace;
        trace.compute_loss = true;
        SampleRequest req = job.request;
        if (job.application == Application::scribble) {
            req.source = composite_scribble(job.request.source, *job.scribble);
            req.mask = scribble_edit_mask(*job.scribble);
        }
        if (req.prompt.empty()) req.guidance_scale = 0.0;
        const SamplerContext ctx{*engine.denoiser, *engine.guidance, engine.schedule, &trace, nullptr};
        sample(req, ctx);
        std::ofstream out(o.trace);
        if (!out) throw IoError("cannot write trace '" + o.trace + "'");
        trace.write_jsonl(out);
    }
    std::cout << "wrote " << outcome.results.size() << " result(s) to " << o.out << '\n';
    return kOk;
}

// Accepts JSON config files with the same keys as the TOML form; nested objects name subcommands.
class ConfigJson : public CLI::Config {
  public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j;
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const std::string name = opt->get_lnames()[0];
            if (opt->count() > 0)
                j[name] = opt->as<std::string>();
            else if (default_also && !opt->get_default_str().empty())
                j[name] = opt->get_default_str();
        }
        for (const CLI::App* sub : app->get_subcommands({}))
            j[sub->get_name()] = json::parse(to_config(sub, default_also, false, ""));
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            input >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

  private:
    static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto next = parents;
                next.push_back(key);
                CLI::ConfigItem open;
                open.parents = parents;
                open.name = key;
                open.inputs = {"ON"};
                out.push_back(open);
                flatten(value, next, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            } else if (value.is_boolean()) {
                item.inputs = {value.get<bool>() ? "true" : "false"};
            } else {
                item.inputs = {value.is_string() ? value.get<std::string>() : value.dump()};
            }
            out.push_back(item);
        }
    }
};

// Picks the JSON reader for *.json config files and TOML otherwise.
std::string config_format(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config") return fs::path(argv[i + 1]).extension() == ".json" ? "json" : "toml";
    }
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a.rfind("--config=", 0) == 0) return fs::path(a.substr(9)).extension() == ".json" ? "json" : "toml";
    }
    return "toml";
}

HttpServer* g_server = nullptr;

void handle_signal(int) {
    if (g_server) g_server->stop();
}

int report_error(const std::string& kind, const std::string& message, int code, bool as_json,
                 const json& extra = json::object()) {
    if (as_json) {
        json j = extra;
        j["error"] = message;
        j["kind"] = kind;
        j["exit_code"] = code;
        std::cerr << j.dump() << '\n';
    } else {
        std::cerr << "blendiff: " << message << '\n';
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blendiff: text-guided local image editing with blended diffusion"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML or JSON config file with keys named like the flags");
    if (config_format(argc, argv) == "json") app.config_formatter(std::make_shared<ConfigJson>());
    app.fallthrough();
    bool as_json = false;
    app.add_flag("--json", as_json, "Print errors as JSON on stderr");

    EngineOptions eng;

    // edit
    SamplerOptions edit_opts;
    std::string image_path, mask_path;
    auto* edit = app.add_subcommand("edit", "Edit the masked region of an image");
    edit->add_option("--image", image_path, "Source image (PNG/PGM)")->required();
    edit->add_option("--mask", mask_path, "Edit mask (>=128 marks the region)")->required();
    add_sampler_options(edit, edit_opts, 64);
    add_engine_options(edit, eng);

    // scribble
    SamplerOptions scr_opts;
    std::string scr_image, scr_layer, scr_layer_mask, scr_mask;
    int dilate_radius = 3;
    auto* scribble = app.add_subcommand("scribble", "Turn a coarse scribble into content");
    scribble->add_option("--image", scr_image, "Base image")->required();
    scribble->add_option("--scribble", scr_layer, "Scribble layer; alpha marks painted pixels")
        ->required();
    scribble->add_option("--scribble-mask", scr_layer_mask, "Painted-pixel mask if the layer has no alpha")
        ;
    scribble->add_option("--mask", scr_mask, "Edit mask (default: dilated scribble)");
    scribble->add_option("--dilate", dilate_radius, "Auto-mask dilation radius")->capture_default_str();
    add_sampler_options(scribble, scr_opts, 64);
    add_engine_options(scribble, eng);

    // background
    SamplerOptions bg_opts;
    std::string bg_image, bg_mask;
    auto* background = app.add_subcommand("background", "Replace the masked background");
    background->add_option("--image", bg_image, "Source image")->required();
    background->add_option("--mask", bg_mask, "Background mask")->required();
    add_sampler_options(background, bg_opts, 64);
    add_engine_options(background, eng);

    // extrapolate
    SamplerOptions ex_opts;
    std::string ex_image;
    ExtrapolateParams ex;
    auto* extrap = app.add_subcommand("extrapolate", "Extend an image sideways");
    extrap->add_option("--image", ex_image, "Source image (width divisible by 4)")->required();
    extrap->add_option("--prompt-left", ex.prompt_left, "Prompt for the left extension");
    extrap->add_option("--prompt-right", ex.prompt_right, "Prompt for the right extension");
    extrap->add_option("--left", ex.segments_left, "Segments added on the left")->capture_default_str();
    extrap->add_option("--right", ex.segments_right, "Segments added on the right")->capture_default_str();
    extrap->add_option("--k-min", ex.k_min, "Steps for the first segment")->capture_default_str();
    extrap->add_option("--k-max", ex.k_max, "Steps for the last segment")->capture_default_str();
    extrap->add_option("--k-denoise", ex.k_denoise, "Steps of the final denoise pass")->capture_default_str();
    extrap->add_option("--segment-samples", ex.samples_per_segment, "Samples ranked per segment")
        ->capture_default_str();
    add_sampler_options(extrap, ex_opts, 1);
    add_engine_options(extrap, eng);

    // bench
    auto* bench = app.add_subcommand("bench", "Benchmarks");
    bench->require_subcommand(1);
    GmmBenchConfig bench_cfg;
    std::string components = "1:0.5:0.2";
    std::string bench_sampler = "blended";
    std::string bench_out;
    int canvas = 8;
    auto* gmm = bench->add_subcommand("gmm", "Moment matching against a Gaussian-mixture prior");
    gmm->add_option("--components", components, "w:mean:sigma[,w:mean:sigma...]")->capture_default_str();
    gmm->add_option("--steps", bench_cfg.steps, "Respaced steps")->capture_default_str();
    gmm->add_option("--runs", bench_cfg.runs, "Samples drawn")->capture_default_str();
    gmm->add_option("--size", canvas, "Canvas side")->capture_default_str();
    gmm->add_option("--channels", bench_cfg.channels, "Channels")->capture_default_str();
    gmm->add_option("--seed", bench_cfg.seed, "Base seed")->capture_default_str();
    gmm->add_option("--sampler", bench_sampler, "blended|ddim")->capture_default_str();
    gmm->add_option("--workers", bench_cfg.workers, "Threads (0 = all cores)");
    gmm->add_option("--out", bench_out, "Also write the report to this file");

    // serve
    ServiceConfig svc;
    HttpConfig http;
    std::string workspace = "workspace";
    auto* serve = app.add_subcommand("serve", "Run the HTTP job service");
    serve->add_option("--port", http.port, "Listen port (0 = ephemeral)")->envname("BLENDIFF_PORT")->capture_default_str();
    serve->add_option("--host", http.host, "Listen address")->capture_default_str();
    serve->add_option("--workspace", workspace, "Workspace directory")
        ->envname("BLENDIFF_WORKSPACE")
        ->capture_default_str();
    serve->add_option("--workers", svc.job_workers, "Concurrent jobs (0 = available parallelism)");
    serve->add_option("--sample-workers", svc.sample_workers, "Threads per job")->capture_default_str();
    std::string ui_dir;
    serve->add_option("--ui-dir", ui_dir, "Built UI bundle served at /");
    add_engine_options(serve, eng);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (as_json || std::find(argv, argv + argc, std::string("--json")) != argv + argc)
            return report_error("usage", e.what(), kUsage, true);
        app.exit(e);
        return kUsage;
    }

    try {
        if (*edit) {
            const EngineBundle engine = make_engine(eng);
            EditJob job;
            job.request.source = load_tensor(image_path);
            job.request.mask = load_mask(mask_path);
            fill_request(job.request, edit_opts, 75);
            job.num_samples = edit_opts.samples;
            return run_job_to_dir(job, engine, edit_opts);
        }
        if (*scribble) {
            const EngineBundle engine = make_engine(eng);
            EditJob job;
            job.application = Application::scribble;
            job.request.source = load_tensor(scr_image);
            fill_request(job.request, scr_opts, kScribbleDefaultK);
            job.num_samples = scr_opts.samples;
            ScribbleParams p;
            const DecodedImage layer = load_image(scr_layer);
            p.layer = to_diffusion_domain(layer.raster);
            if (!scr_layer_mask.empty())
                p.mask = load_mask(scr_layer_mask);
            else if (layer.alpha)
                p.mask = *layer.alpha;
            else
                throw InvalidArgument("scribble layer has no alpha channel; pass --scribble-mask");
            if (!scr_mask.empty()) p.edit_mask = load_mask(scr_mask);
            p.dilate_radius = dilate_radius;
            job.scribble = std::move(p);
            return run_job_to_dir(job, engine, scr_opts);
        }
        if (*background) {
            const EngineBundle engine = make_engine(eng);
            EditJob job;
            job.application = Application::background_replace;
            job.request.source = load_tensor(bg_image);
            job.request.mask = load_mask(bg_mask);
            fill_request(job.request, bg_opts, kBackgroundDefaultK);
            job.num_samples = bg_opts.samples;
            return run_job_to_dir(job, engine, bg_opts);
        }
        if (*extrap) {
            const EngineBundle engine = make_engine(eng);
            EditJob job;
            job.application = Application::extrapolate;
            job.request.source = load_tensor(ex_image);
            fill_request(job.request, ex_opts, 75);
            job.num_samples = ex_opts.samples;
            job.extrapolate = ex;
            return run_job_to_dir(job, engine, ex_opts);
        }
        if (*gmm) {
            bench_cfg.components = parse_component_spec(components);
            bench_cfg.height = bench_cfg.width = canvas;
            bench_cfg.sampler = sampler_kind_from_string(bench_sampler);
            const GmmBenchReport rep = run_gmm_bench(bench_cfg);
            const std::string text = rep.to_json(bench_cfg).dump(2);
            std::cout << text << '\n';
            if (!bench_out.empty()) std::ofstream(bench_out) << text << '\n';
            return kOk;
        }
        if (*serve) {
            svc.workspace = workspace;
            http.ui_dir = ui_dir;
            JobService service(svc, make_engine(eng));
            HttpServer server(service, http);
            const int port = server.bind();
            g_server = &server;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            std::cout << "listening on http://" << http.host << ':' << port << std::endl;
            server.serve_bound();
            g_server = nullptr;
            return kOk;
        }
    } catch (const UnknownPrompt& e) {
        return report_error("unknown_prompt", e.what(), kUsage, as_json, {{"available", e.available()}});
    } catch (const InvalidArgument& e) {
        return report_error("invalid_argument", e.what(), kUsage, as_json);
    } catch (const ShapeMismatch& e) {
        return report_error("shape_mismatch", e.what(), kUsage, as_json);
    } catch (const DecodeError& e) {
        return report_error("decode", e.what(), kIo, as_json);
    } catch (const IoError& e) {
        return report_error("io", e.what(), kIo, as_json);
    } catch (const SamplingError& e) {
        return report_error("sampling", e.what(), kSampling, as_json, {{"step", e.step()}});
    } catch (const DegenerateError& e) {
        return report_error("sampling", e.what(), kSampling, as_json);
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error("io", e.what(), kIo, as_json);
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), kInternal, as_json);
    }
    return kOk;
}
