#include <chrono>
#include <ctime>
#include <fstream>
#include <random>

#include "blendiff/base64.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/service.hpp"

namespace blendiff {

using nlohmann::json;

std::string to_string(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "failed";
}

JobState job_state_from_string(const std::string& s) {
    if (s == "queued") return JobState::queued;
    if (s == "running") return JobState::running;
    if (s == "done") return JobState::done;
    if (s == "failed") return JobState::failed;
    throw InvalidArgument("unknown job state '" + s + "'");
}

json JobRecord::to_json() const {
    json results_json = json::array();
    for (const auto& r : results)
        results_json.push_back({{"rank", r.rank}, {"score", r.score}, {"seed", r.seed}, {"file", r.file}});
    json failures_json = json::array();
    for (const auto& f : failures) failures_json.push_back({{"seed", f.seed}, {"message", f.message}});
    return {{"id", id},
            {"state", blendiff::to_string(state)},
            {"submitted_at", submitted_at},
            {"progress", {{"done", progress_done}, {"total", progress_total}}},
            {"error", error},
            {"idempotency_key", idempotency_key},
            {"application", application},
            {"prompt", prompt},
            {"results", results_json},
            {"failures", failures_json}};
}

JobRecord JobRecord::from_json(const json& j) {
    JobRecord r;
    r.id = j.at("id").get<std::string>();
    r.state = job_state_from_string(j.at("state").get<std::string>());
    r.submitted_at = j.value("submitted_at", "");
    r.progress_done = j.at("progress").value("done", 0);
    r.progress_total = j.at("progress").value("total", 0);
    r.error = j.value("error", "");
    r.idempotency_key = j.value("idempotency_key", "");
    r.application = j.value("application", "");
    r.prompt = j.value("prompt", "");
    for (const auto& e : j.value("results", json::array()))
        r.results.push_back({e.at("rank").get<int>(), e.at("score").get<double>(), e.at("seed").get<std::uint64_t>(),
                             e.at("file").get<std::string>()});
    for (const auto& f : j.value("failures", json::array()))
        r.failures.push_back({f.at("seed").get<std::uint64_t>(), f.at("message").get<std::string>()});
    return r;
}

namespace {

DecodedImage decode_field(const json& payload, const char* key) {
    if (!payload.contains(key) || !payload.at(key).is_string())
        throw InvalidArgument(std::string("field '") + key + "' must be a base-64 image string");
    return decode_with_alpha(base64_decode(payload.at(key).get<std::string>()));
}

template <typename T>
T field(const json& payload, const char* key, T fallback) {
    if (!payload.contains(key) || payload.at(key).is_null()) return fallback;
    try {
        return payload.at(key).get<T>();
    } catch (const json::exception&) {
        throw InvalidArgument(std::string("field '") + key + "' has the wrong type");
    }
}

}  // namespace

EditJob edit_job_from_payload(const json& payload) {
    return edit_job_from_payload(payload, to_diffusion_domain(decode_field(payload, "image").raster));
}

EditJob edit_job_from_payload(const json& payload, const ImageTensor& source) {
    if (!payload.is_object()) throw InvalidArgument("edit payload must be a JSON object");
    EditJob job;
    job.application = application_from_string(field<std::string>(payload, "application", "object_edit"));
    auto& r = job.request;
    r.source = source;
    r.prompt = field<std::string>(payload, "prompt", "");
    r.sampler = sampler_kind_from_string(field<std::string>(payload, "sampler", "blended"));
    const int default_k = job.application == Application::scribble             ? kScribbleDefaultK
                          : job.application == Application::background_replace ? kBackgroundDefaultK
                                                                               : 75;
    r.k = field<int>(payload, "k", default_k);
    r.lambda = field<double>(payload, "lambda", 1000.0);
    r.augmentations = field<int>(payload, "n_aug", 16);
    r.seed = field<std::uint64_t>(payload, "seed", 0);
    r.guidance_scale = field<double>(payload, "guidance_scale", 1.0);
    r.bg_index_shift = field<bool>(payload, "bg_index_shift", false);
    r.augment_bg_loss = field<bool>(payload, "augment_bg_loss", false);
    job.num_samples = field<int>(payload, "samples", 64);

    const bool has_mask = payload.contains("mask") && !payload.at("mask").is_null();
    std::optional<Mask> mask;
    if (has_mask) mask = mask_from_raster(decode_field(payload, "mask").raster);

    switch (job.application) {
        case Application::object_edit:
        case Application::background_replace:
            if (!mask) throw InvalidArgument("field 'mask' is required for " + to_string(job.application));
            r.mask = *mask;
            break;
        case Application::scribble: {
            if (!payload.contains("scribble")) throw InvalidArgument("field 'scribble' is required for scribble jobs");
            const json& s = payload.at("scribble");
            ScribbleParams p;
            const DecodedImage layer = decode_field(s, "layer");
            p.layer = to_diffusion_domain(layer.raster);
            if (s.contains("mask") && !s.at("mask").is_null())
                p.mask = mask_from_raster(decode_field(s, "mask").raster);
            else if (layer.alpha)
                p.mask = *layer.alpha;
            else
                throw InvalidArgument("scribble layer needs an alpha channel or a 'mask' field");
            p.dilate_radius = field<int>(s, "dilate_radius", 3);
            p.edit_mask = mask;
            job.scribble = std::move(p);
            break;
        }
        case Application::extrapolate: {
            if (!payload.contains("extrapolate"))
                throw InvalidArgument("field 'extrapolate' is required for extrapolate jobs");
            const json& e = payload.at("extrapolate");
            ExtrapolateParams p;
            p.prompt_left = field<std::string>(e, "prompt_left", "");
            p.prompt_right = field<std::string>(e, "prompt_right", "");
            p.segments_left = field<int>(e, "segments_left", 0);
            p.segments_right = field<int>(e, "segments_right", 0);
            p.k_min = field<int>(e, "k_min", p.k_min);
            p.k_max = field<int>(e, "k_max", p.k_max);
            p.k_denoise = field<int>(e, "k_denoise", p.k_denoise);
            p.samples_per_segment = field<int>(e, "samples_per_segment", 1);
            job.extrapolate = p;
            break;
        }
    }
    return job;
}

std::string make_uuid() {
    static thread_local std::mt19937_64 gen([] {
        std::random_device rd;
        return (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
               static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
    }());
    std::uint64_t hi = gen(), lo = gen();
    hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;
    lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;
    char buf[37];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                  static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                  static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
    return buf;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    static std::atomic<unsigned> counter{0};
    std::filesystem::path tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

}  // namespace blendiff
