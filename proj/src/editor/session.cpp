#include <cstring>

#include <json.hpp>

#include "blendiff/base64.hpp"
#include "blendiff/editor.hpp"

namespace blendiff {

namespace {

using nlohmann::json;

constexpr const char* kSessionFormat = "bdses/1";

std::string encode_doubles(std::span<const double> values) {
    std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], sizeof bits);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return base64_encode(bytes);
}

std::vector<double> decode_doubles(const std::string& text, std::size_t expected) {
    const auto bytes = base64_decode(text);
    if (bytes.size() != expected * sizeof(double))
        throw DecodeError("tensor payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(expected * sizeof(double)),
                          0);
    std::vector<double> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        std::memcpy(&out[i], &bits, sizeof bits);
    }
    return out;
}

json tensor_to_json(const ImageTensor& t) {
    if (t.empty()) return nullptr;
    return {{"shape", {t.height(), t.width(), t.channels()}}, {"f64", encode_doubles(t.data())}};
}

ImageTensor tensor_from_json(const json& j) {
    if (j.is_null()) return {};
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw InvalidArgument("tensor shape must have 3 entries");
    const Shape s{shape[0], shape[1], shape[2]};
    return ImageTensor(s, decode_doubles(j.at("f64").get<std::string>(), s.size()));
}

json mask_to_json(const Mask& m) {
    if (m.size() == 0) return nullptr;
    return {{"shape", {m.height(), m.width()}}, {"f64", encode_doubles(m.data())}};
}

Mask mask_from_json(const json& j) {
    if (j.is_null()) return {};
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 2) throw InvalidArgument("mask shape must have 2 entries");
    return Mask(shape[0], shape[1],
                decode_doubles(j.at("f64").get<std::string>(), static_cast<std::size_t>(shape[0]) * shape[1]));
}

json job_to_json(const EditJob& job) {
    const auto& r = job.request;
    json j{{"application", to_string(job.application)},
           {"prompt", r.prompt},
           {"sampler", to_string(r.sampler)},
           {"k", r.k},
           {"lambda", r.lambda},
           {"augmentations", r.augmentations},
           {"seed", r.seed},
           {"guidance_scale", r.guidance_scale},
           {"bg_index_shift", r.bg_index_shift},
           {"augment_bg_loss", r.augment_bg_loss},
           {"num_samples", job.num_samples},
           {"mask", mask_to_json(r.mask)}};
    if (job.scribble) {
        const auto& s = *job.scribble;
        j["scribble"] = {{"layer", tensor_to_json(s.layer)},
                         {"mask", mask_to_json(s.mask)},
                         {"edit_mask", s.edit_mask ? mask_to_json(*s.edit_mask) : json(nullptr)},
                         {"dilate_radius", s.dilate_radius}};
    }
    if (job.extrapolate) {
        const auto& p = *job.extrapolate;
        j["extrapolate"] = {{"prompt_left", p.prompt_left},       {"prompt_right", p.prompt_right},
                            {"segments_left", p.segments_left},   {"segments_right", p.segments_right},
                            {"k_min", p.k_min},                   {"k_max", p.k_max},
                            {"k_denoise", p.k_denoise},           {"samples_per_segment", p.samples_per_segment}};
    }
    return j;
}

EditJob job_from_json(const json& j, const ImageTensor& source) {
    EditJob job;
    job.application = application_from_string(j.at("application").get<std::string>());
    auto& r = job.request;
    r.source = source;
    r.prompt = j.at("prompt").get<std::string>();
    r.sampler = sampler_kind_from_string(j.at("sampler").get<std::string>());
    r.k = j.at("k").get<int>();
    r.lambda = j.at("lambda").get<double>();
    r.augmentations = j.at("augmentations").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.guidance_scale = j.at("guidance_scale").get<double>();
    r.bg_index_shift = j.at("bg_index_shift").get<bool>();
    r.augment_bg_loss = j.at("augment_bg_loss").get<bool>();
    r.mask = mask_from_json(j.at("mask"));
    job.num_samples = j.at("num_samples").get<int>();
    if (j.contains("scribble")) {
        const auto& s = j.at("scribble");
        ScribbleParams p;
        p.layer = tensor_from_json(s.at("layer"));
        p.mask = mask_from_json(s.at("mask"));
        if (!s.at("edit_mask").is_null()) p.edit_mask = mask_from_json(s.at("edit_mask"));
        p.dilate_radius = s.at("dilate_radius").get<int>();
        job.scribble = std::move(p);
    }
    if (j.contains("extrapolate")) {
        const auto& e = j.at("extrapolate");
        ExtrapolateParams p;
        p.prompt_left = e.at("prompt_left").get<std::string>();
        p.prompt_right = e.at("prompt_right").get<std::string>();
        p.segments_left = e.at("segments_left").get<int>();
        p.segments_right = e.at("segments_right").get<int>();
        p.k_min = e.at("k_min").get<int>();
        p.k_max = e.at("k_max").get<int>();
        p.k_denoise = e.at("k_denoise").get<int>();
        p.samples_per_segment = e.at("samples_per_segment").get<int>();
        job.extrapolate = p;
    }
    return job;
}

}  // namespace

Session::Session(std::string id, ImageTensor canvas) : id_(std::move(id)), initial_(canvas), canvas_(std::move(canvas)) {
    if (canvas_.empty()) throw InvalidArgument("session needs a non-empty canvas");
}

bool Session::pending() const { return !steps_.empty() && !steps_.back().chosen_rank; }

void Session::append(EditJob job) {
    if (pending()) throw IllegalTransition("previous step has no chosen result yet");
    job.request.source = canvas_;
    steps_.push_back({std::move(job), {}, std::nullopt, {}});
}

void Session::abandon_pending() {
    if (!pending()) throw IllegalTransition("no pending step to abandon");
    steps_.pop_back();
}

void Session::attach_results(std::vector<EditResult> results) {
    if (!pending()) throw IllegalTransition("no pending step to attach results to");
    if (!steps_.back().results.empty()) throw IllegalTransition("step already has results");
    if (results.empty()) throw InvalidArgument("cannot attach an empty result list");
    steps_.back().results = std::move(results);
}

void Session::choose(int rank) {
    if (steps_.empty()) throw IllegalTransition("session has no steps");
    SessionStep& step = steps_.back();
    if (step.chosen_rank) throw IllegalTransition("last step already has a chosen result");
    if (step.results.empty()) throw IllegalTransition("cannot choose from a step that has not run");
    const auto it = std::find_if(step.results.begin(), step.results.end(),
                                 [rank](const EditResult& r) { return r.rank == rank; });
    if (it == step.results.end())
        throw InvalidArgument("rank " + std::to_string(rank) + " out of range 1.." +
                              std::to_string(step.results.size()));
    step.chosen_rank = rank;
    step.chosen = it->image;
    canvas_ = it->image;
}

std::string Session::export_json() const {
    json steps = json::array();
    for (const auto& s : steps_) {
        json results = json::array();
        for (const auto& r : s.results) results.push_back({{"rank", r.rank}, {"score", r.score}, {"seed", r.seed}});
        steps.push_back({{"job", job_to_json(s.job)},
                         {"results", results},
                         {"chosen_rank", s.chosen_rank ? json(*s.chosen_rank) : json(nullptr)},
                         {"chosen", tensor_to_json(s.chosen)}});
    }
    const json doc{{"format", kSessionFormat}, {"id", id_}, {"initial", tensor_to_json(initial_)}, {"steps", steps}};
    return doc.dump();
}

Session Session::import_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed session JSON: ") + e.what());
    }
    if (doc.value("format", "") != kSessionFormat)
        throw InvalidArgument("unsupported session format '" + doc.value("format", "") + "'");
    try {
        Session s(doc.at("id").get<std::string>(), tensor_from_json(doc.at("initial")));
        for (const auto& step : doc.at("steps")) {
            SessionStep st;
            st.job = job_from_json(step.at("job"), s.canvas_);
            for (const auto& r : step.at("results"))
                st.results.push_back({{}, r.at("score").get<double>(), r.at("seed").get<std::uint64_t>(),
                                      r.at("rank").get<int>()});
            if (!step.at("chosen_rank").is_null()) {
                st.chosen_rank = step.at("chosen_rank").get<int>();
                st.chosen = tensor_from_json(step.at("chosen"));
                for (auto& r : st.results)
                    if (r.rank == *st.chosen_rank) r.image = st.chosen;
                s.canvas_ = st.chosen;
            }
            s.steps_.push_back(std::move(st));
        }
        return s;
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed session document: ") + e.what());
    }
}

}  // namespace blendiff
