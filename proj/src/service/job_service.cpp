#include <algorithm>
#include <fstream>
#include <sstream>

#include "blendiff/base64.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/parallel.hpp"
#include "blendiff/service.hpp"

namespace blendiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool finished(JobState s) { return s == JobState::done || s == JobState::failed; }

std::string png_base64(const ImageTensor& image) { return base64_encode(encode_png(from_diffusion_domain(image))); }

void require_prompt(const GuidanceModel& model, const std::string& prompt) {
    if (!prompt.empty() && !model.knows(prompt)) throw UnknownPrompt(prompt, model.prompts());
}

}  // namespace

JobService::JobService(ServiceConfig config, EngineBundle engine)
    : config_(std::move(config)), engine_(std::move(engine)), store_(config_.workspace) {
    recover();
    load_sessions();
    const unsigned k = resolve_workers(config_.job_workers);
    for (unsigned i = 0; i < k; ++i) workers_.emplace_back([this](std::stop_token st) { worker_loop(st); });
}

JobService::~JobService() { shutdown(); }

void JobService::shutdown() {
    for (auto& w : workers_) w.request_stop();
    queue_cv_.notify_all();
    workers_.clear();
}

void JobService::recover() {
    for (JobRecord r : store_.load_all()) {
        if (!finished(r.state)) {
            r.state = JobState::failed;
            r.error = "interrupted by service restart";
            store_.save(r);
        }
        if (!r.idempotency_key.empty()) idempotency_[r.idempotency_key] = r.id;
        jobs_[r.id] = std::move(r);
    }
}

SubmitOutcome JobService::submit(const json& payload, const std::string& idempotency_key) {
    if (!idempotency_key.empty()) {
        std::lock_guard lock(mutex_);
        if (const auto it = idempotency_.find(idempotency_key); it != idempotency_.end()) return {it->second, false};
    }
    return submit_job(edit_job_from_payload(payload), payload, idempotency_key);
}

SubmitOutcome JobService::submit_job(EditJob job, const json& payload, const std::string& idempotency_key) {
    validate(job, engine_.schedule);
    require_prompt(*engine_.guidance, job.request.prompt);
    if (job.extrapolate) {
        require_prompt(*engine_.guidance, job.extrapolate->prompt_left);
        require_prompt(*engine_.guidance, job.extrapolate->prompt_right);
    }
    // Surface denoiser/image shape mismatches at submission time.
    engine_.denoiser->predict_eps(job.request.source, 1, engine_.schedule);

    JobRecord rec;
    rec.id = make_uuid();
    rec.submitted_at = utc_timestamp();
    rec.progress_total = job.num_samples;
    rec.idempotency_key = idempotency_key;
    rec.application = to_string(job.application);
    rec.prompt = job.request.prompt;

    std::lock_guard lock(mutex_);
    if (!idempotency_key.empty()) {
        if (const auto it = idempotency_.find(idempotency_key); it != idempotency_.end()) return {it->second, false};
        idempotency_[idempotency_key] = rec.id;
    }
    store_.save_request(rec.id, payload);
    store_.save(rec);
    pending_.emplace(rec.id, std::move(job));
    jobs_.emplace(rec.id, rec);
    queue_.push_back(rec.id);
    queue_cv_.notify_one();
    return {rec.id, true};
}

std::optional<JobRecord> JobService::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::vector<JobRecord> JobService::list() const {
    std::vector<JobRecord> out;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [id, r] : jobs_) out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const JobRecord& a, const JobRecord& b) {
        return a.submitted_at != b.submitted_at ? a.submitted_at < b.submitted_at : a.id < b.id;
    });
    return out;
}

std::optional<JobRecord> JobService::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, timeout, [&] {
        const auto it = jobs_.find(id);
        return it == jobs_.end() || finished(it->second.state);
    });
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void JobService::update(const std::string& id, const std::function<void(JobRecord&)>& fn, bool persist) {
    std::lock_guard lock(mutex_);
    JobRecord& rec = jobs_.at(id);
    fn(rec);
    if (persist) store_.save(rec);
    changed_.notify_all();
}

void JobService::worker_loop(std::stop_token stop) {
    while (true) {
        std::string id;
        {
            std::unique_lock lock(mutex_);
            if (!queue_cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
            id = queue_.front();
            queue_.pop_front();
        }
        run_job(id);
    }
}

void JobService::run_job(const std::string& id) {
    EditJob job;
    {
        std::lock_guard lock(mutex_);
        const auto it = pending_.find(id);
        if (it == pending_.end()) return;
        job = std::move(it->second);
        pending_.erase(it);
    }
    update(id, [](JobRecord& r) { r.state = JobState::running; }, true);
    try {
        const EditEngine engine = engine_.engine(config_.sample_workers);
        const EditOutcome outcome = run_edit_outcome(job, engine, [&](int done, int) {
            update(id, [done](JobRecord& r) { r.progress_done = done; }, true);
        });
        fs::create_directories(store_.job_dir(id) / "results");
        std::vector<ResultEntry> entries;
        for (const auto& r : outcome.results) {
            const fs::path path = store_.result_path(id, r.rank);
            const auto bytes = encode_png(from_diffusion_domain(r.image));
            write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
            entries.push_back({r.rank, r.score, r.seed, fs::relative(path, store_.job_dir(id)).string()});
        }
        update(id,
               [&](JobRecord& r) {
                   r.state = JobState::done;
                   r.results = entries;
                   r.failures = outcome.failures;
                   r.progress_done = r.progress_total;
               },
               true);
    } catch (const std::exception& e) {
        update(id,
               [&](JobRecord& r) {
                   r.state = JobState::failed;
                   r.error = e.what();
               },
               true);
    }
}

// ---- sessions ----

void JobService::save_session(const std::string& id, SessionEntry& entry) const {
    const fs::path dir = store_.root() / "sessions" / id;
    fs::create_directories(dir);
    write_file_atomic(dir / "session.json", entry.session.export_json());
    write_file_atomic(dir / "steps.json", json{{"step_jobs", entry.step_jobs}}.dump());
}

void JobService::load_sessions() {
    std::error_code ec;
    for (const auto& dir : fs::directory_iterator(store_.root() / "sessions", ec)) {
        try {
            std::ifstream s(dir.path() / "session.json"), j(dir.path() / "steps.json");
            if (!s || !j) continue;
            std::stringstream ss, js;
            ss << s.rdbuf();
            js << j.rdbuf();
            auto entry = std::make_unique<SessionEntry>();
            entry->session = Session::import_json(ss.str());
            entry->step_jobs = json::parse(js.str()).at("step_jobs").get<std::vector<std::string>>();
            sessions_[entry->session.id()] = std::move(entry);
        } catch (const std::exception&) {
            // skip unreadable sessions
        }
    }
}

JobService::SessionEntry& JobService::session_entry(const std::string& id) const {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return *it->second;
}

bool JobService::has_session(const std::string& id) const {
    std::lock_guard lock(sessions_mutex_);
    return sessions_.count(id) > 0;
}

std::string JobService::create_session(const ImageTensor& canvas) {
    auto entry = std::make_unique<SessionEntry>();
    entry->session = Session(make_uuid(), canvas);
    const std::string id = entry->session.id();
    save_session(id, *entry);
    std::lock_guard lock(sessions_mutex_);
    sessions_[id] = std::move(entry);
    return id;
}

json JobService::session_json(const std::string& id) const {
    SessionEntry& entry = session_entry(id);
    std::lock_guard lock(entry.mutex);
    json steps = json::array();
    const auto& st = entry.session.steps();
    for (std::size_t i = 0; i < st.size(); ++i) {
        const std::string job_id = i < entry.step_jobs.size() ? entry.step_jobs[i] : "";
        const auto rec = get(job_id);
        steps.push_back({{"index", i + 1},
                         {"job_id", job_id},
                         {"state", rec ? to_string(rec->state) : "unknown"},
                         {"prompt", st[i].job.request.prompt},
                         {"application", to_string(st[i].job.application)},
                         {"chosen_rank", st[i].chosen_rank ? json(*st[i].chosen_rank) : json(nullptr)}});
    }
    const ImageTensor& canvas = entry.session.canvas();
    return {{"id", id},
            {"pending", entry.session.pending()},
            {"width", canvas.width()},
            {"height", canvas.height()},
            {"canvas_png", png_base64(canvas)},
            {"steps", steps}};
}

json JobService::session_add_step(const std::string& id, const json& payload) {
    SessionEntry& entry = session_entry(id);
    {
        std::lock_guard lock(entry.mutex);
        if (entry.session.pending()) {
            const auto rec = get(entry.step_jobs.back());
            if (!rec || rec->state != JobState::failed)
                throw IllegalTransition("previous step has no chosen result yet");
            entry.session.abandon_pending();
            entry.step_jobs.pop_back();
        }
        const ImageTensor canvas = entry.session.canvas();
        EditJob job = edit_job_from_payload(payload, canvas);
        json stored = payload;
        stored["image"] = png_base64(canvas);
        const SubmitOutcome out = submit_job(job, stored);
        entry.session.append(std::move(job));
        entry.step_jobs.push_back(out.id);
        save_session(id, entry);
    }
    json doc = session_json(id);
    doc["job_id"] = entry.step_jobs.back();
    return doc;
}

json JobService::session_choose(const std::string& id, int rank) {
    SessionEntry& entry = session_entry(id);
    {
        std::lock_guard lock(entry.mutex);
        if (!entry.session.pending()) throw IllegalTransition("session has no step awaiting a choice");
        const std::string job_id = entry.step_jobs.back();
        const auto rec = get(job_id);
        if (!rec || rec->state != JobState::done)
            throw IllegalTransition("step job is " + (rec ? to_string(rec->state) : std::string("missing")) +
                                    ", not done");
        if (rank < 1 || rank > static_cast<int>(rec->results.size()))
            throw InvalidArgument("rank " + std::to_string(rank) + " out of range 1.." +
                                  std::to_string(rec->results.size()));
        std::vector<EditResult> results;
        for (const auto& r : rec->results) {
            EditResult er{{}, r.score, r.seed, r.rank};
            if (r.rank == rank) er.image = load_tensor((store_.job_dir(job_id) / r.file).string());
            results.push_back(std::move(er));
        }
        if (entry.session.steps().back().results.empty()) entry.session.attach_results(std::move(results));
        entry.session.choose(rank);
        save_session(id, entry);
    }
    return session_json(id);
}

}  // namespace blendiff
