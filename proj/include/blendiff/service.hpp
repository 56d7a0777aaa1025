#pragma once

// Durable job service behind the HTTP API: a FIFO queue with K workers and
// a flat on-disk workspace (jobs/<id>/job.json, request.json, results/).

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "blendiff/engine.hpp"

namespace blendiff {

enum class JobState { queued, running, done, failed };

std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);

struct ResultEntry {
    int rank = 0;
    double score = 0.0;
    std::uint64_t seed = 0;
    std::string file;  // relative to the job directory
};

struct JobRecord {
    std::string id;
    JobState state = JobState::queued;
    std::string submitted_at;  // ISO 8601 UTC
    int progress_done = 0;
    int progress_total = 0;
    std::string error;
    std::string idempotency_key;
    std::string application;
    std::string prompt;
    std::vector<ResultEntry> results;
    std::vector<SampleFailure> failures;

    nlohmann::json to_json() const;
    static JobRecord from_json(const nlohmann::json& j);
};

// Decodes an API edit payload (base-64 PNG/PGM images) into an EditJob.
// Throws InvalidArgument/DecodeError for malformed input.
EditJob edit_job_from_payload(const nlohmann::json& payload);
// Same, with the source image supplied by the caller (session steps).
EditJob edit_job_from_payload(const nlohmann::json& payload, const ImageTensor& source);

std::string make_uuid();
std::string utc_timestamp();

// Writes via a temporary file and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

class JobStore {
  public:
    explicit JobStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path job_dir(const std::string& id) const;
    std::filesystem::path result_path(const std::string& id, int rank) const;

    void save(const JobRecord& record) const;
    void save_request(const std::string& id, const nlohmann::json& payload) const;
    std::optional<nlohmann::json> load_request(const std::string& id) const;
    // Every readable job.json under the workspace.
    std::vector<JobRecord> load_all() const;

  private:
    std::filesystem::path root_;
};

struct ServiceConfig {
    std::filesystem::path workspace = "workspace";
    unsigned job_workers = 0;     // 0 = available parallelism
    unsigned sample_workers = 1;  // threads per job
};

struct SubmitOutcome {
    std::string id;
    bool created = true;  // false when an idempotency key matched
};

class JobService {
  public:
    JobService(ServiceConfig config, EngineBundle engine);
    ~JobService();
    JobService(const JobService&) = delete;
    JobService& operator=(const JobService&) = delete;

    // Validates synchronously (InvalidArgument, UnknownPrompt), then queues.
    SubmitOutcome submit(const nlohmann::json& payload, const std::string& idempotency_key = "");
    SubmitOutcome submit_job(EditJob job, const nlohmann::json& payload, const std::string& idempotency_key = "");
    std::optional<JobRecord> get(const std::string& id) const;
    std::vector<JobRecord> list() const;
    // Blocks until the job leaves queued/running or the timeout passes.
    std::optional<JobRecord> wait(const std::string& id, std::chrono::milliseconds timeout) const;

    const GuidanceModel& guidance() const { return *engine_.guidance; }
    const JobStore& store() const { return store_; }

    // Sessions: persisted under workspace/sessions/<id>/.
    std::string create_session(const ImageTensor& canvas);
    nlohmann::json session_json(const std::string& id) const;
    // Appends a step and queues its job; IllegalTransition if a step is pending.
    nlohmann::json session_add_step(const std::string& id, const nlohmann::json& payload);
    // IllegalTransition when the step's job has not finished.
    nlohmann::json session_choose(const std::string& id, int rank);
    bool has_session(const std::string& id) const;

    void shutdown();

  private:
    struct SessionEntry {
        Session session;
        std::vector<std::string> step_jobs;
        std::mutex mutex;
    };

    void worker_loop(std::stop_token stop);
    void run_job(const std::string& id);
    void update(const std::string& id, const std::function<void(JobRecord&)>& fn, bool persist);
    void recover();
    void load_sessions();
    void save_session(const std::string& id, SessionEntry& entry) const;
    SessionEntry& session_entry(const std::string& id) const;

    ServiceConfig config_;
    EngineBundle engine_;
    JobStore store_;

    mutable std::mutex mutex_;
    mutable std::condition_variable_any changed_;
    std::map<std::string, JobRecord> jobs_;
    std::map<std::string, EditJob> pending_;
    std::map<std::string, std::string> idempotency_;
    std::deque<std::string> queue_;
    std::vector<std::jthread> workers_;
    std::condition_variable_any queue_cv_;

    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::unique_ptr<SessionEntry>> sessions_;
};

struct HttpConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path ui_dir;  // served at "/" when it exists
};

// Blocks serving the API until stop() is called from another thread.
class HttpServer {
  public:
    HttpServer(JobService& service, HttpConfig config);
    ~HttpServer();
    // Binds and serves; returns when stopped. Throws IoError if binding fails.
    void listen();
    // Binds to an ephemeral port when config.port == 0; returns the port.
    int bind();
    void serve_bound();
    void stop();
    int port() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace blendiff
