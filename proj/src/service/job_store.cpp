#include <cstdio>
#include <fstream>
#include <sstream>

#include "blendiff/service.hpp"

namespace blendiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<std::string> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

JobStore::JobStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "jobs", ec);
    if (ec) throw IoError("cannot create workspace '" + root_.string() + "': " + ec.message());
}

fs::path JobStore::job_dir(const std::string& id) const { return root_ / "jobs" / id; }

fs::path JobStore::result_path(const std::string& id, int rank) const {
    char name[32];
    std::snprintf(name, sizeof name, "rank_%03d.png", rank);
    return job_dir(id) / "results" / name;
}

void JobStore::save(const JobRecord& record) const {
    const fs::path dir = job_dir(record.id);
    fs::create_directories(dir);
    write_file_atomic(dir / "job.json", record.to_json().dump(2));
}

void JobStore::save_request(const std::string& id, const json& payload) const {
    const fs::path dir = job_dir(id);
    fs::create_directories(dir);
    write_file_atomic(dir / "request.json", payload.dump());
}

std::optional<json> JobStore::load_request(const std::string& id) const {
    const auto text = slurp(job_dir(id) / "request.json");
    if (!text) return std::nullopt;
    try {
        return json::parse(*text);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::vector<JobRecord> JobStore::load_all() const {
    std::vector<JobRecord> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_ / "jobs", ec)) {
        if (!entry.is_directory()) continue;
        const auto text = slurp(entry.path() / "job.json");
        if (!text) continue;
        try {
            out.push_back(JobRecord::from_json(json::parse(*text)));
        } catch (const std::exception&) {
            // unreadable records are skipped rather than failing startup
        }
    }
    return out;
}

}  // namespace blendiff
