#include <fstream>
#include <sstream>

#include <httplib.h>

#include "blendiff/base64.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/service.hpp"

namespace blendiff {

using nlohmann::json;

namespace {

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><title>blendiff</title></head><body>"
    "<h1>blendiff service</h1><p>The studio UI bundle is not installed. "
    "The JSON API is available under <code>/api</code>.</p></body></html>";

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    send_json(res, status, extra);
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed JSON body: ") + e.what());
    }
}

json record_json(const JobRecord& r) {
    json j = r.to_json();
    for (auto& e : j["results"]) {
        e["url"] = "/api/edits/" + r.id + "/results/" + std::to_string(e["rank"].get<int>()) + ".png";
        e.erase("file");
    }
    return j;
}

// Maps library errors onto the API's status codes.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const UnknownPrompt& e) {
            send_error(res, 422, e.what(), {{"prompt", e.prompt()}, {"available", e.available()}});
        } catch (const NotFound& e) {
            send_error(res, 404, e.what());
        } catch (const IllegalTransition& e) {
            send_error(res, 409, e.what());
        } catch (const InvalidArgument& e) {
            send_error(res, 400, e.what());
        } catch (const ShapeMismatch& e) {
            send_error(res, 400, e.what());
        } catch (const DecodeError& e) {
            send_error(res, 400, e.what());
        } catch (const DegenerateError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

}  // namespace

struct HttpServer::Impl {
    JobService& service;
    HttpConfig config;
    httplib::Server server;
    int bound_port = -1;

    Impl(JobService& s, HttpConfig c) : service(s), config(std::move(c)) { routes(); }

    void routes() {
        server.set_payload_max_length(256u << 20);

        server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
                       send_json(res, 200, {{"status", "ok"}});
                   }));

        server.Get("/api/lexicon", guarded([this](const httplib::Request&, httplib::Response& res) {
                       send_json(res, 200, {{"prompts", service.guidance().prompts()}});
                   }));

        server.Post("/api/edits", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        std::string key = req.get_header_value("Idempotency-Key");
                        if (key.empty() && body.is_object()) key = body.value("idempotency_key", "");
                        const SubmitOutcome out = service.submit(body, key);
                        send_json(res, 202, {{"job_id", out.id}, {"created", out.created}});
                    }));

        server.Get("/api/edits", guarded([this](const httplib::Request&, httplib::Response& res) {
                       json list = json::array();
                       for (const auto& r : service.list()) list.push_back(record_json(r));
                       send_json(res, 200, {{"jobs", list}});
                   }));

        server.Get(R"(/api/edits/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto rec = service.get(req.matches[1]);
                       if (!rec) throw NotFound("unknown job '" + std::string(req.matches[1]) + "'");
                       send_json(res, 200, record_json(*rec));
                   }));

        server.Get(R"(/api/edits/([^/]+)/results/(\d+)\.png)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string id = req.matches[1];
                       const auto rec = service.get(id);
                       if (!rec) throw NotFound("unknown job '" + id + "'");
                       const int rank = std::stoi(std::string(req.matches[2]));
                       const auto it = std::find_if(rec->results.begin(), rec->results.end(),
                                                    [rank](const ResultEntry& e) { return e.rank == rank; });
                       if (it == rec->results.end()) throw NotFound("job has no result of rank " + std::to_string(rank));
                       std::ifstream in(service.store().job_dir(id) / it->file, std::ios::binary);
                       if (!in) throw NotFound("result file missing");
                       std::stringstream ss;
                       ss << in.rdbuf();
                       res.status = 200;
                       res.set_content(ss.str(), "image/png");
                   }));

        server.Post("/api/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        if (!body.is_object() || !body.contains("image") || !body.at("image").is_string())
                            throw InvalidArgument("field 'image' must be a base-64 image string");
                        const ImageTensor canvas = to_diffusion_domain(
                            decode_with_alpha(base64_decode(body.at("image").get<std::string>())).raster);
                        const std::string id = service.create_session(canvas);
                        json doc = service.session_json(id);
                        doc["session_id"] = id;
                        send_json(res, 201, doc);
                    }));

        server.Get(R"(/api/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       send_json(res, 200, service.session_json(req.matches[1]));
                   }));

        server.Post(R"(/api/sessions/([^/]+)/steps)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string id = req.matches[1];
                        if (!service.has_session(id)) throw NotFound("unknown session '" + id + "'");
                        send_json(res, 202, service.session_add_step(id, parse_body(req)));
                    }));

        server.Post(R"(/api/sessions/([^/]+)/choose)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string id = req.matches[1];
                        if (!service.has_session(id)) throw NotFound("unknown session '" + id + "'");
                        const json body = parse_body(req);
                        if (!body.is_object() || !body.contains("rank") || !body.at("rank").is_number_integer())
                            throw InvalidArgument("field 'rank' must be an integer");
                        send_json(res, 200, service.session_choose(id, body.at("rank").get<int>()));
                    }));

        std::error_code ec;
        if (!config.ui_dir.empty() && std::filesystem::is_directory(config.ui_dir, ec)) {
            server.set_mount_point("/", config.ui_dir.string());
        } else {
            server.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(kPlaceholderPage, "text/html");
            });
        }
    }
};

HttpServer::HttpServer(JobService& service, HttpConfig config)
    : impl_(std::make_unique<Impl>(service, std::move(config))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    if (impl_->config.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->config.host);
    } else if (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
        impl_->bound_port = impl_->config.port;
    } else {
        impl_->bound_port = -1;
    }
    if (impl_->bound_port < 0)
        throw IoError("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
    return impl_->bound_port;
}

void HttpServer::serve_bound() { impl_->server.listen_after_bind(); }

void HttpServer::listen() {
    bind();
    serve_bound();
}

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

int HttpServer::port() const { return impl_->bound_port; }

}  // namespace blendiff
