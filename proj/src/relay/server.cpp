#include <csignal>
#include <fstream>
#include <httplib.h>
#include <shared_mutex>
#include <spdlog/spdlog.h>

#include "infer_server.hpp"
#include "lens/bytes.hpp"
#include "lens/error.hpp"
#include "lens/relay.hpp"

namespace lens {

using nlohmann::json;

namespace {

struct Alert {
    std::uint64_t id = 0;
    std::string type;
    json authority;
    json civilian;  // null when civilians never see it
    std::optional<std::vector<std::string>> civilian_audience;
};

class AlertHub {
public:
    std::uint64_t publish(Alert a) {
        std::lock_guard lock(mu_);
        a.id = alerts_.size() + 1;
        alerts_.push_back(std::move(a));
        cv_.notify_all();
        return alerts_.back().id;
    }
    std::uint64_t latest() const {
        std::lock_guard lock(mu_);
        return alerts_.size();
    }
    std::vector<Alert> wait_after(std::uint64_t cursor, std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return closed_ || alerts_.size() > cursor; });
        if (cursor >= alerts_.size()) return {};
        return {alerts_.begin() + static_cast<std::ptrdiff_t>(cursor), alerts_.end()};
    }
    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_;
    }
    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        cv_.notify_all();
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<Alert> alerts_;
    bool closed_ = false;
};

std::optional<json> alert_for(const Alert& a, const UserAccount& user) {
    if (user.role == Role::Authority) return std::optional<json>(a.authority);
    if (user.role != Role::Civilian || a.civilian.is_null()) return std::nullopt;
    if (a.civilian_audience) {
        const auto& ids = *a.civilian_audience;
        if (std::find(ids.begin(), ids.end(), user.user_id) == ids.end()) return std::nullopt;
    }
    return std::optional<json>(a.civilian);
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& field = {}) {
    json body{{"error", message}};
    if (!field.empty()) body["field"] = field;
    send_json(res, status, body);
}

void append_line(const std::filesystem::path& file, const json& j) {
    std::ofstream out(file, std::ios::app);
    out << j.dump() << "\n";
    out.flush();
    if (!out) throw Error("cannot append to " + file.string());
}

std::vector<json> read_lines(const std::filesystem::path& file) {
    std::vector<json> out;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception&) {
            spdlog::warn("{}: skipping unreadable line", file.string());
        }
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

bool valid_clip_ref(const std::string& ref) {
    return ref.size() == 16 && std::all_of(ref.begin(), ref.end(), [](char c) { return std::isxdigit(c); });
}

std::optional<long long> parse_int(const std::string& s) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

struct RelayServer::Impl {
    RelayConfig config;
    std::shared_ptr<const ModelBundle> bundle;
    std::filesystem::path clips_dir;
    AlertHub hub;
    std::unique_ptr<CrimeLog> log;
    std::atomic<double> threshold{0.5};
    std::atomic<int> fail_acks{0};
    std::mutex threshold_mu;

    mutable std::shared_mutex users_mu;
    std::vector<UserAccount> users;
    std::unordered_map<std::string, std::size_t> by_token;
    std::mutex broadcast_mu;

    httplib::Server http;
    std::thread http_thread;
    int bound_port = -1;
    std::unique_ptr<detail::InferServer> infer;

    std::mutex run_mu;
    std::condition_variable run_cv;
    bool running = false;

    Impl(RelayConfig c, std::shared_ptr<const ModelBundle> b) : config(std::move(c)), bundle(std::move(b)) {
        config.validate();
        std::filesystem::create_directories(config.storage_dir);
        clips_dir = config.storage_dir / "clips";
        std::filesystem::create_directories(clips_dir);
        threshold = config.threshold;
        for (const json& j : read_lines(config.storage_dir / "threshold.jsonl"))
            if (j.contains("value") && j["value"].is_number()) threshold = j["value"].get<double>();
        for (auto u : config.users) add_user(std::move(u));
        for (const json& j : read_lines(config.storage_dir / "users.jsonl")) {
            try {
                UserAccount u;
                u.user_id = j.at("user_id").get<std::string>();
                u.token = j.at("token").get<std::string>();
                u.role = parse_role(j.at("role").get<std::string>());
                if (j.contains("location") && j["location"].is_object())
                    u.location = Gps{j["location"].at("lat").get<double>(), j["location"].at("lon").get<double>()};
                add_user(std::move(u));
            } catch (const std::exception& e) {
                spdlog::warn("users.jsonl: skipping entry: {}", e.what());
            }
        }
        log = std::make_unique<CrimeLog>(config.storage_dir / "events.jsonl", config.write_queue_capacity,
                                         [this](const CrimeLogEntry& e) { on_appended(e); });
        if (!bundle && !config.model_dir.empty() && config.infer_port >= 0)
            bundle = std::make_shared<const ModelBundle>(load_bundle(config.model_dir));
        routes();
    }

    void add_user(UserAccount u) {
        std::unique_lock lock(users_mu);
        if (auto it = by_token.find(u.token); it != by_token.end()) {
            users[it->second] = std::move(u);
            return;
        }
        by_token[u.token] = users.size();
        users.push_back(std::move(u));
    }

    std::optional<UserAccount> authenticate(const httplib::Request& req) const {
        std::string token;
        const auto auth = req.get_header_value("Authorization");
        if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
        else if (req.has_param("token")) token = req.get_param_value("token");
        if (token.empty()) return std::nullopt;
        std::shared_lock lock(users_mu);
        auto it = by_token.find(token);
        if (it == by_token.end()) return std::nullopt;
        return users[it->second];
    }

    /// Resolves the caller and checks the role; writes 401/403 and returns empty on failure.
    std::optional<UserAccount> require(const httplib::Request& req, httplib::Response& res,
                                       std::initializer_list<Role> roles) const {
        auto user = authenticate(req);
        if (!user) {
            send_error(res, 401, "missing or unknown bearer token");
            return std::nullopt;
        }
        if (std::find(roles.begin(), roles.end(), user->role) == roles.end()) {
            send_error(res, 403, "role " + std::string(role_name(user->role)) + " may not do this");
            return std::nullopt;
        }
        return user;
    }

    void on_appended(const CrimeLogEntry& e) {
        if (e.suppressed) return;
        Alert a;
        a.type = "crime";
        a.authority = entry_view(e, Role::Authority);
        a.civilian = entry_view(e, Role::Civilian);
        hub.publish(std::move(a));
    }

    static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
        try {
            return json::parse(req.body);
        } catch (const json::exception&) {
            send_error(res, 400, "body is not valid JSON");
            return std::nullopt;
        }
    }

    void routes() {
        http.set_payload_max_length(256ull << 20);
        const std::size_t threads = config.http_threads;
        http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            spdlog::error("request failed: {}", what);
            send_error(res, 500, what);
        });

        http.Post("/v1/clips", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require(req, res, {Role::Edge, Role::Authority})) return;
            const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                                      req.body.size());
            try {
                decode_clip(bytes);
            } catch (const FormatError& e) {
                send_error(res, 400, std::string("invalid clip: ") + e.what(), "body");
                return;
            }
            const std::string ref = hex64(fnv1a64(bytes));
            const auto path = clips_dir / (ref + ".lclip");
            if (!std::filesystem::exists(path)) {
                const auto tmp = clips_dir / (ref + "." + make_uuid() + ".tmp");
                write_file(tmp.string(), bytes);
                std::filesystem::rename(tmp, path);
            }
            send_json(res, 201, {{"clip_ref", ref}, {"bytes", bytes.size()}});
        });

        http.Post("/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require(req, res, {Role::Edge})) return;
            auto body = parse_body(req, res);
            if (!body) return;
            if (auto err = validate_event_json(*body)) {
                send_error(res, 400, err->message, err->field);
                return;
            }
            CrimeLogEntry entry;
            entry.event = event_from_json(*body);
            entry.received_at_ms = unix_ms_now();
            if (entry.event.timestamp_ms > entry.received_at_ms + config.clock_skew_ms) {
                send_error(res, 400, "timestamp is in the future beyond the clock-skew allowance", "timestamp_ms");
                return;
            }
            const auto& ref = entry.event.clip_ref;
            entry.clip_stored = valid_clip_ref(ref) && std::filesystem::exists(clips_dir / (ref + ".lclip"));
            entry.suppressed = entry.event.confidence < threshold.load();
            const auto result = log->append(std::move(entry));
            if (fail_acks.load() > 0 && fail_acks.fetch_sub(1) > 0) {
                spdlog::warn("injected ack failure for {}", result.entry.event.event_id);
                send_error(res, 503, "injected failure");
                return;
            }
            send_json(res, result.created ? 201 : 200,
                      {{"event_id", result.entry.event.event_id}, {"suppressed", result.entry.suppressed}});
        });

        http.Get("/v1/crimes", [this](const httplib::Request& req, httplib::Response& res) {
            auto user = require(req, res, {Role::Authority, Role::Civilian});
            if (!user) return;
            std::int64_t since = 0;
            std::optional<ActionLabel> label;
            std::string camera;
            long long limit = 100, offset = 0;
            if (req.has_param("since_ms")) {
                auto v = parse_int(req.get_param_value("since_ms"));
                if (!v || *v < 0) return send_error(res, 400, "since_ms must be a non-negative integer", "since_ms");
                since = *v;
            }
            if (req.has_param("label")) {
                try {
                    label = parse_label(req.get_param_value("label"));
                } catch (const InvalidArgument&) {
                    return send_error(res, 400, "unknown label", "label");
                }
            }
            if (req.has_param("camera_id")) camera = req.get_param_value("camera_id");
            if (req.has_param("limit")) {
                auto v = parse_int(req.get_param_value("limit"));
                if (!v || *v < 1 || *v > 1000) return send_error(res, 400, "limit must be in [1, 1000]", "limit");
                limit = *v;
            }
            if (req.has_param("offset")) {
                auto v = parse_int(req.get_param_value("offset"));
                if (!v || *v < 0) return send_error(res, 400, "offset must be >= 0", "offset");
                offset = *v;
            }
            const auto snap = log->snapshot();
            std::vector<const CrimeLogEntry*> hits;
            for (const auto& e : *snap) {
                if (e.suppressed && user->role != Role::Authority) continue;
                if (e.event.timestamp_ms < since) continue;
                if (label && e.event.label != *label) continue;
                if (!camera.empty() && e.event.camera_id != camera) continue;
                hits.push_back(&e);
            }
            std::stable_sort(hits.begin(), hits.end(), [](const CrimeLogEntry* a, const CrimeLogEntry* b) {
                return a->event.timestamp_ms > b->event.timestamp_ms;
            });
            json list = json::array();
            for (std::size_t i = static_cast<std::size_t>(offset);
                 i < hits.size() && list.size() < static_cast<std::size_t>(limit); ++i)
                list.push_back(entry_view(*hits[i], user->role));
            send_json(res, 200, {{"crimes", list}, {"total", hits.size()}});
        });

        http.Get(R"(/v1/crimes/([^/]+)/clip)", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require(req, res, {Role::Authority})) return;
            const auto entry = log->find(req.matches[1]);
            if (!entry) return send_error(res, 404, "unknown event");
            const auto& ref = entry->event.clip_ref;
            const auto path = clips_dir / (ref + ".lclip");
            if (!valid_clip_ref(ref) || !std::filesystem::exists(path)) return send_error(res, 404, "clip not stored");
            const auto bytes = read_file(path.string());
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
        });

        http.Get("/v1/config/threshold", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require(req, res, {Role::Authority, Role::Civilian, Role::Edge})) return;
            send_json(res, 200, {{"value", threshold.load()}});
        });

        http.Put("/v1/config/threshold", [this](const httplib::Request& req, httplib::Response& res) {
            auto user = require(req, res, {Role::Authority});
            if (!user) return;
            auto body = parse_body(req, res);
            if (!body) return;
            if (!body->is_object() || !body->contains("value") || !(*body)["value"].is_number())
                return send_error(res, 400, "value must be a number", "value");
            const double v = (*body)["value"].get<double>();
            if (!(v >= 0.0 && v <= 1.0)) return send_error(res, 400, "value must be in [0, 1]", "value");
            {
                std::lock_guard lock(threshold_mu);
                append_line(config.storage_dir / "threshold.jsonl",
                            {{"value", v}, {"user_id", user->user_id}, {"at_ms", unix_ms_now()}});
                threshold = v;
            }
            spdlog::info("threshold set to {} by {}", v, user->user_id);
            send_json(res, 200, {{"value", v}});
        });

        http.Post("/v1/broadcasts", [this](const httplib::Request& req, httplib::Response& res) {
            auto user = require(req, res, {Role::Authority});
            if (!user) return;
            auto body = parse_body(req, res);
            if (!body) return;
            const json& j = *body;
            if (!j.is_object() || !j.contains("message") || !j["message"].is_string() ||
                j["message"].get<std::string>().empty())
                return send_error(res, 400, "message must be a non-empty string", "message");
            if (!j.contains("center") || !j["center"].is_object()) return send_error(res, 400, "missing center", "center");
            for (const char* k : {"lat", "lon"})
                if (!j["center"].contains(k) || !j["center"][k].is_number())
                    return send_error(res, 400, "coordinate must be a number", std::string("center.") + k);
            Broadcast b;
            b.center = {j["center"]["lat"].get<double>(), j["center"]["lon"].get<double>()};
            if (!b.center.valid()) return send_error(res, 400, "coordinates out of range", "center");
            if (!j.contains("radius_m") || !j["radius_m"].is_number() || !(j["radius_m"].get<double>() > 0.0))
                return send_error(res, 400, "radius_m must be > 0", "radius_m");
            b.radius_m = j["radius_m"].get<double>();
            b.message = j["message"].get<std::string>();
            b.broadcast_id = make_uuid();
            b.created_by = user->user_id;
            b.created_at_ms = unix_ms_now();
            {
                std::shared_lock lock(users_mu);
                b.recipients = proximity_recipients(users, b.center, b.radius_m);
            }
            const json pub{{"broadcast_id", b.broadcast_id},
                           {"message", b.message},
                           {"center", {{"lat", b.center.lat}, {"lon", b.center.lon}}},
                           {"radius_m", b.radius_m},
                           {"created_at_ms", b.created_at_ms}};
            json full = pub;
            full["created_by"] = b.created_by;
            full["recipients"] = b.recipients;
            {
                std::lock_guard lock(broadcast_mu);
                append_line(config.storage_dir / "broadcasts.jsonl", full);
                hub.publish({0, "broadcast", full, pub, b.recipients});
            }
            send_json(res, 201, full);
        });

        http.Post("/v1/users", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require(req, res, {Role::Authority})) return;
            auto body = parse_body(req, res);
            if (!body) return;
            const json& j = *body;
            UserAccount u;
            try {
                u.role = parse_role(j.value("role", std::string()));
            } catch (const InvalidArgument&) {
                return send_error(res, 400, "role must be authority, civilian or edge", "role");
            }
            if (j.contains("location") && !j["location"].is_null()) {
                const json& loc = j["location"];
                for (const char* k : {"lat", "lon"})
                    if (!loc.is_object() || !loc.contains(k) || !loc[k].is_number())
                        return send_error(res, 400, "coordinate must be a number", std::string("location.") + k);
                u.location = Gps{loc["lat"].get<double>(), loc["lon"].get<double>()};
                if (!u.location->valid()) return send_error(res, 400, "coordinates out of range", "location");
            }
            u.user_id = j.value("user_id", std::string());
            if (u.user_id.empty()) u.user_id = std::string(role_name(u.role)) + "-" + make_uuid().substr(0, 8);
            u.token = make_uuid();
            json rec{{"user_id", u.user_id}, {"role", role_name(u.role)}, {"token", u.token}};
            if (u.location) rec["location"] = {{"lat", u.location->lat}, {"lon", u.location->lon}};
            append_line(config.storage_dir / "users.jsonl", rec);
            add_user(u);
            send_json(res, 201, rec);
        });

        http.Get("/v1/alerts", [this](const httplib::Request& req, httplib::Response& res) {
            auto user = require(req, res, {Role::Authority, Role::Civilian});
            if (!user) return;
            std::uint64_t cursor = hub.latest();
            std::string last = req.get_header_value("Last-Event-ID");
            if (last.empty() && req.has_param("last_event_id")) last = req.get_param_value("last_event_id");
            if (!last.empty()) {
                auto v = parse_int(last);
                if (!v || *v < 0) return send_error(res, 400, "Last-Event-ID must be a non-negative integer");
                cursor = static_cast<std::uint64_t>(*v);
            }
            res.set_header("Cache-Control", "no-cache");
            auto pos = std::make_shared<std::uint64_t>(cursor);
            res.set_chunked_content_provider(
                "text/event-stream", [this, pos, viewer = *user](std::size_t, httplib::DataSink& sink) {
                    if (hub.closed()) {
                        sink.done();
                        return false;
                    }
                    const auto alerts = hub.wait_after(*pos, std::chrono::milliseconds(500));
                    std::string out;
                    for (const Alert& a : alerts) {
                        *pos = a.id;
                        if (auto payload = alert_for(a, viewer))
                            out += "id: " + std::to_string(a.id) + "\nevent: " + a.type + "\ndata: " + payload->dump() + "\n\n";
                    }
                    if (out.empty()) out = ": keepalive\n\n";
                    return sink.write(out.data(), out.size());
                });
        });

        http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });
    }
};

RelayServer::RelayServer(RelayConfig config, std::shared_ptr<const ModelBundle> bundle)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(bundle))) {}

RelayServer::~RelayServer() { stop(); }

void RelayServer::start() {
    auto& d = *impl_;
    if (d.running) return;
    if (d.config.port == 0) d.bound_port = d.http.bind_to_any_port(d.config.host);
    else d.bound_port = d.http.bind_to_port(d.config.host, d.config.port) ? d.config.port : -1;
    if (d.bound_port <= 0)
        throw Error("relay: cannot bind " + d.config.host + ":" + std::to_string(d.config.port));
    if (d.config.infer_port >= 0) {
        d.infer = std::make_unique<detail::InferServer>(d.bundle, d.config.host, d.config.infer_port);
        d.infer->start();
    }
    d.http_thread = std::thread([&d] { d.http.listen_after_bind(); });
    d.http.wait_until_ready();
    {
        std::lock_guard lock(d.run_mu);
        d.running = true;
    }
    spdlog::info("relay listening on {}:{} (inference port {}), threshold {}", d.config.host, d.bound_port,
                 d.infer ? d.infer->port() : -1, d.threshold.load());
}

void RelayServer::stop() {
    auto& d = *impl_;
    {
        std::lock_guard lock(d.run_mu);
        if (!d.running) return;
        d.running = false;
    }
    d.hub.close();
    d.http.stop();
    if (d.http_thread.joinable()) d.http_thread.join();
    if (d.infer) d.infer->stop();
    d.run_cv.notify_all();
}

void RelayServer::wait() {
    auto& d = *impl_;
    std::unique_lock lock(d.run_mu);
    d.run_cv.wait(lock, [&] { return !d.running; });
}

int RelayServer::port() const { return impl_->bound_port; }
int RelayServer::infer_port() const { return impl_->infer ? impl_->infer->port() : -1; }
std::string RelayServer::base_url() const { return "http://" + impl_->config.host + ":" + std::to_string(port()); }
double RelayServer::threshold() const { return impl_->threshold.load(); }
std::size_t RelayServer::event_count() const { return impl_->log->size(); }
std::size_t RelayServer::infer_connections() const { return impl_->infer ? impl_->infer->connections() : 0; }
void RelayServer::fail_next_acks(int n) { impl_->fail_acks = n; }

}  // namespace lens
