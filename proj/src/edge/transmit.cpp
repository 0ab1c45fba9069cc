#include <fstream>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "lens/bytes.hpp"
#include "lens/edge.hpp"
#include "lens/error.hpp"

namespace lens {

using nlohmann::json;

struct RelayClient::Impl {
    httplib::Client http;
    std::string token;
    Impl(const std::string& url, std::string t) : http(url), token(std::move(t)) {
        http.set_connection_timeout(2, 0);
        http.set_read_timeout(30, 0);
        http.set_write_timeout(30, 0);
    }
    httplib::Headers headers() const { return {{"Authorization", "Bearer " + token}}; }
    static Response wrap(const httplib::Result& r) {
        if (!r) return {0, httplib::to_string(r.error())};
        return {r->status, r->body};
    }
};

RelayClient::RelayClient(std::string base_url, std::string token)
    : impl_(std::make_unique<Impl>(base_url, std::move(token))) {}
RelayClient::~RelayClient() = default;

RelayClient::Response RelayClient::upload_clip(std::span<const std::uint8_t> lclip) {
    const std::string body(lclip.begin(), lclip.end());
    return Impl::wrap(impl_->http.Post("/v1/clips", impl_->headers(), body, "application/octet-stream"));
}

RelayClient::Response RelayClient::post_event(const json& event) {
    return Impl::wrap(impl_->http.Post("/v1/events", impl_->headers(), event.dump(), "application/json"));
}

RelayClient::Response RelayClient::get(const std::string& path) {
    return Impl::wrap(impl_->http.Get(path, impl_->headers()));
}

namespace {

bool is_success(int status) { return status == 200 || status == 201; }
bool is_rejection(int status) { return status >= 400 && status < 500 && status != 408 && status != 429; }

}  // namespace

TransmitOutcome transmit(CrimeEvent event, std::span<const std::uint8_t> lclip, RelayClient& client,
                         const RetryPolicy& retry, const std::function<bool(std::chrono::milliseconds)>& wait) {
    TransmitOutcome out;
    out.event_id = event.event_id;
    int failures = 0;
    for (;;) {
        ++out.attempts;
        RelayClient::Response r;
        bool clip_ready = !event.clip_ref.empty() || lclip.empty();
        if (!clip_ready) {
            r = client.upload_clip(lclip);
            if (is_success(r.status)) {
                try {
                    event.clip_ref = json::parse(r.body).at("clip_ref").get<std::string>();
                    out.clip_ref = event.clip_ref;
                    clip_ready = true;
                } catch (const json::exception& e) {
                    r = {0, std::string("unparseable clip upload reply: ") + e.what()};
                }
            }
        }
        if (clip_ready) {
            r = client.post_event(event_to_json(event));
            if (is_success(r.status)) {
                out.status = TransmitStatus::Acknowledged;
                out.http_status = r.status;
                return out;
            }
        }
        out.http_status = r.status;
        out.error = r.body;
        if (is_rejection(r.status)) {
            out.status = TransmitStatus::DeadLettered;
            spdlog::error("relay rejected event {} with {}: {}", event.event_id, r.status, r.body);
            return out;
        }
        ++failures;
        if (retry.max_attempts > 0 && out.attempts >= retry.max_attempts) {
            out.status = TransmitStatus::GaveUp;
            return out;
        }
        const auto delay = retry.delay_for(failures);
        spdlog::warn("delivery of {} failed (status {}), retrying in {} ms", event.event_id, r.status, delay.count());
        if (wait) {
            if (!wait(delay)) {
                out.status = TransmitStatus::GaveUp;
                return out;
            }
        } else {
            std::this_thread::sleep_for(delay);
        }
    }
}

// ---------------------------------------------------------------------------

Transmitter::Transmitter(std::filesystem::path dir, std::string relay_url, std::string token, RetryPolicy retry)
    : dir_(std::move(dir)), client_(std::move(relay_url), std::move(token)), retry_(retry) {
    std::filesystem::create_directories(dir_ / "pending");
    std::filesystem::create_directories(dir_ / "dead");
    load_pending();
    thread_ = std::thread([this] { worker(); });
}

Transmitter::~Transmitter() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
}

void Transmitter::load_pending() {
    std::vector<std::pair<std::filesystem::file_time_type, std::string>> found;
    for (const auto& entry : std::filesystem::directory_iterator(dir_ / "pending"))
        if (entry.path().extension() == ".json") found.emplace_back(entry.last_write_time(), entry.path().stem().string());
    std::sort(found.begin(), found.end());
    for (auto& [t, id] : found) queue_.push_back(id);
    if (!found.empty()) spdlog::info("outbox: resuming {} pending events", found.size());
}

void Transmitter::enqueue(const CrimeEvent& event, const Clip& clip) {
    const auto base = dir_ / "pending" / event.event_id;
    write_file((base.string() + ".lclip"), encode_clip(clip));
    const std::string text = event_to_json(event).dump();
    write_file(base.string() + ".json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    {
        std::lock_guard lock(mu_);
        queue_.push_back(event.event_id);
    }
    cv_.notify_all();
}

void Transmitter::worker() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
            if (stop_) return;
            id = queue_.front();
            busy_ = true;
        }
        const auto base = dir_ / "pending" / id;
        TransmitOutcome outcome;
        try {
            const auto text = read_file(base.string() + ".json");
            const CrimeEvent event = event_from_json(json::parse(text.begin(), text.end()));
            const auto clip = std::filesystem::exists(base.string() + ".lclip") ? read_file(base.string() + ".lclip")
                                                                                 : std::vector<std::uint8_t>{};
            outcome = transmit(event, clip, client_, retry_, [this](std::chrono::milliseconds d) {
                std::unique_lock lock(mu_);
                return !cv_.wait_for(lock, d, [&] { return stop_; });
            });
        } catch (const std::exception& e) {
            outcome.event_id = id;
            outcome.status = TransmitStatus::DeadLettered;
            outcome.error = e.what();
        }
        if (outcome.status == TransmitStatus::GaveUp) {
            std::lock_guard lock(mu_);
            if (stop_) return;
        }
        if (outcome.status == TransmitStatus::Acknowledged) {
            std::filesystem::remove(base.string() + ".json");
            std::filesystem::remove(base.string() + ".lclip");
        } else if (outcome.status == TransmitStatus::DeadLettered) {
            for (const char* ext : {".json", ".lclip"})
                if (std::filesystem::exists(base.string() + ext))
                    std::filesystem::rename(base.string() + ext, (dir_ / "dead" / id).string() + ext);
        }
        std::lock_guard lock(mu_);
        outcomes_.push_back(outcome);
        queue_.pop_front();
        busy_ = false;
        cv_.notify_all();
    }
}

bool Transmitter::drain(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_; });
}

std::vector<TransmitOutcome> Transmitter::outcomes() const {
    std::lock_guard lock(mu_);
    return outcomes_;
}

std::size_t Transmitter::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

}  // namespace lens
