#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "lens/edge.hpp"
#include "lens/queue.hpp"

namespace lens {

enum class Role { Authority, Civilian, Edge };
std::string_view role_name(Role role);
Role parse_role(std::string_view text);

struct UserAccount {
    std::string user_id;
    Role role = Role::Civilian;
    std::optional<Gps> location;
    std::string token;
};

struct RelayConfig {
    double threshold = 0.5;
    std::string host = "127.0.0.1";
    /// 0 binds an ephemeral port.
    int port = 8080;
    /// Cloud inference port; 0 binds an ephemeral port, negative disables the listener.
    int infer_port = 8081;
    std::filesystem::path storage_dir = "relay-data";
    /// Model bundle used by cloud inference; empty disables it.
    std::filesystem::path model_dir;
    std::vector<UserAccount> users;
    std::int64_t clock_skew_ms = 60000;
    std::size_t write_queue_capacity = 256;
    std::size_t http_threads = 32;

    void validate() const;
};

/// Reads a relay TOML file: threshold, bind, port, infer_port, storage, model_dir and a
/// [[tokens]] array of {token, role, user_id, location = [lat, lon]}.
RelayConfig load_relay_config(const std::filesystem::path& path);

/// Great-circle distance in meters on a sphere of radius 6371.0 km.
double haversine_m(const Gps& a, const Gps& b);

struct CrimeLogEntry {
    CrimeEvent event;
    std::int64_t received_at_ms = 0;
    bool clip_stored = false;
    bool suppressed = false;
};

nlohmann::json entry_to_json(const CrimeLogEntry& entry);
CrimeLogEntry entry_from_json(const nlohmann::json& j);
/// Authority view carries everything; the civilian view drops clip_ref and the score vectors.
nlohmann::json entry_view(const CrimeLogEntry& entry, Role viewer);

/// Append-only JSON-lines event log with an in-memory index. A single writer thread performs
/// all appends; readers take immutable snapshots.
class CrimeLog {
public:
    using Snapshot = std::shared_ptr<const std::vector<CrimeLogEntry>>;
    using AppendHook = std::function<void(const CrimeLogEntry&)>;

    CrimeLog(std::filesystem::path file, std::size_t queue_capacity, AppendHook on_append = {});
    ~CrimeLog();
    CrimeLog(const CrimeLog&) = delete;
    CrimeLog& operator=(const CrimeLog&) = delete;

    struct AppendResult {
        bool created = false;
        CrimeLogEntry entry;
    };
    /// Blocks until the entry is on disk (or found to be a duplicate of an existing event_id).
    AppendResult append(CrimeLogEntry entry);
    Snapshot snapshot() const;
    std::optional<CrimeLogEntry> find(const std::string& event_id) const;
    std::size_t size() const { return snapshot()->size(); }

private:
    struct Request;
    void writer();

    std::filesystem::path file_;
    AppendHook on_append_;
    Snapshot snapshot_;
    std::unordered_map<std::string, std::size_t> index_;
    BoundedQueue<std::shared_ptr<Request>> queue_;
    std::thread thread_;
};

struct Broadcast {
    std::string broadcast_id;
    std::string message;
    Gps center;
    double radius_m = 0.0;
    std::string created_by;
    std::int64_t created_at_ms = 0;
    std::vector<std::string> recipients;
};

/// Civilian user ids whose registered location lies within radius_m of center.
std::vector<std::string> proximity_recipients(const std::vector<UserAccount>& users, const Gps& center, double radius_m);

/// Running relay: REST API plus optional cloud inference listener.
class RelayServer {
public:
    explicit RelayServer(RelayConfig config, std::shared_ptr<const ModelBundle> bundle = nullptr);
    ~RelayServer();
    RelayServer(const RelayServer&) = delete;
    RelayServer& operator=(const RelayServer&) = delete;

    /// Binds the listeners and starts serving in background threads.
    void start();
    void stop();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();

    int port() const;
    int infer_port() const;
    std::string base_url() const;

    double threshold() const;
    std::size_t event_count() const;
    std::size_t infer_connections() const;
    /// The next n event submissions are stored but answered with 503, forcing client retries.
    void fail_next_acks(int n);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace lens
