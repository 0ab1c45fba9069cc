#include <cmath>
#include <numbers>
#include <toml.hpp>

#include "lens/error.hpp"
#include "lens/relay.hpp"

namespace lens {

using nlohmann::json;

std::string_view role_name(Role role) {
    switch (role) {
        case Role::Authority: return "authority";
        case Role::Civilian: return "civilian";
        case Role::Edge: return "edge";
    }
    return "unknown";
}

Role parse_role(std::string_view text) {
    if (text == "authority") return Role::Authority;
    if (text == "civilian") return Role::Civilian;
    if (text == "edge") return Role::Edge;
    throw InvalidArgument("role must be authority, civilian or edge, got '" + std::string(text) + "'");
}

void RelayConfig::validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("relay config: threshold must be in [0, 1]");
    if (port < 0 || port > 65535) throw InvalidArgument("relay config: port out of range");
    if (infer_port > 65535) throw InvalidArgument("relay config: infer_port out of range");
    if (clock_skew_ms < 0) throw InvalidArgument("relay config: clock_skew_ms must be >= 0");
    if (write_queue_capacity < 1 || http_threads < 1) throw InvalidArgument("relay config: capacities must be >= 1");
    std::unordered_map<std::string, int> seen;
    for (const auto& u : users) {
        if (u.token.empty()) throw InvalidArgument("relay config: empty token for user " + u.user_id);
        if (u.user_id.empty()) throw InvalidArgument("relay config: token without user_id");
        if (seen[u.token]++) throw InvalidArgument("relay config: duplicate token");
        if (u.location && !u.location->valid()) throw InvalidArgument("relay config: bad location for " + u.user_id);
    }
}

RelayConfig load_relay_config(const std::filesystem::path& path) {
    toml::table t;
    try {
        t = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        throw InvalidArgument("relay config " + path.string() + ": " + std::string(e.description()));
    }
    RelayConfig c;
    c.threshold = t["threshold"].value_or(c.threshold);
    c.host = t["bind"].value_or(c.host);
    c.port = t["port"].value_or(c.port);
    c.infer_port = t["infer_port"].value_or(c.infer_port);
    c.clock_skew_ms = t["clock_skew_ms"].value_or(c.clock_skew_ms);
    const auto base_dir = path.parent_path();
    if (auto s = t["storage"].value<std::string>()) c.storage_dir = *s;
    if (auto m = t["model_dir"].value<std::string>()) c.model_dir = *m;
    if (c.storage_dir.is_relative()) c.storage_dir = base_dir / c.storage_dir;
    if (!c.model_dir.empty() && c.model_dir.is_relative()) c.model_dir = base_dir / c.model_dir;
    if (auto tokens = t["tokens"].as_array()) {
        for (const auto& node : *tokens) {
            const auto* tok = node.as_table();
            if (!tok) throw InvalidArgument("relay config: [[tokens]] entries must be tables");
            UserAccount u;
            u.token = (*tok)["token"].value_or(std::string());
            u.user_id = (*tok)["user_id"].value_or(std::string());
            u.role = parse_role((*tok)["role"].value_or(std::string("civilian")));
            if (auto loc = (*tok)["location"].as_array(); loc && loc->size() == 2)
                u.location = Gps{loc->get(0)->value_or(0.0), loc->get(1)->value_or(0.0)};
            c.users.push_back(std::move(u));
        }
    }
    c.validate();
    return c;
}

double haversine_m(const Gps& a, const Gps& b) {
    constexpr double kEarthRadiusM = 6371.0e3;
    constexpr double kRad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * kRad;
    const double dlon = (b.lon - a.lon) * kRad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(s)));
}

std::vector<std::string> proximity_recipients(const std::vector<UserAccount>& users, const Gps& center, double radius_m) {
    std::vector<std::string> out;
    for (const auto& u : users)
        if (u.role == Role::Civilian && u.location && haversine_m(*u.location, center) <= radius_m) out.push_back(u.user_id);
    return out;
}

json entry_to_json(const CrimeLogEntry& e) {
    return json{{"event", event_to_json(e.event)},
                {"received_at_ms", e.received_at_ms},
                {"clip_stored", e.clip_stored},
                {"suppressed", e.suppressed}};
}

CrimeLogEntry entry_from_json(const json& j) {
    CrimeLogEntry e;
    e.event = event_from_json(j.at("event"));
    e.received_at_ms = j.at("received_at_ms").get<std::int64_t>();
    e.clip_stored = j.value("clip_stored", false);
    e.suppressed = j.value("suppressed", false);
    return e;
}

json entry_view(const CrimeLogEntry& e, Role viewer) {
    json j = event_to_json(e.event);
    j["received_at_ms"] = e.received_at_ms;
    if (viewer == Role::Authority) {
        j["clip_stored"] = e.clip_stored;
        j["suppressed"] = e.suppressed;
        return j;
    }
    j.erase("clip_ref");
    j.erase("scores");
    j.erase("short");
    return j;
}

}  // namespace lens
