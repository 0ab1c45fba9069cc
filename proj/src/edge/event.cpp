#include <boost/uuid/random_generator.hpp>
#include <boost/uuid/uuid_io.hpp>
#include <cmath>
#include <mutex>
#include <regex>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "lens/edge.hpp"
#include "lens/error.hpp"

namespace lens {

using nlohmann::json;

bool Gps::valid() const {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

namespace {

json probs_json(const ClassScores& s) { return json(std::vector<double>(s.probs.begin(), s.probs.end())); }

ClassScores probs_from(const json& j) {
    ClassScores s;
    for (std::size_t k = 0; k < s.probs.size(); ++k) s.probs[k] = j.at(k).get<double>();
    return s;
}

std::optional<FieldError> check_probs(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(kNumClasses))
        return FieldError{field, "expected an array of 4 numbers"};
    for (const auto& v : j)
        if (!v.is_number() || !std::isfinite(v.get<double>()) || v.get<double>() < 0.0 || v.get<double>() > 1.0)
            return FieldError{field, "scores must be numbers in [0, 1]"};
    return std::nullopt;
}

}  // namespace

json event_to_json(const CrimeEvent& e) {
    return json{{"event_id", e.event_id},
                {"camera_id", e.camera_id},
                {"gps", {{"lat", e.gps.lat}, {"lon", e.gps.lon}}},
                {"timestamp_ms", e.timestamp_ms},
                {"label", std::string(label_name(e.label))},
                {"confidence", e.confidence},
                {"scores",
                 {{"spatial", probs_json(e.scores.spatial)},
                  {"temporal", probs_json(e.scores.temporal)},
                  {"fused", probs_json(e.scores.fused)}}},
                {"clip_ref", e.clip_ref},
                {"short", e.short_clip}};
}

std::optional<FieldError> validate_event_json(const json& j) {
    if (!j.is_object()) return FieldError{"", "body must be a JSON object"};
    auto missing = [&](const json& obj, const char* key) { return !obj.contains(key) || obj.at(key).is_null(); };

    if (missing(j, "event_id")) return FieldError{"event_id", "missing"};
    if (!j["event_id"].is_string() || !is_uuid(j["event_id"].get<std::string>()))
        return FieldError{"event_id", "must be a UUID string"};
    if (missing(j, "camera_id")) return FieldError{"camera_id", "missing"};
    if (!j["camera_id"].is_string() || j["camera_id"].get<std::string>().empty())
        return FieldError{"camera_id", "must be a non-empty string"};
    if (missing(j, "gps")) return FieldError{"gps", "missing"};
    if (!j["gps"].is_object()) return FieldError{"gps", "must be an object"};
    const json& gps = j["gps"];
    for (const auto* key : {"lat", "lon"}) {
        const std::string path = std::string("gps.") + key;
        if (missing(gps, key)) return FieldError{path, "missing"};
        if (!gps.at(key).is_number()) return FieldError{path, "must be a number"};
    }
    const double lat = gps["lat"].get<double>(), lon = gps["lon"].get<double>();
    if (!(lat >= -90.0 && lat <= 90.0)) return FieldError{"gps.lat", "must be in [-90, 90]"};
    if (!(lon >= -180.0 && lon <= 180.0)) return FieldError{"gps.lon", "must be in [-180, 180]"};
    if (missing(j, "timestamp_ms")) return FieldError{"timestamp_ms", "missing"};
    if (!j["timestamp_ms"].is_number_integer() || j["timestamp_ms"].get<std::int64_t>() < 0)
        return FieldError{"timestamp_ms", "must be a non-negative integer"};
    if (missing(j, "label")) return FieldError{"label", "missing"};
    if (!j["label"].is_string()) return FieldError{"label", "must be a string"};
    try {
        if (parse_label(j["label"].get<std::string>()) == ActionLabel::NoAction)
            return FieldError{"label", "NoAction is not a crime"};
    } catch (const InvalidArgument&) {
        return FieldError{"label", "unknown label"};
    }
    if (missing(j, "confidence")) return FieldError{"confidence", "missing"};
    if (!j["confidence"].is_number()) return FieldError{"confidence", "must be a number"};
    const double conf = j["confidence"].get<double>();
    if (!(conf >= 0.0 && conf <= 1.0)) return FieldError{"confidence", "must be in [0, 1]"};
    if (missing(j, "scores")) return FieldError{"scores", "missing"};
    if (!j["scores"].is_object()) return FieldError{"scores", "must be an object"};
    for (const auto* key : {"spatial", "temporal", "fused"}) {
        const std::string path = std::string("scores.") + key;
        if (missing(j["scores"], key)) return FieldError{path, "missing"};
        if (auto err = check_probs(j["scores"][key], path)) return err;
    }
    if (j.contains("clip_ref") && !j["clip_ref"].is_null() && !j["clip_ref"].is_string())
        return FieldError{"clip_ref", "must be a string"};
    if (j.contains("short") && !j["short"].is_null() && !j["short"].is_boolean())
        return FieldError{"short", "must be a boolean"};
    return std::nullopt;
}

CrimeEvent event_from_json(const json& j) {
    if (auto err = validate_event_json(j)) throw InvalidArgument("event." + err->field + ": " + err->message);
    CrimeEvent e;
    e.event_id = j["event_id"].get<std::string>();
    e.camera_id = j["camera_id"].get<std::string>();
    e.gps = {j["gps"]["lat"].get<double>(), j["gps"]["lon"].get<double>()};
    e.timestamp_ms = j["timestamp_ms"].get<std::int64_t>();
    e.label = parse_label(j["label"].get<std::string>());
    e.confidence = j["confidence"].get<double>();
    e.scores.spatial = probs_from(j["scores"]["spatial"]);
    e.scores.temporal = probs_from(j["scores"]["temporal"]);
    e.scores.fused = probs_from(j["scores"]["fused"]);
    if (j.contains("clip_ref") && j["clip_ref"].is_string()) e.clip_ref = j["clip_ref"].get<std::string>();
    if (j.contains("short") && j["short"].is_boolean()) e.short_clip = j["short"].get<bool>();
    return e;
}

std::string make_uuid() {
    static std::mutex mu;
    static boost::uuids::random_generator gen;
    std::lock_guard lock(mu);
    return boost::uuids::to_string(gen());
}

bool is_uuid(std::string_view text) {
    static const std::regex re("^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$");
    return std::regex_match(text.begin(), text.end(), re);
}

std::int64_t unix_ms_now() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string_view mode_name(InferenceMode mode) { return mode == InferenceMode::Edge ? "edge" : "cloud"; }

InferenceMode parse_mode(std::string_view text) {
    if (text == "edge") return InferenceMode::Edge;
    if (text == "cloud") return InferenceMode::Cloud;
    throw InvalidArgument("mode must be 'edge' or 'cloud', got '" + std::string(text) + "'");
}

std::chrono::milliseconds RetryPolicy::delay_for(int failed_attempts) const {
    double d = static_cast<double>(base.count());
    for (int i = 1; i < failed_attempts && d < static_cast<double>(cap.count()); ++i) d *= 2.0;
    return std::chrono::milliseconds(static_cast<long>(std::min(d, static_cast<double>(cap.count()))));
}

void EdgeConfig::validate() {
    if (std::isnan(threshold)) throw InvalidArgument("edge config: threshold is NaN");
    if (threshold < 0.0 || threshold > 1.0) {
        const double clamped = std::clamp(threshold, 0.0, 1.0);
        spdlog::warn("threshold {} clamped to {}", threshold, clamped);
        threshold = clamped;
    }
    if (camera_id.empty() || camera_id.size() > 255) throw InvalidArgument("edge config: camera_id must be 1..255 bytes");
    if (!gps.valid()) throw InvalidArgument("edge config: gps out of range");
    if (debounce_window < 1) throw InvalidArgument("edge config: debounce_window must be >= 1");
    if (cooldown_ms < 0) throw InvalidArgument("edge config: cooldown_ms must be >= 0");
    if (!(clip_seconds > 0.0)) throw InvalidArgument("edge config: clip_seconds must be > 0");
    if (queue_capacity < 1) throw InvalidArgument("edge config: queue_capacity must be >= 1");
    if (infer_port < 0 || infer_port > 65535) throw InvalidArgument("edge config: infer_port out of range");
    skip = SkipPolicy::checked(skip.skip);
}

EdgeConfig load_edge_config(const std::filesystem::path& path) {
    toml::table t;
    try {
        t = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        throw InvalidArgument("edge config " + path.string() + ": " + std::string(e.description()));
    }
    EdgeConfig c;
    c.camera_id = t["camera_id"].value_or(c.camera_id);
    if (auto gps = t["gps"].as_array(); gps && gps->size() == 2) {
        c.gps.lat = gps->get(0)->value_or(0.0);
        c.gps.lon = gps->get(1)->value_or(0.0);
    } else {
        c.gps.lat = t["gps"]["lat"].value_or(c.gps.lat);
        c.gps.lon = t["gps"]["lon"].value_or(c.gps.lon);
    }
    if (auto m = t["mode"].value<std::string>()) c.mode = parse_mode(*m);
    c.skip.skip = t["skip"].value_or(c.skip.skip);
    c.reduced = t["reduced"].value_or(c.reduced);
    c.threshold = t["threshold"].value_or(c.threshold);
    c.debounce_window = t["debounce_window"].value_or(c.debounce_window);
    c.cooldown_ms = t["cooldown_ms"].value_or(c.cooldown_ms);
    c.clip_seconds = t["clip_seconds"].value_or(c.clip_seconds);
    c.relay_url = t["relay"]["url"].value_or(c.relay_url);
    c.auth_token = t["relay"]["token"].value_or(c.auth_token);
    c.infer_host = t["relay"]["infer_host"].value_or(c.infer_host);
    c.infer_port = t["relay"]["infer_port"].value_or(c.infer_port);
    if (auto d = t["model_dir"].value<std::string>()) c.model_dir = *d;
    if (auto d = t["outbox_dir"].value<std::string>()) c.outbox_dir = *d;
    c.queue_capacity = static_cast<std::size_t>(t["queue_capacity"].value_or(static_cast<std::int64_t>(c.queue_capacity)));
    c.retry.base = std::chrono::milliseconds(t["retry"]["base_ms"].value_or(c.retry.base.count()));
    c.retry.cap = std::chrono::milliseconds(t["retry"]["cap_ms"].value_or(c.retry.cap.count()));
    c.retry.max_attempts = t["retry"]["max_attempts"].value_or(c.retry.max_attempts);
    const auto base_dir = path.parent_path();
    if (c.model_dir.is_relative()) c.model_dir = base_dir / c.model_dir;
    if (c.outbox_dir.is_relative()) c.outbox_dir = base_dir / c.outbox_dir;
    c.validate();
    return c;
}

std::optional<Detection> detect(DetectionState& state, const ClassScores& fused, double threshold, std::int64_t now_ms) {
    if (state.window < 1) throw InvalidArgument("detect: window must be >= 1");
    state.recent.emplace_back(fused.argmax(), fused.max_prob());
    while (state.recent.size() > static_cast<std::size_t>(state.window)) state.recent.pop_front();
    if (state.recent.size() < static_cast<std::size_t>(state.window)) return std::nullopt;
    const int label = state.recent.front().first;
    if (label == label_index(ActionLabel::NoAction)) return std::nullopt;
    for (const auto& [l, conf] : state.recent)
        if (l != label || conf < threshold) return std::nullopt;
    if (state.last_event_ms && now_ms - *state.last_event_ms < state.cooldown_ms) return std::nullopt;
    state.last_event_ms = now_ms;
    state.recent.clear();
    return Detection{label_from_index(label), fused.max_prob()};
}

AssembledEvent assemble_event(const Detection& detection, const FrameResult& frame, const RingBuffer& ring,
                              const EdgeConfig& config) {
    const auto count = static_cast<std::size_t>(std::llround(config.clip_seconds * ring.fps()));
    auto extracted = ring.extract_until(frame.frame_index, std::min(count, ring.capacity()));
    AssembledEvent out;
    out.clip = std::move(extracted.clip);
    out.clip.label = detection.label;
    out.event.event_id = make_uuid();
    out.event.camera_id = config.camera_id;
    out.event.gps = config.gps;
    out.event.timestamp_ms = unix_ms_now();
    out.event.label = detection.label;
    out.event.confidence = detection.confidence;
    out.event.scores = frame.scores;
    out.event.short_clip = extracted.short_clip || out.clip.frames.size() < count;
    return out;
}

}  // namespace lens
