#include <algorithm>
#include <cctype>
#include <charconv>
#include <regex>

#include "lens/bytes.hpp"
#include "lens/videoio.hpp"

namespace lens {

namespace {

constexpr std::uint16_t kClipVersion = 1;
constexpr std::uint8_t kUnlabeled = 255;

constexpr std::array<std::string_view, kNumClasses> kNames{"Theft", "Assault", "Shooting", "NoAction"};
constexpr std::array<std::string_view, kNumClasses> kSlugs{"theft", "assault", "shooting", "no_action"};

}  // namespace

std::string_view label_name(ActionLabel label) { return kNames.at(label_index(label)); }
std::string_view label_slug(ActionLabel label) { return kSlugs.at(label_index(label)); }

ActionLabel parse_label(std::string_view text) {
    for (int i = 0; i < kNumClasses; ++i) {
        if (text == kNames[i] || text == kSlugs[i]) return static_cast<ActionLabel>(i);
    }
    throw InvalidArgument("unknown action label '" + std::string(text) + "'");
}

ActionLabel label_from_index(int index) {
    if (index < 0 || index >= kNumClasses) throw InvalidArgument("label index out of range: " + std::to_string(index));
    return static_cast<ActionLabel>(index);
}

Frame::Frame(int w, int h, std::uint32_t idx, std::uint32_t ts)
    : width(w), height(h), index(idx), timestamp_ms(ts), pixels(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw InvalidArgument("frame dimensions must be positive");
}

std::uint32_t frame_timestamp_ms(std::uint32_t index, int fps) {
    if (fps <= 0) throw InvalidArgument("fps must be positive");
    return static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) * 1000 / static_cast<std::uint64_t>(fps));
}

std::vector<std::uint8_t> encode_clip(const Clip& clip) {
    const int w = clip.width();
    const int h = clip.height();
    if (!clip.empty() && (w <= 0 || h <= 0 || w > 0xFFFF || h > 0xFFFF)) {
        throw InvalidArgument("clip dimensions out of range");
    }
    ByteWriter out;
    out.text("LCLP");
    out.u16(kClipVersion);
    out.u16(static_cast<std::uint16_t>(w));
    out.u16(static_cast<std::uint16_t>(h));
    out.u16(static_cast<std::uint16_t>(clip.fps));
    out.u32(static_cast<std::uint32_t>(clip.frames.size()));
    out.u8(clip.label ? static_cast<std::uint8_t>(*clip.label) : kUnlabeled);
    out.u8(static_cast<std::uint8_t>(clip.group_id));
    out.u16(static_cast<std::uint16_t>(clip.clip_id));
    out.zeros(4);
    for (const Frame& f : clip.frames) {
        if (f.width != w || f.height != h || f.pixels.size() != f.byte_size()) {
            throw InvalidArgument("clip frames must share dimensions");
        }
        out.u32(f.index);
        out.u32(f.timestamp_ms);
        out.bytes(f.pixels);
    }
    return std::move(out).take();
}

Clip decode_clip(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    if (bytes.size() < 4 || in.text(4) != "LCLP") throw FormatError("bad magic, expected LCLP", 0);
    const std::size_t version_at = in.offset();
    if (in.u16() != kClipVersion) throw FormatError("unsupported lclip version", version_at);
    const std::size_t dims_at = in.offset();
    const int w = in.u16();
    const int h = in.u16();
    const std::size_t fps_at = in.offset();
    const int fps = in.u16();
    const std::uint32_t count = in.u32();
    const std::size_t label_at = in.offset();
    const std::uint8_t label = in.u8();
    Clip clip;
    clip.fps = fps;
    clip.group_id = in.u8();
    clip.clip_id = in.u16();
    in.skip(4);
    if (count > 0 && (w == 0 || h == 0)) throw FormatError("zero frame dimension", dims_at);
    if (fps == 0) throw FormatError("zero fps", fps_at);
    if (label != kUnlabeled) {
        if (label >= kNumClasses) throw FormatError("label out of range", label_at);
        clip.label = static_cast<ActionLabel>(label);
    }
    const std::size_t payload = static_cast<std::size_t>(w) * h * 3;
    const std::size_t expected = kClipHeaderBytes + count * (kClipFrameHeaderBytes + payload);
    if (bytes.size() < expected) {
        // Report where the first incomplete frame starts.
        const std::size_t per = kClipFrameHeaderBytes + payload;
        const std::size_t whole = (bytes.size() - kClipHeaderBytes) / per;
        throw FormatError("truncated payload: header declares " + std::to_string(count) + " frames of " +
                              std::to_string(w) + "x" + std::to_string(h),
                          kClipHeaderBytes + whole * per);
    }
    if (bytes.size() > expected) throw FormatError("trailing bytes after last frame", expected);
    clip.frames.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Frame f;
        f.width = w;
        f.height = h;
        f.index = in.u32();
        f.timestamp_ms = in.u32();
        auto px = in.bytes(payload);
        f.pixels.assign(px.begin(), px.end());
        clip.frames.push_back(std::move(f));
    }
    return clip;
}

void save_clip(const Clip& clip, const std::filesystem::path& path) {
    write_file(path.string(), encode_clip(clip));
}

Clip load_clip(const std::filesystem::path& path) { return decode_clip(read_file(path.string())); }

std::vector<DatasetEntry> list_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw Error("dataset directory not found: " + root.string());
    static const std::regex kName(R"(g(\d+)_c(\d+)\.lclip)");
    std::vector<DatasetEntry> out;
    for (ActionLabel label : kAllLabels) {
        const fs::path dir = root / std::string(label_slug(label));
        if (!fs::is_directory(dir)) continue;
        for (const auto& e : fs::directory_iterator(dir)) {
            std::smatch m;
            const std::string name = e.path().filename().string();
            if (!std::regex_match(name, m, kName)) continue;
            out.push_back({e.path(), label, std::stoi(m[1]), std::stoi(m[2])});
        }
    }
    std::sort(out.begin(), out.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
        return std::tie(a.label, a.group, a.clip) < std::tie(b.label, b.group, b.clip);
    });
    return out;
}

}  // namespace lens
