#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lens/error.hpp"

namespace lens {

enum class ActionLabel : std::uint8_t { Theft = 0, Assault = 1, Shooting = 2, NoAction = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<ActionLabel, kNumClasses> kAllLabels{
    ActionLabel::Theft, ActionLabel::Assault, ActionLabel::Shooting, ActionLabel::NoAction};

/// Display name ("Theft", "Assault", "Shooting", "NoAction").
std::string_view label_name(ActionLabel label);
/// Directory-safe name used in dataset trees ("theft", ..., "no_action").
std::string_view label_slug(ActionLabel label);
/// Accepts either the display name or the slug; throws InvalidArgument otherwise.
ActionLabel parse_label(std::string_view text);
ActionLabel label_from_index(int index);
inline int label_index(ActionLabel label) { return static_cast<int>(label); }

/// One RGB24 frame. Pixels are row-major, three bytes per pixel.
struct Frame {
    int width = 0;
    int height = 0;
    std::uint32_t index = 0;
    std::uint32_t timestamp_ms = 0;
    std::vector<std::uint8_t> pixels;

    Frame() = default;
    Frame(int w, int h, std::uint32_t idx = 0, std::uint32_t ts = 0);

    std::uint8_t* pixel(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    const std::uint8_t* pixel(int x, int y) const {
        return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
    std::size_t byte_size() const { return static_cast<std::size_t>(width) * height * 3; }
};

/// floor(index * 1000 / fps)
std::uint32_t frame_timestamp_ms(std::uint32_t index, int fps);

struct Clip {
    std::vector<Frame> frames;
    int fps = 30;
    std::optional<ActionLabel> label;
    int group_id = 0;
    int clip_id = 0;

    std::size_t size() const { return frames.size(); }
    bool empty() const { return frames.empty(); }
    int width() const { return frames.empty() ? 0 : frames.front().width; }
    int height() const { return frames.empty() ? 0 : frames.front().height; }
    double duration_s() const { return fps > 0 ? static_cast<double>(frames.size()) / fps : 0.0; }
};

// ---------------------------------------------------------------------------
// .lclip serialization

inline constexpr std::size_t kClipHeaderBytes = 24;
inline constexpr std::size_t kClipFrameHeaderBytes = 8;

std::vector<std::uint8_t> encode_clip(const Clip& clip);
/// Throws FormatError carrying the byte offset of the first inconsistency.
Clip decode_clip(std::span<const std::uint8_t> bytes);
void save_clip(const Clip& clip, const std::filesystem::path& path);
Clip load_clip(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frame skipping

struct SkipPolicy {
    int skip = 0;

    int stride() const { return skip + 1; }
    static SkipPolicy checked(int skip);
};

inline constexpr int kMaxSupportedSkip = 4;

/// Indices 0, stride, 2*stride, ... below `frame_count`.
std::vector<std::size_t> skip_indices(std::size_t frame_count, SkipPolicy policy);
/// Frames kept by the skip policy, in order. Copies frames.
std::vector<Frame> skip_iter(const Clip& clip, SkipPolicy policy);

// ---------------------------------------------------------------------------
// Ring buffer

struct ExtractedClip {
    Clip clip;
    bool short_clip = false;
};

/// Fixed-capacity frame history. One writer; readers take snapshots under the lock.
class RingBuffer {
public:
    static constexpr std::size_t kDefaultCapacity = 150;

    explicit RingBuffer(std::size_t capacity_frames = kDefaultCapacity, int fps = 30);

    void push(Frame frame);

    /// Most recent duration_s * fps frames, oldest first. Flags short when fewer are held.
    ExtractedClip extract_clip(double duration_s) const;
    /// Up to `count` frames ending at the frame with index `last_index` (inclusive).
    ExtractedClip extract_until(std::uint32_t last_index, std::size_t count) const;

    std::size_t capacity() const { return slots_.size(); }
    std::size_t size() const;
    int fps() const { return fps_; }

private:
    std::vector<Frame> ordered_locked() const;

    mutable std::mutex mu_;
    std::vector<Frame> slots_;
    std::size_t head_ = 0;  // next write slot
    std::size_t count_ = 0;
    int fps_;
};

// ---------------------------------------------------------------------------
// Frame sources and throughput measurement

class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual std::optional<Frame> next() = 0;
    /// Live sources drop frames under backpressure; file sources block.
    virtual bool is_live() const { return false; }
};

class ClipSource : public FrameSource {
public:
    explicit ClipSource(Clip clip, bool loop = false) : clip_(std::move(clip)), loop_(loop) {}
    std::optional<Frame> next() override;
    const Clip& clip() const { return clip_; }

private:
    Clip clip_;
    bool loop_;
    std::size_t pos_ = 0;
    std::uint32_t emitted_ = 0;
};

struct ThroughputReport {
    std::uint64_t frames_processed = 0;
    std::uint64_t frames_covered = 0;  // processed plus skipped
    double wall_ms = 0.0;
    double processing_fps = 0.0;
    double effective_fps = 0.0;
};

/// Pulls frames from `source`, drops `policy.skip` frames between processed ones and runs
/// `work` on each processed frame until `window_s` of wall time has elapsed or the source
/// ends. effective_fps = processing_fps * (skip + 1).
ThroughputReport measure_throughput(FrameSource& source, const std::function<void(const Frame&)>& work,
                                    SkipPolicy policy, double window_s);

// ---------------------------------------------------------------------------
// Dataset layout

struct DatasetEntry {
    std::filesystem::path path;
    ActionLabel label = ActionLabel::NoAction;
    int group = 0;
    int clip = 0;
};

/// Scans `<root>/<action>/g<group>_c<clip>.lclip`, sorted by (label, group, clip).
std::vector<DatasetEntry> list_dataset(const std::filesystem::path& root);

}  // namespace lens
