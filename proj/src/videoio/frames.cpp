#include <cmath>
#include <thread>

#include "lens/videoio.hpp"

namespace lens {

SkipPolicy SkipPolicy::checked(int skip) {
    if (skip < 0 || skip > kMaxSupportedSkip) {
        throw InvalidArgument("skip must be in [0, " + std::to_string(kMaxSupportedSkip) + "], got " +
                              std::to_string(skip));
    }
    return SkipPolicy{skip};
}

std::vector<std::size_t> skip_indices(std::size_t frame_count, SkipPolicy policy) {
    if (policy.skip < 0) throw InvalidArgument("negative skip");
    std::vector<std::size_t> out;
    const std::size_t stride = static_cast<std::size_t>(policy.stride());
    out.reserve((frame_count + stride - 1) / stride);
    for (std::size_t i = 0; i < frame_count; i += stride) out.push_back(i);
    return out;
}

std::vector<Frame> skip_iter(const Clip& clip, SkipPolicy policy) {
    std::vector<Frame> out;
    for (std::size_t i : skip_indices(clip.frames.size(), policy)) out.push_back(clip.frames[i]);
    return out;
}

// ---------------------------------------------------------------------------

RingBuffer::RingBuffer(std::size_t capacity_frames, int fps) : slots_(capacity_frames), fps_(fps) {
    if (capacity_frames == 0) throw InvalidArgument("ring buffer capacity must be positive");
    if (fps <= 0) throw InvalidArgument("fps must be positive");
}

void RingBuffer::push(Frame frame) {
    std::lock_guard lock(mu_);
    slots_[head_] = std::move(frame);
    head_ = (head_ + 1) % slots_.size();
    if (count_ < slots_.size()) ++count_;
}

std::size_t RingBuffer::size() const {
    std::lock_guard lock(mu_);
    return count_;
}

std::vector<Frame> RingBuffer::ordered_locked() const {
    std::vector<Frame> out;
    out.reserve(count_);
    const std::size_t cap = slots_.size();
    const std::size_t start = (head_ + cap - count_) % cap;
    for (std::size_t i = 0; i < count_; ++i) out.push_back(slots_[(start + i) % cap]);
    return out;
}

ExtractedClip RingBuffer::extract_clip(double duration_s) const {
    if (duration_s < 0) throw InvalidArgument("negative clip duration");
    const auto wanted = static_cast<std::size_t>(std::llround(duration_s * fps_));
    if (wanted > slots_.size()) throw InvalidArgument("requested clip longer than ring capacity");
    std::lock_guard lock(mu_);
    ExtractedClip out;
    out.clip.fps = fps_;
    const std::size_t n = std::min(wanted, count_);
    out.short_clip = n < wanted;
    const std::size_t cap = slots_.size();
    for (std::size_t i = 0; i < n; ++i) out.clip.frames.push_back(slots_[(head_ + cap - n + i) % cap]);
    return out;
}

ExtractedClip RingBuffer::extract_until(std::uint32_t last_index, std::size_t count) const {
    if (count > slots_.size()) throw InvalidArgument("requested clip longer than ring capacity");
    std::lock_guard lock(mu_);
    ExtractedClip out;
    out.clip.fps = fps_;
    std::vector<Frame> all = ordered_locked();
    std::size_t end = 0;  // one past the last frame with index <= last_index
    while (end < all.size() && all[end].index <= last_index) ++end;
    const std::size_t begin = end > count ? end - count : 0;
    for (std::size_t i = begin; i < end; ++i) out.clip.frames.push_back(std::move(all[i]));
    out.short_clip = out.clip.frames.size() < count;
    return out;
}

// ---------------------------------------------------------------------------

std::optional<Frame> ClipSource::next() {
    if (clip_.frames.empty()) return std::nullopt;
    if (pos_ >= clip_.frames.size()) {
        if (!loop_) return std::nullopt;
        pos_ = 0;
    }
    Frame f = clip_.frames[pos_++];
    if (loop_) {
        f.index = emitted_;
        f.timestamp_ms = frame_timestamp_ms(emitted_, clip_.fps);
    }
    ++emitted_;
    return f;
}

ThroughputReport measure_throughput(FrameSource& source, const std::function<void(const Frame&)>& work,
                                    SkipPolicy policy, double window_s) {
    if (!(window_s >= 1.0)) throw InvalidArgument("throughput window must be at least 1 s");
    if (policy.skip < 0) throw InvalidArgument("negative skip");
    using clock = std::chrono::steady_clock;
    ThroughputReport r;
    const auto start = clock::now();
    const auto deadline = start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(window_s));
    while (clock::now() < deadline) {
        std::optional<Frame> frame = source.next();
        if (!frame) break;
        work(*frame);
        ++r.frames_processed;
        ++r.frames_covered;
        bool exhausted = false;
        for (int s = 0; s < policy.skip; ++s) {
            if (!source.next()) {
                exhausted = true;
                break;
            }
            ++r.frames_covered;
        }
        if (exhausted) break;
    }
    r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    if (r.wall_ms > 0) {
        r.processing_fps = static_cast<double>(r.frames_processed) * 1000.0 / r.wall_ms;
        r.effective_fps = r.processing_fps * policy.stride();
    }
    return r;
}

}  // namespace lens
