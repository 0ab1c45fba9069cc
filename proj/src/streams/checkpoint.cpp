#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lens/bytes.hpp"
#include "lens/error.hpp"
#include "lens/streams.hpp"

namespace lens {

namespace {

constexpr char kMagic[4] = {'L', 'M', 'D', 'L'};
constexpr std::uint16_t kVersion = 1;

void write_floats(ByteWriter& w, const std::vector<double>& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) w.f32(static_cast<float>(x));
}

std::vector<double> read_floats(ByteReader& r, std::size_t limit) {
    const std::size_t offset = r.offset();
    const std::uint32_t n = r.u32();
    if (n > limit) throw FormatError("array length out of range", offset);
    std::vector<double> v(n);
    for (auto& x : v) x = r.f32();
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const StreamModel& model) {
    model.check_finite();
    const ModelShape& s = model.shape();
    ByteWriter w;
    w.text(std::string_view(kMagic, 4));
    w.u16(kVersion);
    w.u8(static_cast<std::uint8_t>(model.kind()));
    w.u16(static_cast<std::uint16_t>(s.input_channels));
    w.u16(static_cast<std::uint16_t>(s.filters));
    w.u16(static_cast<std::uint16_t>(s.kernel));
    w.u16(static_cast<std::uint16_t>(s.hidden));
    w.u16(static_cast<std::uint16_t>(s.input_size));
    w.f32(static_cast<float>(model.norm().test_crop));
    write_floats(w, model.norm().mean);
    write_floats(w, model.norm().std);
    write_floats(w, model.params());
    return std::move(w).take();
}

StreamModel decode_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad magic", 0);
    if (r.u16() != kVersion) throw FormatError("unsupported version", 4);
    const std::size_t kind_at = r.offset();
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw FormatError("unknown stream kind", kind_at);
    const std::size_t shape_at = r.offset();
    ModelShape s;
    s.input_channels = r.u16();
    s.filters = r.u16();
    s.kernel = r.u16();
    s.hidden = r.u16();
    s.input_size = r.u16();
    StreamModel m;
    try {
        m = StreamModel(static_cast<StreamKind>(kind), s);
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid shape: ") + e.what(), shape_at);
    }
    m.norm().test_crop = r.f32();
    m.norm().mean = read_floats(r, 65535);
    m.norm().std = read_floats(r, 65535);
    const std::size_t params_at = r.offset();
    auto params = read_floats(r, m.params().size());
    if (params.size() != m.params().size()) throw FormatError("parameter count does not match shape", params_at);
    m.params() = std::move(params);
    if (r.remaining() != 0) throw FormatError("trailing bytes", r.offset());
    try {
        m.check_finite();
    } catch (const NumericError&) {
        throw FormatError("non-finite parameter", params_at);
    }
    return m;
}

void save_model(const StreamModel& model, const std::filesystem::path& path) { write_file(path, encode_model(model)); }

StreamModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

void save_model_sidecar(const std::filesystem::path& model_path, const StreamModel& model, const TrainConfig& config,
                        std::span<const EpochMetrics> history) {
    nlohmann::json j;
    j["kind"] = model.kind() == StreamKind::Spatial ? "spatial" : "temporal";
    j["shape"] = {{"input_channels", model.shape().input_channels},
                  {"filters", model.shape().filters},
                  {"kernel", model.shape().kernel},
                  {"hidden", model.shape().hidden},
                  {"input_size", model.shape().input_size}};
    j["train_config"] = {{"lr0", config.lr0},
                         {"momentum", config.momentum},
                         {"batch", config.batch},
                         {"patience", config.patience},
                         {"lr_factor", config.lr_factor},
                         {"epochs", config.epochs},
                         {"frames_per_video", config.frames_per_video},
                         {"stacks_per_video", config.stacks_per_video},
                         {"seed", config.seed}};
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochMetrics& m : history)
        hist.push_back({{"epoch", m.epoch},
                        {"loss", m.loss},
                        {"train_accuracy", m.train_accuracy},
                        {"val_accuracy", m.val_accuracy},
                        {"lr", m.lr},
                        {"lr_decayed", m.lr_decayed}});
    j["history"] = std::move(hist);
    std::filesystem::path side = model_path;
    side += ".json";
    std::ofstream out(side);
    if (!out) throw Error("cannot write " + side.string());
    out << j.dump(2) << '\n';
}

}  // namespace lens
