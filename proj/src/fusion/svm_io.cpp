#include <cmath>
#include <cstring>

#include "lens/bytes.hpp"
#include "lens/error.hpp"
#include "lens/fusion.hpp"

namespace lens {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'V', 'M'};
constexpr std::uint16_t kVersion = 1;

void put_f64(ByteWriter& w, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    w.u64(bits);
}

double get_f64(ByteReader& r) {
    const std::uint64_t bits = r.u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_svm(const SvmModel& model) {
    if (!model.trained) throw InvalidArgument("encode_svm: model is not trained");
    ByteWriter w;
    w.text(std::string_view(kMagic, 4));
    w.u16(kVersion);
    w.u16(static_cast<std::uint16_t>(model.config.degree));
    put_f64(w, model.config.gamma);
    put_f64(w, model.config.coef0);
    put_f64(w, model.config.C);
    put_f64(w, model.config.tol);
    w.u64(static_cast<std::uint64_t>(model.config.max_passes));
    w.u16(static_cast<std::uint16_t>(model.dim));
    w.u8(kNumClasses);
    for (const BinarySvm& m : model.machines) {
        w.u8(m.present ? 1 : 0);
        w.u8(m.converged ? 1 : 0);
        w.u64(static_cast<std::uint64_t>(m.iterations));
        w.f32(static_cast<float>(m.bias));
        w.u32(static_cast<std::uint32_t>(m.support.size()));
        for (std::size_t i = 0; i < m.support.size(); ++i) {
            w.f32(static_cast<float>(m.coef[i]));
            for (double v : m.support[i]) w.f32(static_cast<float>(v));
        }
    }
    return std::move(w).take();
}

SvmModel decode_svm(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad magic", 0);
    if (r.u16() != kVersion) throw FormatError("unsupported version", 4);
    SvmModel m;
    const std::size_t cfg_at = r.offset();
    m.config.degree = r.u16();
    m.config.gamma = get_f64(r);
    m.config.coef0 = get_f64(r);
    m.config.C = get_f64(r);
    m.config.tol = get_f64(r);
    m.config.max_passes = static_cast<long>(r.u64());
    try {
        m.config.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid config: ") + e.what(), cfg_at);
    }
    m.dim = r.u16();
    const std::size_t classes_at = r.offset();
    if (r.u8() != kNumClasses) throw FormatError("class count must be 4", classes_at);
    for (BinarySvm& b : m.machines) {
        b.present = r.u8() != 0;
        b.converged = r.u8() != 0;
        b.iterations = static_cast<long>(r.u64());
        b.bias = r.f32();
        const std::size_t n_at = r.offset();
        const std::uint32_t n = r.u32();
        if (static_cast<std::size_t>(n) * (1 + m.dim) * 4 > r.remaining()) throw FormatError("truncated payload", n_at);
        for (std::uint32_t i = 0; i < n; ++i) {
            b.coef.push_back(r.f32());
            std::vector<double> sv(static_cast<std::size_t>(m.dim));
            for (double& v : sv) v = r.f32();
            b.support.push_back(std::move(sv));
        }
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes", r.offset());
    m.trained = true;
    return m;
}

void save_svm(const SvmModel& model, const std::filesystem::path& path) { write_file(path, encode_svm(model)); }

SvmModel load_svm(const std::filesystem::path& path) { return decode_svm(read_file(path)); }

}  // namespace lens
