#include "cascreg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace cascreg {

namespace {

constexpr char kMagic[5] = {'V', 'V', 'O', 'L', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint64_t kFixedHeader = 48;

using Kind = VolumeIoError::Kind;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }

    std::vector<std::uint8_t> buf;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint64_t pos() const { return pos_; }
    void need(std::uint64_t n, const char* what) const {
        if (b_.size() - pos_ < n)
            throw VolumeIoError(Kind::truncated,
                                std::string("truncated ") + what + ": expected " + std::to_string(pos_ + n) +
                                    " bytes, file has " + std::to_string(b_.size()) + " (at offset " +
                                    std::to_string(pos_) + ")",
                                pos_);
    }
    template <class U>
    U le(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* here() const { return b_.data() + pos_; }
    void skip(std::uint64_t n) { pos_ += n; }
    std::uint64_t size() const { return b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::uint64_t pos_ = 0;
};

bool mul_overflows(std::uint64_t a, std::uint64_t b, std::uint64_t& out) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return true;
    out = a * b;
    return false;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolumeIoError(Kind::open_failed, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

VolumeFileHeader parse_header(Reader& r) {
    r.need(5, "magic");
    if (std::memcmp(r.here(), kMagic, 5) != 0) throw VolumeIoError(Kind::bad_magic, "bad magic: not a VVOL1 file", 0);
    r.skip(5);
    VolumeFileHeader h;
    h.dtype = r.le<std::uint8_t>("dtype");
    if (h.dtype != kDtypeF32)
        throw VolumeIoError(Kind::unsupported_dtype, "unsupported dtype tag " + std::to_string(h.dtype) + " (only 1 = f32)", 5);
    r.le<std::uint16_t>("reserved");
    std::uint32_t dims[3];
    for (auto& d : dims) d = r.le<std::uint32_t>("dims");
    h.spacing.x = r.f64("spacing");
    h.spacing.y = r.f64("spacing");
    h.spacing.z = r.f64("spacing");
    const std::uint32_t channels = r.le<std::uint32_t>("channel count");
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || channels == 0)
        throw VolumeIoError(Kind::bad_header, "zero dimension or channel count in header", 8);
    const auto int_max = static_cast<std::uint32_t>(std::numeric_limits<int>::max());
    std::uint64_t total = 0;
    if (dims[0] > int_max || dims[1] > int_max || dims[2] > int_max || mul_overflows(dims[0], dims[1], total) ||
        mul_overflows(total, dims[2], total) || mul_overflows(total, channels, total) || mul_overflows(total, 4, total))
        throw VolumeIoError(Kind::dim_overflow,
                            "dimension overflow: " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
                                std::to_string(dims[2]) + " x " + std::to_string(channels) + " channels",
                            8);
    h.dims = {int(dims[0]), int(dims[1]), int(dims[2])};
    for (std::uint32_t c = 0; c < channels; ++c) {
        const std::uint16_t len = r.le<std::uint16_t>("channel name length");
        h.channel_names.push_back(r.str(len, "channel name"));
    }
    return h;
}

void validate_names(const std::vector<std::string>& names) {
    if (names.empty()) throw VolumeIoError(Kind::write_failed, "cannot write a volume with no channels");
    for (const auto& n : names)
        if (n.size() > std::numeric_limits<std::uint16_t>::max())
            throw VolumeIoError(Kind::write_failed, "channel name longer than 65535 bytes");
}

void write_channels(const std::filesystem::path& path, const Dims& dims, const Spacing& spacing,
                    std::vector<std::string> names, const std::vector<const Volume3*>& chans) {
    VolumeFileHeader h{dims, spacing, kDtypeF32, std::move(names)};
    write_file_atomic(path, encode_volume(h, chans));
}

}  // namespace

std::uint64_t VolumeFileHeader::header_bytes() const {
    std::uint64_t n = kFixedHeader;
    for (const auto& s : channel_names) n += 2 + s.size();
    return n;
}

std::uint64_t VolumeFileHeader::payload_bytes() const { return dims.count() * channel_names.size() * 4; }

std::vector<std::uint8_t> encode_volume(const VolumeFileHeader& h, std::span<const Volume3* const> channels) {
    validate_names(h.channel_names);
    if (channels.size() != h.channel_names.size())
        throw VolumeIoError(Kind::write_failed, "channel count does not match channel names");
    Writer w;
    w.buf.reserve(h.header_bytes() + h.payload_bytes());
    w.bytes(kMagic, 5);
    w.le<std::uint8_t>(h.dtype);
    w.le<std::uint16_t>(0);
    w.le<std::uint32_t>(std::uint32_t(h.dims.nx));
    w.le<std::uint32_t>(std::uint32_t(h.dims.ny));
    w.le<std::uint32_t>(std::uint32_t(h.dims.nz));
    w.f64(h.spacing.x);
    w.f64(h.spacing.y);
    w.f64(h.spacing.z);
    w.le<std::uint32_t>(std::uint32_t(h.channel_names.size()));
    for (const auto& n : h.channel_names) {
        w.le<std::uint16_t>(std::uint16_t(n.size()));
        w.bytes(n.data(), n.size());
    }
    for (const Volume3* c : channels) {
        if (c->dims() != h.dims) throw DimensionMismatch("encode_volume", c->dims(), h.dims);
        for (float v : c->data()) w.f32(v);
    }
    return std::move(w.buf);
}

std::vector<Volume3> decode_volume(std::span<const std::uint8_t> bytes, VolumeFileHeader& header) {
    Reader r(bytes);
    header = parse_header(r);
    const std::uint64_t payload = header.payload_bytes();
    r.need(payload, "payload");
    if (r.size() - r.pos() > payload)
        throw VolumeIoError(Kind::trailing_data,
                            "trailing data: expected " + std::to_string(r.pos() + payload) + " bytes, file has " +
                                std::to_string(r.size()),
                            r.pos() + payload);
    std::vector<Volume3> out;
    const std::size_t n = header.dims.count();
    for (std::size_t c = 0; c < header.channel_names.size(); ++c) {
        std::vector<float> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(r.le<std::uint32_t>("payload"));
        out.emplace_back(header.dims, std::move(data), header.spacing);
    }
    return out;
}

VolumeFileHeader read_volume_header(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    Reader r(bytes);
    return parse_header(r);
}

VolumeData read_volume(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    VolumeFileHeader h;
    auto chans = decode_volume(bytes, h);
    if (chans.size() == 1 && h.channel_names[0].empty()) return std::move(chans[0]);
    return LabelVolume(std::move(chans), h.channel_names);
}

Volume3 read_image(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    VolumeFileHeader h;
    auto chans = decode_volume(bytes, h);
    if (chans.size() != 1)
        throw VolumeIoError(Kind::bad_header,
                            path.string() + ": expected a single-channel image, found " + std::to_string(chans.size()) +
                                " channels",
                            44);
    return std::move(chans[0]);
}

LabelVolume read_labels(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    VolumeFileHeader h;
    auto chans = decode_volume(bytes, h);
    return LabelVolume(std::move(chans), h.channel_names);
}

DisplacementField read_displacement(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    VolumeFileHeader h;
    auto chans = decode_volume(bytes, h);
    if (h.channel_names != std::vector<std::string>{"u_x", "u_y", "u_z"})
        throw VolumeIoError(Kind::bad_header, path.string() + ": not a displacement field (channels u_x, u_y, u_z)", 44);
    return DisplacementField(std::move(chans[0]), std::move(chans[1]), std::move(chans[2]));
}

void write_volume(const std::filesystem::path& path, const Volume3& vol) {
    write_channels(path, vol.dims(), vol.spacing(), {""}, {&vol});
}

void write_volume(const std::filesystem::path& path, const LabelVolume& labels) {
    std::vector<const Volume3*> chans;
    for (const auto& c : labels.channels()) chans.push_back(&c);
    write_channels(path, labels.dims(), labels.spacing(), labels.names(), chans);
}

void write_displacement(const std::filesystem::path& path, const DisplacementField& disp) {
    write_channels(path, disp.dims(), disp[0].spacing(), {"u_x", "u_y", "u_z"}, {&disp[0], &disp[1], &disp[2]});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path partial = path;
    partial += ".partial";
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw VolumeIoError(Kind::write_failed, "cannot create " + partial.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(partial, ec);
            throw VolumeIoError(Kind::write_failed, "write failed for " + partial.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(partial, path, ec);
    if (ec) {
        std::filesystem::remove(partial, ec);
        throw VolumeIoError(Kind::write_failed, "cannot rename " + partial.string() + " to " + path.string());
    }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cascreg
