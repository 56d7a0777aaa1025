// PNG reader/writer for 8-bit non-interlaced images. zlib does the
// inflate/deflate and CRC work; everything else (chunk walk, unfiltering,
// palette expansion) lives here.

#include <zlib.h>

#include <array>
#include <cstdlib>
#include <cstring>

#include "blendiff/imaging.hpp"

namespace blendiff {
namespace {

constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

struct Header {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    int color_type = 0;
    int samples = 0;  // per pixel, before palette expansion
};

}  // namespace

Raster8 decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kSignature.size() || !std::equal(kSignature.begin(), kSignature.end(), bytes.begin()))
        throw DecodeError("not a PNG file", 0);

    Header hdr;
    bool have_header = false;
    bool have_end = false;
    std::vector<std::uint8_t> idat;
    std::vector<std::array<std::uint8_t, 3>> palette;
    std::size_t idat_offset = 0;

    std::size_t pos = kSignature.size();
    while (pos < bytes.size() && !have_end) {
        if (pos + 12 > bytes.size()) throw DecodeError("truncated chunk header", pos);
        const std::uint32_t length = read_be32(bytes, pos);
        if (length > bytes.size() - pos - 12) throw DecodeError("chunk length exceeds file size", pos);
        const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
        const auto data = bytes.subspan(pos + 8, length);
        const std::uint32_t stored_crc = read_be32(bytes, pos + 8 + length);
        const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data() + pos + 4, length + 4));
        if (crc != stored_crc) throw DecodeError("CRC mismatch in " + type + " chunk", pos + 8 + length);

        if (type == "IHDR") {
            if (length != 13) throw DecodeError("IHDR must be 13 bytes", pos);
            hdr.width = read_be32(data, 0);
            hdr.height = read_be32(data, 4);
            const int depth = data[8];
            hdr.color_type = data[9];
            if (hdr.width == 0 || hdr.height == 0 || hdr.width > (1u << 24) || hdr.height > (1u << 24))
                throw DecodeError("invalid image dimensions", pos + 8);
            if (depth != 8) throw DecodeError("only 8-bit PNG is supported", pos + 16);
            switch (hdr.color_type) {
                case 0: hdr.samples = 1; break;
                case 2: hdr.samples = 3; break;
                case 3: hdr.samples = 1; break;
                case 4: hdr.samples = 2; break;
                case 6: hdr.samples = 4; break;
                default: throw DecodeError("unsupported PNG color type", pos + 17);
            }
            if (data[10] != 0 || data[11] != 0) throw DecodeError("unsupported compression/filter method", pos + 18);
            if (data[12] != 0) throw DecodeError("interlaced PNG is not supported", pos + 20);
            have_header = true;
        } else if (type == "PLTE") {
            if (length % 3 != 0 || length == 0) throw DecodeError("malformed palette", pos);
            for (std::size_t i = 0; i < length; i += 3) palette.push_back({data[i], data[i + 1], data[i + 2]});
        } else if (type == "IDAT") {
            if (!have_header) throw DecodeError("IDAT before IHDR", pos);
            if (idat.empty()) idat_offset = pos + 8;
            idat.insert(idat.end(), data.begin(), data.end());
        } else if (type == "IEND") {
            have_end = true;
        } else if (!(type[0] & 0x20)) {
            throw DecodeError("unknown critical chunk " + type, pos + 4);
        }
        pos += 12 + length;
    }
    if (!have_header) throw DecodeError("missing IHDR", kSignature.size());
    if (idat.empty()) throw DecodeError("missing IDAT", pos);
    if (hdr.color_type == 3 && palette.empty()) throw DecodeError("palette image without PLTE", pos);

    const std::size_t stride = static_cast<std::size_t>(hdr.width) * hdr.samples;
    std::vector<std::uint8_t> raw((stride + 1) * hdr.height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK) throw DecodeError("corrupt image data stream", idat_offset);
    if (raw_len != raw.size()) throw DecodeError("image data stream has wrong length", idat_offset);

    std::vector<std::uint8_t> pixels(stride * hdr.height);
    const int bpp = hdr.samples;
    for (std::uint32_t y = 0; y < hdr.height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* in = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* out = pixels.data() + y * stride;
        const std::uint8_t* prev = y > 0 ? out - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? out[i - bpp] : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
            int v = in[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw DecodeError("invalid filter type", idat_offset);
            }
            out[i] = static_cast<std::uint8_t>(v & 0xFF);
        }
    }

    Raster8 r;
    r.height = static_cast<int>(hdr.height);
    r.width = static_cast<int>(hdr.width);
    const std::size_t count = static_cast<std::size_t>(r.width) * r.height;
    switch (hdr.color_type) {
        case 0:
        case 2:
        case 6:
            r.channels = hdr.samples;
            r.bytes = std::move(pixels);
            break;
        case 3:
            r.channels = 3;
            r.bytes.resize(count * 3);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t idx = pixels[i];
                if (idx >= palette.size()) throw DecodeError("palette index out of range", idat_offset);
                std::memcpy(&r.bytes[i * 3], palette[idx].data(), 3);
            }
            break;
        case 4:
            r.channels = 4;
            r.bytes.resize(count * 4);
            for (std::size_t i = 0; i < count; ++i) {
                r.bytes[i * 4 + 0] = r.bytes[i * 4 + 1] = r.bytes[i * 4 + 2] = pixels[i * 2];
                r.bytes[i * 4 + 3] = pixels[i * 2 + 1];
            }
            break;
    }
    return r;
}

std::vector<std::uint8_t> encode_png(const Raster8& raster) {
    if (raster.height <= 0 || raster.width <= 0) throw InvalidArgument("cannot encode an empty raster");
    if (raster.bytes.size() != raster.size()) throw ShapeMismatch("raster byte count does not match H*W*C");
    int color_type = 0;
    switch (raster.channels) {
        case 1: color_type = 0; break;
        case 3: color_type = 2; break;
        case 4: color_type = 6; break;
        default: throw InvalidArgument("PNG encoder supports 1, 3 or 4 channels");
    }

    const std::size_t stride = static_cast<std::size_t>(raster.width) * raster.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * raster.height);
    for (int y = 0; y < raster.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), raster.bytes.begin() + y * stride, raster.bytes.begin() + (y + 1) * stride);
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("deflate failed");
    packed.resize(packed_len);

    std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
    const auto chunk = [&out](const char* type, std::span<const std::uint8_t> data) {
        put_be32(out, static_cast<std::uint32_t>(data.size()));
        const std::size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        put_be32(out, static_cast<std::uint32_t>(crc32(0L, out.data() + start, static_cast<uInt>(data.size() + 4))));
    };
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(raster.width));
    put_be32(ihdr, static_cast<std::uint32_t>(raster.height));
    ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(color_type), 0, 0, 0});
    chunk("IHDR", ihdr);
    chunk("IDAT", packed);
    chunk("IEND", {});
    return out;
}

}  // namespace blendiff
