#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "blendiff/imaging.hpp"

namespace blendiff {
namespace {

class HeaderReader {
  public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    int next_int(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > (1L << 24)) throw DecodeError(std::string("PGM ") + field + " too large", start);
            ++pos_;
        }
        if (pos_ == start) throw DecodeError(std::string("expected PGM ") + field, start);
        return static_cast<int>(value);
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

  private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

Raster8 decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DecodeError("not a binary PGM (P5) file", 0);
    HeaderReader reader(bytes);
    Raster8 r;
    r.width = reader.next_int("width");
    r.height = reader.next_int("height");
    const std::size_t maxval_at = reader.pos();
    const int maxval = reader.next_int("maxval");
    if (r.width <= 0 || r.height <= 0) throw DecodeError("PGM dimensions must be positive", 2);
    if (maxval <= 0 || maxval > 255) throw DecodeError("only 8-bit PGM is supported", maxval_at);
    if (reader.pos() >= bytes.size() || !std::isspace(bytes[reader.pos()]))
        throw DecodeError("missing whitespace after PGM header", reader.pos());
    reader.advance(1);
    r.channels = 1;
    const std::size_t need = r.size();
    if (bytes.size() - reader.pos() < need) throw DecodeError("truncated PGM pixel data", bytes.size());
    r.bytes.assign(bytes.begin() + reader.pos(), bytes.begin() + reader.pos() + need);
    if (maxval != 255) {
        for (auto& b : r.bytes) b = static_cast<std::uint8_t>((b * 255 + maxval / 2) / maxval);
    }
    return r;
}

std::vector<std::uint8_t> encode_pgm(const Raster8& raster) {
    if (raster.channels != 1) throw InvalidArgument("PGM holds single-channel images only");
    if (raster.bytes.size() != raster.size()) throw ShapeMismatch("raster byte count does not match H*W*C");
    const std::string header = "P5\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.bytes.begin(), raster.bytes.end());
    return out;
}

Raster8 decode_image(std::span<const std::uint8_t> bytes, ImageFormat format) {
    return format == ImageFormat::png ? decode_png(bytes) : decode_pgm(bytes);
}

std::vector<std::uint8_t> encode_image(const Raster8& raster, ImageFormat format) {
    return format == ImageFormat::png ? encode_png(raster) : encode_pgm(raster);
}

DecodedImage decode_with_alpha(std::span<const std::uint8_t> bytes) {
    const bool png = bytes.size() >= 4 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G';
    Raster8 r = png ? decode_png(bytes) : decode_pgm(bytes);
    DecodedImage out;
    if (r.channels == 4) {
        const std::size_t count = static_cast<std::size_t>(r.width) * r.height;
        Raster8 rgb{r.height, r.width, 3, std::vector<std::uint8_t>(count * 3)};
        std::vector<double> alpha(count);
        for (std::size_t i = 0; i < count; ++i) {
            rgb.bytes[i * 3 + 0] = r.bytes[i * 4 + 0];
            rgb.bytes[i * 3 + 1] = r.bytes[i * 4 + 1];
            rgb.bytes[i * 3 + 2] = r.bytes[i * 4 + 2];
            alpha[i] = r.bytes[i * 4 + 3] >= 128 ? 1.0 : 0.0;
        }
        out.raster = std::move(rgb);
        out.alpha = Mask(r.height, r.width, std::move(alpha));
    } else {
        out.raster = std::move(r);
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

DecodedImage load_image(const std::string& path) { return decode_with_alpha(read_file(path)); }

void save_image(const std::string& path, const Raster8& raster) {
    const bool pgm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0;
    write_file(path, encode_image(raster, pgm ? ImageFormat::pgm : ImageFormat::png));
}

}  // namespace blendiff
