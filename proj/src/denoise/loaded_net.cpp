#include <bit>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "blendiff/denoiser.hpp"
#include "blendiff/imaging.hpp"

namespace blendiff {
namespace {

constexpr std::string_view kMagic = "BDNET1\n";

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "identity";
}

Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity" || s == "linear") return Activation::identity;
    throw InvalidArgument("unknown activation '" + s + "'");
}

Shape shape_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 3) throw InvalidArgument("shapes are [height, width, channels]");
    return Shape{v[0], v[1], v[2]};
}

float read_le_float(const std::uint8_t* p) {
    std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                         (std::uint32_t{p[3]} << 24);
    return std::bit_cast<float>(bits);
}

void put_le_float(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

}  // namespace

LoadedNet::LoadedNet(std::vector<DenseLayer> layers, Shape input_shape, Shape output_shape)
    : layers_(std::move(layers)), input_shape_(input_shape), output_shape_(output_shape) {
    if (layers_.empty()) throw InvalidArgument("network needs at least one layer");
    if (static_cast<std::size_t>(layers_.front().cols) != input_shape_.size() + 1)
        throw ShapeMismatch("first layer must take H*W*C + 1 inputs (image plus timestep)");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const DenseLayer& l = layers_[i];
        if (l.rows <= 0 || l.cols <= 0) throw InvalidArgument("layer dimensions must be positive");
        if (l.weights.size() != static_cast<std::size_t>(l.rows) * l.cols || l.bias.size() != static_cast<std::size_t>(l.rows))
            throw ShapeMismatch("layer parameter count does not match its shape");
        if (i > 0 && l.cols != layers_[i - 1].rows) throw ShapeMismatch("consecutive layer shapes do not chain");
        for (float w : l.weights)
            if (!std::isfinite(w)) throw InvalidArgument("non-finite weight");
        for (float b : l.bias)
            if (!std::isfinite(b)) throw InvalidArgument("non-finite bias");
    }
    if (static_cast<std::size_t>(layers_.back().rows) != output_shape_.size())
        throw ShapeMismatch("last layer output does not match output_shape");
}

LoadedNet LoadedNet::load(const std::string& path) { return parse(read_file(path)); }

LoadedNet LoadedNet::parse(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw DecodeError("missing BDNET1 magic", 0);
    std::size_t eol = kMagic.size();
    while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
    if (eol == bytes.size()) throw DecodeError("unterminated weights header", kMagic.size());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kMagic.size(), bytes.begin() + eol);
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("malformed weights header: ") + e.what(), kMagic.size());
    }

    std::size_t pos = eol + 1;
    std::vector<DenseLayer> layers;
    for (const auto& spec : header.at("layers")) {
        DenseLayer l;
        l.rows = spec.at("rows").get<int>();
        l.cols = spec.at("cols").get<int>();
        l.activation = activation_from(spec.value("activation", std::string("identity")));
        const std::size_t count = static_cast<std::size_t>(l.rows) * l.cols + l.rows;
        if (l.rows <= 0 || l.cols <= 0 || (bytes.size() - pos) / 4 < count)
            throw DecodeError("weights payload is truncated", pos);
        l.weights.resize(static_cast<std::size_t>(l.rows) * l.cols);
        for (float& w : l.weights) {
            w = read_le_float(bytes.data() + pos);
            pos += 4;
        }
        l.bias.resize(l.rows);
        for (float& b : l.bias) {
            b = read_le_float(bytes.data() + pos);
            pos += 4;
        }
        layers.push_back(std::move(l));
    }
    if (pos != bytes.size()) throw DecodeError("trailing bytes after weights payload", pos);
    return LoadedNet(std::move(layers), shape_from(header.at("input_shape")), shape_from(header.at("output_shape")));
}

std::vector<std::uint8_t> LoadedNet::serialize() const {
    nlohmann::json header;
    header["layers"] = nlohmann::json::array();
    for (const auto& l : layers_)
        header["layers"].push_back({{"rows", l.rows}, {"cols", l.cols}, {"activation", activation_name(l.activation)}});
    header["input_shape"] = {input_shape_.height, input_shape_.width, input_shape_.channels};
    header["output_shape"] = {output_shape_.height, output_shape_.width, output_shape_.channels};
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    const std::string text = header.dump();
    out.insert(out.end(), text.begin(), text.end());
    out.push_back('\n');
    for (const auto& l : layers_) {
        for (float w : l.weights) put_le_float(out, w);
        for (float b : l.bias) put_le_float(out, b);
    }
    return out;
}

std::vector<double> LoadedNet::forward(std::span<const double> input) const {
    if (input.size() != input_size()) throw ShapeMismatch("network input has the wrong length");
    std::vector<double> cur(input.begin(), input.end());
    for (const auto& l : layers_) {
        std::vector<double> next(l.rows);
        for (int r = 0; r < l.rows; ++r) {
            double acc = 0.0;
            const float* row = l.weights.data() + static_cast<std::size_t>(r) * l.cols;
            for (int c = 0; c < l.cols; ++c) acc += static_cast<double>(row[c]) * cur[c];
            acc += l.bias[r];
            switch (l.activation) {
                case Activation::relu: acc = acc > 0.0 ? acc : 0.0; break;
                case Activation::tanh: acc = std::tanh(acc); break;
                case Activation::identity: break;
            }
            next[r] = acc;
        }
        cur = std::move(next);
    }
    return cur;
}

ImageTensor net_predict_eps(const LoadedNet& net, const ImageTensor& x_t, int t, int T) {
    if (x_t.size() + 1 != net.input_size()) throw ShapeMismatch("latent size does not match the network input");
    if (x_t.shape() != net.output_shape()) throw ShapeMismatch("network output shape differs from the latent");
    std::vector<double> input(x_t.data().begin(), x_t.data().end());
    input.push_back(static_cast<double>(t) / T);
    std::vector<double> out = net.forward(input);
    for (double v : out)
        if (!std::isfinite(v)) throw Error("network produced a non-finite output");
    return ImageTensor(x_t.shape(), std::move(out));
}

}  // namespace blendiff
