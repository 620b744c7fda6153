#include "metafed/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "metafed/errors.hpp"

namespace metafed {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'E', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    std::uint8_t u8() {
        if (pos >= bytes.size()) throw parse_error("model payload truncated");
        return bytes[pos++];
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return std::bit_cast<double>(v);
    }
    void f64_block(std::vector<double>& dst, std::size_t n) {
        dst.resize(n);
        for (std::size_t i = 0; i < n; ++i) dst[i] = f64();
    }
};

} // namespace

std::vector<std::uint8_t> serialize_model(const ModelParams& model, bool include_norm) {
    model.validate();
    std::vector<std::uint8_t> out;
    out.reserve(payload_bytes(model, include_norm));

    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.layer_count()));
    put_u32(out, static_cast<std::uint32_t>(model.split_index));
    out.push_back(include_norm ? 1 : 0);

    for (std::size_t k = 0; k < model.layer_count(); ++k) {
        put_u32(out, static_cast<std::uint32_t>(model.layers[k].weights.rows()));
        put_u32(out, static_cast<std::uint32_t>(model.layers[k].weights.cols()));
        out.push_back(model.norm_layers[k].has_value() ? 1 : 0);
    }
    for (const auto& layer : model.layers) {
        for (double v : layer.weights.data()) put_f64(out, v);
        for (double v : layer.bias) put_f64(out, v);
    }
    if (include_norm) {
        for (const auto& norm : model.norm_layers) {
            if (!norm.has_value()) continue;
            for (double v : norm->running_mean) put_f64(out, v);
            for (double v : norm->running_var) put_f64(out, v);
            for (double v : norm->scale) put_f64(out, v);
            for (double v : norm->shift) put_f64(out, v);
        }
    }
    return out;
}

ModelParams deserialize_model(const std::vector<std::uint8_t>& bytes) {
    ByteReader in{bytes};
    for (char c : kMagic) {
        if (in.u8() != static_cast<std::uint8_t>(c)) throw parse_error("bad model magic");
    }
    if (in.u32() != kVersion) throw parse_error("unsupported model payload version");
    const std::uint32_t layer_count = in.u32();
    const std::uint32_t split_index = in.u32();
    const bool has_norm_state = in.u8() != 0;
    if (layer_count == 0 || layer_count > 1024) {
        throw parse_error("implausible layer count in model payload");
    }

    struct Desc {
        std::uint32_t in_dim, out_dim;
        bool has_norm;
    };
    std::vector<Desc> descs(layer_count);
    for (auto& d : descs) {
        d.in_dim = in.u32();
        d.out_dim = in.u32();
        d.has_norm = in.u8() != 0;
        if (d.in_dim == 0 || d.out_dim == 0) {
            throw parse_error("zero layer dimension in model payload");
        }
    }

    ModelParams model;
    model.split_index = split_index;
    for (const auto& d : descs) {
        LinearLayer layer;
        layer.weights = Matrix(d.in_dim, d.out_dim);
        for (double& v : layer.weights.data()) v = in.f64();
        in.f64_block(layer.bias, d.out_dim);
        model.layers.push_back(std::move(layer));
        if (d.has_norm) {
            NormLayer norm;
            norm.running_mean.assign(d.out_dim, 0.0);
            norm.running_var.assign(d.out_dim, 1.0);
            norm.scale.assign(d.out_dim, 1.0);
            norm.shift.assign(d.out_dim, 0.0);
            model.norm_layers.push_back(std::move(norm));
        } else {
            model.norm_layers.push_back(std::nullopt);
        }
    }
    if (has_norm_state) {
        for (auto& norm : model.norm_layers) {
            if (!norm.has_value()) continue;
            const std::size_t c = norm->scale.size();
            in.f64_block(norm->running_mean, c);
            in.f64_block(norm->running_var, c);
            in.f64_block(norm->scale, c);
            in.f64_block(norm->shift, c);
        }
    }
    if (in.pos != bytes.size()) throw parse_error("trailing bytes after model payload");

    try {
        model.validate();
    } catch (const std::exception& e) {
        throw parse_error(std::string("payload decodes to an invalid model: ") + e.what());
    }
    return model;
}

std::size_t payload_bytes(const ModelParams& model, bool include_norm) {
    std::size_t doubles = 0;
    for (const auto& layer : model.layers) doubles += layer.weights.size() + layer.bias.size();
    if (include_norm) {
        for (const auto& norm : model.norm_layers) {
            if (norm.has_value()) doubles += 4 * norm->scale.size();
        }
    }
    return 17 + 9 * model.layer_count() + 8 * doubles;
}

void save_model(const ModelParams& model, const std::string& path) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw input_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw input_error("short write to " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t model_checksum(const ModelParams& model) {
    return fnv1a64(serialize_model(model));
}

} // namespace metafed
