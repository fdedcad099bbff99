#include "nilm/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "nilm/errors.hpp"
#include "nilm/hash.hpp"

namespace nilm {

namespace {

constexpr const char* kMagic = "NILMCKPT 1";

std::size_t parse_size(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("checkpoint: bad " + what + " '" + s + "'");
    return v;
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("checkpoint: bad " + what + " '" + s + "'");
    return v;
}

Shape parse_shape(const std::string& s) {
    Shape shape;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto x = s.find('x', start);
        const auto end = x == std::string::npos ? s.size() : x;
        shape.push_back(parse_size(s.substr(start, end - start), "shape"));
        if (x == std::string::npos) break;
        start = x + 1;
    }
    return shape;
}

std::string shape_text(const Shape& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(shape[i]);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NilmModel& model,
                     const std::map<std::string, std::string>& extra_meta) {
    const ModelConfig& c = model.config;
    std::map<std::string, std::string> meta = extra_meta;
    meta["window_len"] = std::to_string(c.window_len);
    meta["hidden"] = std::to_string(c.hidden);
    meta["layers"] = std::to_string(c.layers);
    meta["heads"] = std::to_string(c.heads);
    meta["ffn_mult"] = std::to_string(c.ffn_mult);
    meta["dropout"] = format_double(c.dropout);
    meta["mode"] = c.mode.to_string();
    meta["seed"] = std::to_string(c.seed);
    meta["arch_hash"] = to_hex(architecture_hash(c));

    std::ostringstream header;
    header << kMagic << '\n';
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw DataError("checkpoint: metadata key/value not representable: " + k);
        }
        header << "meta " << k << ' ' << v << '\n';
    }
    std::vector<unsigned char> blob;
    visit_model_params(model, [&](const std::string& name, const Tensor& t) {
        header << "tensor " << name << " f64 " << blob.size() << ' ' << shape_text(t.shape()) << '\n';
        for (double v : t.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) blob.push_back(static_cast<unsigned char>(bits >> (8 * i)));
        }
    });
    header << "end\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw DataError("not a checkpoint file: " + path.string());

    struct Entry {
        std::string precision;
        std::size_t offset;
        Shape shape;
    };
    std::map<std::string, Entry> entries;
    Checkpoint ck;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ck.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name, precision, offset, shape;
            ls >> name >> precision >> offset >> shape;
            if (precision != "f64" && precision != "f32") throw DataError("checkpoint: unknown precision " + precision);
            entries[name] = {precision, parse_size(offset, "offset"), parse_shape(shape)};
        } else {
            throw DataError("checkpoint: unexpected manifest line '" + line + "'");
        }
    }
    if (!ended) throw DataError("checkpoint: manifest not terminated");
    const std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = ck.meta.find(key);
        if (it == ck.meta.end()) throw DataError("checkpoint: missing meta '" + key + "'");
        return it->second;
    };
    ModelConfig c;
    c.window_len = parse_size(need("window_len"), "window_len");
    c.hidden = parse_size(need("hidden"), "hidden");
    c.layers = parse_size(need("layers"), "layers");
    c.heads = parse_size(need("heads"), "heads");
    c.ffn_mult = parse_size(need("ffn_mult"), "ffn_mult");
    c.dropout = parse_double(need("dropout"), "dropout");
    c.mode = AttentionMode::parse(need("mode"));
    c.seed = parse_size(need("seed"), "seed");
    if (to_hex(architecture_hash(c)) != need("arch_hash")) throw DataError("checkpoint: architecture hash mismatch");

    ck.model = NilmModel::init(c);
    std::size_t seen = 0;
    visit_model_params(ck.model, [&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw DataError("checkpoint: missing tensor " + name);
        const Entry& e = it->second;
        if (e.shape != t.shape()) {
            throw DataError("checkpoint: tensor " + name + " has shape " + shape_str(e.shape) + ", expected " +
                            shape_str(t.shape()));
        }
        const std::size_t width = e.precision == "f64" ? 8 : 4;
        if (e.offset + width * t.size() > blob.size()) throw DataError("checkpoint: truncated data for " + name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint64_t bits = 0;
            for (std::size_t b = 0; b < width; ++b) {
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[e.offset + i * width + b])) << (8 * b);
            }
            t[i] = width == 8 ? std::bit_cast<double>(bits)
                              : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
        }
        ++seen;
    });
    if (seen != entries.size()) throw DataError("checkpoint: unexpected extra tensors");
    return ck;
}

}  // namespace nilm
