#include "calclab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "calclab/errors.hpp"

namespace calclab {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'B', 'C', 'H'};

json config_to_json(const ModelConfig& cfg) {
    return json{{"layers", cfg.layers},   {"heads", cfg.heads},     {"model_dim", cfg.model_dim},
                {"mlp_hidden", cfg.mlp_hidden}, {"vocab", cfg.vocab}, {"max_seq", cfg.max_seq},
                {"layernorm_eps", cfg.layernorm_eps}, {"nonlinearity", cfg.nonlinearity}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.model_dim = j.at("model_dim").get<int>();
    cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.max_seq = j.at("max_seq").get<int>();
    cfg.layernorm_eps = j.at("layernorm_eps").get<double>();
    cfg.nonlinearity = j.at("nonlinearity").get<std::string>();
    cfg.validate();
    return cfg;
}

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::string dtype;
};

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const std::string& dtype) {
    if (dtype != "f64" && dtype != "f32") throw config_error("checkpoint dtype must be f64 or f32, got '" + dtype + "'");
    const std::size_t elem = dtype == "f64" ? 8 : 4;

    json manifest = json::array();
    std::uint64_t offset = 0;
    for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"dtype", dtype}});
        offset += static_cast<std::uint64_t>(t.numel()) * elem;
    });
    const json header = {{"config", config_to_json(state.config)}, {"tensors", manifest}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, 4);
    const std::uint16_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint32_t header_len = static_cast<std::uint32_t>(header_str.size());
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for_each_parameter(state, [&](const std::string&, const Tensor& t) {
        if (dtype == "f64") {
            out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * 8));
        } else {
            std::vector<float> buf(t.data().begin(), t.data().end());
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        }
    });
    if (!out) throw data_error("short write while saving checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path.string());

    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw data_error("corrupt checkpoint (bad magic): " + path.string());
    }
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion) {
        throw data_error("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                         std::to_string(kCheckpointVersion) + "): " + path.string());
    }
    std::uint32_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), header_len);
    if (!in) throw data_error("corrupt checkpoint (truncated header): " + path.string());

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw data_error("corrupt checkpoint (bad header JSON): " + std::string(e.what()));
    }

    ModelState st = init_model(config_from_json(header.at("config")), 0);
    std::unordered_map<std::string, ManifestEntry> entries;
    for (const auto& e : header.at("tensors")) {
        ManifestEntry m;
        m.name = e.at("name").get<std::string>();
        m.shape = e.at("shape").get<Shape>();
        m.offset = e.at("offset").get<std::uint64_t>();
        m.dtype = e.at("dtype").get<std::string>();
        entries.emplace(m.name, std::move(m));
    }

    const std::streampos payload_base = in.tellg();
    for_each_parameter(st, [&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw data_error("corrupt checkpoint (missing tensor '" + name + "')");
        const ManifestEntry& m = it->second;
        if (m.shape != t.shape()) {
            throw data_error("corrupt checkpoint (tensor '" + name + "' has shape " + shape_str(m.shape) + ", expected " +
                             shape_str(t.shape()) + ")");
        }
        in.seekg(payload_base + static_cast<std::streamoff>(m.offset));
        if (m.dtype == "f64") {
            in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * 8));
        } else if (m.dtype == "f32") {
            std::vector<float> buf(static_cast<std::size_t>(t.numel()));
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
            for (std::size_t i = 0; i < buf.size(); ++i) t.data()[i] = static_cast<double>(buf[i]);
        } else {
            throw data_error("corrupt checkpoint (unknown dtype '" + m.dtype + "')");
        }
        if (!in) throw data_error("corrupt checkpoint (truncated payload at tensor '" + name + "'): " + path.string());
    });
    return st;
}

}  // namespace calclab
