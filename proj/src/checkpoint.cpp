#include "aga/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "aga/error.hpp"

namespace aga {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'G', 'A', 'C', 'K', 'P', 'T', '\0'};

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::ifstream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::string read_string(std::ifstream& in) {
    uint64_t n = read_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void write_model(std::ofstream& out, const Model& model, const std::string& prefix) {
    model.visit_params([&](const std::string& name, const Tensor& t) {
        write_string(out, prefix + name);
        write_u32(out, static_cast<uint32_t>(t.shape().size()));
        for (size_t d : t.shape()) write_u64(out, d);
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    });
}

} // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, const ModelPair& pair) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);

    json header;
    header["config"] = json::parse(config.to_json_text());
    header["runtime"] = {{"vocab_size", pair.online.config.vocab_size},
                         {"momentum_coefficient", pair.momentum_coefficient}};
    std::string header_text = header.dump();

    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kCheckpointFormatVersion);
    write_string(out, header_text);

    size_t params = 0;
    pair.online.visit_params([&](const std::string&, const Tensor&) { ++params; });
    write_u64(out, params * 2);
    write_model(out, pair.online, "online.");
    write_model(out, pair.momentum, "momentum.");
    if (!out) throw IoError("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot read " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw IoError("checkpoint: " + path + " is not a checkpoint file");
    uint32_t version = read_u32(in);
    if (version != kCheckpointFormatVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));

    json header;
    try {
        header = json::parse(read_string(in));
    } catch (const json::exception&) {
        throw IoError("checkpoint: corrupt header in " + path);
    }

    Checkpoint ckpt;
    ckpt.config = RunConfig::from_json_text(header.at("config").dump());
    ckpt.vocab_size = header.at("runtime").at("vocab_size").get<size_t>();

    EncoderConfig enc = ckpt.config.encoder;
    enc.vocab_size = ckpt.vocab_size;
    enc.patch_grid = ckpt.config.corpus.patch_grid;
    enc.patch_dim = ckpt.config.corpus.patch_dim;
    Rng scratch(0);
    ckpt.pair = ModelPair::init(enc, scratch,
                                header.at("runtime").at("momentum_coefficient").get<double>());

    // index both models' parameters by name
    std::unordered_map<std::string, Tensor*> by_name;
    ckpt.pair.online.visit_params(
        [&](const std::string& name, Tensor& t) { by_name["online." + name] = &t; });
    ckpt.pair.momentum.visit_params(
        [&](const std::string& name, Tensor& t) { by_name["momentum." + name] = &t; });

    uint64_t count = read_u64(in);
    if (count != by_name.size())
        throw IoError("checkpoint: parameter count mismatch in " + path);
    for (uint64_t k = 0; k < count; ++k) {
        std::string name = read_string(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unknown parameter '" + name + "'");
        uint32_t rank = read_u32(in);
        std::vector<size_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = read_u64(in);
        if (shape != it->second->shape())
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(it->second->data().data()),
                static_cast<std::streamsize>(it->second->numel() * sizeof(double)));
        if (!in) throw IoError("checkpoint: truncated file " + path);
    }
    return ckpt;
}

} // namespace aga
