#include "gesc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "gesc/errors.hpp"

namespace gesc::ckpt {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'S', 'C', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) {
        throw DataError("parse", "checkpoint truncated");
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

std::string get_string(std::istream& in, std::size_t n) {
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw DataError("parse", "checkpoint truncated");
    }
    return s;
}

}  // namespace

void save(const std::filesystem::path& path, const config::RunConfig& cfg,
          const model::ModelParams& params) {
    auto& p = const_cast<model::ModelParams&>(params);
    nlohmann::ordered_json meta;
    meta["config"] = config::to_json(cfg);
    meta["input_dim"] = p.input_dim();
    meta["num_classes"] = p.num_classes();
    meta["num_edges"] = p.layers.empty() ? 0 : p.layers.front().theta.size();
    const std::string blob = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("io", "cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    const auto tensors = p.tensors();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint64_t>(out, t.data.size());
    }
    for (const auto& t : tensors) {
        for (double v : t.data) put<double>(out, v);
    }
    if (!out) throw DataError("io", "write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing-file", "cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("parse", path.string() + " is not a GESC checkpoint");
    }
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) {
        throw DataError("parse", "unsupported checkpoint version " + std::to_string(version));
    }
    const auto blob = get_string(in, get<std::uint32_t>(in));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(blob);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("parse", std::string("checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    ck.config = config::from_json(meta.at("config"));
    Rng dummy(0);
    ck.params = model::ModelParams::init(ck.config.model, meta.at("input_dim").get<std::size_t>(),
                                         meta.at("num_classes").get<std::size_t>(),
                                         meta.at("num_edges").get<std::size_t>(), dummy);
    auto tensors = ck.params.tensors();
    const auto count = get<std::uint32_t>(in);
    if (count != tensors.size()) {
        throw DimensionError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                             std::to_string(tensors.size()));
    }
    for (const auto& t : tensors) {
        const auto name = get_string(in, get<std::uint32_t>(in));
        const auto n = get<std::uint64_t>(in);
        if (name != t.name || n != t.data.size()) {
            throw DimensionError("checkpoint tensor '" + name + "' does not match expected '" +
                                 t.name + "'");
        }
    }
    for (auto& t : tensors) {
        for (double& v : t.data) v = get<double>(in);
    }
    return ck;
}

}  // namespace gesc::ckpt
