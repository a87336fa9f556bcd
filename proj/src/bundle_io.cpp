#include "gesc/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gesc/errors.hpp"

namespace gesc::io {

using graph::Dataset;
using graph::Edge;
using nlohmann::json;

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "features.bin is read and written as native little-endian float64");

namespace {

std::ifstream open_input(const fs::path& p, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(p, mode);
    if (!in) throw DataError("missing-file", p.string());
    return in;
}

std::size_t get_count(const json& manifest, const char* key) {
    if (!manifest.contains(key) || !manifest[key].is_number_integer()) {
        throw DataError("manifest", std::string("missing integer field '") + key + "'");
    }
    const auto v = manifest[key].get<long long>();
    if (v < 0) throw DataError("manifest", std::string("negative '") + key + "'");
    return static_cast<std::size_t>(v);
}

std::string file_name(const json& manifest, const char* key, const char* fallback) {
    if (manifest.contains("files") && manifest["files"].contains(key)) {
        return manifest["files"][key].get<std::string>();
    }
    return fallback;
}

graph::NodeMask mask_from_ids(const json& ids, std::size_t n, const char* name) {
    graph::NodeMask m(n, 0);
    for (const auto& v : ids) {
        const auto i = v.get<long long>();
        if (i < 0 || static_cast<std::size_t>(i) >= n) {
            throw DataError("split", std::string(name) + " references node " + std::to_string(i));
        }
        m[static_cast<std::size_t>(i)] = 1;
    }
    return m;
}

json ids_from_mask(const graph::NodeMask& m) {
    json ids = json::array();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) ids.push_back(i);
    }
    return ids;
}

}  // namespace

Dataset load_bundle(const fs::path& dir) {
    json manifest;
    {
        auto in = open_input(dir / "manifest.json");
        try {
            in >> manifest;
        } catch (const json::exception& e) {
            throw DataError("manifest", e.what());
        }
    }
    if (manifest.value("format_version", 0) != 1) {
        throw DataError("manifest", "unsupported format_version");
    }
    const std::size_t n = get_count(manifest, "num_nodes");
    const std::size_t num_edges = get_count(manifest, "num_edges");
    const std::size_t d_in = get_count(manifest, "feature_dim");
    const std::size_t num_classes = get_count(manifest, "num_classes");

    Dataset d;
    d.num_classes = static_cast<int>(num_classes);

    // features.bin
    {
        const fs::path p = dir / file_name(manifest, "features", "features.bin");
        auto in = open_input(p, std::ios::binary);
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(in.tellg());
        in.seekg(0);
        if (bytes != n * d_in * sizeof(double)) {
            const std::size_t per_row = n ? bytes / sizeof(double) / n : 0;
            throw DimensionError("features.bin holds " + std::to_string(bytes / sizeof(double)) +
                                 " values (" + std::to_string(per_row) +
                                 " per node) but manifest declares N=" + std::to_string(n) +
                                 ", d_in=" + std::to_string(d_in));
        }
        d.features = graph::RealMatrix(n, d_in);
        in.read(reinterpret_cast<char*>(d.features.data.data()),
                static_cast<std::streamsize>(bytes));
    }

    // edges.csv
    std::vector<Edge> edges;
    {
        auto in = open_input(dir / file_name(manifest, "edges", "edges.csv"));
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            long long a = -1, b = -1;
            char comma = 0;
            std::istringstream ss(line);
            if (!(ss >> a >> comma >> b) || comma != ',' || a < 0 || b < 0) {
                throw DataError("parse", "edges.csv line " + std::to_string(lineno));
            }
            edges.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
        }
    }
    if (edges.size() != num_edges) {
        throw DimensionError("edges.csv has " + std::to_string(edges.size()) +
                             " edges but manifest declares " + std::to_string(num_edges));
    }
    d.graph = graph::Graph::build(n, std::move(edges));

    // labels.csv
    {
        auto in = open_input(dir / file_name(manifest, "labels", "labels.csv"));
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            std::istringstream ss(line);
            long long y;
            if (!(ss >> y)) throw DataError("parse", "labels.csv line " + std::to_string(lineno));
            d.labels.push_back(static_cast<std::int32_t>(y));
        }
    }
    if (d.labels.size() != n) {
        throw DimensionError("labels.csv has " + std::to_string(d.labels.size()) +
                             " entries but manifest declares N=" + std::to_string(n));
    }

    const std::string splits_name = file_name(manifest, "splits", "splits.json");
    if (fs::exists(dir / splits_name)) {
        json splits;
        auto in = open_input(dir / splits_name);
        try {
            in >> splits;
        } catch (const json::exception& e) {
            throw DataError("split", e.what());
        }
        d.train_mask = mask_from_ids(splits.value("train", json::array()), n, "train");
        d.val_mask = mask_from_ids(splits.value("val", json::array()), n, "val");
        d.test_mask = mask_from_ids(splits.value("test", json::array()), n, "test");
    }

    d.validate();
    return d;
}

void save_bundle(const Dataset& d, const fs::path& dir) {
    d.validate();
    fs::create_directories(dir);
    json manifest = {
        {"format_version", 1},
        {"num_nodes", d.num_nodes()},
        {"num_edges", d.graph.num_edges()},
        {"feature_dim", d.feature_dim()},
        {"num_classes", d.num_classes},
        {"files", {{"features", "features.bin"}, {"edges", "edges.csv"}, {"labels", "labels.csv"}}},
    };
    if (d.has_splits()) manifest["files"]["splits"] = "splits.json";

    auto open_output = [](const fs::path& p, std::ios::openmode mode = std::ios::out) {
        std::ofstream out(p, mode | std::ios::trunc);
        if (!out) throw DataError("io", "cannot write " + p.string());
        return out;
    };

    open_output(dir / "manifest.json") << manifest.dump(2) << "\n";
    {
        auto out = open_output(dir / "features.bin", std::ios::binary);
        out.write(reinterpret_cast<const char*>(d.features.data.data()),
                  static_cast<std::streamsize>(d.features.data.size() * sizeof(double)));
    }
    {
        auto out = open_output(dir / "edges.csv");
        for (const Edge& e : d.graph.edges()) out << e.a << ',' << e.b << '\n';
    }
    {
        auto out = open_output(dir / "labels.csv");
        for (auto y : d.labels) out << y << '\n';
    }
    if (d.has_splits()) {
        json splits = {{"train", ids_from_mask(d.train_mask)},
                       {"val", ids_from_mask(d.val_mask)},
                       {"test", ids_from_mask(d.test_mask)}};
        open_output(dir / "splits.json") << splits.dump() << "\n";
    }
}

Dataset load_content_cites(const fs::path& content, const fs::path& cites,
                           std::vector<std::string>* warnings) {
    auto warn = [&](std::string msg) {
        if (warnings) warnings->push_back(std::move(msg));
    };

    std::unordered_map<std::string, std::uint32_t> index;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> label_names;
    std::size_t d_in = 0;
    {
        auto in = open_input(content);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::istringstream ss(line);
            std::vector<std::string> tok;
            for (std::string t; ss >> t;) tok.push_back(std::move(t));
            if (tok.empty()) continue;
            if (tok.size() < 2) {
                throw DataError("parse", content.string() + " line " + std::to_string(lineno) +
                                             ": expected id, features, label");
            }
            const std::size_t this_d = tok.size() - 2;
            if (rows.empty()) {
                d_in = this_d;
            } else if (this_d != d_in) {
                throw DataError("parse", content.string() + " line " + std::to_string(lineno) +
                                             ": " + std::to_string(this_d) + " features, expected " +
                                             std::to_string(d_in));
            }
            std::vector<double> row(d_in);
            for (std::size_t k = 0; k < d_in; ++k) {
                const std::string& t = tok[k + 1];
                char* end = nullptr;
                row[k] = std::strtod(t.c_str(), &end);
                if (end != t.c_str() + t.size()) {
                    throw DataError("parse", content.string() + " line " + std::to_string(lineno) +
                                                 ": bad feature '" + t + "'");
                }
            }
            if (!index.emplace(tok.front(), static_cast<std::uint32_t>(rows.size())).second) {
                throw DataError("parse", content.string() + " line " + std::to_string(lineno) +
                                             ": duplicate id '" + tok.front() + "'");
            }
            rows.push_back(std::move(row));
            label_names.push_back(tok.back());
        }
    }

    std::set<std::string> distinct(label_names.begin(), label_names.end());
    std::map<std::string, std::int32_t> class_of;
    for (const auto& name : distinct) {
        class_of.emplace(name, static_cast<std::int32_t>(class_of.size()));
    }

    Dataset d;
    const std::size_t n = rows.size();
    d.features = graph::RealMatrix(n, d_in);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(rows[i].begin(), rows[i].end(), d.features.data.begin() +
                                                      static_cast<std::ptrdiff_t>(i * d_in));
        d.labels.push_back(class_of.at(label_names[i]));
    }
    d.num_classes = static_cast<int>(class_of.size());

    std::vector<Edge> edges;
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    {
        auto in = open_input(cites);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::istringstream ss(line);
            std::string cited, citing;
            if (!(ss >> cited)) continue;
            if (!(ss >> citing)) {
                throw DataError("parse", cites.string() + " line " + std::to_string(lineno) +
                                             ": expected two ids");
            }
            const auto a = index.find(cited);
            const auto b = index.find(citing);
            if (a == index.end() || b == index.end()) {
                warn("line " + std::to_string(lineno) + ": unknown id '" +
                     (a == index.end() ? cited : citing) + "', skipped");
                continue;
            }
            if (a->second == b->second) {
                warn("line " + std::to_string(lineno) + ": self-citation of '" + cited +
                     "' dropped");
                continue;
            }
            const auto lo = std::min(a->second, b->second);
            const auto hi = std::max(a->second, b->second);
            if (seen.emplace(lo, hi).second) edges.push_back({lo, hi});
        }
    }
    d.graph = graph::Graph::build(n, std::move(edges));
    d.validate();
    return d;
}

}  // namespace gesc::io
