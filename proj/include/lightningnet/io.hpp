#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lightningnet/checkpoint.hpp"
#include "lightningnet/datagen.hpp"
#include "lightningnet/errors.hpp"
#include "lightningnet/graph.hpp"

namespace lnet {

// Shortest round-trip decimal form, deterministic across runs.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw data_error("bad number '" + s + "' in " + context);
    return v;
}

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string content_hash(const std::string& data) {
    std::ostringstream os;
    os << std::hex << fnv1a64(data);
    return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::string buf = read_file(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    for (std::size_t i = 0; i <= buf.size(); ++i) {
        if (i == buf.size() || buf[i] == '\n') {
            if (!line.empty()) rows.push_back(split_csv_line(line));
            line.clear();
        } else {
            line.push_back(buf[i]);
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// cells.csv: cell_id,lat,lon
// ---------------------------------------------------------------------------

inline std::string cells_csv(const CellNetwork& net) {
    std::string out = "cell_id,lat,lon\n";
    for (std::size_t i = 0; i < net.size(); ++i)
        out += net.cell_ids[i] + "," + fmt_double(net.lat_deg[i]) + "," +
               fmt_double(net.lon_deg[i]) + "\n";
    return out;
}

inline CellNetwork parse_cells_csv(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"cell_id", "lat", "lon"})
        throw data_error("cells.csv: bad header in " + path);
    CellNetwork net;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 3)
            throw data_error("cells.csv: bad row " + std::to_string(i) + " in " + path);
        net.cell_ids.push_back(rows[i][0]);
        net.lat_deg.push_back(parse_double(rows[i][1], path));
        net.lon_deg.push_back(parse_double(rows[i][2], path));
    }
    return net;
}

// ---------------------------------------------------------------------------
// kpis.csv: cell_id,hour,f0..f{F-1}; empty field = missing
// ---------------------------------------------------------------------------

inline std::string kpis_csv(const KpiPanel& panel) {
    std::string out = "cell_id,hour";
    for (std::size_t f = 0; f < panel.n_features; ++f)
        out += ",f" + std::to_string(f);
    out += "\n";
    for (std::size_t t = 0; t < panel.hours; ++t)
        for (std::size_t m = 0; m < panel.n_cells(); ++m) {
            out += panel.cell_ids[m] + "," + std::to_string(t);
            for (std::size_t f = 0; f < panel.n_features; ++f) {
                out += ",";
                if (panel.observed(t, m, f)) out += fmt_double(panel.at(t, m, f));
            }
            out += "\n";
        }
    return out;
}

inline KpiPanel parse_kpis_csv(const std::string& path,
                               const std::vector<std::string>& cell_order) {
    auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() < 3 || rows[0][0] != "cell_id" ||
        rows[0][1] != "hour")
        throw data_error("kpis.csv: bad header in " + path);
    const std::size_t F = rows[0].size() - 2;
    const std::size_t M = cell_order.size();
    std::size_t T = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::size_t t = static_cast<std::size_t>(parse_double(rows[i][1], path));
        T = std::max(T, t + 1);
    }
    if ((rows.size() - 1) != T * M)
        throw data_error("kpis.csv: expected " + std::to_string(T * M) + " rows, found " +
                         std::to_string(rows.size() - 1));
    KpiPanel panel;
    panel.cell_ids = cell_order;
    panel.hours = T;
    panel.n_features = F;
    panel.kpis.assign(T * M * F, kMissing);
    panel.mask.assign(T * M * F, 0);
    std::map<std::string, std::size_t> cell_index;
    for (std::size_t m = 0; m < M; ++m) cell_index[cell_order[m]] = m;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != F + 2)
            throw data_error("kpis.csv: bad row " + std::to_string(i) + " in " + path);
        auto it = cell_index.find(rows[i][0]);
        if (it == cell_index.end())
            throw data_error("kpis.csv: unknown cell '" + rows[i][0] + "'");
        const std::size_t m = it->second;
        const std::size_t t = static_cast<std::size_t>(parse_double(rows[i][1], path));
        for (std::size_t f = 0; f < F; ++f) {
            const std::string& field = rows[i][2 + f];
            if (field.empty()) continue;
            panel.at(t, m, f) = parse_double(field, path);
            panel.mask[panel.idx(t, m, f)] = 1;
        }
    }
    return panel;
}

// labels.csv: cell_id,hour,hot — ground truth emitted alongside the panel so
// evaluation does not depend on regenerating the clean series.
inline std::string labels_csv(const KpiPanel& panel) {
    std::string out = "cell_id,hour,hot\n";
    for (std::size_t t = 0; t < panel.hours; ++t)
        for (std::size_t m = 0; m < panel.n_cells(); ++m)
            out += panel.cell_ids[m] + "," + std::to_string(t) + "," +
                   std::to_string(static_cast<int>(panel.hot[t][m])) + "\n";
    return out;
}

inline void parse_labels_csv(const std::string& path, KpiPanel& panel) {
    auto rows = read_csv(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"cell_id", "hour", "hot"})
        throw data_error("labels.csv: bad header in " + path);
    panel.hot.assign(panel.hours, std::vector<std::uint8_t>(panel.n_cells(), 0));
    std::map<std::string, std::size_t> cell_index;
    for (std::size_t m = 0; m < panel.n_cells(); ++m) cell_index[panel.cell_ids[m]] = m;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 3)
            throw data_error("labels.csv: bad row " + std::to_string(i));
        auto it = cell_index.find(rows[i][0]);
        if (it == cell_index.end())
            throw data_error("labels.csv: unknown cell '" + rows[i][0] + "'");
        const std::size_t t = static_cast<std::size_t>(parse_double(rows[i][1], path));
        if (t >= panel.hours) throw data_error("labels.csv: hour out of range");
        panel.hot[t][it->second] = rows[i][2] == "1" ? 1 : 0;
    }
}

// ---------------------------------------------------------------------------
// score_config.json
// ---------------------------------------------------------------------------

inline std::string score_config_json(const ScoreConfig& sc) {
    nlohmann::json j{{"weights", sc.weights},
                     {"thresholds", sc.thresholds},
                     {"hot_cutoff", sc.hot_cutoff}};
    return j.dump(2) + "\n";
}

inline ScoreConfig parse_score_config(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ScoreConfig sc;
    sc.weights = j.at("weights").get<std::vector<double>>();
    sc.thresholds = j.at("thresholds").get<std::vector<double>>();
    sc.hot_cutoff = j.at("hot_cutoff");
    return sc;
}

// ---------------------------------------------------------------------------
// manifest.json: content hashes for resumability and tamper detection
// ---------------------------------------------------------------------------

struct Manifest {
    std::string config_hash;
    std::map<std::string, std::string> files; // name -> content hash
};

inline std::string manifest_json(const Manifest& m) {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [name, hash] : m.files) files[name] = hash;
    nlohmann::json j{{"config_hash", m.config_hash}, {"files", files}};
    return j.dump(2) + "\n";
}

inline Manifest parse_manifest(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Manifest m;
    m.config_hash = j.at("config_hash");
    for (const auto& [name, hash] : j.at("files").items())
        m.files[name] = hash.get<std::string>();
    return m;
}

inline Manifest load_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.json";
    if (!std::filesystem::exists(path)) return {};
    try {
        return parse_manifest(read_file(path));
    } catch (const std::exception&) {
        return {};
    }
}

inline void save_manifest(const std::string& dir, const Manifest& m) {
    write_file_atomic(dir + "/manifest.json", manifest_json(m));
}

// Writes only when the on-disk content differs; records the hash either way.
// Returns true if the file was (re)written.
inline bool emit_file(const std::string& dir, const std::string& name,
                      const std::string& content, Manifest& manifest) {
    const std::string path = dir + "/" + name;
    const std::string hash = content_hash(content);
    bool wrote = false;
    if (!std::filesystem::exists(path) || read_file(path) != content) {
        write_file_atomic(path, content);
        wrote = true;
    }
    manifest.files[name] = hash;
    return wrote;
}

// A file is reusable when it exists and its content still matches the
// manifest entry (tamper/partial-write detection).
inline bool file_valid(const std::string& dir, const std::string& name,
                       const Manifest& manifest) {
    auto it = manifest.files.find(name);
    if (it == manifest.files.end()) return false;
    const std::string path = dir + "/" + name;
    if (!std::filesystem::exists(path)) return false;
    return content_hash(read_file(path)) == it->second;
}

} // namespace lnet
