#pragma once

#include <json.hpp>

#include <filesystem>
#include <set>
#include <sstream>

#include "xmag/augment.hpp"
#include "xmag/png_io.hpp"

// Dataset manifest: newline-delimited JSON, one record per patch pair, with
// fixed field names. Image paths are stored relative to the manifest root so
// a dataset directory can be moved wholesale.

namespace xmag {

constexpr int kManifestFormatVersion = 1;

struct ManifestRecord {
    std::string slide_id;
    int grid_row = 0, grid_col = 0;
    std::string parent_path;
    std::array<std::string, kChildren> child_paths;
    std::string lowmag_path;
    int slide_label = 0;
    std::vector<int64_t> region_label_histogram;

    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    int format_version = kManifestFormatVersion;

    bool operator==(const Manifest&) const = default;
};

inline std::string serialize_manifest(const Manifest& m) {
    std::string out;
    for (const ManifestRecord& r : m.records) {
        nlohmann::json j;
        j["slide_id"] = r.slide_id;
        j["grid_row"] = r.grid_row;
        j["grid_col"] = r.grid_col;
        j["parent_path"] = r.parent_path;
        j["child_paths"] = r.child_paths;
        j["lowmag_path"] = r.lowmag_path;
        j["slide_label"] = r.slide_label;
        j["region_label_histogram"] = r.region_label_histogram;
        j["format_version"] = m.format_version;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline Manifest parse_manifest(const std::string& text) {
    Manifest m;
    std::set<std::tuple<std::string, int, int>> keys;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        ManifestRecord r;
        try {
            r.slide_id = j.at("slide_id").get<std::string>();
            r.grid_row = j.at("grid_row").get<int>();
            r.grid_col = j.at("grid_col").get<int>();
            r.parent_path = j.at("parent_path").get<std::string>();
            const auto& cp = j.at("child_paths");
            if (!cp.is_array() || cp.size() != kChildren)
                throw IoError("manifest line " + std::to_string(line_no) + ": child_paths must have 16 entries");
            for (int i = 0; i < kChildren; ++i) r.child_paths[i] = cp[i].get<std::string>();
            r.lowmag_path = j.at("lowmag_path").get<std::string>();
            r.slide_label = j.at("slide_label").get<int>();
            r.region_label_histogram = j.at("region_label_histogram").get<std::vector<int64_t>>();
            const int fv = j.at("format_version").get<int>();
            if (fv != kManifestFormatVersion)
                throw IoError("manifest line " + std::to_string(line_no) + ": unsupported format_version " +
                              std::to_string(fv));
            m.format_version = fv;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!keys.insert({r.slide_id, r.grid_row, r.grid_col}).second)
            throw InvariantError("duplicate manifest key (" + r.slide_id + ", " + std::to_string(r.grid_row) + ", " +
                                 std::to_string(r.grid_col) + ")");
        m.records.push_back(std::move(r));
    }
    return m;
}

inline std::string pair_stub(const PyramidPatchPair& p) {
    return p.slide_id + "/r" + std::to_string(p.grid_row) + "_c" + std::to_string(p.grid_col);
}

// Persist every image of `pairs` under root/images/ and the manifest at
// root/manifest.jsonl. Returns the manifest (paths relative to root).
inline Manifest build_manifest(const std::vector<PyramidPatchPair>& pairs, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    Manifest m;
    std::set<std::tuple<std::string, int, int>> keys;
    for (const PyramidPatchPair& p : pairs) {
        if (!keys.insert({p.slide_id, p.grid_row, p.grid_col}).second)
            throw InvariantError("duplicate pair key " + pair_stub(p));
        const std::string stub = "images/" + pair_stub(p);
        ensure_dir(root / "images" / p.slide_id);
        ManifestRecord r;
        r.slide_id = p.slide_id;
        r.grid_row = p.grid_row;
        r.grid_col = p.grid_col;
        r.slide_label = p.slide_label;
        r.region_label_histogram = p.region_histogram;
        r.parent_path = stub + "_parent.png";
        png::write(root / r.parent_path, p.parent_20x);
        for (int i = 0; i < kChildren; ++i) {
            r.child_paths[i] = stub + "_child" + (i < 10 ? "0" : "") + std::to_string(i) + ".png";
            png::write(root / r.child_paths[i], p.children_20x[i]);
        }
        r.lowmag_path = stub + "_lowmag.png";
        png::write(root / r.lowmag_path, p.patch_5x);
        m.records.push_back(std::move(r));
    }
    write_file(root / "manifest.jsonl", serialize_manifest(m));
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    Manifest m = parse_manifest(read_file(path));
    return m;
}

// Re-hydrate one record's images from disk.
inline PyramidPatchPair load_pair(const ManifestRecord& r, const std::filesystem::path& root) {
    PyramidPatchPair p;
    p.parent_20x = png::read(root / r.parent_path);
    for (int i = 0; i < kChildren; ++i) p.children_20x[i] = png::read(root / r.child_paths[i]);
    p.patch_5x = png::read(root / r.lowmag_path);
    p.grid_row = r.grid_row;
    p.grid_col = r.grid_col;
    p.slide_id = r.slide_id;
    p.slide_label = r.slide_label;
    p.region_histogram = r.region_label_histogram;
    return p;
}

// Invariant check: every referenced file exists under root.
inline void verify_manifest_files(const Manifest& m, const std::filesystem::path& root) {
    auto need = [&](const std::string& rel) {
        if (!std::filesystem::exists(root / rel)) throw IoError("manifest references missing file: " + rel);
    };
    for (const ManifestRecord& r : m.records) {
        need(r.parent_path);
        for (const std::string& c : r.child_paths) need(c);
        need(r.lowmag_path);
    }
}

}  // namespace xmag
