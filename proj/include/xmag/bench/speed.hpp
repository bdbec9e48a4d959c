#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <limits>

#include "xmag/common.hpp"

// Speed accounting: patch-count geometry, rate/ratio arithmetic, and the
// fixture table (CSV + plot data). Derived columns are always recomputed from
// the raw inputs at emit time; a stored value that disagrees aborts the emit.

namespace xmag::bench {

enum class Mag { x5, x20 };

// Full non-overlapping tiles at the requested magnification. The 5x plane has
// one quarter the linear resolution of the 20x plane.
inline int64_t patch_count(int64_t slide_width_20x, int64_t slide_height_20x, Mag mag, int64_t patch_side = 224) {
    if (slide_width_20x <= 0 || slide_height_20x <= 0) throw ConfigError("slide dimensions must be positive");
    if (patch_side <= 0) throw ConfigError("patch_side must be positive");
    int64_t w = slide_width_20x, h = slide_height_20x;
    if (mag == Mag::x5) {
        w /= 4;
        h /= 4;
    }
    return (w / patch_side) * (h / patch_side);
}

inline double wsis_per_minute(double seconds_per_wsi) {
    if (!(seconds_per_wsi > 0.0)) throw ConfigError("seconds_per_wsi must be positive");
    return round2(60.0 / seconds_per_wsi);
}

inline double speedup(double t_other, double t_self) {
    if (!(t_other > 0.0) || !(t_self > 0.0)) throw ConfigError("speedup times must be positive");
    return round2(t_other / t_self);
}

struct SpeedFixture {
    std::string model;
    int64_t patches_per_wsi = 0;
    double seconds_per_wsi = 0.0;
    // Stored derived values; NaN = not stored (filled at emit time).
    double wsis_per_minute = std::numeric_limits<double>::quiet_NaN();
    double speedup_vs_reference = std::numeric_limits<double>::quiet_NaN();
};

// The Figure 3 accounting rows.
inline std::vector<SpeedFixture> paper_fixtures() {
    return {
        {"XMAG", 554, 6.82, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()},
        {"Phikon", 6260, 54.21, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()},
        {"UNI2", 6260, 201.25, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()},
    };
}

inline std::vector<SpeedFixture> parse_fixture_json(const std::string& text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid fixture file " + origin + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("fixtures") || !j["fixtures"].is_array())
        throw ConfigError("fixture file " + origin + " must be an object with a fixtures array");
    std::vector<SpeedFixture> out;
    for (const auto& row : j["fixtures"]) {
        SpeedFixture f;
        try {
            f.model = row.at("model").get<std::string>();
            f.patches_per_wsi = row.at("patches_per_wsi").get<int64_t>();
            f.seconds_per_wsi = row.at("seconds_per_wsi").get<double>();
            if (row.contains("wsis_per_minute")) f.wsis_per_minute = row["wsis_per_minute"].get<double>();
            if (row.contains("speedup_vs_reference")) f.speedup_vs_reference = row["speedup_vs_reference"].get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("fixture file " + origin + ": bad row: " + e.what());
        }
        if (f.patches_per_wsi <= 0) throw ConfigError("fixture " + f.model + ": patches_per_wsi must be positive");
        if (!(f.seconds_per_wsi > 0.0)) throw ConfigError("fixture " + f.model + ": seconds_per_wsi must be positive");
        out.push_back(std::move(f));
    }
    return out;
}

inline std::vector<SpeedFixture> load_fixture_file(const std::filesystem::path& path) {
    return parse_fixture_json(read_file(path), path.string());
}

namespace detail {

inline std::string fmt_shortest(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

}  // namespace detail

struct SpeedTable {
    std::vector<SpeedFixture> rows;  // derived columns filled
    size_t reference_row = 0;        // min seconds_per_wsi
};

// Fill/verify derived columns. Reference = fastest (min-seconds) row; a row's
// speedup_vs_reference = its seconds / the reference's seconds, so the
// reference row reads 1.00 and slower rows read the factor by which the
// reference outpaces them.
inline SpeedTable resolve_speed_table(std::vector<SpeedFixture> fixtures) {
    if (fixtures.empty()) throw ConfigError("speed table needs at least one fixture");
    size_t ref = 0;
    for (size_t i = 1; i < fixtures.size(); ++i)
        if (fixtures[i].seconds_per_wsi < fixtures[ref].seconds_per_wsi) ref = i;
    const double t_ref = fixtures[ref].seconds_per_wsi;
    for (auto& f : fixtures) {
        const double rate = wsis_per_minute(f.seconds_per_wsi);
        const double sp = speedup(f.seconds_per_wsi, t_ref);
        if (!std::isnan(f.wsis_per_minute) && f.wsis_per_minute != rate)
            throw InvariantError("speed table row " + f.model + ": stored wsis_per_minute " +
                                 fmt_g17(f.wsis_per_minute) + " disagrees with recomputed " + fmt_g17(rate));
        if (!std::isnan(f.speedup_vs_reference) && f.speedup_vs_reference != sp)
            throw InvariantError("speed table row " + f.model + ": stored speedup_vs_reference " +
                                 fmt_g17(f.speedup_vs_reference) + " disagrees with recomputed " + fmt_g17(sp));
        f.wsis_per_minute = rate;
        f.speedup_vs_reference = sp;
    }
    return {std::move(fixtures), ref};
}

// CSV + long-format plot-data file. Both are re-derived and cross-checked.
inline SpeedTable emit_speed_table(const std::vector<SpeedFixture>& fixtures, const std::filesystem::path& csv_path,
                                   const std::filesystem::path& plot_path) {
    const SpeedTable table = resolve_speed_table(fixtures);
    std::string csv = "model,patches_per_wsi,seconds_per_wsi,wsis_per_minute,speedup_vs_reference\n";
    std::string plot = "series,model,value\n";
    for (const auto& f : table.rows) {
        csv += f.model + ',' + std::to_string(f.patches_per_wsi) + ',' + detail::fmt_shortest(f.seconds_per_wsi) +
               ',' + fmt_fixed(f.wsis_per_minute, 2) + ',' + fmt_fixed(f.speedup_vs_reference, 2) + '\n';
        plot += "patches," + f.model + ',' + std::to_string(f.patches_per_wsi) + '\n';
        plot += "seconds," + f.model + ',' + detail::fmt_shortest(f.seconds_per_wsi) + '\n';
        plot += "wsis_per_min," + f.model + ',' + fmt_fixed(f.wsis_per_minute, 2) + '\n';
        plot += "speedup," + f.model + ',' + fmt_fixed(f.speedup_vs_reference, 2) + '\n';
    }
    write_file(csv_path, csv);
    write_file(plot_path, plot);
    return table;
}

inline std::vector<SpeedFixture> parse_speed_csv(const std::string& text) {
    std::vector<SpeedFixture> out;
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        if (header) {
            if (line != "model,patches_per_wsi,seconds_per_wsi,wsis_per_minute,speedup_vs_reference")
                throw IoError("unexpected speed CSV header: " + line);
            header = false;
            continue;
        }
        std::vector<std::string> cells;
        size_t c = 0;
        while (true) {
            size_t comma = line.find(',', c);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(c));
                break;
            }
            cells.push_back(line.substr(c, comma - c));
            c = comma + 1;
        }
        if (cells.size() != 5) throw IoError("speed CSV row has " + std::to_string(cells.size()) + " cells: " + line);
        SpeedFixture f;
        f.model = cells[0];
        f.patches_per_wsi = std::stoll(cells[1]);
        f.seconds_per_wsi = std::stod(cells[2]);
        f.wsis_per_minute = std::stod(cells[3]);
        f.speedup_vs_reference = std::stod(cells[4]);
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace xmag::bench
