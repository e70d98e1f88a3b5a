#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddsense/errors.hpp"
#include "ddsense/fit.hpp"
#include "ddsense/sweep.hpp"
#include "ddsense/version.hpp"

namespace ddsense {

// 17 significant digits: enough to round-trip any double exactly.
inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// GridResult emission.  Both formats embed the resolved config, so any output
// file can be re-run as-is; only the timestamp line varies between reruns.

inline void write_grid_csv(const GridResult& g, std::ostream& os,
                           const std::string& timestamp) {
    os << "# ddsense " << version << "\n";
    os << "# timestamp: " << timestamp << "\n";
    os << "# config: " << g.metadata.value("config", nlohmann::json::object()).dump()
       << "\n";
    for (size_t a = 0; a < g.axes.size(); ++a)
        os << csv_field(g.axes[a].name) << (a + 1 < g.axes.size() ? "," : "");
    for (const auto& name : g.value_names)
        os << "," << csv_field(name);
    os << "\n";

    if (g.axes.size() == 1) {
        for (size_t i = 0; i < g.axis_values[0].size(); ++i) {
            os << format_full(g.axis_values[0][i]);
            for (const auto& col : g.values)
                os << "," << format_full(col[i]);
            os << "\n";
        }
    } else {
        const size_t n1 = g.axis_values[1].size();
        for (size_t i = 0; i < g.axis_values[0].size(); ++i) {
            for (size_t j = 0; j < n1; ++j) {
                os << format_full(g.axis_values[0][i]) << ","
                   << format_full(g.axis_values[1][j]);
                for (const auto& col : g.values)
                    os << "," << format_full(col[i * n1 + j]);
                os << "\n";
            }
        }
    }
}

inline nlohmann::json grid_to_json(const GridResult& g, const std::string& timestamp) {
    nlohmann::json j = g.metadata;
    j["timestamp"] = timestamp;
    j["axes"] = nlohmann::json::array();
    for (size_t a = 0; a < g.axes.size(); ++a)
        j["axes"].push_back({{"name", g.axes[a].name}, {"values", g.axis_values[a]}});
    j["columns"] = g.value_names;
    nlohmann::json vals = nlohmann::json::object();
    for (size_t c = 0; c < g.value_names.size(); ++c)
        vals[g.value_names[c]] = g.values[c];
    j["values"] = vals;
    return j;
}

inline void write_grid(const GridResult& g, const std::string& path,
                       const std::string& format, const std::string& timestamp) {
    std::ofstream os(path);
    if (!os)
        throw invalid_input("cannot open output file '" + path + "'");
    if (format == "csv")
        write_grid_csv(g, os, timestamp);
    else if (format == "json")
        os << grid_to_json(g, timestamp).dump(2) << "\n";
    else
        throw invalid_input("unknown output format '" + format + "'");
}

// ---------------------------------------------------------------------------
// CSV ingestion for the fit pipeline: header naming x,y(,sigma) columns,
// comma separated, '#' comment lines ignored.  Rows are stably sorted by x;
// duplicate x values are rejected.

namespace detail {

inline double parse_number(const std::string& field, size_t line_no) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t'))
        ++begin;
    while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r'))
        --end;
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw invalid_input("line " + std::to_string(line_no) + ": cannot parse '"
                            + field + "' as a number");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace detail

inline DataSeries ingest_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw invalid_input("cannot open '" + path + "'");

    DataSeries data;
    std::string line;
    size_t line_no = 0;
    size_t ncols = 0;
    bool header_seen = false;
    std::vector<std::tuple<double, double, double>> rows;

    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        const auto fields = detail::split_csv_line(line);
        if (!header_seen) {
            if (fields.size() != 2 && fields.size() != 3)
                throw invalid_input("line " + std::to_string(line_no)
                                    + ": header must name x,y or x,y,sigma columns");
            ncols = fields.size();
            header_seen = true;
            continue;
        }
        if (fields.size() != ncols)
            throw invalid_input("line " + std::to_string(line_no) + ": expected "
                                + std::to_string(ncols) + " fields, got "
                                + std::to_string(fields.size()));
        const double x = detail::parse_number(fields[0], line_no);
        const double y = detail::parse_number(fields[1], line_no);
        const double s = ncols == 3 ? detail::parse_number(fields[2], line_no) : 0.0;
        rows.emplace_back(x, y, s);
    }
    if (!header_seen)
        throw invalid_input("empty file: no header row");

    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    for (size_t i = 1; i < rows.size(); ++i)
        if (std::get<0>(rows[i]) == std::get<0>(rows[i - 1]))
            throw invalid_input("duplicate x value "
                                + format_full(std::get<0>(rows[i])));

    for (const auto& [x, y, s] : rows) {
        data.x.push_back(x);
        data.y.push_back(y);
        if (ncols == 3)
            data.sigma.push_back(s);
    }
    data.validate();
    return data;
}

} // namespace ddsense
