#pragma once

#include "subcohort/common.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace subcohort::csv {

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Parses a real number; empty cell yields nullopt, garbage throws ParseError.
inline std::optional<double> parse_optional_double(std::string_view cell, std::size_t line) {
    cell = trim(cell);
    if (cell.empty()) return std::nullopt;
    if (cell == "nan" || cell == "NaN" || cell == "NA") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw ParseError("cannot parse number '" + std::string(cell) + "'", line);
    }
    return v;
}

inline double parse_double(std::string_view cell, std::size_t line) {
    auto v = parse_optional_double(cell, line);
    if (!v) throw ParseError("empty numeric cell", line);
    return *v;
}

inline long long parse_int(std::string_view cell, std::size_t line) {
    cell = trim(cell);
    long long v = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw ParseError("cannot parse integer '" + std::string(cell) + "'", line);
    }
    return v;
}

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines; // source line of each row

    int column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        return -1;
    }
    int require_column(std::string_view name) const {
        const int c = column(name);
        if (c < 0) throw ParseError("missing column '" + std::string(name) + "'", 1);
        return c;
    }
};

inline Table read(std::istream& in) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto trimmed = trim(line);
        if (trimmed.empty()) continue;
        auto cells = split(trimmed);
        for (auto& c : cells) c = std::string(trim(c));
        if (!have_header) {
            if (!cells.empty() && cells[0].size() >= 3 && cells[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
                cells[0].erase(0, 3);
            }
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw ParseError("expected " + std::to_string(t.header.size()) + " fields, found " +
                                 std::to_string(cells.size()),
                             lineno);
        }
        t.rows.push_back(std::move(cells));
        t.lines.push_back(lineno);
    }
    if (!have_header) throw ParseError("empty file: header expected", 1);
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return read(in);
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << cells[i];
    }
    out << '\n';
}

} // namespace subcohort::csv
