#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {

// Minimal CSV: no quoting (none of our fields need it), '\n' rows. Numbers
// are emitted with %.17g so parse -> emit round-trips byte-identically.

inline std::string csv_num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    for (char ch : text) {
        if (ch == '\r') continue;
        if (ch == ',') {
            row.push_back(cell);
            cell.clear();
        } else if (ch == '\n') {
            row.push_back(cell);
            cell.clear();
            rows.push_back(row);
            row.clear();
        } else {
            cell += ch;
        }
    }
    if (!cell.empty() || !row.empty()) {
        row.push_back(cell);
        rows.push_back(row);
    }
    return rows;
}

inline std::string emit_csv(const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += row[i];
        }
        out += '\n';
    }
    return out;
}

inline double parse_num(const std::string& cell, const std::string& context) {
    try {
        size_t pos = 0;
        double v = std::stod(cell, &pos);
        require(pos == cell.size(), Err::MalformedRow, "trailing junk in " + context);
        return v;
    } catch (const Error&) {
        throw;
    } catch (...) {
        raise(Err::MalformedRow, "not a number: '" + cell + "' in " + context);
    }
}

}  // namespace steerlab
