#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mmopt/errors.hpp"

namespace mmopt::csv {

// '.' decimal, 17 significant digits, locale-independent.
inline std::string format(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class Writer {
  public:
    Writer(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw ConfigError("cannot open output file: " + path);
        for (std::size_t i = 0; i < header.size(); ++i)
            out_ << (i ? "," : "") << header[i];
        out_ << "\n";
        columns_ = header.size();
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) throw ConfigError("csv row width mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i)
            out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
    }

    // convenience: leading label cells followed by numeric cells
    void row(const std::vector<std::string>& labels, const std::vector<double>& values) {
        std::vector<std::string> cells = labels;
        for (const double v : values) cells.push_back(format(v));
        row(cells);
    }

  private:
    std::ofstream out_;
    std::size_t columns_ = 0;
};

}  // namespace mmopt::csv
