#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmopt/errors.hpp"

namespace mmopt::config {

// INI-style configuration: [section.subsection] headers, key = value lines,
// '#' comments. Values: numbers, booleans, strings, [a, b, ...] arrays and
// [[...],[...]] matrices.
class Tree {
  public:
    static Tree parse(const std::string& text);
    static Tree parse_file(const std::string& path);

    bool has_section(const std::string& sec) const;
    bool has_key(const std::string& sec, const std::string& key) const;
    std::vector<std::string> sections_with_prefix(const std::string& prefix) const;

    const std::string& raw(const std::string& sec, const std::string& key) const;

    double get_double(const std::string& sec, const std::string& key) const;
    double get_double(const std::string& sec, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& sec, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& sec, const std::string& key, bool fallback) const;
    std::string get_string(const std::string& sec, const std::string& key) const;
    std::string get_string(const std::string& sec, const std::string& key,
                           const std::string& fallback) const;
    Eigen::VectorXd get_vector(const std::string& sec, const std::string& key) const;
    Eigen::MatrixXd get_matrix(const std::string& sec, const std::string& key) const;

    // Canonical serialization: sorted sections and keys, normalized spacing.
    // Stable under parse(canonical()) round trips.
    std::string canonical() const;
    std::uint64_t hash() const;

    void set(const std::string& sec, const std::string& key, const std::string& value);

  private:
    std::map<std::string, std::map<std::string, std::string>> data_;
};

}  // namespace mmopt::config
