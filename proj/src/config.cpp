#include "mmopt/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmopt/rng.hpp"

namespace mmopt::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Strip a trailing comment that is not inside brackets or quotes.
std::string strip_comment(const std::string& s) {
    int depth = 0;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '"') quoted = !quoted;
        if (quoted) continue;
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == '#' && depth == 0) return s.substr(0, i);
    }
    return s;
}

double parse_number(const std::string& sec, const std::string& key, const std::string& tok) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config [" + sec + "] " + key + ": expected a number, got '" + tok +
                          "'");
    }
}

std::vector<std::string> split_top_level(const std::string& body) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (const char c : body) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    const std::string last = trim(cur);
    if (!last.empty()) out.push_back(last);
    return out;
}

}  // namespace

Tree Tree::parse(const std::string& text) {
    Tree t;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section");
            t.data_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any [section]");
        t.data_[section][key] = value;
    }
    return t;
}

Tree Tree::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool Tree::has_section(const std::string& sec) const { return data_.count(sec) > 0; }

bool Tree::has_key(const std::string& sec, const std::string& key) const {
    const auto it = data_.find(sec);
    return it != data_.end() && it->second.count(key) > 0;
}

std::vector<std::string> Tree::sections_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, kv] : data_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

const std::string& Tree::raw(const std::string& sec, const std::string& key) const {
    const auto it = data_.find(sec);
    if (it == data_.end()) throw ConfigError("config: missing section [" + sec + "]");
    const auto jt = it->second.find(key);
    if (jt == it->second.end())
        throw ConfigError("config [" + sec + "]: missing key '" + key + "'");
    return jt->second;
}

double Tree::get_double(const std::string& sec, const std::string& key) const {
    return parse_number(sec, key, raw(sec, key));
}

double Tree::get_double(const std::string& sec, const std::string& key, double fallback) const {
    if (!has_key(sec, key)) return fallback;
    return get_double(sec, key);
}

std::int64_t Tree::get_int(const std::string& sec, const std::string& key,
                           std::int64_t fallback) const {
    if (!has_key(sec, key)) return fallback;
    const double v = get_double(sec, key);
    const auto i = static_cast<std::int64_t>(v);
    if (static_cast<double>(i) != v)
        throw ConfigError("config [" + sec + "] " + key + ": expected an integer");
    return i;
}

bool Tree::get_bool(const std::string& sec, const std::string& key, bool fallback) const {
    if (!has_key(sec, key)) return fallback;
    const std::string& v = raw(sec, key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config [" + sec + "] " + key + ": expected true/false");
}

std::string Tree::get_string(const std::string& sec, const std::string& key) const {
    std::string v = raw(sec, key);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    return v;
}

std::string Tree::get_string(const std::string& sec, const std::string& key,
                             const std::string& fallback) const {
    if (!has_key(sec, key)) return fallback;
    return get_string(sec, key);
}

Eigen::VectorXd Tree::get_vector(const std::string& sec, const std::string& key) const {
    const std::string& v = raw(sec, key);
    if (v.front() != '[' || v.back() != ']') {
        Eigen::VectorXd out(1);
        out[0] = parse_number(sec, key, v);
        return out;
    }
    const auto toks = split_top_level(v.substr(1, v.size() - 2));
    Eigen::VectorXd out(static_cast<Eigen::Index>(toks.size()));
    for (std::size_t i = 0; i < toks.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = parse_number(sec, key, toks[i]);
    return out;
}

Eigen::MatrixXd Tree::get_matrix(const std::string& sec, const std::string& key) const {
    const std::string& v = raw(sec, key);
    if (v.front() != '[' || v.back() != ']')
        throw ConfigError("config [" + sec + "] " + key + ": expected [[...],[...]]");
    const auto rows = split_top_level(v.substr(1, v.size() - 2));
    if (rows.empty()) throw ConfigError("config [" + sec + "] " + key + ": empty matrix");
    std::vector<std::vector<double>> vals;
    for (const auto& r : rows) {
        if (r.size() < 2 || r.front() != '[' || r.back() != ']')
            throw ConfigError("config [" + sec + "] " + key + ": malformed matrix row");
        const auto toks = split_top_level(r.substr(1, r.size() - 2));
        std::vector<double> row;
        row.reserve(toks.size());
        for (const auto& tk : toks) row.push_back(parse_number(sec, key, tk));
        vals.push_back(std::move(row));
    }
    const std::size_t nc = vals.front().size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(vals.size()), static_cast<Eigen::Index>(nc));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i].size() != nc)
            throw ConfigError("config [" + sec + "] " + key + ": ragged matrix rows");
        for (std::size_t j = 0; j < nc; ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vals[i][j];
    }
    return out;
}

std::string Tree::canonical() const {
    std::ostringstream os;
    for (const auto& [name, kv] : data_) {
        os << '[' << name << "]\n";
        for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    }
    return os.str();
}

std::uint64_t Tree::hash() const {
    const std::string c = canonical();
    return fnv1a64(c.data(), c.size());
}

void Tree::set(const std::string& sec, const std::string& key, const std::string& value) {
    data_[sec][key] = value;
}

}  // namespace mmopt::config
