#include "flowsr/kvconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowsr/errors.hpp"

namespace flowsr {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KvDoc KvDoc::parse(const std::string& text) {
    KvDoc doc;
    std::istringstream is(text);
    std::string line;
    std::string current;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            }
            current = trim(line.substr(1, line.size() - 2));
            if (current.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            }
            if (!doc.sections_.count(current)) {
                doc.order_.push_back(current);
                doc.sections_[current] = {};
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (current.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any [section]");
        }
        for (const auto& [k, v] : doc.sections_[current]) {
            if (k == key) {
                throw ConfigError("config: duplicate key '" + key + "' in [" + current + "]");
            }
        }
        doc.sections_[current].emplace_back(key, value);
    }
    return doc;
}

KvDoc KvDoc::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("config: cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

bool KvDoc::has_section(const std::string& section) const {
    return sections_.count(section) != 0;
}

std::vector<std::string> KvDoc::section_names() const {
    return order_;
}

const std::vector<std::pair<std::string, std::string>>& KvDoc::section(
    const std::string& section) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) {
        throw ConfigError("config: missing section [" + section + "]");
    }
    return it->second;
}

bool KvDoc::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) {
        return false;
    }
    for (const auto& [k, v] : it->second) {
        if (k == key) {
            return true;
        }
    }
    return false;
}

std::string KvDoc::get(const std::string& section, const std::string& key) const {
    for (const auto& [k, v] : this->section(section)) {
        if (k == key) {
            return v;
        }
    }
    throw ConfigError("config: missing key '" + key + "' in [" + section + "]");
}

std::string KvDoc::get_or(const std::string& section, const std::string& key,
                          const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

namespace {

double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + what + "' is not a number: '" + s + "'");
    }
}

std::int64_t to_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + what + "' is not an integer: '" + s + "'");
    }
}

}  // namespace

double KvDoc::get_double(const std::string& section, const std::string& key) const {
    return to_double(get(section, key), section + "." + key);
}

double KvDoc::get_double_or(const std::string& section, const std::string& key,
                            double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
}

std::int64_t KvDoc::get_int(const std::string& section, const std::string& key) const {
    return to_int(get(section, key), section + "." + key);
}

std::int64_t KvDoc::get_int_or(const std::string& section, const std::string& key,
                               std::int64_t fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
}

std::uint64_t KvDoc::get_u64_or(const std::string& section, const std::string& key,
                                std::uint64_t fallback) const {
    if (!has(section, key)) {
        return fallback;
    }
    return static_cast<std::uint64_t>(get_int(section, key));
}

std::string KvDoc::dump() const {
    std::ostringstream os;
    for (const auto& name : order_) {
        os << "[" << name << "]\n";
        for (const auto& [k, v] : sections_.at(name)) {
            os << k << " = " << v << "\n";
        }
        os << "\n";
    }
    return os.str();
}

void KvDoc::set(const std::string& section, const std::string& key, const std::string& value) {
    if (!sections_.count(section)) {
        order_.push_back(section);
        sections_[section] = {};
    }
    for (auto& [k, v] : sections_[section]) {
        if (k == key) {
            v = value;
            return;
        }
    }
    sections_[section].emplace_back(key, value);
}

void KvDoc::require_known_keys(const std::string& section,
                               const std::set<std::string>& known) const {
    if (!has_section(section)) {
        return;
    }
    for (const auto& [k, v] : this->section(section)) {
        if (!known.count(k)) {
            throw ConfigError("config: unknown key '" + k + "' in [" + section + "]");
        }
    }
}

void KvDoc::require_known_sections(const std::set<std::string>& known) const {
    for (const auto& name : order_) {
        if (!known.count(name)) {
            throw ConfigError("config: unknown section [" + name + "]");
        }
    }
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ',')) {
        out.push_back(to_double(token, "list entry"));
    }
    if (out.empty()) {
        throw ConfigError("config: empty numeric list");
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ',')) {
        out.push_back(static_cast<int>(to_int(token, "list entry")));
    }
    if (out.empty()) {
        throw ConfigError("config: empty integer list");
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace flowsr
