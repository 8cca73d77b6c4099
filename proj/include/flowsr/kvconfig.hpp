#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace flowsr {

// Plain-text "key = value" document with [section] headers. '#' starts a
// comment. Parsing keeps order; lookups are strict so unknown keys can be
// rejected by callers.
class KvDoc {
public:
    static KvDoc parse(const std::string& text);
    static KvDoc parse_file(const std::string& path);

    bool has_section(const std::string& section) const;
    std::vector<std::string> section_names() const;
    // Keys of one section in file order.
    const std::vector<std::pair<std::string, std::string>>& section(
        const std::string& section) const;

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;

    double get_double(const std::string& section, const std::string& key) const;
    double get_double_or(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key) const;
    std::int64_t get_int_or(const std::string& section, const std::string& key,
                            std::int64_t fallback) const;
    std::uint64_t get_u64_or(const std::string& section, const std::string& key,
                             std::uint64_t fallback) const;

    std::string dump() const;
    void set(const std::string& section, const std::string& key, const std::string& value);

    // Strictness helpers: throw ConfigError on keys/sections outside the
    // allowed sets.
    void require_known_keys(const std::string& section, const std::set<std::string>& known) const;
    void require_known_sections(const std::set<std::string>& known) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections_;
};

std::vector<double> parse_double_list(const std::string& csv);
std::vector<int> parse_int_list(const std::string& csv);
std::string format_double(double v);  // shortest round-trip, locale-independent

}  // namespace flowsr
