#include "flowsr/manifest.hpp"

#include <fstream>
#include <sstream>

#include "flowsr/errors.hpp"

namespace flowsr {

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("manifest: cannot hash missing file '" + path + "'");
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!is) {
            break;
        }
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void ManifestWriter::set(const std::string& key, const std::string& value) {
    entries_.emplace_back(key, value);
}

void ManifestWriter::add_input(const std::string& path) {
    inputs_.push_back(path);
}

void ManifestWriter::add_output(const std::string& path) {
    outputs_.push_back(path);
}

void ManifestWriter::write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("manifest: cannot open '" + path + "' for writing");
    }
    os << "[manifest]\n";
    for (const auto& [k, v] : entries_) {
        os << k << " = " << v << "\n";
    }
    os << "\n[inputs]\n";
    for (const auto& p : inputs_) {
        os << p << " = " << hash_hex(fnv1a_file(p)) << "\n";
    }
    os << "\n[outputs]\n";
    for (const auto& p : outputs_) {
        os << p << " = " << hash_hex(fnv1a_file(p)) << "\n";
    }
}

}  // namespace flowsr
