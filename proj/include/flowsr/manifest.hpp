#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowsr {

// FNV-1a of a file's bytes; integrity stamp for run manifests (not
// cryptographic).
std::uint64_t fnv1a_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Reproduction record written next to every artifact-producing CLI run:
// the exact command, the resolved configuration, and input/output hashes.
class ManifestWriter {
public:
    void set(const std::string& key, const std::string& value);
    void add_input(const std::string& path);
    void add_output(const std::string& path);
    void write(const std::string& path) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
};

}  // namespace flowsr
