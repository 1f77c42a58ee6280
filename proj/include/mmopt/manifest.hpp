#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mmopt {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Machine-readable record of one CLI run: everything needed to re-execute
// bit-identically, plus the produced files and the wall-clock duration.
struct RunManifest {
    std::string subcommand;
    std::string config_path;
    std::string config_hash;  // hex FNV-1a of the canonical config
    std::uint64_t seed = 0;
    int grid_steps = 0;
    int paths = 0;
    int workers = 0;
    std::map<std::string, std::string> flags;
    std::vector<std::string> outputs;
    double duration_seconds = 0.0;

    void write(const std::string& path) const;
};

}  // namespace mmopt
