#include "mmopt/manifest.hpp"

#include <fstream>

#include "mmopt/errors.hpp"
#include <json.hpp>

namespace mmopt {

void RunManifest::write(const std::string& path) const {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["subcommand"] = subcommand;
    j["config_path"] = config_path;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["grid_steps"] = grid_steps;
    j["paths"] = paths;
    j["workers"] = workers;
    j["flags"] = flags;
    j["outputs"] = outputs;
    j["duration_seconds"] = duration_seconds;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace mmopt
