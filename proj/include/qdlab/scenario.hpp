#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdlab/coefficients.hpp"
#include "qdlab/sde_engine.hpp"

namespace qdlab {

/// Experiments understood by run_scenario.
const std::vector<std::string>& known_experiments();

/// One seeded experiment, as read from a `key = value` config with the
/// sections [scenario], [field], [sim] and [parameters].
struct Scenario {
    std::string name;
    std::string experiment;
    std::string description;
    std::vector<std::string> tags;
    EllipticityCertificate certificate;
    FieldDescriptor field;
    SimConfig sim;
    std::map<std::string, std::string> parameters;
    std::string output;

    bool operator==(const Scenario& o) const;
};

/// Throws ParseError (with the line number when one applies).
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical text form: fixed section order, sorted keys, 17 significant digits.
/// parse_scenario(serialize_scenario(s)) == s.
std::string serialize_scenario(const Scenario& s);

/// FNV-1a 64 of the canonical form, as 16 hex digits.
std::string config_hash(const Scenario& s);

// ---------------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 2;
inline constexpr int kExitWarnings = 3;

struct RunOptions {
    std::optional<std::uint64_t> seed;
    int workers = 0;  ///< 0: default_workers()
    std::optional<std::filesystem::path> out;
    bool dump_paths = false;
    /// Replaces the wall-clock timestamp in report.json when set.
    std::optional<std::string> timestamp;
};

struct RunResult {
    int exit_status = kExitOk;
    std::filesystem::path output_dir;
    std::vector<std::string> warnings;
    std::string error;  ///< set when exit_status == kExitFailure
};

/// Validates the field, runs the experiment and writes report.json,
/// summary.txt and the tab-separated plot data into the output directory.
/// Library errors become exit status 2; warnings become 3.
RunResult run_scenario(const Scenario& scenario, const RunOptions& options = {});

// ---------------------------------------------------------------------------

struct CatalogEntry {
    std::string name;
    std::string description;
    std::vector<std::string> tags;
    std::string text;  ///< the config itself
};

/// Scenarios compiled into the binary.
const std::vector<CatalogEntry>& bundled_scenarios();

/// Bundled scenarios carrying `tag` (all of them when empty).
std::vector<CatalogEntry> list_scenarios(const std::string& tag = "");

/// Throws RegistryError for an unknown name.
Scenario bundled_scenario(const std::string& name);

}  // namespace qdlab
