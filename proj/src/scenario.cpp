#include "qdlab/scenario.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "qdlab/errors.hpp"

namespace qdlab {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

/// Line of `key` inside `[section]`, or 0 if it cannot be located.
std::size_t locate(std::string_view text, const std::string& section, const std::string& key) {
    std::istringstream in{std::string(text)};
    std::string line, current;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == ';' || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            current = trim(std::string_view(t).substr(1, t.size() - 2));
            if (key.empty() && current == section) return number;
            continue;
        }
        const auto eq = t.find('=');
        if (current == section && eq != std::string::npos && trim(std::string_view(t).substr(0, eq)) == key)
            return number;
    }
    return 0;
}

class Reader {
public:
    Reader(std::string_view text, const pt::ptree& tree) : text_(text), tree_(tree) {}

    [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& what) const {
        throw ParseError("[" + section + "] " + (key.empty() ? "" : key + ": ") + what, locate(text_, section, key));
    }

    const pt::ptree* section(const std::string& name) const {
        const auto it = tree_.find(name);
        return it == tree_.not_found() ? nullptr : &it->second;
    }

    std::optional<std::string> get(const std::string& sec, const std::string& key) const {
        const auto* s = section(sec);
        if (!s) return std::nullopt;
        const auto it = s->find(key);
        if (it == s->not_found()) return std::nullopt;
        return trim(it->second.data());
    }

    std::string require(const std::string& sec, const std::string& key) const {
        auto v = get(sec, key);
        if (!v || v->empty()) fail(sec, key, "required key missing");
        return *v;
    }

    double number(const std::string& sec, const std::string& key, const std::string& raw) const {
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (raw.empty() || end != raw.c_str() + raw.size() || errno == ERANGE)
            fail(sec, key, "expected a number, got '" + raw + "'");
        return v;
    }

    std::uint64_t unsigned_integer(const std::string& sec, const std::string& key, const std::string& raw) const {
        errno = 0;
        char* end = nullptr;
        if (raw.empty() || raw[0] == '-') fail(sec, key, "expected a non-negative integer, got '" + raw + "'");
        const unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
        if (end != raw.c_str() + raw.size() || errno == ERANGE)
            fail(sec, key, "expected a non-negative integer, got '" + raw + "'");
        return v;
    }

    bool boolean(const std::string& sec, const std::string& key, const std::string& raw) const {
        if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
        if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
        fail(sec, key, "expected a boolean, got '" + raw + "'");
    }

private:
    std::string_view text_;
    const pt::ptree& tree_;
};

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_tags(const std::string& raw) {
    std::vector<std::string> tags;
    std::string token;
    std::istringstream in(raw);
    while (std::getline(in, token, ',')) {
        token = trim(token);
        if (!token.empty()) tags.push_back(token);
    }
    return tags;
}

std::string join_tags(const std::vector<std::string>& tags) {
    std::string out;
    for (std::size_t i = 0; i < tags.size(); ++i) out += (i ? ", " : "") + tags[i];
    return out;
}

const std::set<std::string> kScenarioKeys{"name", "experiment", "description", "tags", "output"};
const std::set<std::string> kFieldKeys{"family", "dimension", "nu", "k_bound"};
const std::set<std::string> kSimKeys{"dt", "max_time", "n_paths", "seed", "bridge_correction"};

}  // namespace

const std::vector<std::string>& known_experiments() {
    static const std::vector<std::string> names{
        "semigroup", "kernel",     "harmonic_measure", "parabolic_exit", "hitting",
        "regularity", "holder",    "harnack",          "oscillation",    "barrier",
        "martingale_residual", "scaling_conjugacy", "exit_time", "feller", "drift_bound"};
    return names;
}

bool Scenario::operator==(const Scenario& o) const {
    return name == o.name && experiment == o.experiment && description == o.description && tags == o.tags &&
           certificate.nu == o.certificate.nu && certificate.k_bound == o.certificate.k_bound &&
           certificate.dimension == o.certificate.dimension && field == o.field && sim.dt == o.sim.dt &&
           sim.max_time == o.sim.max_time && sim.seed == o.sim.seed &&
           sim.bridge_correction == o.sim.bridge_correction && sim.n_paths == o.sim.n_paths &&
           parameters == o.parameters && output == o.output;
}

Scenario parse_scenario(std::string_view text) {
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(e.message(), e.line());
    }
    const Reader r(text, tree);

    for (const auto& [name, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ParseError("key '" + name + "' outside any section", locate(text, "", name));
        const std::set<std::string>* allowed = nullptr;
        if (name == "scenario") allowed = &kScenarioKeys;
        else if (name == "sim") allowed = &kSimKeys;
        else if (name != "field" && name != "parameters") r.fail(name, "", "unknown section");
        if (allowed)
            for (const auto& kv : body)
                if (!allowed->count(kv.first)) r.fail(name, kv.first, "unknown key");
    }
    if (!r.section("scenario")) throw ParseError("missing [scenario] section");
    if (!r.section("field")) throw ParseError("missing [field] section");

    Scenario s;
    s.name = r.require("scenario", "name");
    s.experiment = r.require("scenario", "experiment");
    const auto& known = known_experiments();
    if (std::find(known.begin(), known.end(), s.experiment) == known.end())
        r.fail("scenario", "experiment", "unknown experiment '" + s.experiment + "'");
    s.description = r.get("scenario", "description").value_or("");
    s.tags = split_tags(r.get("scenario", "tags").value_or(""));
    s.output = r.get("scenario", "output").value_or("");

    s.field.family = r.require("field", "family");
    const std::string dim = r.require("field", "dimension");
    s.certificate.dimension = static_cast<int>(r.unsigned_integer("field", "dimension", dim));
    s.certificate.nu = r.number("field", "nu", r.require("field", "nu"));
    s.certificate.k_bound = r.number("field", "k_bound", r.get("field", "k_bound").value_or("0"));
    for (const auto& [key, value] : *r.section("field"))
        if (!kFieldKeys.count(key)) s.field.params[key] = r.number("field", key, trim(value.data()));

    if (auto v = r.get("sim", "dt")) s.sim.dt = r.number("sim", "dt", *v);
    if (auto v = r.get("sim", "max_time")) s.sim.max_time = r.number("sim", "max_time", *v);
    if (auto v = r.get("sim", "n_paths")) s.sim.n_paths = r.unsigned_integer("sim", "n_paths", *v);
    if (auto v = r.get("sim", "seed")) s.sim.seed = r.unsigned_integer("sim", "seed", *v);
    if (auto v = r.get("sim", "bridge_correction")) s.sim.bridge_correction = r.boolean("sim", "bridge_correction", *v);

    if (const auto* params = r.section("parameters"))
        for (const auto& [key, value] : *params) s.parameters[key] = trim(value.data());
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

std::string serialize_scenario(const Scenario& s) {
    std::ostringstream out;
    out << "[scenario]\n"
        << "name = " << s.name << "\n"
        << "experiment = " << s.experiment << "\n"
        << "description = " << s.description << "\n"
        << "tags = " << join_tags(s.tags) << "\n"
        << "output = " << s.output << "\n\n";
    out << "[field]\n"
        << "family = " << s.field.family << "\n"
        << "dimension = " << s.certificate.dimension << "\n"
        << "nu = " << format_double(s.certificate.nu) << "\n"
        << "k_bound = " << format_double(s.certificate.k_bound) << "\n";
    for (const auto& [key, value] : s.field.params) out << key << " = " << format_double(value) << "\n";
    out << "\n[sim]\n"
        << "dt = " << format_double(s.sim.dt) << "\n"
        << "max_time = " << format_double(s.sim.max_time) << "\n"
        << "n_paths = " << s.sim.n_paths << "\n"
        << "seed = " << s.sim.seed << "\n"
        << "bridge_correction = " << (s.sim.bridge_correction ? "true" : "false") << "\n";
    out << "\n[parameters]\n";
    for (const auto& [key, value] : s.parameters) out << key << " = " << value << "\n";
    return out.str();
}

std::string config_hash(const Scenario& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : serialize_scenario(s)) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------

namespace detail {
// Generated from scenarios/*.cfg at build time.
extern const std::vector<std::pair<std::string, std::string>>& embedded_scenarios();
}  // namespace detail

const std::vector<CatalogEntry>& bundled_scenarios() {
    static const std::vector<CatalogEntry> catalog = [] {
        std::vector<CatalogEntry> out;
        for (const auto& [file, text] : detail::embedded_scenarios()) {
            try {
                const Scenario s = parse_scenario(text);
                out.push_back({s.name, s.description, s.tags, text});
            } catch (const ParseError& e) {
                throw ParseError("bundled scenario " + file + ": " + e.what());
            }
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
        return out;
    }();
    return catalog;
}

std::vector<CatalogEntry> list_scenarios(const std::string& tag) {
    std::vector<CatalogEntry> out;
    for (const auto& e : bundled_scenarios())
        if (tag.empty() || std::find(e.tags.begin(), e.tags.end(), tag) != e.tags.end()) out.push_back(e);
    return out;
}

Scenario bundled_scenario(const std::string& name) {
    for (const auto& e : bundled_scenarios())
        if (e.name == name) return parse_scenario(e.text);
    throw RegistryError("no bundled scenario named '" + name + "'");
}

}  // namespace qdlab
