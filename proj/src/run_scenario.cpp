#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qdlab/errors.hpp"
#include "qdlab/estimators.hpp"
#include "qdlab/scenario.hpp"
#include "qdlab/verifiers.hpp"

namespace qdlab {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kSchemaVersion = 1;
constexpr double kCensoringLimit = 1e-3;
constexpr std::size_t kDumpPaths = 16;

// ---------------------------------------------------------------------------
// Parameter access

std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, sep))
        if (part.find_first_not_of(" \t") != std::string::npos) out.push_back(part);
    return out;
}

double to_number(const std::string& key, const std::string& token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size())
        throw ParseError("[parameters] " + key + ": expected a number, got '" + token + "'");
    return v;
}

std::vector<double> numbers(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& w : words(text)) out.push_back(to_number(key, w));
    return out;
}

class Params {
public:
    Params(const std::map<std::string, std::string>& raw, int dimension) : raw_(raw), d_(dimension) {}

    bool has(const std::string& key) {
        used_.insert(key);
        return raw_.count(key) > 0;
    }

    std::string str(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (has(key)) return raw_.at(key);
        if (!fallback) throw ParseError("[parameters] " + key + ": required key missing");
        return *fallback;
    }

    double num(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (has(key)) return to_number(key, raw_.at(key));
        if (!fallback) throw ParseError("[parameters] " + key + ": required key missing");
        return *fallback;
    }

    int integer(const std::string& key, int fallback) {
        const double v = num(key, fallback);
        if (v != std::floor(v)) throw ParseError("[parameters] " + key + ": expected an integer");
        return static_cast<int>(v);
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = raw_.at(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ParseError("[parameters] " + key + ": expected a boolean, got '" + v + "'");
    }

    std::vector<double> list(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
        if (has(key)) return numbers(key, raw_.at(key));
        if (!fallback) throw ParseError("[parameters] " + key + ": required key missing");
        return *fallback;
    }

    Vec vec(const std::string& key, std::optional<Vec> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) throw ParseError("[parameters] " + key + ": required key missing");
            return *fallback;
        }
        return point(key, raw_.at(key), d_);
    }

    /// Semicolon-separated points of `width` coordinates.
    std::vector<Vec> points(const std::string& key, int width, std::optional<std::vector<Vec>> fallback = std::nullopt) {
        if (!has(key)) {
            if (!fallback) throw ParseError("[parameters] " + key + ": required key missing");
            return *fallback;
        }
        std::vector<Vec> out;
        for (const auto& part : split(raw_.at(key), ';')) out.push_back(point(key, part, width));
        if (out.empty()) throw ParseError("[parameters] " + key + ": empty point list");
        return out;
    }

    int dimension() const { return d_; }

    void reject_unused() const {
        for (const auto& [key, value] : raw_)
            if (!used_.count(key)) throw ParseError("[parameters] " + key + ": not used by this experiment");
    }

private:
    static Vec point(const std::string& key, const std::string& text, int width) {
        const auto v = numbers(key, text);
        if (static_cast<int>(v.size()) != width)
            throw ParseError("[parameters] " + key + ": expected " + std::to_string(width) + " coordinates, got '" +
                             text + "'");
        return Eigen::Map<const Vec>(v.data(), width);
    }

    const std::map<std::string, std::string>& raw_;
    int d_;
    std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Payoffs, regions, domains and hitting sets from text

Payoff parse_payoff(const std::string& text, int d) {
    const auto w = words(text);
    if (w.empty()) throw ParseError("[parameters] payoff: empty");
    std::vector<double> v;
    for (std::size_t i = 1; i < w.size(); ++i) v.push_back(to_number("payoff", w[i]));
    auto take = [&](std::size_t from, int n) { return Vec(Eigen::Map<const Vec>(v.data() + from, n)); };
    auto arity = [&](std::size_t n) {
        if (v.size() != n)
            throw ParseError("[parameters] payoff: '" + w[0] + "' takes " + std::to_string(n) + " numbers");
    };
    if (w[0] == "constant") return arity(1), payoffs::constant(v[0]);
    if (w[0] == "cosine") return arity(d), payoffs::cosine(take(0, d));
    if (w[0] == "half_space") return arity(d + 1), payoffs::half_space(take(0, d), v[d]);
    if (w[0] == "box") return arity(2 * d), payoffs::box(take(0, d), take(d, d));
    if (w[0] == "ball") return arity(d + 1), payoffs::ball(take(0, d), v[d]);
    throw ParseError("[parameters] payoff: unknown payoff '" + w[0] + "'");
}

struct ArcBounds {
    double lo, hi;
};

/// Terms joined by '&'; each is whole | lateral | top | arc LO HI | half_space N.. OFFSET, optionally "not TERM".
BoundaryRegion parse_region(const std::string& text, const Vec& center, std::optional<ArcBounds>* arc = nullptr) {
    const auto terms = split(text, '&');
    if (terms.empty()) throw ParseError("[parameters] region: empty");
    const int d = static_cast<int>(center.size());
    std::optional<BoundaryRegion> acc;
    if (arc) arc->reset();
    for (const auto& term : terms) {
        auto w = words(term);
        bool negate = false;
        if (!w.empty() && w[0] == "not") {
            negate = true;
            w.erase(w.begin());
        }
        if (w.empty()) throw ParseError("[parameters] region: empty term");
        std::vector<double> v;
        for (std::size_t i = 1; i < w.size(); ++i) v.push_back(to_number("region", w[i]));
        BoundaryRegion r;
        if (w[0] == "whole" && v.empty()) r = regions::whole_boundary();
        else if (w[0] == "lateral" && v.empty()) r = regions::lateral_face();
        else if (w[0] == "top" && v.empty()) r = regions::top_face();
        else if (w[0] == "arc" && v.size() == 2) {
            r = regions::angular_arc(center, v[0], v[1]);
            if (arc && terms.size() == 1 && !negate) *arc = ArcBounds{v[0], v[1]};
        } else if (w[0] == "half_space" && static_cast<int>(v.size()) == d + 1)
            r = regions::half_space(Eigen::Map<const Vec>(v.data(), d), v[d]);
        else
            throw ParseError("[parameters] region: cannot read term '" + term + "'");
        if (negate) r = regions::complement(std::move(r));
        acc = acc ? regions::intersection(std::move(*acc), std::move(r)) : std::move(r);
    }
    return *acc;
}

std::vector<std::string> region_list(Params& p, const std::string& fallback) {
    std::vector<std::string> out;
    for (const auto& part : split(p.str("regions", fallback), ';')) {
        std::string joined;
        for (const auto& w : words(part)) joined += (joined.empty() ? "" : " ") + w;
        out.push_back(joined);
    }
    if (out.empty()) throw ParseError("[parameters] regions: empty");
    return out;
}

/// Sets separated by ';', components by '+':
/// "sector T_LO T_HI RHO_LO RHO_HI" (centered at the cylinder axis) or "box T_LO T_HI LO.. HI..".
std::vector<GammaSet> parse_gammas(const std::string& text, const Vec& center) {
    const int d = static_cast<int>(center.size());
    std::vector<GammaSet> out;
    for (const auto& set_text : split(text, ';')) {
        GammaSet g;
        for (const auto& comp : split(set_text, '+')) {
            const auto w = words(comp);
            std::vector<double> v;
            for (std::size_t i = 1; i < w.size(); ++i) v.push_back(to_number("gamma", w[i]));
            if (!w.empty() && w[0] == "sector" && v.size() == 4)
                g.sectors.push_back({v[0], v[1], center, v[2], v[3]});
            else if (!w.empty() && w[0] == "box" && static_cast<int>(v.size()) == 2 + 2 * d)
                g.boxes.push_back({v[0], v[1], Eigen::Map<const Vec>(v.data() + 2, d),
                                   Eigen::Map<const Vec>(v.data() + 2 + d, d)});
            else
                throw ParseError("[parameters] gamma: cannot read component '" + comp + "'");
        }
        out.push_back(std::move(g));
    }
    if (out.empty()) throw ParseError("[parameters] gamma: no sets given");
    return out;
}

struct DomainSpec {
    DomainPtr domain;
    std::string family;
    Vec center;
    double radius = 1.0;
    double t0 = 0.0;
};

DomainSpec parse_domain(Params& p) {
    DomainSpec spec;
    spec.family = p.str("domain", "ball");
    spec.center = p.vec("center", Vec::Zero(p.dimension()));
    spec.radius = p.num("radius", 1.0);
    spec.t0 = p.num("t0", 0.0);
    if (spec.family == "cylinder")
        spec.domain = std::make_shared<CylinderDomain>(ParabolicCylinder::standard(spec.radius, spec.t0, spec.center));
    else
        spec.domain = make_elliptic_domain(spec.family, spec.center, spec.radius);
    return spec;
}

// ---------------------------------------------------------------------------
// Report pieces

json to_json(const Vec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

json to_json(const SpaceTimePoint& p) { return {{"t", p.t}, {"x", to_json(p.x)}}; }

json to_json(const Estimate& e) {
    return {{"value", e.value},
            {"stderr", e.std_error},
            {"ci95", {e.ci95.lower, e.ci95.upper}},
            {"n", e.n},
            {"censored_fraction", e.censored_fraction},
            {"warnings", e.warnings}};
}

struct Table {
    std::string file;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct Outcome {
    json results = json::object();
    std::vector<std::string> warnings;
    std::vector<Table> tables;
    std::vector<std::string> summary;

    void absorb(const Estimate& e, const std::string& label) {
        for (const auto& w : e.warnings) warnings.push_back(label + ": " + w);
        if (e.censored_fraction > kCensoringLimit) {
            std::ostringstream msg;
            msg << label << ": censored fraction " << e.censored_fraction << " exceeds " << kCensoringLimit;
            warnings.push_back(msg.str());
        }
    }

    void line(const std::string& text) { summary.push_back(text); }
};

std::vector<std::string> coordinate_columns(const std::string& prefix, int d) {
    std::vector<std::string> cols;
    for (int i = 1; i <= d; ++i) cols.push_back(prefix + std::to_string(i));
    return cols;
}

std::vector<double> row_of(const Vec& x, std::initializer_list<double> rest) {
    std::vector<double> row(x.data(), x.data() + x.size());
    row.insert(row.end(), rest);
    return row;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string describe(const Estimate& e) {
    return fmt(e.value) + " +- " + fmt(e.std_error) + " (95% CI [" + fmt(e.ci95.lower) + ", " + fmt(e.ci95.upper) + "])";
}

std::string describe(const Vec& x) {
    std::string s = "(";
    for (Eigen::Index i = 0; i < x.size(); ++i) s += (i ? ", " : "") + fmt(x[i]);
    return s + ")";
}

/// a = c I and b = 0 everywhere: returns c.
std::optional<double> scaled_identity(const Scenario& sc, const CoefficientField& field) {
    if (sc.field.family != "constant") return std::nullopt;
    const int d = field.dimension();
    Mat a;
    Vec b;
    field.evaluate(0.0, Vec::Zero(d), a, b);
    const double c = a(0, 0);
    if (!(a - c * Mat::Identity(d, d)).isZero(0.0) || !b.isZero(0.0)) return std::nullopt;
    return c;
}

SimConfig reseeded(SimConfig cfg, std::uint64_t offset) {
    cfg.seed = mix_seed(cfg.seed, offset);
    return cfg;
}

// ---------------------------------------------------------------------------
// Experiments

struct Context {
    const Scenario& scenario;
    FieldPtr field;
    SimConfig sim;
    Params params;
    int d;
};

Outcome run_exit_time(Context& c) {
    Outcome out;
    const DomainSpec dom = parse_domain(c.params);
    const auto starts = c.params.points("starts", c.d, std::vector<Vec>{dom.center});
    const double s = c.params.num("start_time", dom.t0);
    const auto iso = scaled_identity(c.scenario, *c.field);
    const bool oracle = iso && dom.family == "ball";
    Table table{"exit_time.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"mean", "stderr", "ci_lo", "ci_hi", "censored"}) table.columns.push_back(col);
    if (oracle) table.columns.push_back("oracle");
    json entries = json::array();
    for (const Vec& x : starts) {
        const Estimate e = mean_exit_time(*c.field, s, x, *dom.domain, c.sim);
        out.absorb(e, "start " + describe(x));
        json entry{{"start", to_json(x)}, {"mean_exit_time", to_json(e)}};
        auto row = row_of(x, {e.value, e.std_error, e.ci95.lower, e.ci95.upper, e.censored_fraction});
        std::string text = "E tau at " + describe(x) + " = " + describe(e);
        if (oracle) {
            const double exact =
                (dom.radius * dom.radius - (x - dom.center).squaredNorm()) / (2.0 * c.d * *iso);
            const double z = std::abs(e.value - exact) / e.std_error;
            entry["oracle"] = exact;
            entry["oracle_stderr_distance"] = z;
            entry["oracle_within_ci95"] = e.ci95.contains(exact);
            row.push_back(exact);
            text += ", exact " + fmt(exact) + " (" + fmt(z) + " stderr)";
        }
        entries.push_back(entry);
        table.rows.push_back(row);
        out.line(text);
    }
    out.results = {{"domain", {{"family", dom.family}, {"center", to_json(dom.center)}, {"radius", dom.radius}}},
                   {"start_time", s},
                   {"points", entries}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_semigroup_like(Context& c, bool kernel) {
    Outcome out;
    const std::string payoff_text = c.params.str("payoff");
    const Payoff f = parse_payoff(payoff_text, c.d);
    const auto starts = c.params.points("starts", c.d, std::vector<Vec>{Vec::Zero(c.d)});
    double s = 0.0, t = 0.0, horizon = 0.0;
    if (kernel) {
        s = c.params.num("s", 0.0);
        horizon = c.params.num("T");
    } else {
        t = c.params.num("t");
    }
    // constant coefficients: x_t is Gaussian with mean x + b t and covariance 2 a t
    std::optional<Vec> xi;
    if (!kernel && c.scenario.field.family == "constant" && words(payoff_text)[0] == "cosine") {
        const auto v = numbers("payoff", payoff_text.substr(payoff_text.find("cosine") + 6));
        xi = Eigen::Map<const Vec>(v.data(), c.d);
    }
    Table table{kernel ? "kernel.tsv" : "semigroup.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"value", "stderr", "ci_lo", "ci_hi"}) table.columns.push_back(col);
    if (xi) table.columns.push_back("oracle");
    json entries = json::array();
    for (const Vec& x : starts) {
        const Estimate e = kernel ? parabolic_kernel(*c.field, s, x, horizon, f, c.sim) : semigroup(*c.field, x, t, f, c.sim);
        out.absorb(e, "start " + describe(x));
        json entry{{"start", to_json(x)}, {"estimate", to_json(e)}};
        auto row = row_of(x, {e.value, e.std_error, e.ci95.lower, e.ci95.upper});
        std::string text = (kernel ? "H(" + fmt(s) + ", " : "T_t f(") + describe(x) + ") = " + describe(e);
        if (xi) {
            Mat a;
            Vec b;
            c.field->evaluate(0.0, x, a, b);
            const double exact = std::cos(xi->dot(x + b * t)) * std::exp(-t * xi->dot(a * *xi));
            entry["oracle"] = exact;
            entry["oracle_stderr_distance"] = std::abs(e.value - exact) / e.std_error;
            row.push_back(exact);
            text += ", exact " + fmt(exact);
        }
        entries.push_back(entry);
        table.rows.push_back(row);
        out.line(text);
    }
    out.results = {{"payoff", f.name}, {"points", entries}};
    if (kernel) {
        out.results["s"] = s;
        out.results["T"] = horizon;
    } else {
        out.results["t"] = t;
    }
    out.tables.push_back(std::move(table));
    return out;
}

/// (1 / 2 pi) int (R^2 - |x - c|^2) / |c + R e(theta) - x|^2 d theta over [lo, hi], Simpson.
double poisson_arc(const Vec& x, const Vec& center, double radius, double lo, double hi) {
    const int n = 20000;
    const double h = (hi - lo) / n;
    const Vec y = x - center;
    auto kernel = [&](double th) {
        const double dx = radius * std::cos(th) - y[0], dy = radius * std::sin(th) - y[1];
        return (radius * radius - y.squaredNorm()) / (dx * dx + dy * dy);
    };
    double sum = kernel(lo) + kernel(hi);
    for (int i = 1; i < n; ++i) sum += kernel(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0 / (2.0 * std::numbers::pi);
}

Outcome run_harmonic_measure(Context& c) {
    Outcome out;
    const Vec center = c.params.vec("center", Vec::Zero(c.d));
    const double radius = c.params.num("radius", 1.0);
    const Ball ball(center, radius);
    const auto starts = c.params.points("starts", c.d, std::vector<Vec>{center});
    const auto texts = region_list(c.params, "whole");
    std::vector<BoundaryRegion> targets;
    std::vector<std::optional<ArcBounds>> arcs(texts.size());
    for (std::size_t k = 0; k < texts.size(); ++k) targets.push_back(parse_region(texts[k], center, &arcs[k]));
    const bool isotropic = c.d == 2 && scaled_identity(c.scenario, *c.field).has_value();
    Table table{"harmonic_measure.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"region", "value", "stderr", "ci_lo", "ci_hi", "oracle"}) table.columns.push_back(col);
    json entries = json::array();
    for (const Vec& x : starts) {
        const auto est = harmonic_measure_multi(*c.field, x, ball, targets, c.sim);
        for (std::size_t k = 0; k < est.size(); ++k) {
            out.absorb(est[k], "start " + describe(x) + ", region '" + texts[k] + "'");
            json entry{{"start", to_json(x)}, {"region", texts[k]}, {"estimate", to_json(est[k])}};
            double exact = std::nan("");
            std::string text = "pi_G(" + describe(x) + ", " + texts[k] + ") = " + describe(est[k]);
            if (isotropic && arcs[k]) {
                exact = poisson_arc(x, center, radius, arcs[k]->lo, arcs[k]->hi);
                entry["oracle"] = exact;
                entry["oracle_stderr_distance"] = std::abs(est[k].value - exact) / est[k].std_error;
                text += ", Poisson kernel " + fmt(exact);
            }
            entries.push_back(entry);
            table.rows.push_back(row_of(x, {double(k), est[k].value, est[k].std_error, est[k].ci95.lower,
                                            est[k].ci95.upper, exact}));
            out.line(text);
        }
    }
    out.results = {{"ball", {{"center", to_json(center)}, {"radius", radius}}}, {"regions", texts}, {"points", entries}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_parabolic_exit(Context& c) {
    Outcome out;
    const Vec center = c.params.vec("center", Vec::Zero(c.d));
    const double radius = c.params.num("radius", 1.0);
    const double t0 = c.params.num("t0", 0.0);
    const auto q = ParabolicCylinder::standard(radius, t0, center);
    const double s = c.params.num("start_time", t0);
    const auto starts = c.params.points("starts", c.d, std::vector<Vec>{center});
    const auto texts = region_list(c.params, "top; lateral");
    std::vector<BoundaryRegion> targets;
    for (const auto& t : texts) targets.push_back(parse_region(t, center));
    Table table{"parabolic_exit.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"region", "value", "stderr", "ci_lo", "ci_hi"}) table.columns.push_back(col);
    json entries = json::array();
    for (const Vec& x : starts) {
        const auto est = parabolic_exit_distribution_multi(*c.field, s, x, q, targets, c.sim);
        for (std::size_t k = 0; k < est.size(); ++k) {
            out.absorb(est[k], "start " + describe(x) + ", region '" + texts[k] + "'");
            entries.push_back({{"start", to_json(x)}, {"region", texts[k]}, {"estimate", to_json(est[k])}});
            table.rows.push_back(
                row_of(x, {double(k), est[k].value, est[k].std_error, est[k].ci95.lower, est[k].ci95.upper}));
            out.line("pi_Q((" + fmt(s) + ", " + describe(x) + "), " + texts[k] + ") = " + describe(est[k]));
        }
    }
    out.results = {{"cylinder", {{"t0", t0}, {"center", to_json(center)}, {"radius", radius}}},
                   {"start_time", s},
                   {"regions", texts},
                   {"points", entries}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_hitting(Context& c) {
    Outcome out;
    const Vec center = c.params.vec("center", Vec::Zero(c.d));
    const double radius = c.params.num("radius", 1.0);
    const double t0 = c.params.num("t0", 0.0);
    const auto q = ParabolicCylinder::standard(radius, t0, center);
    const std::string gamma_text = c.params.str("gamma");
    const auto gammas = parse_gammas(gamma_text, center);
    Vec origin(c.d + 1);
    origin << t0, center;
    const auto starts = c.params.points("starts", c.d + 1, std::vector<Vec>{origin});
    HittingOptions opts;
    opts.gamma_fraction = c.params.num("gamma_fraction", opts.gamma_fraction);
    opts.probe_time_fraction = c.params.num("probe_time_fraction", opts.probe_time_fraction);
    opts.probe_shrink = c.params.num("probe_shrink", opts.probe_shrink);
    opts.volume_samples = static_cast<std::size_t>(c.params.integer("volume_samples", static_cast<int>(opts.volume_samples)));
    opts.check_volume = c.params.flag("check_volume", opts.check_volume);

    json volumes = json::array();
    for (const auto& g : gammas) volumes.push_back(g.volume_within(q, opts.volume_samples));
    Table table{"hitting.tsv", {"t"}, {}};
    for (auto& col : coordinate_columns("x", c.d)) table.columns.push_back(col);
    for (const char* col : {"gamma", "value", "stderr", "ci_lo", "ci_hi"}) table.columns.push_back(col);
    json entries = json::array();
    bool monotone_everywhere = true;
    for (const Vec& st : starts) {
        const double s = st[0];
        const Vec x = st.tail(c.d);
        const auto est = hitting_probability_multi(*c.field, s, x, q, gammas, c.sim, opts);
        bool monotone = true;
        json values = json::array();
        for (std::size_t k = 0; k < est.size(); ++k) {
            out.absorb(est[k], "start (" + fmt(s) + ", " + describe(x) + ")");
            values.push_back(to_json(est[k]));
            if (k > 0 && est[k].value < est[k - 1].value) monotone = false;
            table.rows.push_back(row_of(st, {double(k), est[k].value, est[k].std_error, est[k].ci95.lower,
                                             est[k].ci95.upper}));
            out.line("P(hit Gamma_" + std::to_string(k) + " | " + fmt(s) + ", " + describe(x) + ") = " +
                     describe(est[k]));
        }
        monotone_everywhere = monotone_everywhere && monotone;
        entries.push_back({{"start", to_json(SpaceTimePoint{s, x})}, {"estimates", values}, {"monotone", monotone}});
    }
    out.results = {{"cylinder", {{"t0", t0}, {"center", to_json(center)}, {"radius", radius}}},
                   {"gamma", gamma_text},
                   {"gamma_volumes", volumes},
                   {"cylinder_volume", q.duration * ball_volume(c.d, radius)},
                   {"options",
                    {{"gamma_fraction", opts.gamma_fraction},
                     {"probe_time_fraction", opts.probe_time_fraction},
                     {"probe_shrink", opts.probe_shrink},
                     {"check_volume", opts.check_volume}}},
                   {"points", entries},
                   {"monotone", monotone_everywhere}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_regularity(Context& c) {
    Outcome out;
    const DomainSpec dom = parse_domain(c.params);
    const Vec x = c.params.vec("point");
    const auto h = dyadic_schedule(c.params.num("h_max", 0.125), c.params.integer("levels", 6));
    const double threshold = c.params.num("threshold", 0.1);
    const auto v = regularity_probe(*c.field, *dom.domain, x, h, c.sim, threshold);
    Table table{"regularity.tsv", {"h", "p_hat", "stderr", "ci_lo", "ci_hi"}, {}};
    json probes = json::array();
    for (const auto& [hk, e] : v.probe_values) {
        probes.push_back({{"h", hk}, {"estimate", to_json(e)}});
        table.rows.push_back({hk, e.value, e.std_error, e.ci95.lower, e.ci95.upper});
        out.line("P(tau' <= " + fmt(hk) + ") = " + describe(e));
    }
    if (v.verdict == Regularity::inconclusive)
        out.warnings.push_back("regularity verdict inconclusive at " + describe(x));
    out.line("verdict: " + to_string(v.verdict));
    out.results = {{"domain", {{"family", dom.family}, {"center", to_json(dom.center)}, {"radius", dom.radius}}},
                   {"point", to_json(x)},
                   {"threshold", v.threshold},
                   {"probes", probes},
                   {"limit_estimate", v.limit_estimate},
                   {"verdict", to_string(v.verdict)}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_holder(Context& c) {
    Outcome out;
    const Payoff f = parse_payoff(c.params.str("payoff"), c.d);
    const double t = c.params.num("t");
    const auto pts = c.params.points("points", c.d);
    std::vector<HolderSample> samples;
    Table samples_table{"holder_samples.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"value", "stderr"}) samples_table.columns.push_back(col);
    json sample_json = json::array();
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const Estimate e = semigroup(*c.field, pts[k], t, f, reseeded(c.sim, k));
        out.absorb(e, "point " + describe(pts[k]));
        samples.push_back({{0.0, pts[k]}, e});
        sample_json.push_back({{"point", to_json(pts[k])}, {"estimate", to_json(e)}});
        samples_table.rows.push_back(row_of(pts[k], {e.value, e.std_error}));
    }
    const HolderFit fit = holder_fit(samples);
    Table pairs{"holder_pairs.tsv", {"log_rho", "log_diff"}, {}};
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            const double diff = std::abs(samples[i].u.value - samples[j].u.value);
            if (diff > 3.0 * (samples[i].u.std_error + samples[j].u.std_error))
                pairs.rows.push_back({std::log(parabolic_distance(samples[i].point, samples[j].point)), std::log(diff)});
        }
    out.line("alpha-hat = " + fmt(fit.alpha_hat) + ", N-hat = " + fmt(fit.n_hat) + ", R^2 = " + fmt(fit.r_squared) +
             " over " + std::to_string(fit.pair_count) + " of " + std::to_string(fit.candidate_pairs) + " pairs");
    out.results = {{"t", t},
                   {"payoff", f.name},
                   {"samples", sample_json},
                   {"fit",
                    {{"alpha_hat", fit.alpha_hat},
                     {"n_hat", fit.n_hat},
                     {"r_squared", fit.r_squared},
                     {"pair_count", fit.pair_count},
                     {"candidate_pairs", fit.candidate_pairs}}}};
    out.tables.push_back(std::move(samples_table));
    out.tables.push_back(std::move(pairs));
    return out;
}

Outcome run_harnack(Context& c) {
    Outcome out;
    const Vec center = c.params.vec("center", Vec::Zero(c.d));
    const double radius = c.params.num("radius", 1.5);
    const std::string region_text = c.params.str("region", "whole");
    const BoundaryRegion target = parse_region(region_text, center);
    const double ring = c.params.num("ring_radius", 0.5);
    const int ring_points = c.params.integer("ring_points", 8);
    std::vector<Vec> pts{center};
    for (int k = 0; k < ring_points; ++k) {
        Vec p = center;
        const double th = 2.0 * std::numbers::pi * k / ring_points;
        p[0] += ring * std::cos(th);
        if (c.d > 1) p[1] += ring * std::sin(th);
        else p[0] = center[0] + ring * (k % 2 ? -1.0 : 1.0);
        pts.push_back(p);
    }
    std::vector<Estimate> values;
    Table table{"harnack.tsv", coordinate_columns("x", c.d), {}};
    for (const char* col : {"value", "stderr"}) table.columns.push_back(col);
    json points = json::array();
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const Estimate e = harmonic_measure(*c.field, pts[k], Ball(center, radius), target, reseeded(c.sim, k));
        out.absorb(e, "point " + describe(pts[k]));
        values.push_back(e);
        points.push_back({{"point", to_json(pts[k])}, {"estimate", to_json(e)}});
        table.rows.push_back(row_of(pts[k], {e.value, e.std_error}));
    }
    const std::string pattern = "center and " + std::to_string(ring_points) + " points at distance " + fmt(ring);
    const HarnackRatio h = harnack_ratio(values, pattern);
    if (h.unbounded) out.warnings.push_back("Harnack ratio unbounded: inf within 3 stderr of 0");
    out.line("sup / inf = " + fmt(h.ratio) + " +- " + fmt(h.std_error) + " (inf at " + fmt(h.inf_significance) +
             " stderr)");
    out.results = {{"ball", {{"center", to_json(center)}, {"radius", radius}}},
                   {"region", region_text},
                   {"points", points},
                   {"ratio",
                    {{"ratio", h.ratio},
                     {"stderr", h.std_error},
                     {"sup", h.sup_value},
                     {"inf", h.inf_value},
                     {"inf_significance", h.inf_significance},
                     {"unbounded", h.unbounded},
                     {"pattern", h.pattern}}}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_oscillation(Context& c) {
    Outcome out;
    const Payoff f = parse_payoff(c.params.str("payoff"), c.d);
    const double t = c.params.num("t");
    const Vec center = c.params.vec("center", Vec::Zero(c.d));
    const auto radii = c.params.list("radii");
    std::uint64_t calls = 0;
    const auto cascade = oscillation_cascade(
        [&](const Vec& x) { return semigroup(*c.field, x, t, f, reseeded(c.sim, calls++)); }, center, radii);
    Table table{"oscillation.tsv", {"radius", "oscillation", "noise_floor"}, {}};
    json levels = json::array();
    for (const auto& l : cascade.levels) {
        levels.push_back({{"radius", l.radius}, {"oscillation", l.oscillation}, {"noise_floor", l.noise_floor}});
        table.rows.push_back({l.radius, l.oscillation, l.noise_floor});
        out.line("osc at R = " + fmt(l.radius) + ": " + fmt(l.oscillation) + " (noise " + fmt(l.noise_floor) + ")");
    }
    if (cascade.truncated) out.warnings.push_back("oscillation cascade truncated at the noise floor");
    out.line("decay exponent " + fmt(cascade.decay_exponent));
    out.results = {{"t", t},
                   {"payoff", f.name},
                   {"center", to_json(center)},
                   {"levels", levels},
                   {"ratios", cascade.ratios},
                   {"decay_exponent", cascade.decay_exponent},
                   {"truncated", cascade.truncated}};
    out.tables.push_back(std::move(table));
    return out;
}

json certificate_json(const ObliqueBarrier& b, const BarrierCertificate& cert) {
    return {{"params",
             {{"T", b.T},
              {"x0", to_json(b.x0)},
              {"y", to_json(b.y)},
              {"gamma", b.gamma},
              {"epsilon", b.epsilon},
              {"kappa", b.kappa}}},
            {"n", b.n},
            {"N1", b.N1},
            {"grid", cert.grid},
            {"points", cert.points},
            {"refinements", cert.refinements},
            {"refinement_stable", cert.refinement_stable},
            {"min_value", cert.min_value},
            {"argmin", to_json(cert.argmin)},
            {"pass", cert.passed}};
}

Outcome run_barrier(Context& c) {
    Outcome out;
    auto barrier = make_barrier(c.field->certificate(), c.params.num("T", 1.0), c.params.vec("x0"), c.params.vec("y"),
                                c.params.num("epsilon", 0.5), c.params.num("kappa", 0.5), c.params.num("gamma", 0.25));
    const int grid = c.params.integer("grid", 64);
    const bool refine = c.params.flag("refine", true);
    const bool control = c.params.flag("control", true);
    const auto cert = barrier_check(*c.field, barrier, grid, refine);
    out.results["certificate"] = certificate_json(barrier, cert);
    out.line("n = " + fmt(barrier.n) + ", N1 = " + fmt(barrier.N1) + ": min g^n (D_t + L) v = " + fmt(cert.min_value) +
             " on a " + std::to_string(cert.grid) + "-point grid, " + (cert.passed ? "certified" : "NOT certified"));
    Table table{"barrier.tsv", {"n", "min_value", "grid"}, {{barrier.n, cert.min_value, double(cert.grid)}}};
    if (control) {
        ObliqueBarrier small = barrier;
        small.n = c.params.num("control_n", 1.0);
        small.allow_small_exponent = true;
        const auto ctl = barrier_check(*c.field, small, grid, false);
        out.results["control"] = certificate_json(small, ctl);
        table.rows.push_back({small.n, ctl.min_value, double(ctl.grid)});
        out.line("control n = " + fmt(small.n) + ": min = " + fmt(ctl.min_value));
    }
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_martingale(Context& c) {
    Outcome out;
    const Vec x = c.params.vec("start", Vec::Zero(c.d));
    const double s = c.params.num("start_time", 0.0);
    const double t = c.params.num("t");
    const auto bumps = c.params.points("bumps", c.d + 1);
    Table table{"martingale.tsv", coordinate_columns("c", c.d), {}};
    for (const char* col : {"width", "residual", "stderr", "bias_allowance", "tolerance"}) table.columns.push_back(col);
    json entries = json::array();
    for (std::size_t k = 0; k < bumps.size(); ++k) {
        const CosineBump phi{bumps[k].head(c.d), bumps[k][c.d]};
        const auto r = martingale_residual(*c.field, s, x, t, phi, reseeded(c.sim, k));
        out.absorb(r.residual, "bump " + std::to_string(k));
        entries.push_back({{"center", to_json(phi.center)},
                           {"width", phi.width},
                           {"residual", to_json(r.residual)},
                           {"bias_allowance", r.bias_allowance},
                           {"tolerance", r.tolerance()},
                           {"passed", r.passed()}});
        table.rows.push_back(
            row_of(phi.center, {phi.width, r.residual.value, r.residual.std_error, r.bias_allowance, r.tolerance()}));
        out.line("bump " + describe(phi.center) + " w = " + fmt(phi.width) + ": residual " + describe(r.residual) +
                 ", tolerance " + fmt(r.tolerance()) + (r.passed() ? "" : "  EXCEEDED"));
    }
    out.results = {{"start", to_json(x)}, {"start_time", s}, {"t", t}, {"bumps", entries}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_conjugacy(Context& c) {
    Outcome out;
    const double s0 = c.params.num("s0", 0.0);
    const Vec x0 = c.params.vec("x0", Vec::Zero(c.d));
    const double r = c.params.num("r");
    Vec default_offset = Vec::Zero(c.d);
    if (c.d > 1) default_offset[1] = 0.3;
    const Vec offset = c.params.vec("offset", default_offset);
    std::string lateral_right = "lateral & half_space 1";
    for (int i = 1; i <= c.d; ++i) lateral_right += " 0";
    const std::string region_text = c.params.str("region", lateral_right);
    const ScalingMap map{s0, x0, r};
    const BoundaryRegion unit_region = parse_region(region_text, Vec::Zero(c.d));
    const BoundaryRegion region = unit_region.transformed(map.inverted());
    const auto q = ParabolicCylinder::standard(r, s0, x0);

    SimConfig original = c.sim;
    original.dt = c.sim.dt * r * r;
    original.max_time = c.sim.max_time * r * r;
    const Estimate direct =
        parabolic_exit_distribution(*c.field, s0, x0 + r * offset, q, region, original);
    const auto hat_field = conjugate_field(c.field, s0, x0, r);
    const Estimate hat = parabolic_exit_distribution(*hat_field, 0.0, offset, apply_scaling(map, q), unit_region,
                                                     reseeded(c.sim, 1));
    out.absorb(direct, "original");
    out.absorb(hat, "conjugated");
    const double sep = separation_in_stderr(direct, hat);
    out.line("original  " + describe(direct));
    out.line("rescaled  " + describe(hat));
    out.line("difference " + fmt(sep) + " combined stderr");
    out.results = {{"s0", s0},
                   {"x0", to_json(x0)},
                   {"r", r},
                   {"offset", to_json(offset)},
                   {"region", region_text},
                   {"original", to_json(direct)},
                   {"conjugated", to_json(hat)},
                   {"separation", sep},
                   {"consistent", sep <= 2.0}};
    out.tables.push_back(Table{"conjugacy.tsv",
                               {"run", "value", "stderr", "ci_lo", "ci_hi"},
                               {{0.0, direct.value, direct.std_error, direct.ci95.lower, direct.ci95.upper},
                                {1.0, hat.value, hat.std_error, hat.ci95.lower, hat.ci95.upper}}});
    return out;
}

Outcome run_feller(Context& c) {
    Outcome out;
    const double T = c.params.num("T", 1.0);
    const double threshold = c.params.num("threshold", 1.0);
    const Vec x = c.params.vec("start", Vec::Zero(c.d));
    const auto times = c.params.list("s", std::vector<double>{-0.5, 0.5});
    const SpaceTimePayoff f{"1{t >= " + fmt(threshold) + "}", 1.0,
                            [threshold](double t, const Vec&) { return t >= threshold ? 1.0 : 0.0; }};
    Table table{"feller.tsv", {"s", "value", "stderr"}, {}};
    json entries = json::array();
    for (std::size_t k = 0; k < times.size(); ++k) {
        const Estimate e = feller_scenario(*c.field, f, times[k], x, T, reseeded(c.sim, k));
        entries.push_back({{"s", times[k]}, {"estimate", to_json(e)}});
        table.rows.push_back({times[k], e.value, e.std_error});
        out.line("u(" + fmt(times[k]) + ", " + describe(x) + ") = " + describe(e));
    }
    out.results = {{"T", T}, {"payoff", f.name}, {"start", to_json(x)}, {"points", entries}};
    out.tables.push_back(std::move(table));
    return out;
}

Outcome run_drift_bound(Context& c) {
    Outcome out;
    const auto r = drift_bound_check(*c.field, c.params.integer("grid", 64));
    out.results = {{"min_value", r.min_value},
                   {"argmin", to_json(r.argmin)},
                   {"bound", r.bound},
                   {"conservative_bound", r.conservative_bound},
                   {"points", r.points},
                   {"holds", r.holds()},
                   {"conservative_holds", r.conservative_holds()}};
    out.line("min (D_t + L)(1 - t - |x|^2) = " + fmt(r.min_value) + " at " + describe(r.argmin.x) + ", t = " +
             fmt(r.argmin.t));
    out.line("bound -1 - K d - 2d/nu = " + fmt(r.bound) + (r.holds() ? " holds" : " VIOLATED"));
    out.line("bound -1 - 2 sqrt(d) K - 2d/nu = " + fmt(r.conservative_bound) + (r.conservative_holds() ? " holds" : " VIOLATED"));
    out.tables.push_back(Table{"drift_bound.tsv", {"min_value", "bound", "conservative_bound"},
                               {{r.min_value, r.bound, r.conservative_bound}}});
    return out;
}

Outcome dispatch(Context& c) {
    const std::string& e = c.scenario.experiment;
    if (e == "exit_time") return run_exit_time(c);
    if (e == "semigroup") return run_semigroup_like(c, false);
    if (e == "kernel") return run_semigroup_like(c, true);
    if (e == "harmonic_measure") return run_harmonic_measure(c);
    if (e == "parabolic_exit") return run_parabolic_exit(c);
    if (e == "hitting") return run_hitting(c);
    if (e == "regularity") return run_regularity(c);
    if (e == "holder") return run_holder(c);
    if (e == "harnack") return run_harnack(c);
    if (e == "oscillation") return run_oscillation(c);
    if (e == "barrier") return run_barrier(c);
    if (e == "martingale_residual") return run_martingale(c);
    if (e == "scaling_conjugacy") return run_conjugacy(c);
    if (e == "feller") return run_feller(c);
    if (e == "drift_bound") return run_drift_bound(c);
    throw ParseError("[scenario] experiment: unknown experiment '" + e + "'");
}

// ---------------------------------------------------------------------------
// Output

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json scenario_json(const Scenario& s) {
    return {{"name", s.name},
            {"experiment", s.experiment},
            {"description", s.description},
            {"tags", s.tags},
            {"field",
             {{"family", s.field.family},
              {"dimension", s.certificate.dimension},
              {"nu", s.certificate.nu},
              {"k_bound", s.certificate.k_bound},
              {"params", s.field.params}}},
            {"sim",
             {{"dt", s.sim.dt},
              {"max_time", s.sim.max_time},
              {"n_paths", s.sim.n_paths},
              {"seed", s.sim.seed},
              {"bridge_correction", s.sim.bridge_correction}}},
            {"parameters", s.parameters}};
}

json validation_json(const ValidationReport& v) {
    return {{"samples", v.samples},
            {"min_quotient", v.min_quotient},
            {"max_quotient", v.max_quotient},
            {"max_abs_drift", v.max_abs_drift},
            {"symmetry_residual", v.symmetry_residual},
            {"passed", v.passed},
            {"failures", v.failures}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

void write_table(const fs::path& dir, const Table& t) {
    std::ostringstream out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "\t" : "") << t.columns[i];
    out << "\n";
    char buf[32];
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", row[i]);
            out << (i ? "\t" : "") << buf;
        }
        out << "\n";
    }
    write_text(dir / t.file, out.str());
}

void dump_paths(const fs::path& dir, const CoefficientField& field, Params& p, const SimConfig& sim) {
    const Vec x = p.vec("dump_start", Vec::Zero(field.dimension()));
    const double s = p.num("dump_time", 0.0);
    SimConfig cfg = sim;
    cfg.max_time = p.num("dump_horizon", 1.0);
    std::vector<Path> paths;
    for (std::uint64_t i = 0; i < std::min<std::uint64_t>(kDumpPaths, sim.n_paths); ++i)
        paths.push_back(simulate_path(field, s, x, cfg, i));
    std::ofstream out(dir / "trajectories.bin", std::ios::binary);
    if (!out) throw Error("cannot write trajectories.bin");
    write_trajectory_dump(out, paths, cfg.dt);
}

}  // namespace

RunResult run_scenario(const Scenario& input, const RunOptions& options) {
    Scenario scenario = input;
    if (options.seed) scenario.sim.seed = *options.seed;
    if (options.workers > 0) set_default_workers(options.workers);

    RunResult result;
    result.output_dir = options.out ? *options.out
                                    : fs::path(scenario.output.empty() ? "out/" + scenario.name : scenario.output);

    json report{{"schema_version", kSchemaVersion},
                {"scenario", scenario_json(scenario)},
                {"config_hash", config_hash(scenario)},
                {"seed", scenario.sim.seed},
                {"timestamp", options.timestamp.value_or(utc_timestamp())},
                {"validation", nullptr},
                {"results", nullptr},
                {"warnings", json::array()},
                {"error", nullptr}};
    Outcome outcome;
    try {
        fs::create_directories(result.output_dir);
        scenario.certificate.validate();
        scenario.sim.validate();
        const FieldPtr field = make_field(scenario.certificate, scenario.field);
        const int d = field->dimension();
        const auto validation =
            validate_ellipticity(*field, 10000, SampleBox::cube(d, 2.0, 0.0, 2.0), mix_seed(scenario.sim.seed, 0xfe));
        report["validation"] = validation_json(validation);
        if (!validation.passed) {
            std::string why;
            for (const auto& f : validation.failures) why += (why.empty() ? "" : "; ") + f;
            throw PreconditionError("field fails ellipticity validation: " + why);
        }
        Context ctx{scenario, field, scenario.sim, Params(scenario.parameters, d), d};
        for (const char* key : {"dump_start", "dump_time", "dump_horizon"}) ctx.params.has(key);
        outcome = dispatch(ctx);
        ctx.params.reject_unused();
        if (options.dump_paths) dump_paths(result.output_dir, *field, ctx.params, scenario.sim);
        report["results"] = outcome.results;
        report["warnings"] = outcome.warnings;
        result.warnings = outcome.warnings;
        result.exit_status = outcome.warnings.empty() ? kExitOk : kExitWarnings;
    } catch (const std::exception& e) {
        result.exit_status = kExitFailure;
        result.error = e.what();
        report["error"] = result.error;
    }
    report["exit_status"] = result.exit_status;

    std::ostringstream summary;
    summary << scenario.name << " (" << scenario.experiment << ")\n";
    if (!scenario.description.empty()) summary << scenario.description << "\n";
    summary << "field " << scenario.field.family << ", d = " << scenario.certificate.dimension
            << ", nu = " << scenario.certificate.nu << ", K = " << scenario.certificate.k_bound << "\n"
            << "paths " << scenario.sim.n_paths << ", dt " << scenario.sim.dt << ", seed " << scenario.sim.seed
            << ", config " << config_hash(scenario) << "\n\n";
    for (const auto& line : outcome.summary) summary << line << "\n";
    for (const auto& w : result.warnings) summary << "warning: " << w << "\n";
    if (!result.error.empty()) summary << "error: " << result.error << "\n";
    summary << "exit status " << result.exit_status << "\n";

    try {
        fs::create_directories(result.output_dir);
        write_text(result.output_dir / "report.json", report.dump(2) + "\n");
        write_text(result.output_dir / "summary.txt", summary.str());
        write_text(result.output_dir / "scenario.cfg", serialize_scenario(scenario));
        if (result.exit_status != kExitFailure)
            for (const auto& t : outcome.tables) write_table(result.output_dir, t);
    } catch (const std::exception& e) {
        result.exit_status = kExitFailure;
        result.error = e.what();
    }
    return result;
}

}  // namespace qdlab
