// experiment orchestration: config parsing, request expansion, the resumable
// batch log, csv/fits emission and the report view.

#include "perclab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "perclab/analysis.hpp"
#include "perclab/errors.hpp"
#include "perclab/selftest.hpp"

namespace perclab {

namespace {

using ojson = nlohmann::ordered_json;

// ---- small utilities -------------------------------------------------------

std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string iso_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure on " + path);
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    const bool wrote = std::fwrite(content.data(), 1, content.size(), f) == content.size();
    const bool closed = std::fclose(f) == 0;
    if (!wrote || !closed) throw IoError("short write on " + path);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---- config parsing --------------------------------------------------------

[[noreturn]] void cfg_fail(const std::string& where, const std::string& what) {
    throw ConfigInvalid("config field '" + where + "': " + what);
}

void check_known_fields(const ojson& obj, std::initializer_list<const char*> known,
                        const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) cfg_fail(where.empty() ? it.key() : where + "." + it.key(), "unknown field");
    }
}

const ojson& need(const ojson& obj, const char* field, const std::string& where) {
    auto it = obj.find(field);
    if (it == obj.end())
        cfg_fail(where.empty() ? field : where + "." + field, "missing");
    return *it;
}

double as_number(const ojson& v, const std::string& where) {
    if (!v.is_number()) cfg_fail(where, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) cfg_fail(where, "must be finite");
    return d;
}

std::int64_t as_integer(const ojson& v, const std::string& where) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
        cfg_fail(where, "must be an integer");
    return v.get<std::int64_t>();
}

PointRole role_from_name(const std::string& name, const std::string& where) {
    if (name == "spin") return PointRole::spin;
    if (name == "energy_center") return PointRole::energy_center;
    if (name == "energy_delta_center") return PointRole::energy_delta_center;
    cfg_fail(where, "unknown role '" + name + "'");
}

const char* role_to_name(PointRole role) {
    switch (role) {
        case PointRole::spin: return "spin";
        case PointRole::energy_center: return "energy_center";
        case PointRole::energy_delta_center: return "energy_delta_center";
    }
    return "spin";
}

PointSpec parse_point(const ojson& jp, const std::string& where) {
    if (!jp.is_object()) cfg_fail(where, "must be an object");
    check_known_fields(jp, {"z", "role", "delta"}, where);
    PointSpec p;
    const ojson& z = need(jp, "z", where);
    if (!z.is_array() || z.size() != 2) cfg_fail(where + ".z", "must be [x, y]");
    p.z = {as_number(z[0], where + ".z[0]"), as_number(z[1], where + ".z[1]")};
    if (jp.contains("role")) {
        if (!jp["role"].is_string()) cfg_fail(where + ".role", "must be a string");
        p.role = role_from_name(jp["role"].get<std::string>(), where + ".role");
    }
    if (jp.contains("delta")) p.delta = as_number(jp["delta"], where + ".delta");
    if (p.role == PointRole::energy_delta_center) {
        if (!(p.delta > 0.0)) cfg_fail(where + ".delta", "must be positive for energy_delta_center");
    } else if (p.delta != 0.0) {
        cfg_fail(where + ".delta", "only meaningful for energy_delta_center points");
    }
    return p;
}

CorrelatorRequest parse_request(const ojson& jr, const std::string& where) {
    if (!jr.is_object()) cfg_fail(where, "must be an object");
    check_known_fields(jr, {"id", "kind", "points", "spacing", "n_samples", "batch_size", "radii"},
                       where);
    CorrelatorRequest r;
    const ojson& id = need(jr, "id", where);
    if (!id.is_string()) cfg_fail(where + ".id", "must be a string");
    r.request_id = id.get<std::string>();
    if (r.request_id.empty()) cfg_fail(where + ".id", "must be non-empty");
    for (unsigned char c : r.request_id)
        if (c < 0x20) cfg_fail(where + ".id", "control characters are not allowed");
    if (r.request_id.rfind("pi_plugin", 0) == 0)
        cfg_fail(where + ".id", "the prefix 'pi_plugin' is reserved for internal plug-in runs");
    const ojson& kind = need(jr, "kind", where);
    if (!kind.is_string()) cfg_fail(where + ".kind", "must be a string");
    r.kind = kind_from_name(kind.get<std::string>()); // throws ConfigInvalid on bad names
    if (jr.contains("points")) {
        if (!jr["points"].is_array()) cfg_fail(where + ".points", "must be an array");
        int i = 0;
        for (const auto& jp : jr["points"])
            r.points.push_back(parse_point(jp, where + ".points[" + std::to_string(i++) + "]"));
    }
    if (jr.contains("spacing")) {
        r.spacing = as_number(jr["spacing"], where + ".spacing");
        if (r.spacing < 0.0) cfg_fail(where + ".spacing", "must be >= 0 (0 = sweep over spacings)");
    }
    r.n_samples = as_integer(need(jr, "n_samples", where), where + ".n_samples");
    r.batch_size = as_integer(need(jr, "batch_size", where), where + ".batch_size");
    if (jr.contains("radii")) {
        if (r.kind != CorrelatorKind::one_arm_curve && r.kind != CorrelatorKind::four_arm_curve)
            cfg_fail(where + ".radii", "only arm-curve requests take radii");
        if (!jr["radii"].is_array()) cfg_fail(where + ".radii", "must be an array");
        int i = 0;
        for (const auto& jv : jr["radii"])
            r.radii.push_back(as_number(jv, where + ".radii[" + std::to_string(i++) + "]"));
    }
    return r;
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    ojson j = ojson::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigInvalid("config is not valid json");
    if (!j.is_object()) throw ConfigInvalid("config must be a json object");
    check_known_fields(j,
                       {"master_seed", "spacings", "domain_radius", "correlators", "workers",
                        "checkpoint_every", "output_dir", "pi_samples", "pi_batch_size"},
                       "");
    ExperimentConfig cfg;
    const ojson& seed = need(j, "master_seed", "");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
        cfg_fail("master_seed", "must be a non-negative integer");
    cfg.master_seed = seed.get<std::uint64_t>();

    const ojson& sp = need(j, "spacings", "");
    if (!sp.is_array() || sp.empty()) cfg_fail("spacings", "must be a non-empty array");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        const double a = as_number(sp[i], "spacings[" + std::to_string(i) + "]");
        if (!(a > 0.0)) cfg_fail("spacings[" + std::to_string(i) + "]", "must be positive");
        for (double prev : cfg.spacings)
            if (prev == a) cfg_fail("spacings", "values must be distinct");
        cfg.spacings.push_back(a);
    }

    cfg.domain_radius = as_number(need(j, "domain_radius", ""), "domain_radius");
    if (!(cfg.domain_radius > 0.0)) cfg_fail("domain_radius", "must be positive");

    const ojson& cs = need(j, "correlators", "");
    if (!cs.is_array() || cs.empty()) cfg_fail("correlators", "must be a non-empty array");
    for (std::size_t i = 0; i < cs.size(); ++i)
        cfg.correlators.push_back(parse_request(cs[i], "correlators[" + std::to_string(i) + "]"));

    if (j.contains("workers")) {
        cfg.workers = static_cast<int>(as_integer(j["workers"], "workers"));
        if (cfg.workers < 1) cfg_fail("workers", "must be >= 1");
    }
    if (j.contains("checkpoint_every")) {
        cfg.checkpoint_every = as_integer(j["checkpoint_every"], "checkpoint_every");
        if (cfg.checkpoint_every < 1) cfg_fail("checkpoint_every", "must be >= 1");
    }
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) cfg_fail("output_dir", "must be a string");
        cfg.output_dir = j["output_dir"].get<std::string>();
        if (cfg.output_dir.empty()) cfg_fail("output_dir", "must be non-empty");
    }
    if (j.contains("pi_samples")) {
        cfg.pi_samples = as_integer(j["pi_samples"], "pi_samples");
        if (cfg.pi_samples < 1) cfg_fail("pi_samples", "must be >= 1");
    }
    if (j.contains("pi_batch_size")) {
        cfg.pi_batch_size = as_integer(j["pi_batch_size"], "pi_batch_size");
        if (cfg.pi_batch_size < 1) cfg_fail("pi_batch_size", "must be >= 1");
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    return parse_experiment_config(read_file(path));
}

namespace {

ojson config_to_json(const ExperimentConfig& cfg, bool with_runtime_fields) {
    ojson j;
    j["master_seed"] = cfg.master_seed;
    j["domain_radius"] = cfg.domain_radius;
    j["spacings"] = cfg.spacings;
    j["pi_samples"] = cfg.pi_samples;
    j["pi_batch_size"] = cfg.pi_batch_size;
    ojson arr = ojson::array();
    for (const auto& r : cfg.correlators) {
        ojson jr;
        jr["id"] = r.request_id;
        jr["kind"] = kind_name(r.kind);
        jr["spacing"] = r.spacing;
        jr["n_samples"] = r.n_samples;
        jr["batch_size"] = r.batch_size;
        ojson pts = ojson::array();
        for (const auto& p : r.points) {
            ojson jp;
            jp["z"] = {p.z.real(), p.z.imag()};
            jp["role"] = role_to_name(p.role);
            if (p.role == PointRole::energy_delta_center) jp["delta"] = p.delta;
            pts.push_back(jp);
        }
        jr["points"] = pts;
        if (!r.radii.empty()) jr["radii"] = r.radii;
        arr.push_back(jr);
    }
    j["correlators"] = arr;
    if (with_runtime_fields) {
        j["workers"] = cfg.workers;
        j["checkpoint_every"] = cfg.checkpoint_every;
        j["output_dir"] = cfg.output_dir;
    }
    return j;
}

} // namespace

std::string canonical_config_json(const ExperimentConfig& cfg) {
    return config_to_json(cfg, false).dump();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    return fnv1a64(canonical_config_json(cfg));
}

std::string config_file_json(const ExperimentConfig& cfg) {
    return config_to_json(cfg, true).dump(2) + "\n";
}

// ---- request expansion and eager validation --------------------------------

bool request_needs_pi(const CorrelatorRequest& req) {
    switch (req.kind) {
        case CorrelatorKind::spin_n_point:
        case CorrelatorKind::energy_spin_spin:
        case CorrelatorKind::edelta_spin_spin:
        case CorrelatorKind::edelta_energy:
        case CorrelatorKind::edelta_edelta:
            return true;
        case CorrelatorKind::annulus_terms:
            return req.points.size() == 3; // the single (energy + spin pair) form
        default:
            return false;
    }
}

namespace {

std::string spacing_suffix(double a) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "@a=%.9g", a);
    return buf;
}

// the spec'd sampling and separation pre-conditions live here so that a bad
// request fails in milliseconds, before any sampling starts
void validate_request_config(const CorrelatorRequest& r, bool plugin) {
    const std::string where =
        (plugin ? std::string("pi plug-in '") : std::string("request '")) + r.request_id + "'";
    auto fail = [&](const std::string& m) { throw ConfigInvalid(where + ": " + m); };
    const char* nname = plugin ? "pi_samples" : "n_samples";
    const char* bname = plugin ? "pi_batch_size" : "batch_size";
    if (r.batch_size <= 0 || r.batch_size % 2 != 0)
        fail(std::string(bname) + " must be positive and even");
    if (r.n_samples <= 0 || r.n_samples % r.batch_size != 0)
        fail(std::string(nname) + " must be a positive multiple of " + bname);
    if (r.n_samples / r.batch_size < 30)
        fail(std::string("need at least 30 batches for std errors (") + nname + " too small)");
    const double a = r.spacing;
    if (!(a > 0.0)) fail("spacing did not resolve to a positive value");

    switch (r.kind) {
        case CorrelatorKind::energy_spin_spin:
        case CorrelatorKind::energy_energy:
        case CorrelatorKind::annulus_terms:
            if (a >= 1.0) fail("spacing must be below 1 (log(1/a) normalization)");
            break;
        default:
            break;
    }

    auto sep = [&](std::size_t i, std::size_t j) { return std::abs(r.points[i].z - r.points[j].z); };
    const double slack = 1e-12;
    switch (r.kind) {
        case CorrelatorKind::energy_spin_spin:
            if (r.points.size() == 3)
                for (std::size_t i = 0; i < 3; ++i)
                    for (std::size_t j = i + 1; j < 3; ++j)
                        if (sep(i, j) < 4.0 * a - slack)
                            fail("pairwise separations must be at least 4*spacing");
            break;
        case CorrelatorKind::energy_energy:
            if (r.points.size() == 2 && sep(0, 1) < 8.0 * a - slack)
                fail("separation must be at least 8*spacing");
            break;
        case CorrelatorKind::edelta_spin_spin:
        case CorrelatorKind::edelta_energy:
        case CorrelatorKind::edelta_edelta: {
            auto dlt = [&](std::size_t i) {
                return r.points[i].role == PointRole::energy_delta_center ? r.points[i].delta : 0.0;
            };
            for (std::size_t i = 0; i < r.points.size(); ++i)
                if (r.points[i].role == PointRole::energy_delta_center && !(r.points[i].delta > a))
                    fail("delta must exceed the spacing");
            for (std::size_t i = 0; i < r.points.size(); ++i)
                for (std::size_t j = i + 1; j < r.points.size(); ++j)
                    if (sep(i, j) < 2.0 * (dlt(i) + dlt(j)) - slack)
                        fail("separations must be at least 2*(delta_i + delta_j)");
            break;
        }
        default:
            break;
    }
}

// rebuild geometry errors with the request named, keeping the error type
void validate_request_geometry(const CorrelatorRequest& r, const Domain& domain) {
    const std::string where = "request '" + r.request_id + "': ";
    try {
        (void)make_sample_kernel(r, domain);
    } catch (const GeometryTooTight& e) {
        throw GeometryTooTight(where + e.what());
    } catch (const MarginTooSmall& e) {
        throw MarginTooSmall(where + e.what());
    } catch (const DomainTooSmall& e) {
        throw DomainTooSmall(where + e.what());
    } catch (const CoincidentPoints& e) {
        throw CoincidentPoints(where + e.what());
    } catch (const DegenerateInput& e) {
        throw DegenerateInput(where + e.what());
    } catch (const OddPointCount& e) {
        throw OddPointCount(where + e.what());
    }
}

} // namespace

std::vector<ExpandedRequest> expand_requests(const ExperimentConfig& cfg) {
    std::vector<ExpandedRequest> reqs;
    for (const auto& r : cfg.correlators) {
        if (r.spacing == 0.0) {
            for (double a : cfg.spacings) {
                ExpandedRequest e;
                e.req = r;
                e.req.spacing = a;
                e.req.request_id += spacing_suffix(a);
                reqs.push_back(std::move(e));
            }
        } else {
            reqs.push_back({r, 0, false});
        }
    }
    for (std::size_t i = 0; i < reqs.size(); ++i)
        reqs[i].stream = static_cast<std::uint32_t>(i);

    std::set<std::string> seen;
    for (const auto& e : reqs)
        if (!seen.insert(e.req.request_id).second)
            throw ConfigInvalid("duplicate request id after sweep expansion: '" +
                                e.req.request_id + "'");

    // one internal one-arm plug-in per spacing that needs a pi_a factor
    std::vector<double> pi_spacings;
    for (const auto& e : reqs)
        if (request_needs_pi(e.req)) pi_spacings.push_back(e.req.spacing);
    std::sort(pi_spacings.begin(), pi_spacings.end());
    pi_spacings.erase(std::unique(pi_spacings.begin(), pi_spacings.end()), pi_spacings.end());

    std::vector<ExpandedRequest> out;
    out.reserve(pi_spacings.size() + reqs.size());
    for (std::size_t k = 0; k < pi_spacings.size(); ++k) {
        ExpandedRequest p;
        p.req.kind = CorrelatorKind::pi_a;
        p.req.request_id = "pi_plugin" + spacing_suffix(pi_spacings[k]);
        p.req.spacing = pi_spacings[k];
        p.req.n_samples = cfg.pi_samples;
        p.req.batch_size = cfg.pi_batch_size;
        p.stream = 0x80000000u | static_cast<std::uint32_t>(k);
        p.is_pi_plugin = true;
        out.push_back(std::move(p));
    }
    out.insert(out.end(), reqs.begin(), reqs.end());
    return out;
}

RunOptions run_options_from_env() {
    RunOptions opt;
    if (const char* d = std::getenv("PERCLAB_OUTPUT_DIR"); d != nullptr && *d != '\0')
        opt.output_dir = std::string(d);
    if (const char* w = std::getenv("PERCLAB_WORKERS"); w != nullptr && *w != '\0') {
        char* end = nullptr;
        long v = std::strtol(w, &end, 10);
        if (end == nullptr || *end != '\0' || v < 1)
            throw ConfigInvalid("PERCLAB_WORKERS must be a positive integer");
        opt.workers = static_cast<int>(v);
    }
    if (const char* a = std::getenv("PERCLAB_ABORT_AFTER_BATCHES"); a != nullptr && *a != '\0') {
        char* end = nullptr;
        long long v = std::strtoll(a, &end, 10);
        if (end == nullptr || *end != '\0' || v < 0)
            throw ConfigInvalid("PERCLAB_ABORT_AFTER_BATCHES must be a non-negative integer");
        opt.abort_after_batches = v;
    }
    return opt;
}

// ---- batch log -------------------------------------------------------------

std::string format_batch_line(const std::string& request_id, std::int64_t batch,
                              const double* sums, int n2) {
    ojson j;
    j["request_id"] = request_id;
    j["batch"] = batch;
    j["sums"] = std::vector<double>(sums, sums + n2);
    std::string payload = j.dump();
    const std::string check = hex16(fnv1a64(payload));
    payload.pop_back(); // replace the closing brace with the checksum field
    payload += ",\"check\":\"";
    payload += check;
    payload += "\"}";
    return payload;
}

BatchLog read_batch_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    BatchLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = "batches.ndjson line " + std::to_string(lineno);
        const std::string marker = ",\"check\":\"";
        const auto cpos = line.rfind(marker);
        if (cpos == std::string::npos || line.size() != cpos + marker.size() + 16 + 2 ||
            line.compare(line.size() - 2, 2, "\"}") != 0)
            throw CorruptCheckpoint(where + ": malformed record");
        const std::string payload = line.substr(0, cpos) + "}";
        const std::string stored = line.substr(cpos + marker.size(), 16);
        if (stored != hex16(fnv1a64(payload)))
            throw CorruptCheckpoint(where + ": checksum mismatch");
        ojson j = ojson::parse(payload, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("request_id") ||
            !j["request_id"].is_string() || !j.contains("batch") ||
            !j["batch"].is_number_integer() || !j.contains("sums") || !j["sums"].is_array())
            throw CorruptCheckpoint(where + ": missing fields");
        const std::int64_t batch = j["batch"].get<std::int64_t>();
        if (batch < 0) throw CorruptCheckpoint(where + ": negative batch index");
        std::vector<double> sums;
        sums.reserve(j["sums"].size());
        for (const auto& v : j["sums"]) {
            if (!v.is_number()) throw CorruptCheckpoint(where + ": non-numeric sum");
            sums.push_back(v.get<double>());
        }
        log[j["request_id"].get<std::string>()].emplace_back(batch, std::move(sums));
    }
    for (auto& [id, rows] : log)
        std::sort(rows.begin(), rows.end(),
                  [](const auto& x, const auto& y) { return x.first < y.first; });
    return log;
}

// ---- estimates.csv ---------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

// minimal csv reader matching csv_field's quoting (quotes doubled inside
// quoted fields); returns rows of cells
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"' && cell.empty()) {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(cell));
            cell.clear();
        } else if (c == '\n') {
            row.push_back(std::move(cell));
            cell.clear();
            rows.push_back(std::move(row));
            row.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    if (!cell.empty() || !row.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::string csv_from_records(const std::vector<EstimateRecord>& records) {
    std::string out =
        "request_id,kind,a,point_json,n,raw_mean,std_error,normalization,normalized_value\n";
    for (const auto& r : records) {
        char nbuf[24];
        std::snprintf(nbuf, sizeof nbuf, "%lld", static_cast<long long>(r.n));
        out += csv_field(r.request_id);
        out += ',';
        out += kind_name(r.kind);
        out += ',';
        out += g17(r.spacing);
        out += ',';
        out += csv_field(r.point_json);
        out += ',';
        out += nbuf;
        out += ',';
        out += g17(r.raw_mean);
        out += ',';
        out += g17(r.std_error);
        out += ',';
        out += csv_field(normalization_json(r.norm));
        out += ',';
        out += g17(r.normalized_value);
        out += '\n';
    }
    return out;
}

// ---- fits.json -------------------------------------------------------------

namespace {

bool plain_id(const std::string& id) { return id.find('#') == std::string::npos; }

ojson fit_to_json(const FitResult& f) {
    ojson j;
    j["exponent"] = f.exponent_or_slope;
    j["exponent_std_error"] = f.slope_std_error;
    j["intercept"] = f.intercept;
    j["intercept_std_error"] = f.intercept_std_error;
    j["chi_square"] = f.chi_square;
    j["dof"] = f.dof;
    return j;
}

// best record (largest n) per key
template <typename Key, typename Cmp = std::less<Key>>
using BestMap = std::map<Key, const EstimateRecord*, Cmp>;

template <typename Key, typename Cmp>
void keep_best(BestMap<Key, Cmp>& m, Key k, const EstimateRecord& r) {
    auto& slot = m[k];
    if (slot == nullptr || r.n > slot->n) slot = &r;
}

} // namespace

std::string fits_json_from_records(const std::vector<EstimateRecord>& records) {
    ojson fits = ojson::object();

    // one-arm probability against the linear size 1/a of the unit-radius
    // target (records of kind pi_a, plug-ins and explicit requests alike);
    // the decay exponent against 1/a is the one-arm exponent -5/48
    {
        BestMap<double> by_a;
        for (const auto& r : records)
            if (r.kind == CorrelatorKind::pi_a && plain_id(r.request_id))
                keep_best(by_a, r.spacing, r);
        if (by_a.size() >= 3) {
            std::vector<double> as, xs, ys, es;
            for (const auto& [a, rec] : by_a) {
                as.push_back(a);
                xs.push_back(1.0 / a);
                ys.push_back(rec->raw_mean);
                es.push_back(rec->std_error);
            }
            try {
                ojson j = fit_to_json(fit_power_law(xs, ys, es));
                j["reference_exponent"] = -5.0 / 48.0;
                j["spacings"] = as;
                fits["one_arm_power_fit"] = j;
            } catch (const Error&) {
            }
        }
    }

    // affine-in-log(1/a) growth of the scaled three-point energy correlator
    {
        BestMap<double> by_a;
        for (const auto& r : records)
            if (r.kind == CorrelatorKind::energy_spin_spin && plain_id(r.request_id) &&
                r.spacing > 0.0 && r.spacing < 1.0)
                keep_best(by_a, r.spacing, r);
        if (by_a.size() >= 4) {
            std::vector<double> xs, ys, es;
            for (const auto& [a, rec] : by_a) {
                const double L = std::log(1.0 / a);
                xs.push_back(a);
                ys.push_back(rec->normalized_value * L);
                es.push_back(rec->normalized_std_error * L);
            }
            try {
                const FitResult f = fit_log_correction(xs, ys, es);
                ojson j;
                j["beta"] = f.exponent_or_slope;
                j["beta_std_error"] = f.slope_std_error;
                j["significance"] =
                    f.slope_std_error > 0.0 ? f.exponent_or_slope / f.slope_std_error : 0.0;
                j["intercept"] = f.intercept;
                j["intercept_std_error"] = f.intercept_std_error;
                j["chi_square"] = f.chi_square;
                j["dof"] = f.dof;
                j["spacings"] = xs;
                fits["energy_spin_spin_log_fit"] = j;
            } catch (const Error&) {
            }
        }
    }

    // the two normalizations of the energy two-point sweep, coarse to fine
    {
        auto sequence = [&](const char* suffix) {
            BestMap<double, std::greater<double>> by_a;
            for (const auto& r : records)
                if (r.kind == CorrelatorKind::energy_energy && ends_with(r.request_id, suffix))
                    keep_best(by_a, r.spacing, r);
            ojson arr = ojson::array();
            for (const auto& [a, rec] : by_a) {
                ojson j;
                j["a"] = a;
                j["normalized_value"] = rec->normalized_value;
                j["normalized_std_error"] = rec->normalized_std_error;
                arr.push_back(j);
            }
            return arr;
        };
        ojson van = sequence("#vanishing");
        ojson bnd = sequence("#bounded");
        if (!van.empty() || !bnd.empty()) {
            ojson j;
            j["vanishing"] = van;
            j["bounded"] = bnd;
            fits["energy_energy_sequences"] = j;
        }
    }

    // normalized spin pair correlator against separation at the finest spacing
    {
        struct PairRow {
            double sep;
            const EstimateRecord* rec;
        };
        std::vector<PairRow> rows;
        double a_min = 0.0;
        for (const auto& r : records) {
            if (r.kind != CorrelatorKind::spin_n_point || !plain_id(r.request_id)) continue;
            ojson pts = ojson::parse(r.point_json, nullptr, false);
            if (pts.is_discarded() || !pts.is_array() || pts.size() != 2) continue;
            const std::complex<double> z1{pts[0]["z"][0].get<double>(),
                                          pts[0]["z"][1].get<double>()};
            const std::complex<double> z2{pts[1]["z"][0].get<double>(),
                                          pts[1]["z"][1].get<double>()};
            if (a_min == 0.0 || r.spacing < a_min) a_min = r.spacing;
            rows.push_back({std::abs(z2 - z1), &r});
        }
        BestMap<double> by_sep;
        for (const auto& row : rows)
            if (row.rec->spacing == a_min) keep_best(by_sep, row.sep, *row.rec);
        if (by_sep.size() >= 3) {
            std::vector<double> xs, ys, es;
            for (const auto& [s, rec] : by_sep) {
                xs.push_back(s);
                ys.push_back(rec->normalized_value);
                es.push_back(rec->normalized_std_error);
            }
            try {
                ojson j = fit_to_json(fit_power_law(xs, ys, es));
                j["reference_exponent"] = -5.0 / 24.0;
                j["spacing"] = a_min;
                j["separations"] = xs;
                fits["spin_pair_power_fit"] = j;
            } catch (const Error&) {
            }
        }
    }

    // arm-curve probability against radius, one fit per curve request
    {
        auto curve_fits = [&](CorrelatorKind kind, double ref) {
            std::map<std::string, BestMap<double>> groups;
            for (const auto& r : records) {
                if (r.kind != kind) continue;
                const auto pos = r.request_id.find("#r=");
                if (pos == std::string::npos) continue;
                const double radius = std::strtod(r.request_id.c_str() + pos + 3, nullptr);
                if (!(radius > 0.0)) continue;
                keep_best(groups[r.request_id.substr(0, pos)], radius, r);
            }
            ojson arr = ojson::array();
            for (const auto& [base, by_r] : groups) {
                if (by_r.size() < 3) continue;
                std::vector<double> xs, ys, es;
                for (const auto& [radius, rec] : by_r) {
                    xs.push_back(radius);
                    ys.push_back(rec->raw_mean);
                    es.push_back(rec->std_error);
                }
                try {
                    ojson j;
                    j["request_id"] = base;
                    ojson f = fit_to_json(fit_power_law(xs, ys, es));
                    for (auto it = f.begin(); it != f.end(); ++it) j[it.key()] = it.value();
                    j["reference_exponent"] = ref;
                    j["radii"] = xs;
                    arr.push_back(j);
                } catch (const Error&) {
                }
            }
            return arr;
        };
        ojson one = curve_fits(CorrelatorKind::one_arm_curve, -5.0 / 48.0);
        ojson four = curve_fits(CorrelatorKind::four_arm_curve, -5.0 / 4.0);
        if (!one.empty()) fits["one_arm_curve_fits"] = one;
        if (!four.empty()) fits["four_arm_curve_fits"] = four;
    }

    return fits.dump(2) + "\n";
}

// ---- run / resume ----------------------------------------------------------

namespace {

struct RequestState {
    std::string id;
    std::int64_t total = 0;
    std::int64_t done = 0;
};

void write_manifest(const std::string& path, const std::string& hash_hex,
                    const std::string& started, const std::string& finished, bool complete,
                    const std::vector<RequestState>& states) {
    ojson man;
    man["code_version"] = kCodeVersion;
    man["config_hash"] = hash_hex;
    man["started_at"] = started;
    man["finished_at"] = finished;
    man["complete"] = complete;
    ojson arr = ojson::array();
    for (const auto& s : states) {
        ojson j;
        j["id"] = s.id;
        j["total_batches"] = s.total;
        j["done_batches"] = s.done;
        j["complete"] = s.done == s.total;
        arr.push_back(j);
    }
    man["requests"] = arr;
    write_file(path, man.dump(2) + "\n");
}

// per-request sink writing freshly computed batches to the ndjson log.
// runs inside the engine's critical section, so it must not throw.
struct EmitCtx {
    std::FILE* f = nullptr;
    const std::string* id = nullptr;
    std::int64_t flush_every = 16;
    std::int64_t since_flush = 0;
    std::int64_t emitted = 0;
    bool io_ok = true;
};

void emit_batch_line(void* user, std::int64_t batch, const double* sums, int n2) {
    auto* ctx = static_cast<EmitCtx*>(user);
    ctx->emitted++;
    if (!ctx->io_ok) return;
    std::string line = format_batch_line(*ctx->id, batch, sums, n2);
    line += '\n';
    if (std::fwrite(line.data(), 1, line.size(), ctx->f) != line.size()) {
        ctx->io_ok = false;
        return;
    }
    if (++ctx->since_flush >= ctx->flush_every) {
        std::fflush(ctx->f);
        ctx->since_flush = 0;
    }
}

struct DomainCache {
    double radius = 0.0;
    std::map<double, std::unique_ptr<Domain>> by_spacing;

    const Domain& get(double a) {
        auto& slot = by_spacing[a];
        if (!slot) slot = std::make_unique<Domain>(a, radius);
        return *slot;
    }
};

} // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opt, bool resuming) {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = cfg_in;
    if (opt.output_dir) cfg.output_dir = *opt.output_dir;
    if (opt.workers) cfg.workers = *opt.workers;
    if (cfg.workers < 1) throw ConfigInvalid("config field 'workers': must be >= 1");

    // eager validation: every request, every spacing, before any disk write
    std::vector<ExpandedRequest> expanded = expand_requests(cfg);
    DomainCache domains{cfg.domain_radius};
    for (const auto& e : expanded) {
        validate_request_config(e.req, e.is_pi_plugin);
        if (!e.is_pi_plugin) validate_request_geometry(e.req, domains.get(e.req.spacing));
    }

    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output dir " + cfg.output_dir + ": " + ec.message());
    const std::string cfg_path = cfg.output_dir + "/config.json";
    const std::string manifest_path = cfg.output_dir + "/manifest.json";
    const std::string nd_path = cfg.output_dir + "/batches.ndjson";
    const std::string csv_path = cfg.output_dir + "/estimates.csv";
    const std::string fits_path = cfg.output_dir + "/fits.json";
    const std::string hash_hex = hex16(config_hash(cfg));

    BatchLog log;
    std::string started_at = iso_now();
    if (resuming) {
        if (!fs::exists(manifest_path))
            throw CorruptCheckpoint("resume: manifest.json missing in " + cfg.output_dir);
        if (!fs::exists(nd_path))
            throw CorruptCheckpoint("resume: batches.ndjson missing in " + cfg.output_dir);
        ojson man = ojson::parse(read_file(manifest_path), nullptr, false);
        if (man.is_discarded() || !man.is_object())
            throw CorruptCheckpoint("resume: manifest.json is not valid json");
        if (!man.contains("config_hash") || !man["config_hash"].is_string())
            throw CorruptCheckpoint("resume: manifest.json has no config_hash");
        if (man["config_hash"].get<std::string>() != hash_hex)
            throw CorruptCheckpoint("resume: config hash mismatch between config and manifest");
        if (man.contains("started_at") && man["started_at"].is_string() &&
            !man["started_at"].get<std::string>().empty())
            started_at = man["started_at"].get<std::string>();
        if (man.value("complete", false)) return {true, cfg.output_dir, {}};
        log = read_batch_log(nd_path);
        for (const auto& [id, rows] : log) {
            bool known = false;
            for (const auto& e : expanded)
                if (e.req.request_id == id) known = true;
            if (!known)
                throw CorruptCheckpoint("batches.ndjson contains unknown request '" + id + "'");
        }
    } else {
        write_file(cfg_path, config_file_json(cfg));
        fs::remove(csv_path, ec);
        fs::remove(fits_path, ec);
    }

    std::vector<RequestState> states(expanded.size());
    for (std::size_t i = 0; i < expanded.size(); ++i) {
        states[i].id = expanded[i].req.request_id;
        states[i].total = expanded[i].req.n_samples / expanded[i].req.batch_size;
        auto it = log.find(states[i].id);
        states[i].done = it == log.end() ? 0 : static_cast<std::int64_t>(it->second.size());
    }
    write_manifest(manifest_path, hash_hex, started_at, "", false, states);

    std::FILE* f = std::fopen(nd_path.c_str(), resuming ? "ab" : "wb");
    if (f == nullptr) throw IoError("cannot open " + nd_path + " for writing");

    std::int64_t remaining = opt.abort_after_batches; // -1 = unlimited
    bool interrupted = false;
    bool io_failed = false;
    std::map<double, PiEstimate> pi_by_spacing;
    std::vector<EstimateRecord> records;

    for (std::size_t i = 0; i < expanded.size() && !interrupted && !io_failed; ++i) {
        const ExpandedRequest& e = expanded[i];
        EmitCtx ctx;
        ctx.f = f;
        ctx.id = &e.req.request_id;
        ctx.flush_every = cfg.checkpoint_every;
        EngineHooks hooks;
        hooks.on_batch = &emit_batch_line;
        hooks.user = &ctx;
        auto lit = log.find(e.req.request_id);
        if (lit != log.end()) hooks.resume = &lit->second;
        hooks.max_new_batches = remaining;
        hooks.workers = cfg.workers;

        bool done_all = false;
        try {
            if (e.is_pi_plugin) {
                // the plug-in needs a unit ball around the origin, which need
                // not fit the experiment domain: it runs on its own patch
                Domain pidom(e.req.spacing, 1.0 + 4.0 * e.req.spacing);
                EstimateRecord rec = estimate_pi(pidom, cfg.master_seed, e.stream,
                                                 e.req.n_samples, e.req.batch_size, hooks);
                rec.request_id = e.req.request_id;
                rec.spacing = e.req.spacing;
                pi_by_spacing[e.req.spacing] = {rec.raw_mean, rec.std_error, rec.n};
                records.push_back(std::move(rec));
                done_all = true;
            } else {
                EstimatorEnv env;
                env.domain = &domains.get(e.req.spacing);
                env.master_seed = cfg.master_seed;
                env.stream = e.stream;
                auto pit = pi_by_spacing.find(e.req.spacing);
                if (pit != pi_by_spacing.end()) env.pi = pit->second;
                env.hooks = hooks;
                std::vector<EstimateRecord> recs = run_request(e.req, env);
                if (!recs.empty()) {
                    records.insert(records.end(), std::make_move_iterator(recs.begin()),
                                   std::make_move_iterator(recs.end()));
                    done_all = true;
                }
            }
        } catch (const MissingData&) {
            done_all = false; // plug-in hit the batch budget mid-run
        } catch (...) {
            std::fclose(f);
            throw;
        }
        states[i].done += ctx.emitted;
        if (!ctx.io_ok) io_failed = true;
        if (remaining >= 0) remaining = std::max<std::int64_t>(0, remaining - ctx.emitted);
        if (!done_all) interrupted = true;
    }

    const bool flush_ok = std::fflush(f) == 0;
    const bool close_ok = std::fclose(f) == 0;
    if (io_failed || !flush_ok || !close_ok) throw IoError("write failure on " + nd_path);

    const bool complete = !interrupted;
    write_manifest(manifest_path, hash_hex, started_at, complete ? iso_now() : "", complete,
                   states);
    RunOutcome out;
    out.complete = complete;
    out.output_dir = cfg.output_dir;
    if (complete) {
        write_file(csv_path, csv_from_records(records));
        write_file(fits_path, fits_json_from_records(records));
        out.records = std::move(records);
    }
    return out;
}

RunOutcome run_command(const std::string& config_path, const RunOptions& opt) {
    return run_experiment(load_config_file(config_path), opt, false);
}

RunOutcome resume_command(const std::string& output_dir, const RunOptions& opt) {
    namespace fs = std::filesystem;
    const std::string cfg_path = output_dir + "/config.json";
    if (!fs::exists(cfg_path))
        throw CorruptCheckpoint("resume: config.json missing in " + output_dir);
    ExperimentConfig cfg;
    try {
        cfg = load_config_file(cfg_path);
    } catch (const Error& e) {
        throw CorruptCheckpoint("resume: config.json unreadable: " + std::string(e.what()));
    }
    RunOptions o2 = opt;
    o2.output_dir = output_dir; // resume acts on the given directory
    return run_experiment(cfg, o2, true);
}

// ---- report ----------------------------------------------------------------

namespace {

double cell_num(const std::vector<std::string>& row, std::size_t i) {
    return i < row.size() ? std::strtod(row[i].c_str(), nullptr) : 0.0;
}

void print_fit_line(std::ostream& out, const char* label, const ojson& j, const char* slope_key,
                    const char* err_key) {
    if (!j.contains(slope_key)) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-28s %+0.5f +- %0.5f", label,
                  j[slope_key].get<double>(), j.value(err_key, 0.0));
    out << buf;
    if (j.contains("reference_exponent")) {
        std::snprintf(buf, sizeof buf, "   (reference %+0.5f)",
                      j["reference_exponent"].get<double>());
        out << buf;
    }
    out << "\n";
}

} // namespace

void report_command(const std::string& output_dir, std::ostream& out) {
    namespace fs = std::filesystem;
    const std::string csv_path = output_dir + "/estimates.csv";
    if (!fs::exists(csv_path))
        throw MissingData("no estimates.csv in " + output_dir + " (run or resume first)");
    const auto rows = parse_csv(read_file(csv_path));
    if (rows.size() <= 1) throw MissingData("estimates.csv has no data rows");

    out << "run directory: " << output_dir << "\n";
    ojson man;
    if (fs::exists(output_dir + "/manifest.json")) {
        man = ojson::parse(read_file(output_dir + "/manifest.json"), nullptr, false);
        if (!man.is_discarded() && man.is_object()) {
            out << "  " << man.value("code_version", std::string("?")) << ", config "
                << man.value("config_hash", std::string("?")) << ", "
                << (man.value("complete", false) ? "complete" : "incomplete") << "\n";
        }
    }

    out << "\nestimates (" << rows.size() - 1 << " rows)\n";
    char buf[512];
    std::snprintf(buf, sizeof buf, "  %-38s %-18s %-10s %-10s %-14s %s\n", "request", "kind", "a",
                  "n", "raw +- err", "normalized");
    out << buf;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() < 9) continue;
        std::snprintf(buf, sizeof buf, "  %-38s %-18s %-10.6g %-10s %-7.5g %-7.4g %.6g\n",
                      r[0].c_str(), r[1].c_str(), cell_num(r, 2), r[4].c_str(), cell_num(r, 5),
                      cell_num(r, 6), cell_num(r, 8));
        out << buf;
    }

    ojson fits = ojson::object();
    if (fs::exists(output_dir + "/fits.json")) {
        fits = ojson::parse(read_file(output_dir + "/fits.json"), nullptr, false);
        if (fits.is_discarded() || !fits.is_object()) fits = ojson::object();
    }
    if (!fits.empty()) {
        out << "\nfits\n";
        if (fits.contains("one_arm_power_fit"))
            print_fit_line(out, "one-arm exponent", fits["one_arm_power_fit"], "exponent",
                           "exponent_std_error");
        if (fits.contains("spin_pair_power_fit"))
            print_fit_line(out, "spin two-point exponent", fits["spin_pair_power_fit"], "exponent",
                           "exponent_std_error");
        if (fits.contains("four_arm_curve_fits"))
            for (const auto& j : fits["four_arm_curve_fits"])
                print_fit_line(out, "four-arm exponent", j, "exponent", "exponent_std_error");
        if (fits.contains("one_arm_curve_fits"))
            for (const auto& j : fits["one_arm_curve_fits"])
                print_fit_line(out, "one-arm curve exponent", j, "exponent", "exponent_std_error");
        if (fits.contains("energy_spin_spin_log_fit")) {
            const ojson& j = fits["energy_spin_spin_log_fit"];
            std::snprintf(buf, sizeof buf,
                          "  %-28s %+0.5f +- %0.5f   (%.2f sigma from zero)\n",
                          "log-correction beta", j.value("beta", 0.0), j.value("beta_std_error", 0.0),
                          j.value("significance", 0.0));
            out << buf;
        }
        if (fits.contains("energy_energy_sequences")) {
            const ojson& seq = fits["energy_energy_sequences"];
            auto print_seq = [&](const char* key, const char* label) {
                if (!seq.contains(key) || seq[key].empty()) return;
                out << "  " << label << ":";
                for (const auto& p : seq[key]) {
                    std::snprintf(buf, sizeof buf, "  %.5g@a=%.4g",
                                  p.value("normalized_value", 0.0), p.value("a", 0.0));
                    out << buf;
                }
                out << "\n";
            };
            print_seq("vanishing", "energy-energy, vanishing normalization (coarse to fine)");
            print_seq("bounded", "energy-energy, bounded normalization   (coarse to fine)");
        }
    }

    // exact covariance self-check of the three-point structure function under
    // a similarity map (needs no data; ratio must be 1 to machine precision)
    const SimilarityMap map{1.7, 0.6, {0.25, -0.4}};
    const std::vector<PointSpec> fpts = {{{0.0, 0.0}, PointRole::energy_center, 0.0},
                                         {{1.0, 0.0}, PointRole::spin, 0.0},
                                         {{-1.0, 0.0}, PointRole::spin, 0.0}};
    const std::vector<double> fweights = {5.0 / 4.0, 5.0 / 48.0, 5.0 / 48.0};
    const ValueWithError ratio = mobius_covariance_check(
        fpts, fweights, map, [](const std::vector<PointSpec>& pts) -> ValueWithError {
            return {eval_F(pts[0].z, pts[1].z, pts[2].z), 0.0};
        });
    std::snprintf(buf, sizeof buf,
                  "\nsimilarity covariance check (structure function): ratio %.12f (target 1)\n",
                  ratio.value);
    out << buf;

    // quick oracle table: exact enumerations only, small patches
    const SelftestReport rep = run_oracle_selftest(false, 13);
    out << "\noracle self-test (exact subset)\n";
    print_selftest_report(rep, out);

    ojson rj;
    rj["directory"] = output_dir;
    rj["complete"] = man.is_object() ? man.value("complete", false) : false;
    rj["n_rows"] = rows.size() - 1;
    rj["fits"] = fits;
    ojson cov;
    cov["ratio"] = ratio.value;
    cov["std_error"] = ratio.std_error;
    cov["target"] = 1.0;
    rj["covariance_check"] = cov;
    ojson oq = ojson::array();
    for (const auto& line : rep.lines) {
        ojson j;
        j["name"] = line.name;
        j["expected"] = line.expected;
        j["got"] = line.got;
        j["pass"] = line.pass;
        oq.push_back(j);
    }
    rj["oracle_quick"] = oq;
    rj["oracle_failures"] = rep.failures;
    write_file(output_dir + "/report.json", rj.dump(2) + "\n");
    out << "\nmachine report: " << output_dir << "/report.json\n";
}

} // namespace perclab
