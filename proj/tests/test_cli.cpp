// experiment orchestration tests: config parsing, hashing, sweep expansion,
// checkpoint log integrity, and the end-to-end determinism contract
// (byte-identical artifacts across worker counts and interruption patterns).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "perclab/cli.hpp"
#include "perclab/errors.hpp"

using namespace perclab;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "cannot open " << p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    REQUIRE(out.good());
}

// a path under the test scratch root, guaranteed not to exist yet
fs::path fresh_path(const char* name) {
    fs::path d = fs::temp_directory_path() / "perclab_cli_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d.parent_path());
    return d;
}

bool contains(const std::string& s, const std::string& sub) {
    return s.find(sub) != std::string::npos;
}

// a small but complete experiment: one pi plug-in, one swept spin pair, one
// arm curve with three radii. 30 batches per request keeps runs fast.
ojson base_json() {
    return ojson::parse(R"({
        "master_seed": 77,
        "spacings": [0.5],
        "domain_radius": 2.6,
        "pi_samples": 3000,
        "pi_batch_size": 100,
        "correlators": [
            {"id": "pair", "kind": "spin_n_point", "spacing": 0.0,
             "points": [{"z": [0.0, 0.0]}, {"z": [1.0, 0.0]}],
             "n_samples": 1200, "batch_size": 40},
            {"id": "arms", "kind": "one_arm_curve", "spacing": 0.5,
             "points": [{"z": [0.0, 0.0]}],
             "radii": [0.75, 1.5, 2.1],
             "n_samples": 1200, "batch_size": 40}
        ]
    })");
}

// run the parser on a mutated config and hand back the ConfigInvalid message
std::string parse_error(const ojson& j) {
    try {
        parse_experiment_config(j.dump());
    } catch (const ConfigInvalid& e) {
        return e.what();
    }
    return "";
}

std::string run_error_type(const ExperimentConfig& cfg, const RunOptions& opt) {
    try {
        run_experiment(cfg, opt, false);
    } catch (const ConfigInvalid& e) {
        return std::string("ConfigInvalid: ") + e.what();
    } catch (const GeometryTooTight& e) {
        return std::string("GeometryTooTight: ") + e.what();
    }
    return "";
}

} // namespace

TEST_CASE("config parser accepts the base config and names bad fields") {
    const ExperimentConfig cfg = parse_experiment_config(base_json().dump());
    CHECK(cfg.master_seed == 77);
    REQUIRE(cfg.spacings.size() == 1);
    CHECK(cfg.spacings[0] == 0.5);
    CHECK(cfg.domain_radius == 2.6);
    CHECK(cfg.workers == 1);          // defaults survive omission
    CHECK(cfg.checkpoint_every == 16);
    CHECK(cfg.pi_samples == 3000);
    REQUIRE(cfg.correlators.size() == 2);
    CHECK(cfg.correlators[0].request_id == "pair");
    CHECK(cfg.correlators[0].kind == CorrelatorKind::spin_n_point);
    CHECK(cfg.correlators[0].spacing == 0.0);
    REQUIRE(cfg.correlators[0].points.size() == 2);
    CHECK(cfg.correlators[0].points[1].z == std::complex<double>(1.0, 0.0));
    CHECK(cfg.correlators[0].points[1].role == PointRole::spin);
    CHECK(cfg.correlators[1].radii == std::vector<double>{0.75, 1.5, 2.1});

    CHECK_THROWS_AS((void)parse_experiment_config("{nope"), ConfigInvalid);
    CHECK_THROWS_AS((void)parse_experiment_config("[1,2]"), ConfigInvalid);

    ojson j = base_json();
    j["surprise"] = 1;
    CHECK(contains(parse_error(j), "surprise"));
    CHECK(contains(parse_error(j), "unknown field"));

    j = base_json();
    j.erase("master_seed");
    CHECK(contains(parse_error(j), "'master_seed': missing"));

    j = base_json();
    j["master_seed"] = -4;
    CHECK(contains(parse_error(j), "non-negative"));

    j = base_json();
    j["spacings"] = ojson::array();
    CHECK(contains(parse_error(j), "'spacings'"));

    j = base_json();
    j["spacings"] = {0.5, -0.25};
    CHECK(contains(parse_error(j), "spacings[1]"));

    j = base_json();
    j["spacings"] = {0.5, 0.5};
    CHECK(contains(parse_error(j), "distinct"));

    j = base_json();
    j["domain_radius"] = 0.0;
    CHECK(contains(parse_error(j), "'domain_radius'"));

    j = base_json();
    j["correlators"] = ojson::array();
    CHECK(contains(parse_error(j), "'correlators'"));

    j = base_json();
    j["correlators"][0].erase("id");
    CHECK(contains(parse_error(j), "correlators[0].id"));

    j = base_json();
    j["correlators"][0]["id"] = "";
    CHECK(contains(parse_error(j), "non-empty"));

    j = base_json();
    j["correlators"][0]["id"] = "bad\nid";
    CHECK(contains(parse_error(j), "control characters"));

    j = base_json();
    j["correlators"][0]["id"] = "pi_plugin_mine";
    CHECK(contains(parse_error(j), "reserved"));

    j = base_json();
    j["correlators"][0]["kind"] = "banana";
    CHECK(contains(parse_error(j), "unknown correlator kind 'banana'"));

    j = base_json();
    j["correlators"][0]["points"][1]["z"] = {1.0};
    CHECK(contains(parse_error(j), "correlators[0].points[1].z"));

    j = base_json();
    j["correlators"][0]["points"][1]["z"] = {"east", 0.0};
    CHECK(contains(parse_error(j), "points[1].z[0]"));

    j = base_json();
    j["correlators"][0]["points"][0]["color"] = "red";
    CHECK(contains(parse_error(j), "points[0].color"));

    // delta is tied to the energy_delta_center role, both ways
    j = base_json();
    j["correlators"][0]["points"][0]["delta"] = 0.2;
    CHECK(contains(parse_error(j), "only meaningful"));

    j = base_json();
    j["correlators"][0]["points"][0]["role"] = "energy_delta_center";
    CHECK(contains(parse_error(j), "delta"));

    j = base_json();
    j["correlators"][0]["points"][0]["role"] = "sideways";
    CHECK(contains(parse_error(j), "unknown role"));

    j = base_json();
    j["correlators"][0]["spacing"] = -1.0;
    CHECK(contains(parse_error(j), "spacing"));

    j = base_json();
    j["correlators"][0]["radii"] = {1.0};
    CHECK(contains(parse_error(j), "only arm-curve"));

    j = base_json();
    j["correlators"][0].erase("n_samples");
    CHECK(contains(parse_error(j), "correlators[0].n_samples"));

    j = base_json();
    j["correlators"][0]["n_samples"] = 12.5;
    CHECK(contains(parse_error(j), "integer"));

    j = base_json();
    j["workers"] = 0;
    CHECK(contains(parse_error(j), "'workers'"));

    j = base_json();
    j["checkpoint_every"] = 0;
    CHECK(contains(parse_error(j), "'checkpoint_every'"));

    j = base_json();
    j["pi_samples"] = 0;
    CHECK(contains(parse_error(j), "'pi_samples'"));
}

TEST_CASE("config hash covers exactly the physics fields") {
    const ExperimentConfig cfg1 = parse_experiment_config(base_json().dump());

    // runtime knobs must not move the hash
    ojson j = base_json();
    j["workers"] = 8;
    j["checkpoint_every"] = 1;
    j["output_dir"] = "elsewhere";
    const ExperimentConfig cfg2 = parse_experiment_config(j.dump());
    CHECK(canonical_config_json(cfg2) == canonical_config_json(cfg1));
    CHECK(config_hash(cfg2) == config_hash(cfg1));
    CHECK(config_file_json(cfg2) != config_file_json(cfg1));

    // physics fields must
    j = base_json();
    j["master_seed"] = 78;
    CHECK(config_hash(parse_experiment_config(j.dump())) != config_hash(cfg1));
    j = base_json();
    j["correlators"][0]["points"][1]["z"] = {1.0, 0.5};
    CHECK(config_hash(parse_experiment_config(j.dump())) != config_hash(cfg1));

    // the full file form round-trips through the strict parser
    const ExperimentConfig back = parse_experiment_config(config_file_json(cfg2));
    CHECK(canonical_config_json(back) == canonical_config_json(cfg1));
    CHECK(back.workers == 8);
    CHECK(back.output_dir == "elsewhere");
}

TEST_CASE("sweep expansion resolves spacings, orders plug-ins first and assigns streams") {
    ojson j = base_json();
    j["spacings"] = {0.5, 0.25};
    const ExperimentConfig cfg = parse_experiment_config(j.dump());
    const std::vector<ExpandedRequest> out = expand_requests(cfg);

    // pair sweeps over both spacings and needs pi; arms is pinned at 0.5
    REQUIRE(out.size() == 5);
    CHECK(out[0].req.request_id == "pi_plugin@a=0.25");
    CHECK(out[1].req.request_id == "pi_plugin@a=0.5");
    for (int i : {0, 1}) {
        CHECK(out[i].is_pi_plugin);
        CHECK(out[i].req.kind == CorrelatorKind::pi_a);
        CHECK(out[i].req.n_samples == cfg.pi_samples);
        CHECK(out[i].req.batch_size == cfg.pi_batch_size);
    }
    CHECK(out[0].req.spacing == 0.25);
    CHECK(out[1].req.spacing == 0.5);
    CHECK(out[0].stream == 0x80000000u);
    CHECK(out[1].stream == 0x80000001u);

    CHECK(out[2].req.request_id == "pair@a=0.5");
    CHECK(out[2].req.spacing == 0.5);
    CHECK(out[2].stream == 0u);
    CHECK(out[3].req.request_id == "pair@a=0.25");
    CHECK(out[3].req.spacing == 0.25);
    CHECK(out[3].stream == 1u);
    CHECK(out[4].req.request_id == "arms");
    CHECK(out[4].req.spacing == 0.5);
    CHECK(out[4].stream == 2u);
    CHECK(!out[4].is_pi_plugin);
    CHECK(out[2].req.points.size() == 2); // payload carried through expansion
    CHECK(out[4].req.radii.size() == 3);

    // a literal id colliding with an expanded one is caught up front
    j["correlators"].push_back(ojson::parse(
        R"({"id": "pair@a=0.5", "kind": "pi_a", "spacing": 0.5,
            "n_samples": 3000, "batch_size": 100})"));
    const ExperimentConfig clash = parse_experiment_config(j.dump());
    CHECK_THROWS_WITH_AS((void)expand_requests(clash),
                         doctest::Contains("duplicate request id"), ConfigInvalid);

    // which kinds pull in a plug-in
    CorrelatorRequest r;
    r.kind = CorrelatorKind::spin_n_point;
    CHECK(request_needs_pi(r));
    r.kind = CorrelatorKind::energy_spin_spin;
    CHECK(request_needs_pi(r));
    r.kind = CorrelatorKind::edelta_energy;
    CHECK(request_needs_pi(r));
    r.kind = CorrelatorKind::energy_energy;
    CHECK(!request_needs_pi(r));
    r.kind = CorrelatorKind::one_arm_curve;
    CHECK(!request_needs_pi(r));
    r.kind = CorrelatorKind::annulus_terms;
    r.points.resize(3);
    CHECK(request_needs_pi(r)); // energy + spin pair form carries pi^-2
    r.points.resize(2);
    CHECK(!request_needs_pi(r)); // energy-energy form does not
}

TEST_CASE("bad sampling plans and tight geometry fail before any disk write") {
    auto expect = [&](ojson j, const char* what, const char* fragment) {
        const fs::path dir = fresh_path("never_created");
        RunOptions opt;
        opt.output_dir = dir.string();
        const std::string err = run_error_type(parse_experiment_config(j.dump()), opt);
        CAPTURE(fragment);
        CAPTURE(err);
        CHECK(contains(err, what));
        CHECK(contains(err, fragment));
        CHECK(!fs::exists(dir)); // validation must precede directory creation
    };

    ojson j = base_json();
    j["correlators"][0]["batch_size"] = 39;
    expect(j, "ConfigInvalid", "batch_size must be positive and even");

    j = base_json();
    j["correlators"][0]["n_samples"] = 1210;
    expect(j, "ConfigInvalid", "multiple");

    j = base_json();
    j["correlators"][0]["n_samples"] = 800; // 20 batches
    expect(j, "ConfigInvalid", "at least 30 batches");

    // separation floors, per kind
    j = base_json();
    j["correlators"][0] = ojson::parse(R"({
        "id": "ess", "kind": "energy_spin_spin", "spacing": 0.5,
        "points": [{"z": [0.0, 0.0], "role": "energy_center"},
                   {"z": [1.9, 0.0]}, {"z": [-1.9, 0.0]}],
        "n_samples": 1200, "batch_size": 40})");
    expect(j, "ConfigInvalid", "4*spacing");

    j = base_json();
    j["correlators"][0] = ojson::parse(R"({
        "id": "ess", "kind": "energy_spin_spin", "spacing": 1.0,
        "points": [{"z": [0.0, 0.0], "role": "energy_center"},
                   {"z": [5.0, 0.0]}, {"z": [-5.0, 0.0]}],
        "n_samples": 1200, "batch_size": 40})");
    expect(j, "ConfigInvalid", "below 1"); // log(1/a) normalization needs a < 1

    j = base_json();
    j["correlators"][0] = ojson::parse(R"({
        "id": "ee", "kind": "energy_energy", "spacing": 0.5,
        "points": [{"z": [0.0, 0.0], "role": "energy_center"},
                   {"z": [3.9, 0.0], "role": "energy_center"}],
        "n_samples": 1200, "batch_size": 40})");
    expect(j, "ConfigInvalid", "8*spacing");

    j = base_json();
    j["correlators"][0] = ojson::parse(R"({
        "id": "ed", "kind": "edelta_spin_spin", "spacing": 0.5,
        "points": [{"z": [0.0, 0.0], "role": "energy_delta_center", "delta": 0.4},
                   {"z": [1.5, 0.0]}, {"z": [-1.5, 0.0]}],
        "n_samples": 1200, "batch_size": 40})");
    expect(j, "ConfigInvalid", "delta must exceed the spacing");

    j = base_json();
    j["correlators"][0] = ojson::parse(R"({
        "id": "ed", "kind": "edelta_spin_spin", "spacing": 0.5,
        "points": [{"z": [0.0, 0.0], "role": "energy_delta_center", "delta": 0.6},
                   {"z": [1.1, 0.0]}, {"z": [-1.3, 0.0]}],
        "n_samples": 1200, "batch_size": 40})");
    expect(j, "ConfigInvalid", "2*(delta_i + delta_j)");

    // geometry checks run eagerly too, with the expanded request named
    j = base_json();
    j["correlators"][0]["points"][1]["z"] = {2.3, 0.0}; // |z| + a > R
    expect(j, "GeometryTooTight", "request 'pair@a=0.5'");

    j = base_json();
    j["correlators"][1]["radii"] = {0.75, 1.5, 2.2}; // rim: 2.2 + 0.5 > 2.6
    expect(j, "GeometryTooTight", "request 'arms'");

    // worker override is validated like the config field
    RunOptions opt;
    opt.output_dir = fresh_path("never_created_w").string();
    opt.workers = 0;
    CHECK_THROWS_AS((void)run_experiment(parse_experiment_config(base_json().dump()), opt, false),
                    ConfigInvalid);
}

TEST_CASE("batch log lines round-trip exactly and tampering is detected") {
    const fs::path file = fresh_path("batchlog/batches.ndjson");
    fs::create_directories(file.parent_path());

    const std::vector<double> s2 = {0.1, -1.0 / 3.0};
    const std::vector<double> s0 = {3.5e-300, 1.7976931348623157e308, -0.0, 42.0};
    const std::vector<double> s1 = {1e-17, 2.0, -7.25, 0.0};
    std::string text;
    text += format_batch_line("alpha", 2, s2.data(), 2) + "\n";
    text += format_batch_line("beta request", 0, s0.data(), 4) + "\n";
    text += format_batch_line("alpha", 0, s2.data(), 2) + "\n";
    text += format_batch_line("beta request", 1, s1.data(), 4) + "\n";
    spit(file, text);

    BatchLog log = read_batch_log(file.string());
    REQUIRE(log.size() == 2);
    REQUIRE(log.count("alpha") == 1);
    REQUIRE(log.count("beta request") == 1);
    REQUIRE(log["alpha"].size() == 2);
    CHECK(log["alpha"][0].first == 0); // sorted ascending on read
    CHECK(log["alpha"][1].first == 2);
    CHECK(log["alpha"][1].second == s2); // doubles survive the round-trip exactly
    REQUIRE(log["beta request"].size() == 2);
    CHECK(log["beta request"][0].second == s0);
    CHECK(log["beta request"][1].second == s1);

    spit(file, "");
    CHECK(read_batch_log(file.string()).empty());
    CHECK_THROWS_AS((void)read_batch_log((file.parent_path() / "absent").string()), IoError);

    // flip one digit of a payload number: checksum must catch it
    std::string bad = text;
    const auto pos = bad.find("0.1");
    REQUIRE(pos != std::string::npos);
    bad[pos + 2] = '7';
    spit(file, bad);
    CHECK_THROWS_WITH_AS((void)read_batch_log(file.string()), doctest::Contains("checksum"),
                         CorruptCheckpoint);

    // flip one digit of the stored checksum itself
    bad = text;
    const auto cpos = bad.find("\"check\":\"");
    REQUIRE(cpos != std::string::npos);
    bad[cpos + 9] = bad[cpos + 9] == '0' ? '1' : '0';
    spit(file, bad);
    CHECK_THROWS_AS((void)read_batch_log(file.string()), CorruptCheckpoint);

    // truncated tail line
    spit(file, text.substr(0, text.size() - 5));
    CHECK_THROWS_WITH_AS((void)read_batch_log(file.string()), doctest::Contains("malformed"),
                         CorruptCheckpoint);

    // a checksummed line can still carry nonsense fields
    spit(file, text + format_batch_line("alpha", -3, s2.data(), 2) + "\n");
    CHECK_THROWS_WITH_AS((void)read_batch_log(file.string()), doctest::Contains("negative batch"),
                         CorruptCheckpoint);
}

TEST_CASE("estimate rows with embedded delimiters are csv-quoted") {
    EstimateRecord r;
    r.request_id = "weird,\"id\"";
    r.kind = CorrelatorKind::spin_n_point;
    r.spacing = 0.5;
    r.point_json = "[{\"z\":[0,0]}]";
    r.n = 10;
    r.raw_mean = 0.25;
    r.std_error = 0.0625;
    r.normalized_value = 1.0;
    const std::string csv = csv_from_records({r});
    const auto nl = csv.find('\n');
    CHECK(csv.substr(0, nl) ==
          "request_id,kind,a,point_json,n,raw_mean,std_error,normalization,normalized_value");
    CHECK(contains(csv, "\"weird,\"\"id\"\"\",spin_n_point,0.5,"));
    CHECK(contains(csv, ",10,0.25,0.0625,"));
    CHECK(contains(csv, "\"[{\"\"z\"\":[0,0]}]\""));
}

TEST_CASE("artifacts are byte-identical across worker counts") {
    const ExperimentConfig cfg = parse_experiment_config(base_json().dump());

    const fs::path dir1 = fresh_path("w1");
    RunOptions opt;
    opt.output_dir = dir1.string();
    opt.workers = 1;
    const RunOutcome out1 = run_experiment(cfg, opt, false);
    REQUIRE(out1.complete);
    REQUIRE(out1.records.size() == 5);
    CHECK(out1.records[0].request_id == "pi_plugin@a=0.5");
    CHECK(out1.records[1].request_id == "pair@a=0.5");
    CHECK(out1.records[2].request_id == "arms#r=0.75");
    CHECK(out1.records[3].request_id == "arms#r=1.5");
    CHECK(out1.records[4].request_id == "arms#r=2.1");
    for (const char* f : {"config.json", "manifest.json", "batches.ndjson", "estimates.csv",
                          "fits.json"})
        CHECK_MESSAGE(fs::exists(dir1 / f), f);

    const std::string csv1 = slurp(dir1 / "estimates.csv");
    const std::string nd1 = slurp(dir1 / "batches.ndjson");
    const std::string fits1 = slurp(dir1 / "fits.json");
    CHECK(std::count(nd1.begin(), nd1.end(), '\n') == 90); // 3 requests x 30 batches

    // same physics, different workers and flush cadence, stale junk in the dir
    ojson j2 = base_json();
    j2["checkpoint_every"] = 1;
    const fs::path dir2 = fresh_path("w4");
    fs::create_directories(dir2);
    spit(dir2 / "estimates.csv", "stale junk\n");
    RunOptions opt2;
    opt2.output_dir = dir2.string();
    opt2.workers = 4;
    const RunOutcome out2 = run_experiment(parse_experiment_config(j2.dump()), opt2, false);
    REQUIRE(out2.complete);
    CHECK(slurp(dir2 / "estimates.csv") == csv1);
    CHECK(slurp(dir2 / "batches.ndjson") == nd1);
    CHECK(slurp(dir2 / "fits.json") == fits1);

    const fs::path dir3 = fresh_path("w8");
    RunOptions opt3;
    opt3.output_dir = dir3.string();
    opt3.workers = 8;
    REQUIRE(run_experiment(cfg, opt3, false).complete);
    CHECK(slurp(dir3 / "estimates.csv") == csv1);
    CHECK(slurp(dir3 / "batches.ndjson") == nd1);

    // manifests agree on the config hash
    const ojson m1 = ojson::parse(slurp(dir1 / "manifest.json"));
    const ojson m2 = ojson::parse(slurp(dir2 / "manifest.json"));
    CHECK(m1["config_hash"] == m2["config_hash"]);
    CHECK(m1["complete"] == true);
    REQUIRE(m1["requests"].size() == 3);
    for (const auto& rq : m1["requests"]) {
        CHECK(rq["total_batches"] == 30);
        CHECK(rq["done_batches"] == 30);
        CHECK(rq["complete"] == true);
    }

    // the arm curve is dense enough for a power fit in fits.json
    const ojson fits = ojson::parse(fits1);
    REQUIRE(fits.contains("one_arm_curve_fits"));
    REQUIRE(fits["one_arm_curve_fits"].size() == 1);
    const ojson& cf = fits["one_arm_curve_fits"][0];
    CHECK(cf["request_id"] == "arms");
    CHECK(cf["radii"] == ojson({0.75, 1.5, 2.1}));
    CHECK(cf["exponent"].get<double>() < 0.0); // decreasing arm probabilities
    CHECK(cf["dof"] == 1);
    CHECK(cf["reference_exponent"].get<double>() == doctest::Approx(-5.0 / 48.0));

    // running from a config file on disk gives the same bytes
    const fs::path cfile = fresh_path("cfg.json");
    spit(cfile, base_json().dump(2) + "\n");
    const fs::path dir6 = fresh_path("fromfile");
    RunOptions opt6;
    opt6.output_dir = dir6.string();
    opt6.workers = 2;
    REQUIRE(run_command(cfile.string(), opt6).complete);
    CHECK(slurp(dir6 / "estimates.csv") == csv1);
    CHECK_THROWS_AS((void)run_command((cfile.parent_path() / "nope.json").string(), opt6),
                    IoError);
}

TEST_CASE("interrupted runs resume to the exact uninterrupted artifacts") {
    const ExperimentConfig cfg = parse_experiment_config(base_json().dump());

    // reference bytes from a clean single-shot run
    const fs::path ref = fresh_path("resume_ref");
    RunOptions ropt;
    ropt.output_dir = ref.string();
    ropt.workers = 1;
    REQUIRE(run_experiment(cfg, ropt, false).complete);
    const std::string csv1 = slurp(ref / "estimates.csv");
    const std::string nd1 = slurp(ref / "batches.ndjson");
    const std::string fits1 = slurp(ref / "fits.json");

    // stop mid-request: 30 plug-in batches + 7 of the pair request
    const fs::path dir = fresh_path("resume_run");
    RunOptions opt;
    opt.output_dir = dir.string();
    opt.workers = 2;
    opt.abort_after_batches = 37;
    const RunOutcome stage1 = run_experiment(cfg, opt, false);
    CHECK(!stage1.complete);
    CHECK(stage1.records.empty());
    const std::string nd_partial = slurp(dir / "batches.ndjson");
    CHECK(std::count(nd_partial.begin(), nd_partial.end(), '\n') == 37);
    CHECK(nd1.compare(0, nd_partial.size(), nd_partial) == 0); // a strict prefix
    CHECK(!fs::exists(dir / "estimates.csv"));
    CHECK(!fs::exists(dir / "fits.json"));
    ojson man = ojson::parse(slurp(dir / "manifest.json"));
    CHECK(man["complete"] == false);
    CHECK(man["requests"][0]["done_batches"] == 30);
    CHECK(man["requests"][0]["complete"] == true);
    CHECK(man["requests"][1]["done_batches"] == 7);
    CHECK(man["requests"][2]["done_batches"] == 0);

    // second stage still falls short of the 90 total
    RunOptions opt2;
    opt2.workers = 8;
    opt2.abort_after_batches = 20;
    CHECK(!resume_command(dir.string(), opt2).complete);
    const std::string nd_57 = slurp(dir / "batches.ndjson");
    CHECK(std::count(nd_57.begin(), nd_57.end(), '\n') == 57);

    // final stage completes; every artifact matches the single-shot run
    RunOptions opt3;
    opt3.workers = 3;
    const RunOutcome done = resume_command(dir.string(), opt3);
    CHECK(done.complete);
    REQUIRE(done.records.size() == 5);
    CHECK(slurp(dir / "estimates.csv") == csv1);
    CHECK(slurp(dir / "batches.ndjson") == nd1);
    CHECK(slurp(dir / "fits.json") == fits1);
    man = ojson::parse(slurp(dir / "manifest.json"));
    CHECK(man["complete"] == true);
    CHECK(man["finished_at"].get<std::string>() != "");

    // resuming a complete run is a no-op that touches nothing
    const std::string before_csv = slurp(dir / "estimates.csv");
    const std::string before_man = slurp(dir / "manifest.json");
    const std::string before_nd = slurp(dir / "batches.ndjson");
    const RunOutcome again = resume_command(dir.string(), RunOptions{});
    CHECK(again.complete);
    CHECK(again.records.empty());
    CHECK(slurp(dir / "estimates.csv") == before_csv);
    CHECK(slurp(dir / "manifest.json") == before_man);
    CHECK(slurp(dir / "batches.ndjson") == before_nd);

    // a zero budget freezes a run entirely, and it still resumes cleanly
    const fs::path dir0 = fresh_path("resume_zero");
    RunOptions z;
    z.output_dir = dir0.string();
    z.abort_after_batches = 0;
    CHECK(!run_experiment(cfg, z, false).complete);
    CHECK(std::count(slurp(dir0 / "batches.ndjson").begin(),
                     slurp(dir0 / "batches.ndjson").end(), '\n') == 0);
    RunOptions z2;
    z2.abort_after_batches = 0;
    CHECK(!resume_command(dir0.string(), z2).complete);
    CHECK(resume_command(dir0.string(), RunOptions{}).complete);
    CHECK(slurp(dir0 / "estimates.csv") == csv1);
}

TEST_CASE("resume rejects corrupted or mismatched checkpoints") {
    const ExperimentConfig cfg = parse_experiment_config(base_json().dump());
    const fs::path good = fresh_path("corrupt_base");
    RunOptions opt;
    opt.output_dir = good.string();
    opt.abort_after_batches = 37;
    REQUIRE(!run_experiment(cfg, opt, false).complete);

    int n = 0;
    auto clone = [&]() {
        const fs::path d = fresh_path(("corrupt_" + std::to_string(n++)).c_str());
        fs::copy(good, d, fs::copy_options::recursive);
        return d;
    };
    auto expect_corrupt = [](const fs::path& d, const char* fragment) {
        try {
            (void)resume_command(d.string(), RunOptions{});
            FAIL_CHECK("resume accepted a corrupted directory: " << fragment);
        } catch (const CorruptCheckpoint& e) {
            CAPTURE(fragment);
            CHECK(contains(e.what(), fragment));
        }
    };

    // flipped payload byte in the batch log
    fs::path d = clone();
    std::string nd = slurp(d / "batches.ndjson");
    const auto pos = nd.find("\"sums\":[");
    REQUIRE(pos != std::string::npos);
    nd[pos + 8] = nd[pos + 8] == '1' ? '2' : '1';
    spit(d / "batches.ndjson", nd);
    expect_corrupt(d, "checksum");

    // a well-formed row for a request the config does not know
    d = clone();
    const double zeros[2] = {0.0, 0.0};
    spit(d / "batches.ndjson",
         slurp(d / "batches.ndjson") + format_batch_line("ghost", 0, zeros, 2) + "\n");
    expect_corrupt(d, "unknown request 'ghost'");

    // duplicate batch row for a known request
    d = clone();
    spit(d / "batches.ndjson",
         slurp(d / "batches.ndjson") + format_batch_line("pair@a=0.5", 3, zeros, 2) + "\n");
    CHECK_THROWS_AS((void)resume_command(d.string(), RunOptions{}), CorruptCheckpoint);

    // config edited after the fact: the hash no longer matches the manifest
    d = clone();
    ExperimentConfig other = cfg;
    other.master_seed = 78;
    spit(d / "config.json", config_file_json(other));
    expect_corrupt(d, "hash mismatch");

    // missing or unreadable pieces
    d = clone();
    fs::remove(d / "manifest.json");
    expect_corrupt(d, "manifest.json missing");
    d = clone();
    fs::remove(d / "batches.ndjson");
    expect_corrupt(d, "batches.ndjson missing");
    d = clone();
    fs::remove(d / "config.json");
    expect_corrupt(d, "config.json missing");
    d = clone();
    spit(d / "config.json", "not json at all");
    expect_corrupt(d, "unreadable");
    d = clone();
    spit(d / "manifest.json", "[]");
    expect_corrupt(d, "not valid json");
}

TEST_CASE("report summarizes a finished run and writes a machine-readable copy") {
    // reuse-free: make a fresh complete run to report on
    const ExperimentConfig cfg = parse_experiment_config(base_json().dump());
    const fs::path dir = fresh_path("report_run");
    RunOptions opt;
    opt.output_dir = dir.string();
    REQUIRE(run_experiment(cfg, opt, false).complete);

    std::ostringstream oss;
    report_command(dir.string(), oss);
    const std::string text = oss.str();
    CHECK(contains(text, "run directory: " + dir.string()));
    CHECK(contains(text, "complete"));
    CHECK(contains(text, "estimates (5 rows)"));
    CHECK(contains(text, "pi_plugin@a=0.5"));
    CHECK(contains(text, "arms#r=2.1"));
    CHECK(contains(text, "one-arm curve exponent"));
    CHECK(contains(text, "similarity covariance check"));
    CHECK(contains(text, "ratio 1.000000000000"));
    CHECK(contains(text, "oracle self-test (exact subset)"));
    CHECK(contains(text, " 0 failures"));

    REQUIRE(fs::exists(dir / "report.json"));
    const ojson rj = ojson::parse(slurp(dir / "report.json"));
    CHECK(rj["complete"] == true);
    CHECK(rj["n_rows"] == 5);
    CHECK(rj["covariance_check"]["ratio"].get<double>() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(rj["oracle_failures"] == 0);
    CHECK(rj["fits"].contains("one_arm_curve_fits"));
    CHECK(rj["oracle_quick"].size() > 0);
    for (const auto& line : rj["oracle_quick"]) CHECK(line["pass"] == true);

    // no estimates yet -> MissingData, both for empty and absent directories
    const fs::path empty = fresh_path("report_empty");
    fs::create_directories(empty);
    std::ostringstream sink;
    CHECK_THROWS_AS(report_command(empty.string(), sink), MissingData);
    CHECK_THROWS_AS(report_command((empty / "nope").string(), sink), MissingData);
    spit(empty / "estimates.csv",
         "request_id,kind,a,point_json,n,raw_mean,std_error,normalization,normalized_value\n");
    CHECK_THROWS_WITH_AS(report_command(empty.string(), sink),
                         doctest::Contains("no data rows"), MissingData);
}

TEST_CASE("run options come from the environment") {
    unsetenv("PERCLAB_OUTPUT_DIR");
    unsetenv("PERCLAB_WORKERS");
    unsetenv("PERCLAB_ABORT_AFTER_BATCHES");
    RunOptions opt = run_options_from_env();
    CHECK(!opt.output_dir.has_value());
    CHECK(!opt.workers.has_value());
    CHECK(opt.abort_after_batches == -1);

    setenv("PERCLAB_OUTPUT_DIR", "/tmp/somewhere", 1);
    setenv("PERCLAB_WORKERS", "3", 1);
    setenv("PERCLAB_ABORT_AFTER_BATCHES", "12", 1);
    opt = run_options_from_env();
    REQUIRE(opt.output_dir.has_value());
    CHECK(*opt.output_dir == "/tmp/somewhere");
    REQUIRE(opt.workers.has_value());
    CHECK(*opt.workers == 3);
    CHECK(opt.abort_after_batches == 12);

    setenv("PERCLAB_ABORT_AFTER_BATCHES", "0", 1);
    CHECK(run_options_from_env().abort_after_batches == 0);

    // empty values behave like unset ones
    setenv("PERCLAB_OUTPUT_DIR", "", 1);
    setenv("PERCLAB_WORKERS", "", 1);
    setenv("PERCLAB_ABORT_AFTER_BATCHES", "", 1);
    opt = run_options_from_env();
    CHECK(!opt.output_dir.has_value());
    CHECK(!opt.workers.has_value());
    CHECK(opt.abort_after_batches == -1);

    for (const char* bad : {"0", "-2", "3x", "many"}) {
        setenv("PERCLAB_WORKERS", bad, 1);
        CHECK_THROWS_AS((void)run_options_from_env(), ConfigInvalid);
    }
    unsetenv("PERCLAB_WORKERS");
    for (const char* bad : {"-1", "1.5", "soon"}) {
        setenv("PERCLAB_ABORT_AFTER_BATCHES", bad, 1);
        CHECK_THROWS_AS((void)run_options_from_env(), ConfigInvalid);
    }
    unsetenv("PERCLAB_OUTPUT_DIR");
    unsetenv("PERCLAB_ABORT_AFTER_BATCHES");
}
