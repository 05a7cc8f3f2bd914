// command-line front end.
//
//   perclab run <config.json>     start (or restart) an experiment
//   perclab resume <run_dir>      continue an interrupted experiment
//   perclab report <run_dir>      summarize estimates, fits and checks
//   perclab oracle-test           exhaustive small-patch validation suite
//
// exit codes: 0 success, 2 configuration / geometry error, 3 data error
// (corrupt checkpoint, missing or unwritable output), 1 anything else.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "perclab/cli.hpp"
#include "perclab/errors.hpp"
#include "perclab/selftest.hpp"

namespace {

int classify(const perclab::Error& e) {
    using namespace perclab;
    if (dynamic_cast<const ConfigInvalid*>(&e) || dynamic_cast<const GeometryTooTight*>(&e) ||
        dynamic_cast<const MarginTooSmall*>(&e) || dynamic_cast<const DomainTooSmall*>(&e) ||
        dynamic_cast<const CoincidentPoints*>(&e) || dynamic_cast<const DegenerateInput*>(&e) ||
        dynamic_cast<const OddPointCount*>(&e) || dynamic_cast<const OutOfDomain*>(&e) ||
        dynamic_cast<const PointOutsideRegion*>(&e))
        return 2;
    if (dynamic_cast<const CorruptCheckpoint*>(&e) || dynamic_cast<const MissingData*>(&e) ||
        dynamic_cast<const IoError*>(&e))
        return 3;
    return 1;
}

void apply_flags(perclab::RunOptions& opt, const std::string& output_dir, int workers,
                 long long abort_after) {
    if (!output_dir.empty()) opt.output_dir = output_dir;
    if (workers > 0) opt.workers = workers;
    if (abort_after >= 0) opt.abort_after_batches = abort_after;
}

void print_outcome(const perclab::RunOutcome& out) {
    if (out.complete) {
        std::printf("run complete: %zu estimate rows in %s\n", out.records.size(),
                    out.output_dir.c_str());
        std::printf("resume-safe outputs: config.json batches.ndjson manifest.json\n");
        std::printf("final outputs:       estimates.csv fits.json\n");
    } else {
        std::printf("run interrupted; resume with: perclab resume %s\n", out.output_dir.c_str());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"triangular-lattice percolation correlator laboratory"};
    app.require_subcommand(1);

    std::string config_path, run_dir, output_dir;
    int workers = 0;
    long long abort_after = -1;

    CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "experiment config (json)")->required();
    run->add_option("--output-dir", output_dir, "override the config output directory");
    run->add_option("--workers", workers, "override the worker count");
    run->add_option("--abort-after-batches", abort_after,
                    "stop after this many new batches (testing hook)");

    CLI::App* resume = app.add_subcommand("resume", "resume an interrupted run directory");
    resume->add_option("run_dir", run_dir, "output directory of the interrupted run")->required();
    resume->add_option("--workers", workers, "override the worker count");
    resume->add_option("--abort-after-batches", abort_after,
                       "stop after this many new batches (testing hook)");

    CLI::App* report = app.add_subcommand("report", "summarize a finished run directory");
    report->add_option("run_dir", run_dir, "output directory of a finished run")->required();

    CLI::App* oracle = app.add_subcommand("oracle-test", "run the exhaustive validation corpus");
    bool oracle_fast = false;
    oracle->add_flag("--exact-only", oracle_fast, "skip the monte-carlo comparisons");

    CLI11_PARSE(app, argc, argv);

    try {
        perclab::RunOptions opt = perclab::run_options_from_env();
        if (run->parsed()) {
            apply_flags(opt, output_dir, workers, abort_after);
            print_outcome(perclab::run_command(config_path, opt));
            return 0;
        }
        if (resume->parsed()) {
            apply_flags(opt, output_dir, workers, abort_after);
            print_outcome(perclab::resume_command(run_dir, opt));
            return 0;
        }
        if (report->parsed()) {
            perclab::report_command(run_dir, std::cout);
            return 0;
        }
        if (oracle->parsed()) {
            std::printf("exhaustive validation corpus (%s)\n",
                        oracle_fast ? "exact only" : "exact + monte carlo");
            const perclab::SelftestReport rep = perclab::run_oracle_selftest(!oracle_fast);
            perclab::print_selftest_report(rep, std::cout);
            return rep.failures == 0 ? 0 : 1;
        }
    } catch (const perclab::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return classify(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
