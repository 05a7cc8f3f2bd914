#pragma once

// experiment orchestration: declarative json configs in, reproducible csv/json
// artifacts out, with checkpoint/resume.
//
// layout of an output directory:
//   config.json     canonical echo of the experiment config (hash input)
//   manifest.json   config hash, code version, timestamps, per-request state
//   batches.ndjson  one line per completed batch of per-batch sufficient
//                   statistics; the single source of truth for resume
//   estimates.csv   derived estimate table, written at completion
//   fits.json       derived exponent / log-correction fits, written at
//                   completion
//
// determinism contract: (config, master_seed) fully determine every byte of
// config.json, batches.ndjson, estimates.csv and fits.json, independent of
// worker count and interruption pattern. manifest.json carries wall-clock
// timestamps and is excluded.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perclab/estimators.hpp"

namespace perclab {

inline constexpr const char* kCodeVersion = "perclab 1.0.0";

struct ExperimentConfig {
    std::uint64_t master_seed = 0;
    std::vector<double> spacings;    // sweep grid for spacing == 0 requests
    double domain_radius = 0.0;
    std::vector<CorrelatorRequest> correlators;
    int workers = 1;
    std::int64_t checkpoint_every = 16; // flush cadence for batches.ndjson
    std::string output_dir = "perclab_out";
    std::int64_t pi_samples = 1000000;  // one-arm plug-in budget per spacing
    std::int64_t pi_batch_size = 10000;
};

// strict parser: unknown fields, wrong types and violated invariants all
// raise ConfigInvalid naming the offending field
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path); // + IoError

// canonical serialization of the physics-relevant fields (everything except
// workers / checkpoint_every / output_dir); config_hash is fnv-1a over it
std::string canonical_config_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_file_json(const ExperimentConfig& cfg); // full round-trip form

// one concrete unit of sampling work: sweep spacing resolved, stream assigned.
// pi plug-in entries (internal one-arm runs feeding normalizations) come
// first, in ascending spacing order; config requests follow in config order.
struct ExpandedRequest {
    CorrelatorRequest req; // spacing > 0
    std::uint32_t stream = 0;
    bool is_pi_plugin = false;
};

std::vector<ExpandedRequest> expand_requests(const ExperimentConfig& cfg);

// true when records of this request carry pi_a^k normalization factors and a
// plug-in estimate must be scheduled for the request's spacing
bool request_needs_pi(const CorrelatorRequest& req);

struct RunOptions {
    std::optional<std::string> output_dir; // override config.output_dir
    std::optional<int> workers;            // override config.workers
    std::int64_t abort_after_batches = -1; // stop after N new batches (test hook)
};

// PERCLAB_OUTPUT_DIR / PERCLAB_WORKERS / PERCLAB_ABORT_AFTER_BATCHES
RunOptions run_options_from_env();

struct RunOutcome {
    bool complete = false;
    std::string output_dir;
    std::vector<EstimateRecord> records; // empty when interrupted early
};

// fresh run from a config value / config file path
RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opt,
                          bool resuming);
RunOutcome run_command(const std::string& config_path, const RunOptions& opt);
// continue an interrupted run from its output directory (no-op when complete)
RunOutcome resume_command(const std::string& output_dir, const RunOptions& opt);
// human-readable summary to `out` plus machine-readable report.json in the dir
void report_command(const std::string& output_dir, std::ostream& out);

// ---- persistence building blocks (exposed for tests) -----------------------

// parsed batches.ndjson: request id -> ascending (batch index, 2T sums)
using BatchRows = std::vector<std::pair<std::int64_t, std::vector<double>>>;
using BatchLog = std::map<std::string, BatchRows>;

BatchLog read_batch_log(const std::string& path); // CorruptCheckpoint on tamper
std::string format_batch_line(const std::string& request_id, std::int64_t batch,
                              const double* sums, int n2);

std::string csv_from_records(const std::vector<EstimateRecord>& records);
std::string fits_json_from_records(const std::vector<EstimateRecord>& records);

} // namespace perclab
