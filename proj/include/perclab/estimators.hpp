#pragma once
// monte carlo estimators for the spin and energy correlators plus the annulus
// (telescoping) diagnostics that exhibit the logarithmic mechanism.
//
// the sampling engine is shared: a request is evaluated sample-by-sample by a
// kernel that emits a fixed tuple of per-sample terms; per-batch sums of those
// terms (kept separately for even/odd global sample indices, so that
// split-halves product estimators are available afterwards) are the sufficient
// statistics. batches are processed possibly in parallel but summed serially
// in sample order inside each batch and merged in batch-index order, so every
// number produced is independent of the worker count.
//
// product-of-expectations terms (the R3-style covariances) use the split-halves
// estimator: within each batch, cov(U,V) is estimated by
//   mean(U*V) - (mean_even(U)*mean_odd(V) + mean_odd(U)*mean_even(V)) / 2,
// which is unbiased because the two halves are independent. plug-in products
// of full-sample means would carry an O(1/N) bias of the same order as the
// signal for the smallest spacings.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "perclab/lattice.hpp"
#include "perclab/sampler.hpp"

namespace perclab {

enum class CorrelatorKind {
    spin_n_point,
    energy_spin_spin,
    energy_energy,
    edelta_spin_spin,
    edelta_energy,
    edelta_edelta,
    pi_a,
    one_arm_curve,
    four_arm_curve,
    annulus_terms,
};

const char* kind_name(CorrelatorKind kind);
CorrelatorKind kind_from_name(const std::string& name); // throws ConfigInvalid

struct CorrelatorRequest {
    std::string request_id;
    CorrelatorKind kind = CorrelatorKind::pi_a;
    std::vector<PointSpec> points;
    double spacing = 0.0;     // 0 in config files means "replicate over sweep"
    std::int64_t n_samples = 0;
    std::int64_t batch_size = 0;
    std::vector<double> radii; // one_arm_curve / four_arm_curve only
};

// multiplicative normalization applied to a raw mean. every field is stored in
// the output so the normalized value can be recomputed bit-for-bit:
//   factor = pi_value^pi_power * a^a_power * log(1/a)^log_power
//            * two_delta^two_delta_power
struct Normalization {
    int pi_power = 0;
    double a_power = 0.0;
    int log_power = 0;
    double two_delta = 0.0; // the 2*delta base, 0 when unused
    double two_delta_power = 0.0;
    double pi_value = 1.0;  // plug-in pi_a used for pi_power factors
};

double normalization_factor(const Normalization& norm, double spacing);
std::string normalization_json(const Normalization& norm); // compact one-line json

struct EstimateRecord {
    std::string request_id;
    CorrelatorKind kind = CorrelatorKind::pi_a;
    double spacing = 0.0;
    std::string point_json; // geometry echo (points as a json array)
    std::int64_t n = 0;     // samples behind this estimate
    double raw_mean = 0.0;
    double std_error = 0.0; // batch-means standard error of raw_mean
    Normalization norm;
    double normalized_value = 0.0;     // raw_mean * normalization_factor(...)
    double normalized_std_error = 0.0; // raw + plug-in errors in quadrature
    double pi_a_plugin = 0.0;          // 0 when no pi factor is involved
    double pi_a_plugin_std_error = 0.0;
};

// ---- sampling engine -------------------------------------------------------

// per-batch sufficient statistics. one row per present batch, each row holding
// [sum_even(term0), sum_odd(term0), sum_even(term1), ...] over the batch.
struct BatchTable {
    int n_terms = 0;
    std::int64_t batch_size = 0;
    std::int64_t n_batches = 0; // total wanted, not necessarily present
    bool complete = false;
    std::vector<std::int64_t> batch_index; // ascending
    std::vector<double> sums;              // batch_index.size() * 2*n_terms
};

struct EngineHooks {
    // called for each freshly computed batch, in strictly ascending batch
    // order (previously completed batches from `resume` are not re-reported)
    void (*on_batch)(void* user, std::int64_t batch, const double* sums, int n2) = nullptr;
    void* user = nullptr;
    // batches already done in an earlier run: (index, 2*n_terms sums) pairs
    const std::vector<std::pair<std::int64_t, std::vector<double>>>* resume = nullptr;
    std::int64_t max_new_batches = -1; // >= 0: stop after that many (interrupt hook)
    int workers = 1;
};

struct PiEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::int64_t n = 0;
};

// everything an estimator needs besides the request itself
struct EstimatorEnv {
    const Domain* domain = nullptr;
    std::uint64_t master_seed = 0;
    std::uint32_t stream = 0;
    std::optional<PiEstimate> pi; // plug-in for this spacing, when needed
    EngineHooks hooks;
};

// ---- estimators ------------------------------------------------------------
// all of them validate the request geometry eagerly (before sampling) and
// throw on violation. multi-valued estimators return one record per component
// / radius / annulus index, with "#..." suffixes on the request id.

// frequency of the one-arm event to distance 1 from the origin
EstimateRecord estimate_pi(const Domain& domain, std::uint64_t master_seed,
                           std::uint32_t stream, std::int64_t n_samples,
                           std::int64_t batch_size, const EngineHooks& hooks = {});

// <S...S> over an even point set, normalized by pi^-(#points)
std::vector<EstimateRecord> estimate_spin_n_point(const CorrelatorRequest& req,
                                                  const EstimatorEnv& env);

// <E S S> = R1 + R2 + R3 split into direct events plus a covariance;
// records: [sum, R1, R2, R3]
std::vector<EstimateRecord> estimate_energy_spin_spin(const CorrelatorRequest& req,
                                                      const EstimatorEnv& env);

// <E E> = R1 + R2 + R3; records: [sum under (a^{5/4}log(1/a))^{-2},
// sum under a^{-5/2}log(1/a)^{-1}, R1, R2, R3]
std::vector<EstimateRecord> estimate_energy_energy(const CorrelatorRequest& req,
                                                   const EstimatorEnv& env);

// the non-local-energy covariances <E^d S S>, <E^d E>, <E^d1 E^d2>
std::vector<EstimateRecord> estimate_edelta_correlators(const CorrelatorRequest& req,
                                                        const EstimatorEnv& env);

// one-arm / four-arm probabilities over a radius sweep (one record per radius)
std::vector<EstimateRecord> estimate_arm_curve(const CorrelatorRequest& req,
                                               const EstimatorEnv& env);

// annulus decomposition terms T_m for m = 2..M plus the running sum.
// three points (energy center + spin pair): single decomposition around z1;
// two energy centers: double decomposition, T_m = T_m^(1) + T_m^(2).
std::vector<EstimateRecord> estimate_annulus_terms(const CorrelatorRequest& req,
                                                   const EstimatorEnv& env);

struct LogPartnerConstants {
    double C1 = 0.0;
    double CL = 0.0;
    double C2 = 0.0;
};

// (2d)^{-25/24} * eta + (C1*CL/C2) * log(2d) * phi, errors in quadrature
EstimateRecord compose_log_partner(const EstimateRecord& eta_delta,
                                   const EstimateRecord& phi, double delta,
                                   const LogPartnerConstants& constants);

// dispatcher used by the cli: runs whichever estimator req.kind names
std::vector<EstimateRecord> run_request(const CorrelatorRequest& req,
                                        const EstimatorEnv& env);

// exposed for tests and the enumeration oracle: deterministic batch engine
// (see BatchTable docs) plus the per-sample kernels behind each request kind
class SampleKernel {
  public:
    virtual ~SampleKernel() = default;
    virtual int n_terms() const = 0;
    virtual bool needs_labels() const { return true; }
    virtual void eval(const Configuration& cfg, const ClusterLabels& labels,
                      double* terms) const = 0;
    // folds exact per-term expectations into the correlator value (expectation
    // products in place of split-halves); used by the enumeration oracle
    virtual double combine(const double* term_means) const { return term_means[0]; }
};

// builds the same kernel the estimator for req.kind samples with, validating
// the request geometry against the domain. the enumeration oracle shares the
// per-configuration code path through this factory.
std::unique_ptr<SampleKernel> make_sample_kernel(const CorrelatorRequest& req,
                                                 const Domain& domain);

BatchTable compute_batches(const Domain& domain, std::uint64_t master_seed,
                           std::uint32_t stream, std::int64_t n_samples,
                           std::int64_t batch_size, const SampleKernel& kernel,
                           const EngineHooks& hooks);

} // namespace perclab
