#pragma once
// exhaustive-enumeration oracle. on a domain with at most 24 sites every
// expectation is a finite average over the 2^n equally likely colorings, so
// detector probabilities and correlator values can be computed exactly and
// compared against monte carlo estimates.
//
// the per-coloring code path is the estimator's own kernel (obtained through
// make_sample_kernel); only the configuration source differs, so these checks
// exercise the detectors rather than a reimplementation of them.

#include <functional>
#include <vector>

#include "perclab/estimators.hpp"

namespace perclab {

struct TinyPatch {
    const Domain* domain = nullptr;
};

// wraps a domain after checking the enumeration bound of 24 sites
TinyPatch tiny_patch(const Domain& domain); // throws PatchTooLarge

// (1/2^n) * sum over all colorings of the event indicator
double exact_event_probability(const TinyPatch& patch,
                               const std::function<bool(const Configuration&)>& event);

// exact expectation of every kernel term
std::vector<double> exact_kernel_means(const TinyPatch& patch, const SampleKernel& kernel);

// exact value of the correlator a request describes. product-of-expectation
// terms use the exact means directly (no split-halves needed).
double exact_correlator(const TinyPatch& patch, const CorrelatorRequest& req);

} // namespace perclab
