// brute-force enumeration over all colorings of a tiny domain. colorings are
// indexed 0..2^n-1 with bit i giving the color of site i (the sampler's site
// order), written straight into the configuration word.

#include "perclab/oracle.hpp"

#include <algorithm>
#include <string>

#include "perclab/errors.hpp"
#include "perclab/sampler.hpp"

namespace perclab {

namespace {

constexpr int kMaxSites = 24;

void check_patch(const TinyPatch& patch) {
    if (patch.domain == nullptr) throw PatchTooLarge("tiny patch has no domain");
    if (patch.domain->n_sites() > kMaxSites)
        throw PatchTooLarge("enumeration bound is " + std::to_string(kMaxSites) +
                            " sites, domain has " + std::to_string(patch.domain->n_sites()));
}

} // namespace

TinyPatch tiny_patch(const Domain& domain) {
    TinyPatch p{&domain};
    check_patch(p);
    return p;
}

double exact_event_probability(const TinyPatch& patch,
                               const std::function<bool(const Configuration&)>& event) {
    check_patch(patch);
    const Domain& dom = *patch.domain;
    const std::uint64_t total = std::uint64_t{1} << dom.n_sites();
    const int n_chunks = total > 4096 ? 64 : 1;
    std::vector<std::uint64_t> hits(static_cast<std::size_t>(n_chunks), 0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < n_chunks; ++c) {
        Configuration cfg;
        cfg.domain = &dom;
        cfg.words.assign(1, 0);
        const std::uint64_t lo = total * static_cast<std::uint64_t>(c) /
                                 static_cast<std::uint64_t>(n_chunks);
        const std::uint64_t hi = total * static_cast<std::uint64_t>(c + 1) /
                                 static_cast<std::uint64_t>(n_chunks);
        std::uint64_t h = 0;
        for (std::uint64_t coloring = lo; coloring < hi; ++coloring) {
            cfg.words[0] = coloring;
            cfg.sample_index = coloring;
            if (event(cfg)) ++h;
        }
        hits[static_cast<std::size_t>(c)] = h;
    }
    std::uint64_t sum = 0;
    for (std::uint64_t h : hits) sum += h;
    return static_cast<double>(sum) / static_cast<double>(total);
}

std::vector<double> exact_kernel_means(const TinyPatch& patch, const SampleKernel& kernel) {
    check_patch(patch);
    const Domain& dom = *patch.domain;
    const std::uint64_t total = std::uint64_t{1} << dom.n_sites();
    const int T = kernel.n_terms();
    const int n_chunks = total > 4096 ? 64 : 1;
    std::vector<double> chunk_sums(static_cast<std::size_t>(n_chunks) * static_cast<std::size_t>(T), 0.0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < n_chunks; ++c) {
        Configuration cfg;
        cfg.domain = &dom;
        cfg.words.assign(1, 0);
        ClusterLabels labels;
        std::vector<double> terms(static_cast<std::size_t>(T));
        double* out = &chunk_sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(T)];
        const std::uint64_t lo = total * static_cast<std::uint64_t>(c) /
                                 static_cast<std::uint64_t>(n_chunks);
        const std::uint64_t hi = total * static_cast<std::uint64_t>(c + 1) /
                                 static_cast<std::uint64_t>(n_chunks);
        const bool want_labels = kernel.needs_labels();
        for (std::uint64_t coloring = lo; coloring < hi; ++coloring) {
            cfg.words[0] = coloring;
            cfg.sample_index = coloring;
            if (want_labels) label_clusters_into(cfg, labels);
            std::fill(terms.begin(), terms.end(), 0.0);
            kernel.eval(cfg, labels, terms.data());
            for (int t = 0; t < T; ++t) out[t] += terms[static_cast<std::size_t>(t)];
        }
    }
    // chunk-order reduction keeps the result independent of thread timing
    std::vector<double> means(static_cast<std::size_t>(T), 0.0);
    for (int c = 0; c < n_chunks; ++c)
        for (int t = 0; t < T; ++t)
            means[static_cast<std::size_t>(t)] +=
                chunk_sums[static_cast<std::size_t>(c) * static_cast<std::size_t>(T) +
                           static_cast<std::size_t>(t)];
    for (int t = 0; t < T; ++t) means[static_cast<std::size_t>(t)] /= static_cast<double>(total);
    return means;
}

double exact_correlator(const TinyPatch& patch, const CorrelatorRequest& req) {
    check_patch(patch);
    auto kernel = make_sample_kernel(req, *patch.domain);
    const std::vector<double> means = exact_kernel_means(patch, *kernel);
    return kernel->combine(means.data());
}

} // namespace perclab
