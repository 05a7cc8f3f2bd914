#pragma once

// reproducible configuration sampling and cluster machinery.
//
// colors come from a counter-based generator (philox 4x32-10): the color of
// site s in sample n of stream t under master seed k is a pure function of
// (k, t, n, s). nothing depends on thread count or call order, which is what
// makes the parallel estimators bit-reproducible.
//
// cluster spins are never sampled. every estimator that needs a spin product
// uses spin_product_expectation, the exact conditional expectation over the
// i.i.d. +-1 cluster signs (the even-multiplicity parity rule).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "perclab/lattice.hpp"

namespace perclab {

// one philox 4x32-10 block: 128 output bits from a 64-bit key and a 128-bit
// counter. standard multipliers and weyl constants.
std::array<uint32_t, 4> philox4x32(uint64_t key, std::array<uint32_t, 4> counter);

struct Configuration {
    const Domain* domain = nullptr;
    std::vector<uint64_t> words; // bit per site in canonical order, 1 = black
    uint64_t sample_index = 0;

    bool black(int site) const {
        return (words[static_cast<std::size_t>(site >> 6)] >> (site & 63)) & 1u;
    }
    void set_black(int site, bool b) {
        const std::size_t w = static_cast<std::size_t>(site >> 6);
        const uint64_t m = uint64_t{1} << (site & 63);
        if (b)
            words[w] |= m;
        else
            words[w] &= ~m;
    }
};

// fill cfg with the colors of (master_seed, stream, sample_index). the stream
// id separates logically independent sample sequences (one per request, plus
// the one-arm plug-in) under a single master seed.
void sample_config_into(const Domain& domain, uint64_t master_seed, uint64_t sample_index,
                        uint32_t stream, Configuration& cfg);

Configuration sample_config(const Domain& domain, uint64_t master_seed, uint64_t sample_index,
                            uint32_t stream = 0);

struct ClusterLabels {
    // per-site cluster id: the minimum site rank in the cluster for black
    // sites, kWhite for white sites. canonical by construction, so the array
    // is independent of union-find merge order.
    std::vector<int32_t> label;
    int32_t cluster_count = 0;

    static constexpr int32_t kWhite = -1;

    bool connected(int s1, int s2) const {
        const int32_t l1 = label[static_cast<std::size_t>(s1)];
        return l1 != kWhite && l1 == label[static_cast<std::size_t>(s2)];
    }
};

void label_clusters_into(const Configuration& cfg, ClusterLabels& out);
ClusterLabels label_clusters(const Configuration& cfg);

// exact conditional expectation of prod_i S_{p_i} given the configuration:
// 1 if every listed point is black and every cluster contains an even number
// of listed points (with multiplicity), else 0. odd point counts are
// identically 0 on every configuration.
double spin_product_expectation(const ClusterLabels& labels, const Configuration& cfg,
                                std::span<const LatticePoint> points);
// hot-path overload on canonical site indices
double spin_product_expectation(const ClusterLabels& labels, const Configuration& cfg,
                                std::span<const int> site_indices);

} // namespace perclab
