#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "perclab/lattice.hpp"
#include "perclab/sampler.hpp"

using namespace perclab;

TEST_CASE("philox4x32-10 reproduces the published test vectors") {
    // reference values from the original counter-based-rng test suite
    const std::array<uint32_t, 4> z = philox4x32(0, {0, 0, 0, 0});
    CHECK(z[0] == 0x6627e8d5u);
    CHECK(z[1] == 0xe169c58du);
    CHECK(z[2] == 0xbc57ac4cu);
    CHECK(z[3] == 0x9b00dbd8u);

    const std::array<uint32_t, 4> ones = philox4x32(
        0xffffffffffffffffull, {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu});
    CHECK(ones[0] == 0x408f276du);
    CHECK(ones[1] == 0x41c83b0eu);
    CHECK(ones[2] == 0xa20bc7c6u);
    CHECK(ones[3] == 0x6d5451fdu);

    const std::array<uint32_t, 4> pi = philox4x32(
        0x299f31d0a4093822ull, {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u});
    CHECK(pi[0] == 0xd16cfe09u);
    CHECK(pi[1] == 0x94fdccebu);
    CHECK(pi[2] == 0x5001e420u);
    CHECK(pi[3] == 0x24126ea1u);
}

TEST_CASE("configs are pure functions of (seed, stream, sample) and reuse-safe") {
    Domain dom(1.0, 2.1);
    Configuration a = sample_config(dom, 42, 7, 3);
    Configuration b = sample_config(dom, 42, 7, 3);
    CHECK(a.words == b.words);
    CHECK(a.sample_index == 7);
    CHECK(a.domain == &dom);

    // reuse of a dirty target converges to the same bytes
    Configuration dirty = sample_config(dom, 1, 2, 3);
    sample_config_into(dom, 42, 7, 3, dirty);
    CHECK(dirty.words == a.words);

    // seed, sample index, and stream all separate the sequences
    CHECK(sample_config(dom, 43, 7, 3).words != a.words);
    CHECK(sample_config(dom, 42, 8, 3).words != a.words);
    CHECK(sample_config(dom, 42, 7, 4).words != a.words);

    // one 128-bit block covers this 19-site patch
    CHECK(a.words.size() == 2);
}

TEST_CASE("site colors are unbiased and site-independent to sampling accuracy") {
    Domain dom(1.0, 2.1);
    const int n = dom.n_sites();
    const int samples = 4000;
    std::vector<int> black_count(static_cast<std::size_t>(n), 0);
    Configuration cfg;
    for (int i = 0; i < samples; ++i) {
        sample_config_into(dom, 99, static_cast<uint64_t>(i), 0, cfg);
        for (int s = 0; s < n; ++s)
            black_count[static_cast<std::size_t>(s)] += cfg.black(s) ? 1 : 0;
    }
    // per-site frequency within 5 binomial sigmas of 1/2
    const double sigma = std::sqrt(0.25 / samples);
    for (int s = 0; s < n; ++s) {
        const double f = black_count[static_cast<std::size_t>(s)] / static_cast<double>(samples);
        CHECK(std::abs(f - 0.5) < 5.0 * sigma);
    }
}

namespace {

Configuration pattern(const Domain& dom, const std::vector<LatticePoint>& black) {
    Configuration cfg;
    cfg.domain = &dom;
    cfg.words.assign((static_cast<std::size_t>(dom.n_sites()) + 63) / 64, 0);
    for (const auto& p : black) cfg.set_black(dom.site_index(p), true);
    return cfg;
}

} // namespace

TEST_CASE("cluster labels are canonical minimum-rank ids") {
    Domain dom(1.0, 1.3); // 7-site hexagon
    const LatticePoint c{0, 0};

    SUBCASE("all white") {
        ClusterLabels L = label_clusters(pattern(dom, {}));
        CHECK(L.cluster_count == 0);
        for (int i = 0; i < dom.n_sites(); ++i) CHECK(L.label[static_cast<std::size_t>(i)] == ClusterLabels::kWhite);
    }
    SUBCASE("all black is one cluster labeled by site rank zero") {
        Configuration cfg = pattern(dom, {});
        for (auto& w : cfg.words) w = ~uint64_t{0};
        ClusterLabels L = label_clusters(cfg);
        CHECK(L.cluster_count == 1);
        for (int i = 0; i < dom.n_sites(); ++i) CHECK(L.label[static_cast<std::size_t>(i)] == 0);
    }
    SUBCASE("ring without center is a single cycle cluster") {
        std::vector<LatticePoint> ring(kNeighborDirs.begin(), kNeighborDirs.end());
        ClusterLabels L = label_clusters(pattern(dom, ring));
        CHECK(L.cluster_count == 1);
        CHECK(L.label[static_cast<std::size_t>(dom.site_index(c))] == ClusterLabels::kWhite);
        int32_t expect = -2;
        for (const auto& p : ring) {
            const int idx = dom.site_index(p);
            if (expect == -2)
                expect = L.label[static_cast<std::size_t>(idx)];
            CHECK(L.label[static_cast<std::size_t>(idx)] == expect);
        }
        CHECK(expect == 0); // the minimum rank over the ring is the first site
    }
    SUBCASE("alternating ring sites are three singletons") {
        ClusterLabels L =
            label_clusters(pattern(dom, {kNeighborDirs[0], kNeighborDirs[2], kNeighborDirs[4]}));
        CHECK(L.cluster_count == 3);
        const int a = dom.site_index(kNeighborDirs[0]);
        const int b = dom.site_index(kNeighborDirs[2]);
        const int d = dom.site_index(kNeighborDirs[4]);
        CHECK(L.label[static_cast<std::size_t>(a)] == a);
        CHECK(L.label[static_cast<std::size_t>(b)] == b);
        CHECK(L.label[static_cast<std::size_t>(d)] == d);
        CHECK(!L.connected(a, b));
        CHECK(L.connected(a, a));
    }
    SUBCASE("labels do not depend on union merge order (random probes)") {
        Domain big(1.0, 3.5);
        Configuration cfg;
        for (int i = 0; i < 200; ++i) {
            sample_config_into(big, 7, static_cast<uint64_t>(i), 0, cfg);
            ClusterLabels L = label_clusters(cfg);
            // canonical property: every label is the min site rank of its cluster
            for (int s = 0; s < big.n_sites(); ++s) {
                const int32_t l = L.label[static_cast<std::size_t>(s)];
                if (!cfg.black(s)) {
                    CHECK(l == ClusterLabels::kWhite);
                    continue;
                }
                CHECK(l <= s);
                CHECK(cfg.black(l));
                CHECK(L.label[static_cast<std::size_t>(l)] == l);
            }
        }
    }
}

TEST_CASE("spin product expectation implements the even-multiplicity parity rule") {
    Domain dom(1.0, 1.3);
    const int c = dom.site_index({0, 0});
    const int n0 = dom.site_index({1, 0});
    const int n3 = dom.site_index({-1, 0});

    Configuration all_black = pattern(dom, {});
    for (auto& w : all_black.words) w = ~uint64_t{0};
    ClusterLabels Lb = label_clusters(all_black);

    SUBCASE("pairs in one cluster give 1") {
        const std::vector<int> pts = {n0, n3};
        CHECK(spin_product_expectation(Lb, all_black, std::span<const int>(pts)) == 1.0);
    }
    SUBCASE("odd point sets give 0 even when connected") {
        const std::vector<int> pts = {c, n0, n3};
        CHECK(spin_product_expectation(Lb, all_black, std::span<const int>(pts)) == 0.0);
        const std::vector<int> one = {c};
        CHECK(spin_product_expectation(Lb, all_black, std::span<const int>(one)) == 0.0);
    }
    SUBCASE("a white point kills the product") {
        Configuration cfg = pattern(dom, {{1, 0}, {-1, 0}});
        ClusterLabels L = label_clusters(cfg);
        const std::vector<int> pts = {c, n0};
        CHECK(spin_product_expectation(L, cfg, std::span<const int>(pts)) == 0.0);
    }
    SUBCASE("pair split across two clusters averages to 0") {
        Configuration cfg = pattern(dom, {{1, 0}, {-1, 0}}); // two singletons
        ClusterLabels L = label_clusters(cfg);
        const std::vector<int> pts = {n0, n3};
        CHECK(spin_product_expectation(L, cfg, std::span<const int>(pts)) == 0.0);
        // but each site paired with itself is even multiplicity
        const std::vector<int> twice = {n0, n0};
        CHECK(spin_product_expectation(L, cfg, std::span<const int>(twice)) == 1.0);
    }
    SUBCASE("two pairs in two distinct clusters give 1") {
        // two separated dominoes: (1,0)+(0,1) touch, (-1,0)+(0,-1) touch
        Configuration cfg = pattern(dom, {{1, 0}, {0, 1}, {-1, 0}, {0, -1}});
        ClusterLabels L = label_clusters(cfg);
        REQUIRE(L.cluster_count == 2);
        const std::vector<int> pts = {dom.site_index({1, 0}), dom.site_index({0, 1}),
                                      dom.site_index({-1, 0}), dom.site_index({0, -1})};
        CHECK(spin_product_expectation(L, cfg, std::span<const int>(pts)) == 1.0);
        // 3 + 1 split across the two clusters is odd in both
        const std::vector<int> odd = {dom.site_index({1, 0}), dom.site_index({0, 1}),
                                      dom.site_index({1, 0}), dom.site_index({-1, 0})};
        CHECK(spin_product_expectation(L, cfg, std::span<const int>(odd)) == 0.0);
    }
    SUBCASE("the lattice-point overload agrees with the index overload") {
        Configuration cfg = sample_config(dom, 5, 11, 0);
        ClusterLabels L = label_clusters(cfg);
        const std::vector<LatticePoint> pts = {{1, 0}, {-1, 0}};
        const std::vector<int> idx = {n0, n3};
        CHECK(spin_product_expectation(L, cfg, std::span<const LatticePoint>(pts)) ==
              spin_product_expectation(L, cfg, std::span<const int>(idx)));
    }
}
