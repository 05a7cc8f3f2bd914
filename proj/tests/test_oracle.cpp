#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "perclab/errors.hpp"
#include "perclab/estimators.hpp"
#include "perclab/events.hpp"
#include "perclab/oracle.hpp"
#include "perclab/sampler.hpp"

using namespace perclab;

namespace {

bool labels_connected(const Configuration& cfg, int s1, int s2) {
    thread_local ClusterLabels L;
    label_clusters_into(cfg, L);
    return L.connected(s1, s2);
}

} // namespace

TEST_CASE("tiny patch construction enforces the enumeration bound") {
    Domain small(1.0, 2.1);
    CHECK(tiny_patch(small).domain == &small);
    Domain large(1.0, 2.65); // 31 sites
    REQUIRE(large.n_sites() > 24);
    CHECK_THROWS_AS(tiny_patch(large), PatchTooLarge);
}

TEST_CASE("exact probabilities match closed-form counts on tiny patches") {
    Domain one(1.0, 0.5);
    const TinyPatch p1 = tiny_patch(one);
    CHECK(exact_event_probability(p1, [](const Configuration& cfg) { return cfg.black(0); }) ==
          0.5);
    CHECK(exact_event_probability(p1, [](const Configuration&) { return true; }) == 1.0);
    CHECK(exact_event_probability(p1, [](const Configuration&) { return false; }) == 0.0);

    Domain hex(1.0, 1.3);
    const TinyPatch ph = tiny_patch(hex);
    const int n0 = hex.site_index({1, 0});
    const int n1 = hex.site_index({0, 1});
    const int n2 = hex.site_index({-1, 1});

    // adjacent sites are connected exactly when both are black
    CHECK(exact_event_probability(ph, [&](const Configuration& cfg) {
              return labels_connected(cfg, n0, n1);
          }) == 0.25);

    // next-nearest ring sites: endpoints black and one of the three bridges
    // present, (1/4) * (1 - (1/2)(1/2)(7/8)) = 25/128
    CHECK(exact_event_probability(ph, [&](const Configuration& cfg) {
              return labels_connected(cfg, n0, n2);
          }) == 25.0 / 128.0);

    // two disjoint single-site events multiply exactly
    CHECK(exact_event_probability(ph, [&](const Configuration& cfg) {
              return cfg.black(n0) && cfg.black(n2);
          }) == 0.25);
}

TEST_CASE("enumeration probabilities are invariant under a global color swap") {
    Domain hex(1.0, 1.3);
    const TinyPatch ph = tiny_patch(hex);
    const int n0 = hex.site_index({1, 0});
    const int n3 = hex.site_index({-1, 0});
    auto black_path = [&](const Configuration& cfg) { return labels_connected(cfg, n0, n3); };
    auto white_path = [&](const Configuration& cfg) {
        Configuration flip = cfg;
        for (auto& w : flip.words) w = ~w;
        return labels_connected(flip, n0, n3);
    };
    CHECK(exact_event_probability(ph, black_path) == exact_event_probability(ph, white_path));
}

TEST_CASE("kernel means feed the correlator combination consistently") {
    Domain dom(1.0, 2.1);
    const TinyPatch patch = tiny_patch(dom);

    CorrelatorRequest pair;
    pair.request_id = "oracle_pair";
    pair.kind = CorrelatorKind::spin_n_point;
    pair.points = {{{0.0, 0.0}, PointRole::spin, 0.0},
                   {dom.embedding({1, 0}), PointRole::spin, 0.0}};
    pair.spacing = 1.0;
    auto kernel = make_sample_kernel(pair, dom);
    REQUIRE(kernel->n_terms() == 1);
    const std::vector<double> means = exact_kernel_means(patch, *kernel);
    REQUIRE(means.size() == 1);
    // single-term kernels: correlator value is the term mean itself
    CHECK(exact_correlator(patch, pair) == means[0]);
    // adjacent pair: the parity rule reduces to the connection probability 1/4
    CHECK(means[0] == 0.25);

    // an odd spin set vanishes identically under enumeration
    CorrelatorRequest lone = pair;
    lone.points.resize(1);
    CHECK(exact_correlator(patch, lone) == 0.0);
}

TEST_CASE("enumeration is repeatable and thread-count independent") {
    Domain dom(1.0, 1.75); // 13 sites: crosses the parallel-chunking threshold
    const TinyPatch patch = tiny_patch(dom);
    auto ev = [&](const Configuration& cfg) {
        return labels_connected(cfg, dom.site_index({1, 0}), dom.site_index({-1, 0}));
    };
    const double a = exact_event_probability(patch, ev);
    const double b = exact_event_probability(patch, ev);
    CHECK(a == b);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
}
