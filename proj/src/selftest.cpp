// the built-in correctness corpus. every case lives on a disk patch small
// enough for exhaustive enumeration; frozen hand counts pin the enumerator
// itself, and the monte-carlo side re-estimates each quantity with the real
// sampling path at N = 1e5 and must land within 4 standard errors.

#include "perclab/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>

#include "perclab/errors.hpp"
#include "perclab/estimators.hpp"
#include "perclab/events.hpp"
#include "perclab/oracle.hpp"
#include "perclab/sampler.hpp"

namespace perclab {

namespace {

constexpr std::uint64_t kSeed = 0x5e1f7e570c0ffeeull; // corpus master seed
constexpr std::int64_t kMcSamples = 100000;
constexpr std::int64_t kMcBatch = 2000; // 50 batches

struct Corpus {
    SelftestReport rep;
    bool with_mc = false;
    int max_sites = 24;
    std::uint32_t next_stream = 1;

    void add(const std::string& name, double expected, double got, double tol) {
        SelftestLine line;
        line.name = name;
        line.expected = expected;
        line.got = got;
        line.tolerance = tol;
        line.pass = tol == 0.0 ? expected == got : std::abs(expected - got) <= tol;
        if (!line.pass) rep.failures++;
        rep.lines.push_back(std::move(line));
    }
    void case_done() { rep.patches++; }
};

int idx(const Domain& dom, int q, int r) { return dom.site_index({q, r}); }

// empirical event frequency with a binomial standard error
struct Mc {
    double mean = 0.0;
    double sigma = 0.0;
};

Mc mc_event(const Domain& dom, std::uint32_t stream,
            const std::function<bool(const Configuration&)>& ev) {
    Configuration cfg;
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < kMcSamples; ++i) {
        sample_config_into(dom, kSeed, static_cast<std::uint64_t>(i), stream, cfg);
        if (ev(cfg)) ++hits;
    }
    const double p = static_cast<double>(hits) / static_cast<double>(kMcSamples);
    const double sigma = std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(kMcSamples));
    return {p, sigma};
}

// event-probability case: enumeration against an optional frozen hand value,
// then monte carlo against the enumeration
void event_case(Corpus& c, const Domain& dom, const std::string& name, double hand_value,
                bool have_hand, const std::function<bool(const Configuration&)>& ev) {
    if (dom.n_sites() > c.max_sites) return;
    const TinyPatch patch = tiny_patch(dom);
    const double exact = exact_event_probability(patch, ev);
    if (have_hand) c.add(name + " [enumeration vs hand count]", hand_value, exact, 0.0);
    if (c.with_mc) {
        const Mc mc = mc_event(dom, c.next_stream++, ev);
        c.add(name + " [monte carlo vs enumeration]", exact, mc.mean, 4.0 * mc.sigma);
    }
    c.case_done();
}

EstimatorEnv mc_env(const Domain& dom, std::uint32_t stream) {
    EstimatorEnv env;
    env.domain = &dom;
    env.master_seed = kSeed;
    env.stream = stream;
    env.pi = PiEstimate{0.5, 0.0, kMcSamples}; // placeholder; raw means are compared
    return env;
}

CorrelatorRequest spin_request(const char* id, const std::vector<std::complex<double>>& zs) {
    CorrelatorRequest req;
    req.request_id = id;
    req.kind = CorrelatorKind::spin_n_point;
    for (auto z : zs) req.points.push_back({z, PointRole::spin, 0.0});
    req.spacing = 1.0;
    req.n_samples = kMcSamples;
    req.batch_size = kMcBatch;
    return req;
}

} // namespace

SelftestReport run_oracle_selftest(bool with_mc, int max_sites) {
    Corpus c;
    c.with_mc = with_mc;
    c.max_sites = max_sites;

    // ---- patch 1: a single site --------------------------------------------
    {
        Domain dom(1.0, 0.5);
        c.add("single-site patch size", 1.0, dom.n_sites(), 0.0);
        const int s0 = idx(dom, 0, 0);
        event_case(c, dom, "single site: site black", 0.5, true,
                   [s0](const Configuration& cfg) { return cfg.black(s0); });
    }

    // ---- patch 2: the 7-site hexagon ---------------------------------------
    {
        Domain dom(1.0, 1.3);
        c.add("hexagon patch size", 7.0, dom.n_sites(), 0.0);
        const int ctr = idx(dom, 0, 0);
        const int n0 = idx(dom, 1, 0);
        const int n3 = idx(dom, -1, 0);

        // two adjacent sites with connectivity confined to that pair: the
        // restricted event is exactly "both black"
        RegionMask pair_mask = full_mask(dom);
        pair_mask.bits.assign(pair_mask.bits.size(), 0);
        pair_mask.set(ctr);
        pair_mask.set(n0);
        event_case(c, dom, "hexagon: adjacent pair, connectivity confined to the pair", 0.25, true,
                   [&dom, ctr, n0, pair_mask](const Configuration& cfg) {
                       return connected_within_idx(cfg, ctr, n0, pair_mask);
                   });

        // plain connectivity across the hexagon diameter. hand count: both
        // endpoints black (1/4) and center-or-either-ring-arc black,
        // 1 - (1/2)(3/4)(3/4) = 23/32; total 23/128
        event_case(c, dom, "hexagon: opposite ring sites connected", 23.0 / 128.0, true,
                   [n0, n3](const Configuration& cfg) {
                       thread_local ClusterLabels L;
                       label_clusters_into(cfg, L);
                       return L.connected(n0, n3);
                   });

        // path restricted to the straight diameter needs all three sites
        RegionMask diameter = full_mask(dom);
        diameter.bits.assign(diameter.bits.size(), 0);
        diameter.set(n0);
        diameter.set(ctr);
        diameter.set(n3);
        event_case(c, dom, "hexagon: connected within the diameter line", 1.0 / 8.0, true,
                   [n0, n3, diameter](const Configuration& cfg) {
                       return connected_within_idx(cfg, n0, n3, diameter);
                   });

        // connected but with no path inside the diameter line: endpoints
        // black, center white, and one ring arc black: (1/4)(1/2)(7/16)
        event_case(c, dom, "hexagon: connected but not within the diameter line", 7.0 / 128.0, true,
                   [n0, n3, diameter](const Configuration& cfg) {
                       thread_local ClusterLabels L;
                       label_clusters_into(cfg, L);
                       return connected_not_within_idx(cfg, L, n0, n3, diameter);
                   });

        // one-arm to radius 1.2: center black and at least one ring site
        // black, (1/2)(1 - 2^-6) = 63/128
        event_case(c, dom, "hexagon: one-arm to radius 1.2", 63.0 / 128.0, true,
                   [](const Configuration& cfg) { return one_arm(cfg, {0, 0}, 1.2); });

        // color symmetry of the enumerator: the white-path probability equals
        // the black-path probability exactly (color swap is a bijection)
        {
            const TinyPatch patch = tiny_patch(dom);
            auto black_path = [n0, n3](const Configuration& cfg) {
                thread_local ClusterLabels L;
                label_clusters_into(cfg, L);
                return L.connected(n0, n3);
            };
            auto white_path = [n0, n3](const Configuration& cfg) {
                thread_local Configuration flip;
                flip.domain = cfg.domain;
                flip.words = cfg.words;
                for (auto& w : flip.words) w = ~w;
                flip.sample_index = cfg.sample_index;
                thread_local ClusterLabels L;
                label_clusters_into(flip, L);
                return L.connected(n0, n3);
            };
            c.add("hexagon: color-swapped event pair has equal probability",
                  exact_event_probability(patch, black_path),
                  exact_event_probability(patch, white_path), 0.0);
            c.case_done();
        }

        // a lone spin vanishes identically (odd parity), per configuration
        {
            const TinyPatch patch = tiny_patch(dom);
            CorrelatorRequest req = spin_request("selftest_spin1", {{0.0, 0.0}});
            c.add("hexagon: single spin expectation is exactly zero", 0.0,
                  exact_correlator(patch, req), 0.0);
            if (c.with_mc) {
                auto kernel = make_sample_kernel(req, dom);
                Configuration cfg;
                ClusterLabels L;
                double worst = 0.0;
                double term = 0.0;
                const std::uint32_t stream = c.next_stream++;
                for (std::int64_t i = 0; i < kMcSamples; ++i) {
                    sample_config_into(dom, kSeed, static_cast<std::uint64_t>(i), stream, cfg);
                    label_clusters_into(cfg, L);
                    kernel->eval(cfg, L, &term);
                    worst = std::max(worst, std::abs(term));
                }
                c.add("hexagon: single spin vanishes on every sampled configuration", 0.0, worst,
                      0.0);
            }
            c.case_done();
        }
    }

    // ---- patch 3: 13 sites, detector cross-validation ----------------------
    if (max_sites >= 13) {
        Domain dom(1.0, 1.8);
        c.add("two-shell patch size", 13.0, dom.n_sites(), 0.0);
        Configuration cfg;
        cfg.domain = &dom;
        cfg.words.assign(1, 0);
        const std::uint64_t total = std::uint64_t{1} << dom.n_sites();

        std::uint64_t agree_point = 0;
        for (std::uint64_t m = 0; m < total; ++m) {
            cfg.words[0] = m;
            if (point_four_arm(cfg, {0, 0}, 1.0) == point_four_arm_reference(cfg, {0, 0}, 1.0))
                ++agree_point;
        }
        c.add("four-arm detectors agree on every coloring (point form)",
              static_cast<double>(total), static_cast<double>(agree_point), 0.0);
        c.case_done();

        const AnnulusSpec spec{{0.0, 0.0}, 1.2, 1.8};
        std::uint64_t agree_ann = 0;
        for (std::uint64_t m = 0; m < total; ++m) {
            cfg.words[0] = m;
            if (four_arm_annulus(cfg, spec) == four_arm_annulus_reference(cfg, spec)) ++agree_ann;
        }
        c.add("four-arm detectors agree on every coloring (annulus form)",
              static_cast<double>(total), static_cast<double>(agree_ann), 0.0);
        c.case_done();
    }

    // ---- patch 4: 19 sites, correlators ------------------------------------
    if (max_sites >= 19) {
        Domain dom(1.0, 2.1);
        c.add("three-shell patch size", 19.0, dom.n_sites(), 0.0);
        const TinyPatch patch = tiny_patch(dom);
        const std::complex<double> z_n0 = dom.embedding({1, 0});
        const std::complex<double> z_n3 = dom.embedding({-1, 0});
        const std::complex<double> z_up = dom.embedding({0, 1});
        const std::complex<double> z_ul = dom.embedding({-1, 1});

        // adjacent spin pair: both-black, 1/4 on any patch
        {
            CorrelatorRequest req = spin_request("selftest_spin2a", {{0.0, 0.0}, z_n0});
            c.add("adjacent spin pair [enumeration vs hand count]", 0.25,
                  exact_correlator(patch, req), 0.0);
            if (c.with_mc) {
                auto recs = estimate_spin_n_point(req, mc_env(dom, c.next_stream++));
                c.add("adjacent spin pair [monte carlo vs enumeration]", 0.25, recs[0].raw_mean,
                      4.0 * recs[0].std_error);
            }
            c.case_done();
        }

        // distance-2 spin pair against enumeration
        {
            CorrelatorRequest req = spin_request("selftest_spin2f", {z_n0, z_n3});
            const double exact = exact_correlator(patch, req);
            if (c.with_mc) {
                auto recs = estimate_spin_n_point(req, mc_env(dom, c.next_stream++));
                c.add("far spin pair [monte carlo vs enumeration]", exact, recs[0].raw_mean,
                      4.0 * recs[0].std_error);
            }
            // independent exact route: the pair correlator is the two-point
            // connection probability
            const int s1 = idx(dom, 1, 0), s2 = idx(dom, -1, 0);
            const double conn = exact_event_probability(patch, [s1, s2](const Configuration& cfg) {
                thread_local ClusterLabels L;
                label_clusters_into(cfg, L);
                return L.connected(s1, s2);
            });
            c.add("far spin pair [parity rule vs connection probability]", conn, exact, 0.0);
            c.case_done();
        }

        // four-point spin correlator equals the sum of its cluster-pairing
        // connection probabilities (two independent exact computations)
        {
            CorrelatorRequest req = spin_request("selftest_spin4", {z_n0, z_up, z_ul, z_n3});
            const double exact = exact_correlator(patch, req);
            const int s1 = idx(dom, 1, 0), s2 = idx(dom, 0, 1), s3 = idx(dom, -1, 1),
                      s4 = idx(dom, -1, 0);
            auto pairing = [&](int a, int b, int x, int y, bool all4) {
                return exact_event_probability(
                    patch, [=](const Configuration& cfg) {
                        thread_local ClusterLabels L;
                        label_clusters_into(cfg, L);
                        if (all4)
                            return L.connected(a, b) && L.connected(a, x) && L.connected(a, y);
                        return L.connected(a, b) && L.connected(x, y) && !L.connected(a, x);
                    });
            };
            const double sum = pairing(s1, s2, s3, s4, true) + pairing(s1, s2, s3, s4, false) +
                               pairing(s1, s3, s2, s4, false) + pairing(s1, s4, s2, s3, false);
            c.add("four-point spin [parity rule vs pairing decomposition]", sum, exact, 0.0);
            if (c.with_mc) {
                auto recs = estimate_spin_n_point(req, mc_env(dom, c.next_stream++));
                c.add("four-point spin [monte carlo vs enumeration]", exact, recs[0].raw_mean,
                      4.0 * recs[0].std_error);
            }
            c.case_done();
        }

        // the three-term energy-spin-spin decomposition: kernel enumeration,
        // an independent event-by-event enumeration, and monte carlo
        {
            CorrelatorRequest req;
            req.request_id = "selftest_ess";
            req.kind = CorrelatorKind::energy_spin_spin;
            req.points = {{{0.0, 0.0}, PointRole::energy_center, 0.0},
                          {z_up, PointRole::spin, 0.0},
                          {z_ul, PointRole::spin, 0.0}};
            req.spacing = 1.0;
            req.n_samples = kMcSamples;
            req.batch_size = kMcBatch;

            auto kernel = make_sample_kernel(req, dom);
            const std::vector<double> means = exact_kernel_means(patch, *kernel);
            const double exact_sum = kernel->combine(means.data());

            const int zm = idx(dom, -1, 0), zp = idx(dom, 1, 0);
            const int s2 = idx(dom, 0, 1), s3 = idx(dom, -1, 1);
            auto prob = [&](const std::function<bool(const ClusterLabels&)>& test) {
                return exact_event_probability(patch, [&test](const Configuration& cfg) {
                    thread_local ClusterLabels L;
                    label_clusters_into(cfg, L);
                    return test(L);
                });
            };
            constexpr std::int32_t W = ClusterLabels::kWhite;
            const double r1 = prob([&](const ClusterLabels& L) {
                const auto& l = L.label;
                return l[zm] != W && l[zm] == l[s2] && l[zp] != W && l[zp] == l[s3] &&
                       l[zm] != l[zp];
            });
            const double r2 = prob([&](const ClusterLabels& L) {
                const auto& l = L.label;
                return l[zm] != W && l[zm] == l[s3] && l[zp] != W && l[zp] == l[s2] &&
                       l[zm] != l[zp];
            });
            const double x = prob([&](const ClusterLabels& L) { return L.connected(zm, zp); });
            const double y = prob([&](const ClusterLabels& L) { return L.connected(s2, s3); });
            const double xy = prob([&](const ClusterLabels& L) {
                return L.connected(zm, zp) && L.connected(s2, s3);
            });

            c.add("energy-spin-spin: direct term 1 [kernel vs events]", r1, means[0], 0.0);
            c.add("energy-spin-spin: direct term 2 [kernel vs events]", r2, means[1], 0.0);
            c.add("energy-spin-spin: connection factors [kernel vs events]", x * y,
                  means[2] * means[3], 0.0);
            c.add("energy-spin-spin: joint connection [kernel vs events]", xy, means[4], 0.0);
            c.add("energy-spin-spin: full sum [kernel vs events]", r1 + r2 + (xy - x * y),
                  exact_sum, 0.0);
            if (c.with_mc) {
                auto recs = estimate_energy_spin_spin(req, mc_env(dom, c.next_stream++));
                // records: [sum, #R1, #R2, #R3]
                c.add("energy-spin-spin: sum [monte carlo vs enumeration]", exact_sum,
                      recs[0].raw_mean, 4.0 * recs[0].std_error);
                c.add("energy-spin-spin: term 1 [monte carlo vs enumeration]", r1,
                      recs[1].raw_mean, 4.0 * recs[1].std_error);
                c.add("energy-spin-spin: term 2 [monte carlo vs enumeration]", r2,
                      recs[2].raw_mean, 4.0 * recs[2].std_error);
                c.add("energy-spin-spin: covariance [monte carlo vs enumeration]", xy - x * y,
                      recs[3].raw_mean, 4.0 * recs[3].std_error);
            }
            c.case_done();
        }

        // point four-arm probability on the largest patch
        {
            const double exact =
                exact_event_probability(patch, [](const Configuration& cfg) {
                    return point_four_arm(cfg, {0, 0}, 1.0);
                });
            if (c.with_mc) {
                const Mc mc = mc_event(dom, c.next_stream++, [](const Configuration& cfg) {
                    return point_four_arm(cfg, {0, 0}, 1.0);
                });
                c.add("point four-arm to radius 1 [monte carlo vs enumeration]", exact, mc.mean,
                      4.0 * mc.sigma);
            } else {
                // exact-only mode still pins the two detectors to each other
                const double ref =
                    exact_event_probability(patch, [](const Configuration& cfg) {
                        return point_four_arm_reference(cfg, {0, 0}, 1.0);
                    });
                c.add("point four-arm to radius 1 [fast vs reference detector]", ref, exact, 0.0);
            }
            c.case_done();
        }
    }

    return c.rep;
}

void print_selftest_report(const SelftestReport& rep, std::ostream& out) {
    char buf[256];
    for (const auto& line : rep.lines) {
        std::snprintf(buf, sizeof buf, "  [%s] %-62s expected %-14.10g got %-14.10g",
                      line.pass ? "PASS" : "FAIL", line.name.c_str(), line.expected, line.got);
        out << buf;
        if (line.tolerance > 0.0) {
            std::snprintf(buf, sizeof buf, " (tol %.3g)", line.tolerance);
            out << buf;
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof buf, "  %d case%s, %zu checks, %d failure%s\n", rep.patches,
                  rep.patches == 1 ? "" : "s", rep.lines.size(), rep.failures,
                  rep.failures == 1 ? "" : "s");
    out << buf;
}

} // namespace perclab
