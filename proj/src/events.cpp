#include "perclab/events.hpp"

#include <cmath>
#include <cstdio>

#include "perclab/errors.hpp"

namespace perclab {
namespace {

// all geometry in this file goes through Domain::embedding so that the same
// lattice point always maps to the same double, whether it was reached as a
// site, a neighbor, or a walk step. mixing precomputed neighbor offsets in
// would risk one-ulp disagreements between the two four-arm detectors.

// ---------------------------------------------------------------- scratch ---

struct Scratch {
    std::vector<uint32_t> mark;
    uint32_t epoch = 0;
    std::vector<int32_t> queue;
    std::vector<int32_t> comp;
    std::vector<uint8_t> word;

    // start a new visited-set generation sized for n sites
    void begin(int n) {
        if (mark.size() < static_cast<std::size_t>(n)) {
            mark.assign(static_cast<std::size_t>(n), 0);
            epoch = 0;
        }
        if (++epoch == 0) {
            std::fill(mark.begin(), mark.end(), 0u);
            epoch = 1;
        }
        queue.clear();
    }
    bool seen(int i) const { return mark[static_cast<std::size_t>(i)] == epoch; }
    void see(int i) { mark[static_cast<std::size_t>(i)] = epoch; }
};

thread_local Scratch g_scratch;

// ----------------------------------------------------------- arm geometry ---

// shared geometric frame for the four-arm detectors. the crossing region is
//   { site : dist <= outer_radius, site not in the hole },
// the hole is either the open disk dist < hole_radius (annulus form) or a
// single designated site (point form, used for the arm event at a vertex).
// a monochromatic crossing attaches inside when it occupies a site with a
// lattice-neighbor position in the hole, and outside when it occupies a site
// with a neighbor position beyond outer_radius; both tests are pure geometry,
// so attached sites sit within one lattice spacing of the respective circle.

enum class ExitClass { inner, outer, side };

struct ArmGeometry {
    const Domain* dom = nullptr;
    std::complex<double> center;
    bool point_hole = false;
    LatticePoint hole_pt{0, 0};
    double hole_r2 = 0.0; // squared, annulus form only
    double band_r2 = 0.0; // squared inner radius: portal scan upper bound
    double outer_r2 = 0.0;

    double dist2(LatticePoint p) const {
        const std::complex<double> e = dom->embedding(p) - center;
        return e.real() * e.real() + e.imag() * e.imag();
    }
    double dist2_site(int i) const {
        const double dx = dom->x(i) - center.real();
        const double dy = dom->y(i) - center.imag();
        return dx * dx + dy * dy;
    }
    bool in_hole(LatticePoint p, double d2) const {
        return point_hole ? p == hole_pt : d2 < hole_r2;
    }
};

ArmGeometry annulus_geometry(const Domain& dom, const AnnulusSpec& spec) {
    if (!(spec.inner_radius > 0.0) || !(spec.inner_radius < spec.outer_radius))
        throw DegenerateInput("annulus radii must satisfy 0 < inner < outer");
    if (std::abs(spec.center) + spec.outer_radius > dom.radius() + 1e-9)
        throw OutOfDomain("annulus outer ball does not fit inside the domain");
    ArmGeometry g;
    g.dom = &dom;
    g.center = spec.center;
    g.point_hole = false;
    const double rh = spec.inner_radius - dom.spacing();
    g.hole_r2 = rh > 0.0 ? rh * rh : 0.0; // hole empty when inner radius <= spacing
    g.band_r2 = spec.inner_radius * spec.inner_radius;
    g.outer_r2 = spec.outer_radius * spec.outer_radius;
    return g;
}

ArmGeometry point_geometry(const Domain& dom, LatticePoint p, double r) {
    if (dom.site_index(p) < 0)
        throw OutOfDomain("arm-event center is not a domain site");
    const std::complex<double> c = dom.embedding(p);
    if (!(r > 0.0))
        throw DegenerateInput("arm-event radius must be positive");
    if (std::abs(c) + r > dom.radius() + 1e-9)
        throw OutOfDomain("arm-event ball does not fit inside the domain");
    ArmGeometry g;
    g.dom = &dom;
    g.center = c;
    g.point_hole = true;
    g.hole_pt = p;
    g.band_r2 = 0.0; // unused: portals are enumerated from the hole site directly
    g.outer_r2 = r * r;
    return g;
}

// ----------------------------------------------------------- interface walk ---

// directed interface step on the triangular lattice. state: site s of color
// `left_black` with the opposite color at s + dir[dd]; the matching interface
// edge is traversed keeping s's color on the left. the forward face third is
// t = s + dir[dd+1]; same color as s pivots the state onto t, opposite color
// advances the direction, and t outside the region terminates the arc.
ExitClass walk_interface(const Configuration& cfg, const ArmGeometry& g, LatticePoint s, int dd,
                         bool left_black, long max_steps) {
    long steps = 0;
    for (;;) {
        if (++steps > max_steps)
            throw Error("interface walk exceeded its step bound (detector bug)");
        const LatticePoint t = s + kNeighborDirs[static_cast<std::size_t>((dd + 1) % 6)];
        const double d2 = g.dist2(t);
        if (g.in_hole(t, d2)) return ExitClass::inner;
        if (d2 > g.outer_r2) return ExitClass::outer;
        const int ti = g.dom->site_index(t);
        if (ti < 0) return ExitClass::side; // domain edge clipped the region
        if (cfg.black(ti) == left_black) {
            s = t;
            dd = (dd + 5) % 6;
        } else {
            dd = (dd + 1) % 6;
        }
    }
}

// walk away from the inner-terminal face {s, v, u}: u in the hole, v the
// next neighbor of s counterclockwise from u, colors of s and v opposite.
// every interface arc with an endpoint at the hole is launched exactly once
// this way, so counting outer exits counts the hole-to-outside arcs.
int count_crossings_from_portal(const Configuration& cfg, const ArmGeometry& g, int si,
                                LatticePoint s, int dir_to_hole, long max_steps) {
    const int dv = (dir_to_hole + 1) % 6;
    const LatticePoint v = s + kNeighborDirs[static_cast<std::size_t>(dv)];
    const double d2v = g.dist2(v);
    if (g.in_hole(v, d2v)) return 0; // face has two hole vertices: not terminal
    if (d2v > g.outer_r2) return 0;
    const int vi = g.dom->site_index(v);
    if (vi < 0) return 0;
    if (cfg.black(vi) == cfg.black(si)) return 0; // monochromatic face
    const ExitClass cls = walk_interface(cfg, g, s, dv, cfg.black(si), max_steps);
    return cls == ExitClass::outer ? 1 : 0;
}

int crossing_count_core(const Configuration& cfg, const ArmGeometry& g) {
    const Domain& dom = *g.dom;
    const long max_steps = 6L * dom.n_sites() + 12;
    int count = 0;
    if (g.point_hole) {
        for (int d = 0; d < 6; ++d) {
            const LatticePoint s = g.hole_pt + kNeighborDirs[static_cast<std::size_t>(d)];
            const int si = dom.site_index(s);
            if (si < 0) continue;
            if (g.dist2_site(si) > g.outer_r2) continue;
            count += count_crossings_from_portal(cfg, g, si, s, (d + 3) % 6, max_steps);
        }
        return count;
    }
    // annulus form: only sites strictly inside the inner circle's band can
    // neighbor the hole, so the portal scan filters on dist < inner_radius
    const int n = dom.n_sites();
    for (int i = 0; i < n; ++i) {
        const double d2 = g.dist2_site(i);
        if (d2 < g.hole_r2 || d2 >= g.band_r2) continue;
        const LatticePoint s = dom.site(i);
        for (int d = 0; d < 6; ++d) {
            const LatticePoint u = s + kNeighborDirs[static_cast<std::size_t>(d)];
            if (g.in_hole(u, g.dist2(u)))
                count += count_crossings_from_portal(cfg, g, i, s, d, max_steps);
        }
    }
    return count;
}

// ------------------------------------------------------ component reference ---

// nearest lattice point to z at the domain's spacing, with no requirement
// that it be a domain site (the hole of an annulus may hug the center)
LatticePoint nearest_lattice_point(const Domain& dom, std::complex<double> z) {
    const double a = dom.spacing();
    const double rf = z.imag() / (a * Domain::kRowHeight);
    const double qf = z.real() / a - 0.5 * rf;
    const int32_t q0 = static_cast<int32_t>(std::floor(qf)) - 1;
    const int32_t r0 = static_cast<int32_t>(std::floor(rf)) - 1;
    LatticePoint best{q0, r0};
    double best_d2 = -1.0;
    for (int32_t q = q0; q <= q0 + 3; ++q) {
        for (int32_t r = r0; r <= r0 + 3; ++r) {
            const LatticePoint p{q, r};
            const std::complex<double> e = dom.embedding(p) - z;
            const double d2 = e.real() * e.real() + e.imag() * e.imag();
            if (best_d2 < 0.0 || d2 < best_d2 || (d2 == best_d2 && p < best)) {
                best = p;
                best_d2 = d2;
            }
        }
    }
    return best;
}

// independent four-arm detector: label the monochromatic components of the
// crossing region, keep those attached to both the hole and the outside, and
// walk the combinatorial boundary of the hole to read off the cyclic word of
// crossing-component colors at the portal edges. the event holds iff the word
// changes color at least four times around the cycle. planarity makes this
// equivalent to four interfaces traversing the region, which is what the
// primary detector counts; the test suite checks the agreement exhaustively.
bool reference_core(const Configuration& cfg, const ArmGeometry& g) {
    const Domain& dom = *g.dom;
    const int n = dom.n_sites();
    Scratch& sc = g_scratch;
    sc.comp.assign(static_cast<std::size_t>(n), -1);
    sc.queue.clear();

    std::vector<uint8_t> comp_black, comp_inner, comp_outer;
    long portals_scanned = 0;

    for (int i0 = 0; i0 < n; ++i0) {
        if (sc.comp[static_cast<std::size_t>(i0)] != -1) continue;
        const double d0 = g.dist2_site(i0);
        if (d0 > g.outer_r2 || g.in_hole(dom.site(i0), d0)) continue;

        const int32_t c = static_cast<int32_t>(comp_black.size());
        const bool black = cfg.black(i0);
        comp_black.push_back(black ? 1 : 0);
        comp_inner.push_back(0);
        comp_outer.push_back(0);
        sc.comp[static_cast<std::size_t>(i0)] = c;
        sc.queue.clear();
        sc.queue.push_back(i0);
        std::size_t head = 0;
        while (head < sc.queue.size()) {
            const int s = sc.queue[head++];
            const LatticePoint sp = dom.site(s);
            for (int d = 0; d < 6; ++d) {
                const LatticePoint t = sp + kNeighborDirs[static_cast<std::size_t>(d)];
                const double d2 = g.dist2(t);
                if (g.in_hole(t, d2)) {
                    comp_inner[static_cast<std::size_t>(c)] = 1;
                    ++portals_scanned;
                    continue;
                }
                if (d2 > g.outer_r2) {
                    comp_outer[static_cast<std::size_t>(c)] = 1;
                    continue;
                }
                const int ti = dom.site_index(t);
                if (ti < 0) continue; // clipped band: no attachment, no edge
                if (cfg.black(ti) != black) continue;
                if (sc.comp[static_cast<std::size_t>(ti)] == -1) {
                    sc.comp[static_cast<std::size_t>(ti)] = c;
                    sc.queue.push_back(ti);
                }
            }
        }
    }

    // cyclic portal word over crossing components only
    sc.word.clear();
    long portals_walked = 0;
    const auto note_portal = [&](LatticePoint s) {
        const int si = dom.site_index(s);
        if (si < 0) return;
        const int32_t c = sc.comp[static_cast<std::size_t>(si)];
        if (c < 0) return;
        ++portals_walked;
        if (comp_inner[static_cast<std::size_t>(c)] && comp_outer[static_cast<std::size_t>(c)])
            sc.word.push_back(comp_black[static_cast<std::size_t>(c)]);
    };

    if (g.point_hole) {
        for (int d = 0; d < 6; ++d)
            note_portal(g.hole_pt + kNeighborDirs[static_cast<std::size_t>(d)]);
    } else {
        LatticePoint u = nearest_lattice_point(dom, g.center);
        if (!g.in_hole(u, g.dist2(u)))
            return false; // the hole contains no lattice point: nothing can attach inside
        // march to a boundary edge of the hole, then walk its boundary
        // counterclockwise, visiting every hole-to-outside edge exactly once
        long guard = 6L * n + 12;
        while (g.in_hole(u + kNeighborDirs[0], g.dist2(u + kNeighborDirs[0]))) {
            u = u + kNeighborDirs[0];
            if (--guard < 0) throw Error("hole boundary march exceeded its bound (detector bug)");
        }
        const LatticePoint start_u = u;
        int d = 0;
        const int start_d = d;
        do {
            note_portal(u + kNeighborDirs[static_cast<std::size_t>(d)]);
            const LatticePoint v = u + kNeighborDirs[static_cast<std::size_t>((d + 1) % 6)];
            if (!g.in_hole(v, g.dist2(v))) {
                d = (d + 1) % 6;
            } else {
                u = v;
                d = (d + 5) % 6;
            }
            if (--guard < 0) throw Error("hole boundary walk exceeded its bound (detector bug)");
        } while (!(u == start_u && d == start_d));
        if (portals_walked != portals_scanned)
            throw Error("hole boundary walk missed portal edges (detector bug)");
    }

    const std::size_t len = sc.word.size();
    if (len < 4) return false;
    int alternations = 0;
    for (std::size_t i = 0; i < len; ++i)
        alternations += sc.word[i] != sc.word[(i + 1) % len];
    return alternations >= 4;
}

int resolve_site(const Configuration& cfg, LatticePoint p, const char* what) {
    const int i = cfg.domain->site_index(p);
    if (i < 0) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s (%d, %d) is not a domain site", what, p.q, p.r);
        throw OutOfDomain(buf);
    }
    return i;
}

} // namespace

// ------------------------------------------------------------------ masks ---

RegionMask full_mask(const Domain& domain) {
    RegionMask m;
    const int n = domain.n_sites();
    m.bits.assign(static_cast<std::size_t>((n + 63) / 64), 0);
    for (int i = 0; i < n; ++i) m.set(i);
    return m;
}

RegionMask disk_mask(const Domain& domain, std::complex<double> center, double radius) {
    RegionMask m;
    const int n = domain.n_sites();
    m.bits.assign(static_cast<std::size_t>((n + 63) / 64), 0);
    const double r2 = radius * radius;
    for (int i = 0; i < n; ++i) {
        const double dx = domain.x(i) - center.real();
        const double dy = domain.y(i) - center.imag();
        if (dx * dx + dy * dy <= r2) m.set(i);
    }
    return m;
}

RegionMask complement_mask(const Domain& domain, const RegionMask& mask) {
    RegionMask m;
    const int n = domain.n_sites();
    m.bits.assign(static_cast<std::size_t>((n + 63) / 64), 0);
    for (std::size_t w = 0; w < m.bits.size(); ++w) m.bits[w] = ~mask.bits[w];
    const int tail = n & 63;
    if (tail != 0) m.bits.back() &= (uint64_t{1} << tail) - 1;
    return m;
}

RegionMask annulus_mask(const Domain& domain, const AnnulusSpec& spec) {
    if (!(spec.inner_radius < spec.outer_radius))
        throw DegenerateInput("annulus radii must satisfy inner < outer");
    RegionMask m;
    const int n = domain.n_sites();
    m.bits.assign(static_cast<std::size_t>((n + 63) / 64), 0);
    const double r1sq = spec.inner_radius * spec.inner_radius;
    const double r2sq = spec.outer_radius * spec.outer_radius;
    for (int i = 0; i < n; ++i) {
        const double dx = domain.x(i) - spec.center.real();
        const double dy = domain.y(i) - spec.center.imag();
        const double d2 = dx * dx + dy * dy;
        if (d2 > r1sq && d2 <= r2sq) m.set(i);
    }
    return m;
}

// ----------------------------------------------------------- connectivity ---

bool connected(const ClusterLabels& labels, const Configuration& cfg, LatticePoint p1,
               LatticePoint p2) {
    return labels.connected(resolve_site(cfg, p1, "point"), resolve_site(cfg, p2, "point"));
}

bool connected_within_idx(const Configuration& cfg, int s1, int s2, const RegionMask& allowed) {
    if (!allowed.member(s1) || !allowed.member(s2))
        throw PointOutsideRegion("connected_within endpoint lies outside the allowed region");
    if (!cfg.black(s1) || !cfg.black(s2)) return false;
    if (s1 == s2) return true;
    const Domain& dom = *cfg.domain;
    Scratch& sc = g_scratch;
    sc.begin(dom.n_sites());
    sc.see(s1);
    sc.queue.push_back(s1);
    std::size_t head = 0;
    while (head < sc.queue.size()) {
        const int s = sc.queue[head++];
        for (const int32_t t : dom.neighbors(s)) {
            if (t < 0 || sc.seen(t)) continue;
            if (!allowed.member(t) || !cfg.black(t)) continue;
            if (t == s2) return true;
            sc.see(t);
            sc.queue.push_back(t);
        }
    }
    return false;
}

bool connected_within(const Configuration& cfg, LatticePoint p1, LatticePoint p2,
                      const RegionMask& allowed) {
    return connected_within_idx(cfg, resolve_site(cfg, p1, "point"),
                                resolve_site(cfg, p2, "point"), allowed);
}

bool connected_not_within_idx(const Configuration& cfg, const ClusterLabels& labels, int s1,
                              int s2, const RegionMask& forbidden_container) {
    if (!labels.connected(s1, s2)) return false;
    // a path through an endpoint outside the container is never contained in it
    if (!forbidden_container.member(s1) || !forbidden_container.member(s2)) return true;
    return !connected_within_idx(cfg, s1, s2, forbidden_container);
}

bool connected_not_within(const Configuration& cfg, const ClusterLabels& labels, LatticePoint p1,
                          LatticePoint p2, const RegionMask& forbidden_container) {
    return connected_not_within_idx(cfg, labels, resolve_site(cfg, p1, "point"),
                                    resolve_site(cfg, p2, "point"), forbidden_container);
}

// ----------------------------------------------------------------- one arm ---

bool one_arm(const Configuration& cfg, LatticePoint p, double r) {
    const Domain& dom = *cfg.domain;
    const int pi = resolve_site(cfg, p, "one-arm center");
    if (!(r > 0.0)) throw DegenerateInput("one-arm radius must be positive");
    const std::complex<double> c = dom.embedding(p);
    if (std::abs(c) + r > dom.radius() + 1e-9)
        throw OutOfDomain("one-arm ball does not fit inside the domain");
    if (!cfg.black(pi)) return false;
    const double r2 = r * r;

    Scratch& sc = g_scratch;
    sc.begin(dom.n_sites());
    sc.see(pi);
    sc.queue.push_back(pi);
    std::size_t head = 0;
    while (head < sc.queue.size()) {
        const int s = sc.queue[head++];
        const LatticePoint sp = dom.site(s);
        for (int d = 0; d < 6; ++d) {
            const LatticePoint t = sp + kNeighborDirs[static_cast<std::size_t>(d)];
            const std::complex<double> e = dom.embedding(t) - c;
            if (e.real() * e.real() + e.imag() * e.imag() > r2)
                return true; // s sits on the discrete boundary of the closed ball
            const int ti = dom.site_index(t);
            if (ti < 0 || sc.seen(ti) || !cfg.black(ti)) continue;
            sc.see(ti);
            sc.queue.push_back(ti);
        }
    }
    return false;
}

// ---------------------------------------------------------------- four arm ---

int interface_crossing_count(const Configuration& cfg, const AnnulusSpec& spec) {
    return crossing_count_core(cfg, annulus_geometry(*cfg.domain, spec));
}

bool four_arm_annulus(const Configuration& cfg, const AnnulusSpec& spec) {
    return crossing_count_core(cfg, annulus_geometry(*cfg.domain, spec)) >= 4;
}

bool four_arm_annulus_reference(const Configuration& cfg, const AnnulusSpec& spec) {
    return reference_core(cfg, annulus_geometry(*cfg.domain, spec));
}

bool point_four_arm(const Configuration& cfg, LatticePoint p, double r) {
    const ArmGeometry g = point_geometry(*cfg.domain, p, r);
    if (cfg.black(cfg.domain->site_index(p))) return false; // event requires a white center
    return crossing_count_core(cfg, g) >= 4;
}

bool point_four_arm_reference(const Configuration& cfg, LatticePoint p, double r) {
    const ArmGeometry g = point_geometry(*cfg.domain, p, r);
    if (cfg.black(cfg.domain->site_index(p))) return false;
    return reference_core(cfg, g);
}

} // namespace perclab
