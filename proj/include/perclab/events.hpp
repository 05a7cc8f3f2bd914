#pragma once

// per-configuration event detectors: plain and restricted connectivity, the
// one-arm event, and the alternating four-arm event.
//
// discrete boundary conventions (held fixed across every estimator; changing
// them moves constants, never exponents):
//  * balls are closed: site in B_r(c) iff |embedding - c| <= r.
//  * the discrete boundary of B_r is the set of in-ball sites with a lattice
//    neighbor position strictly outside the ball.
//  * an annulus crossing "touches" a boundary circle when it occupies a region
//    site with a lattice neighbor position strictly beyond that circle.
//
// four-arm detection ships as two independent algorithms. the fast path walks
// matching interfaces on the hexagonal dual and counts arcs that traverse the
// annulus; the reference labels monochromatic crossing components and checks
// that attachment arcs of four of them (B, W, B, W, distinct components)
// interleave cyclically around the inner boundary. agreement of the two is a
// shipped acceptance gate.

#include <complex>

#include "perclab/sampler.hpp"

namespace perclab {

struct AnnulusSpec {
    std::complex<double> center;
    double inner_radius = 0.0;
    double outer_radius = 0.0;
};

// site-set realization of a geometric region predicate
struct RegionMask {
    std::vector<uint64_t> bits;

    bool member(int site) const {
        return (bits[static_cast<std::size_t>(site >> 6)] >> (site & 63)) & 1u;
    }
    void set(int site) {
        bits[static_cast<std::size_t>(site >> 6)] |= uint64_t{1} << (site & 63);
    }
};

RegionMask full_mask(const Domain& domain);
RegionMask disk_mask(const Domain& domain, std::complex<double> center, double radius);
RegionMask complement_mask(const Domain& domain, const RegionMask& mask);
RegionMask annulus_mask(const Domain& domain, const AnnulusSpec& spec);

// plain connectivity: both sites black and in the same cluster
bool connected(const ClusterLabels& labels, const Configuration& cfg, LatticePoint p1,
               LatticePoint p2);
inline bool connected_idx(const ClusterLabels& labels, int s1, int s2) {
    return labels.connected(s1, s2);
}

// black path from p1 to p2 using only sites of `allowed` (breadth-first)
bool connected_within(const Configuration& cfg, LatticePoint p1, LatticePoint p2,
                      const RegionMask& allowed);
bool connected_within_idx(const Configuration& cfg, int s1, int s2, const RegionMask& allowed);

// same black cluster, but no black path fully contained in the container
bool connected_not_within(const Configuration& cfg, const ClusterLabels& labels, LatticePoint p1,
                          LatticePoint p2, const RegionMask& forbidden_container);
bool connected_not_within_idx(const Configuration& cfg, const ClusterLabels& labels, int s1,
                              int s2, const RegionMask& forbidden_container);

// black path from p to the discrete boundary of the closed ball B_r(p)
bool one_arm(const Configuration& cfg, LatticePoint p, double r);

// four alternating-color crossings of the annulus (fast interface-walk path
// and the independent component-interleaving reference)
bool four_arm_annulus(const Configuration& cfg, const AnnulusSpec& spec);
bool four_arm_annulus_reference(const Configuration& cfg, const AnnulusSpec& spec);

// p is white and four alternating arms run from p's neighbors to the
// discrete boundary of B_r(p)
bool point_four_arm(const Configuration& cfg, LatticePoint p, double r);
bool point_four_arm_reference(const Configuration& cfg, LatticePoint p, double r);

// number of annulus-traversing interface arcs (the four-arm event is
// count >= 4); exposed for diagnostics and tests
int interface_crossing_count(const Configuration& cfg, const AnnulusSpec& spec);

} // namespace perclab
