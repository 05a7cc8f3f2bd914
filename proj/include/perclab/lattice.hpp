#pragma once

// geometry of the triangular lattice and its embedding in the plane.
//
// vertices carry integer axial coordinates (q, r); the embedding at spacing a
// places (q, r) at a * (q + r/2, r*sqrt(3)/2), so the origin vertex sits at 0
// and every vertex has six neighbors. all adjacency logic is integer
// arithmetic; floating point appears only where measurement code needs
// distances.

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

#include "perclab/errors.hpp"

namespace perclab {

struct LatticePoint {
    int q = 0;
    int r = 0;

    friend bool operator==(const LatticePoint& a, const LatticePoint& b) {
        return a.q == b.q && a.r == b.r;
    }
    friend bool operator!=(const LatticePoint& a, const LatticePoint& b) {
        return !(a == b);
    }
    friend LatticePoint operator+(LatticePoint a, LatticePoint b) {
        return {a.q + b.q, a.r + b.r};
    }
    friend LatticePoint operator-(LatticePoint a, LatticePoint b) {
        return {a.q - b.q, a.r - b.r};
    }
    // lexicographic on (q, r): the declared tie-break order for nearest_vertex
    friend bool operator<(const LatticePoint& a, const LatticePoint& b) {
        return a.q != b.q ? a.q < b.q : a.r < b.r;
    }
};

// the six neighbor offsets in counterclockwise order starting from +x
inline constexpr std::array<LatticePoint, 6> kNeighborDirs = {
    LatticePoint{1, 0},  LatticePoint{0, 1},  LatticePoint{-1, 1},
    LatticePoint{-1, 0}, LatticePoint{0, -1}, LatticePoint{1, -1},
};

enum class PointRole { spin, energy_center, energy_delta_center };

// a continuum measurement point plus the role it plays in a correlator.
// delta is the macroscopic offset of the non-local energy construction and is
// meaningful only for energy_delta_center (where it must exceed the spacing).
struct PointSpec {
    std::complex<double> z;
    PointRole role = PointRole::spin;
    double delta = 0.0;
};

// finite disk-shaped patch of the rescaled lattice. site order is row-major
// over axial coordinates (q ascending, then r ascending) and is the
// reproducibility anchor: site ranks index the RNG stream, cluster label
// canonicalization, and the oracle's coloring bits.
class Domain {
public:
    Domain(double spacing, double radius);

    double spacing() const { return spacing_; }
    double radius() const { return radius_; }
    const std::vector<LatticePoint>& sites() const { return sites_; }
    int n_sites() const { return static_cast<int>(sites_.size()); }

    // index of a site in the canonical order, or -1 if not in the domain
    int site_index(LatticePoint p) const {
        if (p.q < q_min_ || p.q > q_max_) return -1;
        const Row& row = rows_[static_cast<std::size_t>(p.q - q_min_)];
        if (p.r < row.r_lo || p.r > row.r_hi) return -1;
        return row.offset + (p.r - row.r_lo);
    }

    LatticePoint site(int idx) const { return sites_[static_cast<std::size_t>(idx)]; }

    // continuum embedding (already scaled by the spacing)
    std::complex<double> embedding(LatticePoint p) const {
        return {spacing_ * (p.q + 0.5 * p.r), spacing_ * (kRowHeight * p.r)};
    }
    double x(int idx) const { return emb_x_[static_cast<std::size_t>(idx)]; }
    double y(int idx) const { return emb_y_[static_cast<std::size_t>(idx)]; }

    // neighbor site indices in kNeighborDirs order; -1 where the neighbor
    // position falls outside the patch
    const std::array<int32_t, 6>& neighbors(int idx) const {
        return neighbors_[static_cast<std::size_t>(idx)];
    }

    // embedding of the d-th neighbor position of site idx, valid even when
    // that position is not a domain site (used for boundary geometry)
    double neighbor_x(int idx, int d) const { return x(idx) + dir_dx_[static_cast<std::size_t>(d)]; }
    double neighbor_y(int idx, int d) const { return y(idx) + dir_dy_[static_cast<std::size_t>(d)]; }

    static constexpr double kRowHeight = 0.8660254037844386467637231707529362; // sqrt(3)/2

private:
    struct Row {
        int r_lo = 0;
        int r_hi = -1;
        int offset = 0;
    };

    double spacing_;
    double radius_;
    int q_min_ = 0, q_max_ = -1;
    std::vector<Row> rows_;
    std::vector<LatticePoint> sites_;
    std::vector<double> emb_x_, emb_y_;
    std::vector<std::array<int32_t, 6>> neighbors_;
    std::array<double, 6> dir_dx_{}, dir_dy_{};
};

// nearest domain vertex to a continuum point; exact-distance ties go to the
// lexicographically smallest (q, r). requires |z| + spacing <= radius so the
// true nearest vertex cannot fall outside the patch.
LatticePoint nearest_vertex(std::complex<double> z, const Domain& domain);

// left/right offset vertices of an energy measurement at p:
//  - energy_center: the exact -x / +x lattice neighbors of the center vertex
//  - energy_delta_center: nearest vertices to (center vertex) -/+ delta
std::pair<LatticePoint, LatticePoint> energy_offsets(const PointSpec& p, const Domain& domain);

} // namespace perclab
