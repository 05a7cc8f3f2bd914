#include "perclab/lattice.hpp"

#include <cmath>
#include <limits>

namespace perclab {

Domain::Domain(double spacing, double radius) : spacing_(spacing), radius_(radius) {
    if (!(spacing > 0.0) || !(radius > 0.0))
        throw DomainTooSmall("domain spacing and radius must be positive");

    // conservative axial bounding box: |x| <= R needs |q + r/2| <= R/a and
    // |y| <= R needs |r| <= R / (a*sqrt(3)/2)
    const double R = radius / spacing;
    const int r_bound = static_cast<int>(std::floor(R / kRowHeight)) + 1;
    const int q_bound = static_cast<int>(std::floor(R + 0.5 * r_bound)) + 1;
    const double R2 = radius * radius;

    q_min_ = -q_bound;
    q_max_ = q_bound;
    rows_.assign(static_cast<std::size_t>(q_max_ - q_min_ + 1), Row{});

    // row-major site order: q ascending, r ascending. membership is the
    // closed disk |embedding| <= radius; for fixed q the admissible r form a
    // contiguous interval because the disk is convex.
    for (int q = q_min_; q <= q_max_; ++q) {
        Row row;
        row.offset = static_cast<int>(sites_.size());
        bool in_run = false;
        for (int r = -r_bound; r <= r_bound; ++r) {
            const double ex = spacing_ * (q + 0.5 * r);
            const double ey = spacing_ * (kRowHeight * r);
            const bool inside = ex * ex + ey * ey <= R2;
            if (inside && !in_run) {
                row.r_lo = r;
                in_run = true;
            }
            if (inside) row.r_hi = r;
            if (!inside && in_run) break;
            if (inside) sites_.push_back({q, r});
        }
        if (!in_run) {
            row.r_lo = 0;
            row.r_hi = -1; // empty row
        }
        rows_[static_cast<std::size_t>(q - q_min_)] = row;
    }
    if (sites_.empty()) throw DomainTooSmall("domain contains no lattice sites");

    // trim the q range to non-empty rows so site_index bound checks are tight
    while (q_min_ < q_max_ && rows_.front().r_hi < rows_.front().r_lo) {
        rows_.erase(rows_.begin());
        ++q_min_;
    }
    while (q_max_ > q_min_ && rows_.back().r_hi < rows_.back().r_lo) {
        rows_.pop_back();
        --q_max_;
    }

    const std::size_t n = sites_.size();
    emb_x_.resize(n);
    emb_y_.resize(n);
    neighbors_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::complex<double> e = embedding(sites_[i]);
        emb_x_[i] = e.real();
        emb_y_[i] = e.imag();
        for (int d = 0; d < 6; ++d) {
            const LatticePoint nb{sites_[i].q + kNeighborDirs[static_cast<std::size_t>(d)].q,
                                  sites_[i].r + kNeighborDirs[static_cast<std::size_t>(d)].r};
            neighbors_[i][static_cast<std::size_t>(d)] = site_index(nb);
        }
    }
    for (int d = 0; d < 6; ++d) {
        const LatticePoint dir = kNeighborDirs[static_cast<std::size_t>(d)];
        dir_dx_[static_cast<std::size_t>(d)] = spacing_ * (dir.q + 0.5 * dir.r);
        dir_dy_[static_cast<std::size_t>(d)] = spacing_ * (kRowHeight * dir.r);
    }
}

LatticePoint nearest_vertex(std::complex<double> z, const Domain& domain) {
    if (std::abs(z) + domain.spacing() > domain.radius())
        throw OutOfDomain("nearest_vertex: point too close to the domain boundary");

    // invert the embedding to fractional axial coordinates, then scan a small
    // candidate block around them. the 4x4 block is generous: the true nearest
    // vertex is within one cell of (qf, rf).
    const double a = domain.spacing();
    const double rf = z.imag() / (a * Domain::kRowHeight);
    const double qf = z.real() / a - 0.5 * rf;
    const int q0 = static_cast<int>(std::floor(qf)) - 1;
    const int r0 = static_cast<int>(std::floor(rf)) - 1;

    LatticePoint best{};
    double best_d2 = std::numeric_limits<double>::infinity();
    bool found = false;
    for (int q = q0; q <= q0 + 3; ++q) {
        for (int r = r0; r <= r0 + 3; ++r) {
            const LatticePoint p{q, r};
            if (domain.site_index(p) < 0) continue;
            const std::complex<double> e = domain.embedding(p);
            const double dx = e.real() - z.real();
            const double dy = e.imag() - z.imag();
            const double d2 = dx * dx + dy * dy;
            if (!found || d2 < best_d2 || (d2 == best_d2 && p < best)) {
                best = p;
                best_d2 = d2;
                found = true;
            }
        }
    }
    if (!found) throw OutOfDomain("nearest_vertex: no domain site near the point");
    return best;
}

std::pair<LatticePoint, LatticePoint> energy_offsets(const PointSpec& p, const Domain& domain) {
    const LatticePoint center = nearest_vertex(p.z, domain);
    if (p.role == PointRole::energy_center) {
        const LatticePoint minus{center.q - 1, center.r};
        const LatticePoint plus{center.q + 1, center.r};
        if (domain.site_index(minus) < 0 || domain.site_index(plus) < 0)
            throw OutOfDomain("energy_offsets: +-a neighbors fall outside the domain");
        return {minus, plus};
    }
    if (p.role == PointRole::energy_delta_center) {
        if (!(p.delta > domain.spacing()))
            throw GeometryTooTight("energy_offsets: delta must exceed the lattice spacing");
        const std::complex<double> zc = domain.embedding(center);
        const std::complex<double> off{p.delta, 0.0};
        return {nearest_vertex(zc - off, domain), nearest_vertex(zc + off, domain)};
    }
    throw GeometryTooTight("energy_offsets: point role carries no offsets");
}

} // namespace perclab
