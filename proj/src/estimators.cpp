// estimator implementations. each correlator kind is a small kernel emitting
// per-sample indicator terms; the shared engine reduces kernels into per-batch
// even/odd sums (the sufficient statistics for split-halves covariances) and
// the builders below turn completed batch tables into estimate records.
//
// determinism: per-batch sums are accumulated serially in sample order, new
// batches are reported to the checkpoint hook in ascending batch order, and
// statistics walk batches in ascending order, so the numbers are identical
// for any worker count and any interrupt/resume pattern.

#include "perclab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>

#include "perclab/errors.hpp"
#include "perclab/events.hpp"

namespace perclab {

namespace {

constexpr const char* kKindNames[] = {
    "spin_n_point",  "energy_spin_spin", "energy_energy", "edelta_spin_spin",
    "edelta_energy", "edelta_edelta",    "pi_a",          "one_arm_curve",
    "four_arm_curve", "annulus_terms",
};
constexpr int kKindCount = 10;

// ---- small statistics helpers ---------------------------------------------

struct Series {
    double mean = 0.0;
    double se = 0.0;
};

Series series_stats(const std::vector<double>& vals) {
    Series s;
    const std::size_t n = vals.size();
    if (n == 0) return s;
    double sum = 0.0;
    for (double v : vals) sum += v;
    s.mean = sum / static_cast<double>(n);
    if (n > 1) {
        double ss = 0.0;
        for (double v : vals) {
            const double d = v - s.mean;
            ss += d * d;
        }
        s.se = std::sqrt(ss / (static_cast<double>(n) * static_cast<double>(n - 1)));
    }
    return s;
}

// view over a completed batch table
struct TableView {
    const BatchTable* t;

    std::size_t rows() const { return t->batch_index.size(); }
    double even(std::size_t row, int term) const {
        return t->sums[row * 2 * static_cast<std::size_t>(t->n_terms) + 2 * static_cast<std::size_t>(term)];
    }
    double odd(std::size_t row, int term) const {
        return t->sums[row * 2 * static_cast<std::size_t>(t->n_terms) + 2 * static_cast<std::size_t>(term) + 1];
    }
    double mean(std::size_t row, int term) const {
        return (even(row, term) + odd(row, term)) / static_cast<double>(t->batch_size);
    }
    // unbiased split-halves product-of-means for terms ju, jv
    double halves_product(std::size_t row, int ju, int jv) const {
        const double h = static_cast<double>(t->batch_size) / 2.0;
        const double ue = even(row, ju) / h, uo = odd(row, ju) / h;
        const double ve = even(row, jv) / h, vo = odd(row, jv) / h;
        return 0.5 * (ue * vo + uo * ve);
    }
    // cov(U, V) with the joint indicator stored as term jj
    double halves_cov(std::size_t row, int ju, int jv, int jj) const {
        return mean(row, jj) - halves_product(row, ju, jv);
    }
};

// ---- request validation and geometry resolution ----------------------------

void validate_sampling(const CorrelatorRequest& req) {
    if (req.batch_size <= 0 || req.batch_size % 2 != 0)
        throw ConfigInvalid("request '" + req.request_id + "': batch_size must be positive and even");
    if (req.n_samples <= 0 || req.n_samples % req.batch_size != 0)
        throw ConfigInvalid("request '" + req.request_id + "': n_samples must be a positive multiple of batch_size");
    if (req.n_samples / req.batch_size < 30)
        throw ConfigInvalid("request '" + req.request_id + "': need at least 30 batches for std errors");
}

const char* role_name(PointRole r) {
    switch (r) {
        case PointRole::spin: return "spin";
        case PointRole::energy_center: return "energy_center";
        default: return "energy_delta_center";
    }
}

std::string points_json(const std::vector<PointSpec>& pts) {
    std::string out = "[";
    char buf[192];
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::snprintf(buf, sizeof buf,
                      "%s{\"z\":[%.17g,%.17g],\"role\":\"%s\",\"delta\":%.17g}",
                      i ? "," : "", pts[i].z.real(), pts[i].z.imag(),
                      role_name(pts[i].role), pts[i].delta);
        out += buf;
    }
    out += "]";
    return out;
}

// a point must sit at least one spacing inside the domain rim so its nearest
// vertex and the vertex's neighborhood exist
void require_inside(const Domain& dom, std::complex<double> z, const std::string& what) {
    if (std::abs(z) + dom.spacing() > dom.radius() + 1e-9)
        throw GeometryTooTight(what + " does not fit in the domain (|z|=" +
                               std::to_string(std::abs(z)) + ", radius " +
                               std::to_string(dom.radius()) + ")");
}

int resolve_spin_site(const Domain& dom, std::complex<double> z) {
    return dom.site_index(nearest_vertex(z, dom));
}

std::pair<int, int> resolve_energy_sites(const Domain& dom, const PointSpec& p) {
    const auto [lo, hi] = energy_offsets(p, dom);
    return {dom.site_index(lo), dom.site_index(hi)};
}

void require_role(const CorrelatorRequest& req, std::size_t i, PointRole role) {
    if (i >= req.points.size() || req.points[i].role != role)
        throw ConfigInvalid("request '" + req.request_id + "': point " + std::to_string(i) +
                            " must have role " + role_name(role));
}

double separation(const PointSpec& a, const PointSpec& b) { return std::abs(a.z - b.z); }

// ---- record builder --------------------------------------------------------

EstimateRecord build_record(std::string id, CorrelatorKind kind, double spacing,
                            std::string point_json, std::int64_t n, Series s,
                            Normalization norm, const std::optional<PiEstimate>& pi) {
    EstimateRecord r;
    r.request_id = std::move(id);
    r.kind = kind;
    r.spacing = spacing;
    r.point_json = std::move(point_json);
    r.n = n;
    r.raw_mean = s.mean;
    r.std_error = s.se;
    double rel_pi = 0.0;
    if (norm.pi_power != 0) {
        if (!pi) throw InconsistentInputs("pi_a plug-in required for this normalization");
        norm.pi_value = pi->value;
        r.pi_a_plugin = pi->value;
        r.pi_a_plugin_std_error = pi->std_error;
        if (pi->value > 0.0) rel_pi = norm.pi_power * pi->std_error / pi->value;
    }
    r.norm = norm;
    const double f = normalization_factor(norm, spacing);
    r.normalized_value = s.mean * f;
    r.normalized_std_error =
        std::abs(f) * std::sqrt(s.se * s.se + (s.mean * rel_pi) * (s.mean * rel_pi));
    return r;
}

// ---- kernels ---------------------------------------------------------------

class SpinKernel final : public SampleKernel {
  public:
    std::vector<int> sites;

    int n_terms() const override { return 1; }
    void eval(const Configuration& cfg, const ClusterLabels& labels, double* terms) const override {
        terms[0] = spin_product_expectation(labels, cfg, std::span<const int>(sites));
    }
};

class ArmCurveKernel final : public SampleKernel {
  public:
    LatticePoint center;
    std::vector<double> radii; // strictly increasing
    bool four_arm = false;

    int n_terms() const override { return static_cast<int>(radii.size()); }
    bool needs_labels() const override { return false; }
    void eval(const Configuration& cfg, const ClusterLabels&, double* terms) const override {
        for (std::size_t k = 0; k < radii.size(); ++k) {
            const bool hit = four_arm ? point_four_arm(cfg, center, radii[k])
                                      : one_arm(cfg, center, radii[k]);
            terms[k] = hit ? 1.0 : 0.0;
            if (!hit) break; // arm events are decreasing in the radius
        }
    }
};

// terms: [R1, R2, X, Y, XY] with X = z1 pair connected, Y = spin pair connected
class EnergySpinSpinKernel final : public SampleKernel {
  public:
    int z1m = -1, z1p = -1, s2 = -1, s3 = -1;

    int n_terms() const override { return 5; }
    void eval(const Configuration&, const ClusterLabels& labels, double* terms) const override {
        constexpr int32_t W = ClusterLabels::kWhite;
        const auto& l = labels.label;
        const int32_t lm = l[static_cast<std::size_t>(z1m)], lp = l[static_cast<std::size_t>(z1p)];
        const int32_t l2 = l[static_cast<std::size_t>(s2)], l3 = l[static_cast<std::size_t>(s3)];
        const bool r1 = lm != W && lm == l2 && lp != W && lp == l3 && lm != lp;
        const bool r2 = lm != W && lm == l3 && lp != W && lp == l2 && lm != lp;
        const double x = (lm != W && lm == lp) ? 1.0 : 0.0;
        const double y = (l2 != W && l2 == l3) ? 1.0 : 0.0;
        terms[0] = r1 ? 1.0 : 0.0;
        terms[1] = r2 ? 1.0 : 0.0;
        terms[2] = x;
        terms[3] = y;
        terms[4] = x * y;
    }
    double combine(const double* m) const override {
        return m[0] + m[1] + (m[4] - m[2] * m[3]);
    }
};

// terms: [R1, R2, U1, V1, U1V1, U2, V2, U2V2]. R3 = cov(U1,V1) + cov(U2,V2).
// with the locality split active, U2 = "z1 pair connected inside its local
// disk", V2 = "z2 pair connected but not inside its local disk", U1 = the
// complementary rare part, V1 = plain connection; cov(U2, V2-local-part that
// was dropped) vanishes exactly because the two disks touch disjoint site
// sets. without the split (overlapping disks), U1/V1 carry the plain
// covariance and U2/V2 stay zero.
class EnergyEnergyKernel final : public SampleKernel {
  public:
    int z1m = -1, z1p = -1, z2m = -1, z2p = -1;
    RegionMask disk1, disk2;
    bool split_local = false;

    int n_terms() const override { return 8; }
    void eval(const Configuration& cfg, const ClusterLabels& labels, double* terms) const override {
        constexpr int32_t W = ClusterLabels::kWhite;
        const auto& l = labels.label;
        const int32_t a1 = l[static_cast<std::size_t>(z1m)], b1 = l[static_cast<std::size_t>(z1p)];
        const int32_t a2 = l[static_cast<std::size_t>(z2m)], b2 = l[static_cast<std::size_t>(z2p)];
        const bool r1 = a1 != W && a1 == a2 && b1 != W && b1 == b2 && a1 != b1;
        const bool r2 = a1 != W && a1 == b2 && b1 != W && b1 == a2 && a1 != b1;
        const bool x = a1 != W && a1 == b1;
        const bool y = a2 != W && a2 == b2;
        terms[0] = r1 ? 1.0 : 0.0;
        terms[1] = r2 ? 1.0 : 0.0;
        double u1, v1, u2, v2;
        if (split_local) {
            const bool xloc = x && connected_within_idx(cfg, z1m, z1p, disk1);
            const bool yloc = y && connected_within_idx(cfg, z2m, z2p, disk2);
            u1 = (x && !xloc) ? 1.0 : 0.0;
            v1 = y ? 1.0 : 0.0;
            u2 = xloc ? 1.0 : 0.0;
            v2 = (y && !yloc) ? 1.0 : 0.0;
        } else {
            u1 = x ? 1.0 : 0.0;
            v1 = y ? 1.0 : 0.0;
            u2 = 0.0;
            v2 = 0.0;
        }
        terms[2] = u1;
        terms[3] = v1;
        terms[4] = u1 * v1;
        terms[5] = u2;
        terms[6] = v2;
        terms[7] = u2 * v2;
    }
    double combine(const double* m) const override {
        return m[0] + m[1] + (m[4] - m[2] * m[3]) + (m[7] - m[5] * m[6]);
    }
};

// terms: [W4, U, V] for <E^d ..> = E[W4] - E[U] E[V]
class PairCovKernel final : public SampleKernel {
  public:
    std::array<int, 2> pair_u{};
    std::array<int, 2> pair_v{};
    std::array<int, 4> all{};

    int n_terms() const override { return 3; }
    void eval(const Configuration& cfg, const ClusterLabels& labels, double* terms) const override {
        terms[0] = spin_product_expectation(labels, cfg, std::span<const int>(all.data(), 4));
        terms[1] = spin_product_expectation(labels, cfg, std::span<const int>(pair_u.data(), 2));
        terms[2] = spin_product_expectation(labels, cfg, std::span<const int>(pair_v.data(), 2));
    }
    double combine(const double* m) const override { return m[0] - m[1] * m[2]; }
};

bool cluster_touches(const ClusterLabels& labels, int32_t lab, const std::vector<int>& sites) {
    for (int s : sites)
        if (labels.label[static_cast<std::size_t>(s)] == lab) return true;
    return false;
}

// single decomposition around z1: terms per m = 2..M are [I_m, O_m, I_m*O_m]
// where I_m = "z1 pair first connects inside disk m" and O_m = "spin pair
// connected but every path crosses disk m"
class AnnulusSingleKernel final : public SampleKernel {
  public:
    int z1m = -1, z1p = -1, s2 = -1, s3 = -1;
    int M = 0;
    std::vector<RegionMask> disk; // [1..M]
    std::vector<RegionMask> comp; // complements of disk[m]
    std::vector<int> disk_sites;  // sites of disk[M]

    int n_terms() const override { return 3 * (M - 1); }
    void eval(const Configuration& cfg, const ClusterLabels& labels, double* terms) const override {
        int mstar = M + 1; // smallest m with the pair connected inside disk[m]
        if (labels.connected(z1m, z1p)) {
            for (int m = 1; m <= M; ++m) {
                if (connected_within_idx(cfg, z1m, z1p, disk[m])) {
                    mstar = m;
                    break;
                }
            }
        }
        const bool conn23 = labels.connected(s2, s3);
        int mhat = M + 1; // smallest m with no path avoiding disk[m]
        if (conn23 && cluster_touches(labels, labels.label[static_cast<std::size_t>(s2)], disk_sites) &&
            !connected_within_idx(cfg, s2, s3, comp[M])) {
            mhat = M;
            for (int m = M - 1; m >= 1; --m) {
                if (connected_within_idx(cfg, s2, s3, comp[m])) break;
                mhat = m;
            }
        }
        for (int m = 2; m <= M; ++m) {
            const double i = (m == mstar) ? 1.0 : 0.0;
            const double o = (conn23 && m >= mhat) ? 1.0 : 0.0;
            double* row = terms + 3 * (m - 2);
            row[0] = i;
            row[1] = o;
            row[2] = i * o;
        }
    }
    double combine(const double* m) const override {
        double sum = 0.0;
        for (int k = 0; k < M - 1; ++k)
            sum += m[3 * k + 2] - m[3 * k] * m[3 * k + 1];
        return sum;
    }
};

// double decomposition around z1 and z2: per m = 2..M the terms are
// [I1, O1, I1*O1, I2, O2, I2*O2] with
//   I1_m: z1 pair first connects inside its own disk m
//   O1_m: z2 pair connected but every path crosses z1's disk m
//   I2_m: z1 pair connected avoiding z2's disk m-1 but not avoiding disk m
//   O2_m: z2 pair connected but not inside its own disk m-1
class AnnulusDoubleKernel final : public SampleKernel {
  public:
    int z1m = -1, z1p = -1, z2m = -1, z2p = -1;
    int M = 0;
    std::vector<RegionMask> d1, c1, d2, c2;
    std::vector<int> d1_sites, d2_sites; // sites of d1[M], d2[M]

    int n_terms() const override { return 6 * (M - 1); }
    void eval(const Configuration& cfg, const ClusterLabels& labels, double* terms) const override {
        const bool x1 = labels.connected(z1m, z1p);
        const bool x2 = labels.connected(z2m, z2p);
        int mstar1 = M + 1;
        if (x1) {
            for (int m = 1; m <= M; ++m)
                if (connected_within_idx(cfg, z1m, z1p, d1[m])) {
                    mstar1 = m;
                    break;
                }
        }
        int mstar2 = M + 1;
        if (x2) {
            for (int m = 1; m <= M; ++m)
                if (connected_within_idx(cfg, z2m, z2p, d2[m])) {
                    mstar2 = m;
                    break;
                }
        }
        int mhat1 = M + 1; // smallest m: no z2 path avoids z1's disk[m]
        if (x2 && cluster_touches(labels, labels.label[static_cast<std::size_t>(z2m)], d1_sites) &&
            !connected_within_idx(cfg, z2m, z2p, c1[M])) {
            mhat1 = M;
            for (int m = M - 1; m >= 1; --m) {
                if (connected_within_idx(cfg, z2m, z2p, c1[m])) break;
                mhat1 = m;
            }
        }
        int jstar2 = M + 1; // smallest m: no z1 path avoids z2's disk[m]
        if (x1 && cluster_touches(labels, labels.label[static_cast<std::size_t>(z1m)], d2_sites) &&
            !connected_within_idx(cfg, z1m, z1p, c2[M])) {
            jstar2 = M;
            for (int m = M - 1; m >= 1; --m) {
                if (connected_within_idx(cfg, z1m, z1p, c2[m])) break;
                jstar2 = m;
            }
        }
        for (int m = 2; m <= M; ++m) {
            const double i1 = (m == mstar1) ? 1.0 : 0.0;
            const double o1 = (x2 && m >= mhat1) ? 1.0 : 0.0;
            const double i2 = (m == jstar2) ? 1.0 : 0.0;
            const double o2 = (x2 && (m - 1) < mstar2) ? 1.0 : 0.0;
            double* row = terms + 6 * (m - 2);
            row[0] = i1;
            row[1] = o1;
            row[2] = i1 * o1;
            row[3] = i2;
            row[4] = o2;
            row[5] = i2 * o2;
        }
    }
    double combine(const double* m) const override {
        double sum = 0.0;
        for (int k = 0; k < M - 1; ++k) {
            sum += m[6 * k + 2] - m[6 * k] * m[6 * k + 1];
            sum += m[6 * k + 5] - m[6 * k + 3] * m[6 * k + 4];
        }
        return sum;
    }
};

std::vector<int> mask_sites(const Domain& dom, const RegionMask& mask) {
    std::vector<int> out;
    for (int i = 0; i < dom.n_sites(); ++i)
        if (mask.member(i)) out.push_back(i);
    return out;
}

bool masks_disjoint(const RegionMask& a, const RegionMask& b) {
    const std::size_t n = std::min(a.bits.size(), b.bits.size());
    for (std::size_t w = 0; w < n; ++w)
        if (a.bits[w] & b.bits[w]) return false;
    return true;
}

// largest m with disk radius 2^m*(2a) at most eps while staying one spacing
// inside the domain around every listed center
int annulus_scale_count(const Domain& dom, std::span<const std::complex<double>> centers,
                        double eps) {
    int M = 0;
    for (;;) {
        const double r = std::ldexp(2.0 * dom.spacing(), M + 1);
        if (r > eps) break;
        bool fits = true;
        for (const auto& c : centers)
            if (std::abs(c) + r + dom.spacing() > dom.radius() + 1e-9) fits = false;
        if (!fits) break;
        ++M;
    }
    return M;
}

// ---- kernel builders (shared with the enumeration oracle) ------------------

std::unique_ptr<SpinKernel> build_spin_kernel(const CorrelatorRequest& req,
                                              const Domain& dom) {
    if (req.points.empty())
        throw ConfigInvalid("request '" + req.request_id + "': spin_n_point needs points");
    auto kernel = std::make_unique<SpinKernel>();
    for (const auto& p : req.points) {
        if (p.role != PointRole::spin)
            throw ConfigInvalid("request '" + req.request_id +
                                "': spin_n_point takes spin points only");
        require_inside(dom, p.z, "spin point");
        kernel->sites.push_back(resolve_spin_site(dom, p.z));
    }
    for (std::size_t i = 0; i < kernel->sites.size(); ++i)
        for (std::size_t j = i + 1; j < kernel->sites.size(); ++j)
            if (kernel->sites[i] == kernel->sites[j])
                throw CoincidentPoints("two spin points round to the same vertex");
    return kernel;
}

void require_distinct_sites(std::initializer_list<int> sites, const char* what) {
    std::vector<int> v(sites);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j)
            if (v[i] == v[j])
                throw CoincidentPoints(std::string(what) + " resolve to a shared vertex");
}

std::unique_ptr<EnergySpinSpinKernel> build_energy_spin_spin_kernel(
    const CorrelatorRequest& req, const Domain& dom) {
    if (req.points.size() != 3)
        throw ConfigInvalid("request '" + req.request_id + "': energy_spin_spin takes 3 points");
    require_role(req, 0, PointRole::energy_center);
    require_role(req, 1, PointRole::spin);
    require_role(req, 2, PointRole::spin);
    require_inside(dom, req.points[0].z, "energy center");
    require_inside(dom, req.points[1].z, "spin point");
    require_inside(dom, req.points[2].z, "spin point");
    auto kernel = std::make_unique<EnergySpinSpinKernel>();
    std::tie(kernel->z1m, kernel->z1p) = resolve_energy_sites(dom, req.points[0]);
    kernel->s2 = resolve_spin_site(dom, req.points[1].z);
    kernel->s3 = resolve_spin_site(dom, req.points[2].z);
    require_distinct_sites({kernel->z1m, kernel->z1p, kernel->s2, kernel->s3},
                           "energy_spin_spin points");
    return kernel;
}

std::unique_ptr<EnergyEnergyKernel> build_energy_energy_kernel(const CorrelatorRequest& req,
                                                               const Domain& dom) {
    if (req.points.size() != 2)
        throw ConfigInvalid("request '" + req.request_id + "': energy_energy takes 2 points");
    require_role(req, 0, PointRole::energy_center);
    require_role(req, 1, PointRole::energy_center);
    const double sep = separation(req.points[0], req.points[1]);
    require_inside(dom, req.points[0].z, "energy center");
    require_inside(dom, req.points[1].z, "energy center");
    auto kernel = std::make_unique<EnergyEnergyKernel>();
    std::tie(kernel->z1m, kernel->z1p) = resolve_energy_sites(dom, req.points[0]);
    std::tie(kernel->z2m, kernel->z2p) = resolve_energy_sites(dom, req.points[1]);
    require_distinct_sites({kernel->z1m, kernel->z1p, kernel->z2m, kernel->z2p},
                           "energy_energy points");
    // local disks for the covariance split; any radius below half the
    // separation keeps their site sets disjoint, which the split requires
    const double r_loc = 0.49 * sep;
    kernel->disk1 = disk_mask(dom, req.points[0].z, r_loc);
    kernel->disk2 = disk_mask(dom, req.points[1].z, r_loc);
    kernel->split_local =
        masks_disjoint(kernel->disk1, kernel->disk2) && kernel->disk1.member(kernel->z1m) &&
        kernel->disk1.member(kernel->z1p) && kernel->disk2.member(kernel->z2m) &&
        kernel->disk2.member(kernel->z2p);
    return kernel;
}

std::unique_ptr<PairCovKernel> build_edelta_kernel(const CorrelatorRequest& req,
                                                   const Domain& dom) {
    std::size_t expected = 0;
    switch (req.kind) {
        case CorrelatorKind::edelta_spin_spin:
            expected = 3;
            require_role(req, 0, PointRole::energy_delta_center);
            require_role(req, 1, PointRole::spin);
            require_role(req, 2, PointRole::spin);
            break;
        case CorrelatorKind::edelta_energy:
            expected = 2;
            require_role(req, 0, PointRole::energy_delta_center);
            require_role(req, 1, PointRole::energy_center);
            break;
        case CorrelatorKind::edelta_edelta:
            expected = 2;
            require_role(req, 0, PointRole::energy_delta_center);
            require_role(req, 1, PointRole::energy_delta_center);
            break;
        default:
            throw ConfigInvalid("estimate_edelta_correlators got a non-edelta kind");
    }
    if (req.points.size() != expected)
        throw ConfigInvalid("request '" + req.request_id + "': wrong point count for " +
                            std::string(kind_name(req.kind)));
    for (const PointSpec& p : req.points) {
        if (p.role == PointRole::energy_delta_center) {
            if (!(p.delta > 0.0)) throw DegenerateInput("delta offset must be positive");
            require_inside(dom, p.z - p.delta, "delta offset");
            require_inside(dom, p.z + p.delta, "delta offset");
        } else {
            require_inside(dom, p.z, "point");
        }
    }
    auto kernel = std::make_unique<PairCovKernel>();
    std::tie(kernel->pair_u[0], kernel->pair_u[1]) = resolve_energy_sites(dom, req.points[0]);
    if (req.kind == CorrelatorKind::edelta_spin_spin) {
        kernel->pair_v[0] = resolve_spin_site(dom, req.points[1].z);
        kernel->pair_v[1] = resolve_spin_site(dom, req.points[2].z);
    } else {
        std::tie(kernel->pair_v[0], kernel->pair_v[1]) =
            resolve_energy_sites(dom, req.points[1]);
    }
    kernel->all = {kernel->pair_u[0], kernel->pair_u[1], kernel->pair_v[0], kernel->pair_v[1]};
    require_distinct_sites({kernel->all[0], kernel->all[1], kernel->all[2], kernel->all[3]},
                           "edelta correlator points");
    return kernel;
}

std::unique_ptr<ArmCurveKernel> build_arm_kernel(const CorrelatorRequest& req,
                                                 const Domain& dom) {
    if (req.points.size() != 1)
        throw ConfigInvalid("request '" + req.request_id + "': arm curves take exactly 1 point");
    if (req.radii.empty())
        throw ConfigInvalid("request '" + req.request_id + "': arm curves need a radius list");
    std::vector<double> radii = req.radii;
    std::sort(radii.begin(), radii.end());
    for (std::size_t k = 0; k < radii.size(); ++k) {
        if (radii[k] <= 0.0) throw DegenerateInput("arm radius must be positive");
        if (k > 0 && radii[k] == radii[k - 1])
            throw ConfigInvalid("request '" + req.request_id + "': duplicate arm radius");
    }
    require_inside(dom, req.points[0].z, "arm center");
    auto kernel = std::make_unique<ArmCurveKernel>();
    kernel->center = nearest_vertex(req.points[0].z, dom);
    kernel->radii = std::move(radii);
    kernel->four_arm = req.kind == CorrelatorKind::four_arm_curve;
    const std::complex<double> c = dom.embedding(kernel->center);
    if (std::abs(c) + kernel->radii.back() + dom.spacing() > dom.radius() + 1e-9)
        throw GeometryTooTight("arm radius reaches the domain rim");
    return kernel;
}

void check_annulus_points(const CorrelatorRequest& req, const Domain& dom, bool single) {
    require_role(req, 0, PointRole::energy_center);
    if (single) {
        require_role(req, 1, PointRole::spin);
        require_role(req, 2, PointRole::spin);
    } else {
        require_role(req, 1, PointRole::energy_center);
    }
    for (const auto& p : req.points) require_inside(dom, p.z, "annulus point");
}

std::unique_ptr<AnnulusSingleKernel> build_annulus_single_kernel(const CorrelatorRequest& req,
                                                                 const Domain& dom) {
    check_annulus_points(req, dom, true);
    const double a = dom.spacing();
    auto kernel = std::make_unique<AnnulusSingleKernel>();
    std::tie(kernel->z1m, kernel->z1p) = resolve_energy_sites(dom, req.points[0]);
    kernel->s2 = resolve_spin_site(dom, req.points[1].z);
    kernel->s3 = resolve_spin_site(dom, req.points[2].z);
    const std::complex<double> c1 = dom.embedding(nearest_vertex(req.points[0].z, dom));
    const double eps = 0.5 * std::min(std::abs(req.points[1].z - req.points[0].z),
                                      std::abs(req.points[2].z - req.points[0].z));
    const std::complex<double> centers[] = {c1};
    const int M = annulus_scale_count(dom, centers, eps);
    if (M < 2) throw MarginTooSmall("annulus decomposition needs at least scales m = 2..M");
    kernel->M = M;
    kernel->disk.resize(static_cast<std::size_t>(M) + 1);
    kernel->comp.resize(static_cast<std::size_t>(M) + 1);
    for (int m = 1; m <= M; ++m) {
        kernel->disk[static_cast<std::size_t>(m)] = disk_mask(dom, c1, std::ldexp(2.0 * a, m));
        kernel->comp[static_cast<std::size_t>(m)] =
            complement_mask(dom, kernel->disk[static_cast<std::size_t>(m)]);
    }
    kernel->disk_sites = mask_sites(dom, kernel->disk[static_cast<std::size_t>(M)]);
    if (!kernel->disk[1].member(kernel->z1m) || !kernel->disk[1].member(kernel->z1p) ||
        !kernel->comp[static_cast<std::size_t>(M)].member(kernel->s2) ||
        !kernel->comp[static_cast<std::size_t>(M)].member(kernel->s3))
        throw MarginTooSmall("annulus scales collide with the companion points");
    return kernel;
}

std::unique_ptr<AnnulusDoubleKernel> build_annulus_double_kernel(const CorrelatorRequest& req,
                                                                 const Domain& dom) {
    check_annulus_points(req, dom, false);
    const double a = dom.spacing();
    auto kernel = std::make_unique<AnnulusDoubleKernel>();
    std::tie(kernel->z1m, kernel->z1p) = resolve_energy_sites(dom, req.points[0]);
    std::tie(kernel->z2m, kernel->z2p) = resolve_energy_sites(dom, req.points[1]);
    const std::complex<double> c1 = dom.embedding(nearest_vertex(req.points[0].z, dom));
    const std::complex<double> c2 = dom.embedding(nearest_vertex(req.points[1].z, dom));
    const double eps = 0.5 * std::abs(req.points[1].z - req.points[0].z);
    const std::complex<double> centers[] = {c1, c2};
    int M = annulus_scale_count(dom, centers, eps);
    // the chain of regions needs the two largest disks site-disjoint
    while (M >= 2 && !masks_disjoint(disk_mask(dom, c1, std::ldexp(2.0 * a, M)),
                                     disk_mask(dom, c2, std::ldexp(2.0 * a, M))))
        --M;
    if (M < 2) throw MarginTooSmall("annulus decomposition needs at least scales m = 2..M");
    kernel->M = M;
    kernel->d1.resize(static_cast<std::size_t>(M) + 1);
    kernel->c1.resize(static_cast<std::size_t>(M) + 1);
    kernel->d2.resize(static_cast<std::size_t>(M) + 1);
    kernel->c2.resize(static_cast<std::size_t>(M) + 1);
    for (int m = 1; m <= M; ++m) {
        const double r = std::ldexp(2.0 * a, m);
        kernel->d1[static_cast<std::size_t>(m)] = disk_mask(dom, c1, r);
        kernel->c1[static_cast<std::size_t>(m)] =
            complement_mask(dom, kernel->d1[static_cast<std::size_t>(m)]);
        kernel->d2[static_cast<std::size_t>(m)] = disk_mask(dom, c2, r);
        kernel->c2[static_cast<std::size_t>(m)] =
            complement_mask(dom, kernel->d2[static_cast<std::size_t>(m)]);
    }
    kernel->d1_sites = mask_sites(dom, kernel->d1[static_cast<std::size_t>(M)]);
    kernel->d2_sites = mask_sites(dom, kernel->d2[static_cast<std::size_t>(M)]);
    if (!kernel->d1[1].member(kernel->z1m) || !kernel->d1[1].member(kernel->z1p) ||
        !kernel->d2[1].member(kernel->z2m) || !kernel->d2[1].member(kernel->z2p))
        throw MarginTooSmall("annulus scales collide with the energy offsets");
    return kernel;
}

} // namespace

// ---- public helpers --------------------------------------------------------

const char* kind_name(CorrelatorKind kind) { return kKindNames[static_cast<int>(kind)]; }

CorrelatorKind kind_from_name(const std::string& name) {
    for (int k = 0; k < kKindCount; ++k)
        if (name == kKindNames[k]) return static_cast<CorrelatorKind>(k);
    throw ConfigInvalid("unknown correlator kind '" + name + "'");
}

double normalization_factor(const Normalization& norm, double spacing) {
    double f = 1.0;
    if (norm.pi_power != 0) f *= std::pow(norm.pi_value, norm.pi_power);
    if (norm.a_power != 0.0) f *= std::pow(spacing, norm.a_power);
    if (norm.log_power != 0) f *= std::pow(std::log(1.0 / spacing), norm.log_power);
    if (norm.two_delta_power != 0.0) f *= std::pow(norm.two_delta, norm.two_delta_power);
    return f;
}

std::string normalization_json(const Normalization& norm) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "{\"pi_power\":%d,\"a_power\":%.17g,\"log_power\":%d,"
                  "\"two_delta\":%.17g,\"two_delta_power\":%.17g,\"pi\":%.17g}",
                  norm.pi_power, norm.a_power, norm.log_power, norm.two_delta,
                  norm.two_delta_power, norm.pi_value);
    return buf;
}

// ---- batch engine ----------------------------------------------------------

BatchTable compute_batches(const Domain& domain, std::uint64_t master_seed,
                           std::uint32_t stream, std::int64_t n_samples,
                           std::int64_t batch_size, const SampleKernel& kernel,
                           const EngineHooks& hooks) {
    if (batch_size <= 0 || batch_size % 2 != 0)
        throw ConfigInvalid("batch_size must be positive and even");
    if (n_samples <= 0 || n_samples % batch_size != 0)
        throw ConfigInvalid("n_samples must be a positive multiple of batch_size");
    const std::int64_t n_batches = n_samples / batch_size;
    const int T = kernel.n_terms();
    const std::size_t row_len = 2 * static_cast<std::size_t>(T);

    BatchTable table;
    table.n_terms = T;
    table.batch_size = batch_size;
    table.n_batches = n_batches;

    // batches already done in a previous run
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n_batches));
    std::vector<std::uint8_t> have(static_cast<std::size_t>(n_batches), 0);
    if (hooks.resume) {
        for (const auto& [b, sums] : *hooks.resume) {
            if (b < 0 || b >= n_batches || sums.size() != row_len)
                throw CorruptCheckpoint("batch record does not match the request layout");
            if (have[static_cast<std::size_t>(b)])
                throw CorruptCheckpoint("duplicate batch record " + std::to_string(b));
            have[static_cast<std::size_t>(b)] = 1;
            rows[static_cast<std::size_t>(b)] = sums;
        }
    }

    std::vector<std::int64_t> todo;
    for (std::int64_t b = 0; b < n_batches; ++b)
        if (!have[static_cast<std::size_t>(b)]) todo.push_back(b);
    if (hooks.max_new_batches >= 0 &&
        static_cast<std::int64_t>(todo.size()) > hooks.max_new_batches)
        todo.resize(static_cast<std::size_t>(hooks.max_new_batches));

    const std::int64_t n_todo = static_cast<std::int64_t>(todo.size());
    std::vector<std::vector<double>> fresh(static_cast<std::size_t>(n_todo));
    std::vector<std::uint8_t> done(static_cast<std::size_t>(n_todo), 0);
    std::size_t next_emit = 0;
    const int workers = hooks.workers < 1 ? 1 : hooks.workers;

#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
    for (std::int64_t ti = 0; ti < n_todo; ++ti) {
        const std::int64_t b = todo[static_cast<std::size_t>(ti)];
        Configuration cfg;
        ClusterLabels labels;
        std::vector<double> sums(row_len, 0.0);
        std::vector<double> terms(static_cast<std::size_t>(T));
        const bool want_labels = kernel.needs_labels();
        for (std::int64_t i = 0; i < batch_size; ++i) {
            const std::uint64_t sample = static_cast<std::uint64_t>(b * batch_size + i);
            sample_config_into(domain, master_seed, sample, stream, cfg);
            if (want_labels) label_clusters_into(cfg, labels);
            std::fill(terms.begin(), terms.end(), 0.0);
            kernel.eval(cfg, labels, terms.data());
            const int off = static_cast<int>(sample & 1);
            for (int t = 0; t < T; ++t) sums[2 * static_cast<std::size_t>(t) + off] += terms[static_cast<std::size_t>(t)];
        }
#pragma omp critical(perclab_batch_emit)
        {
            fresh[static_cast<std::size_t>(ti)] = std::move(sums);
            done[static_cast<std::size_t>(ti)] = 1;
            while (next_emit < static_cast<std::size_t>(n_todo) && done[next_emit]) {
                if (hooks.on_batch)
                    hooks.on_batch(hooks.user, todo[next_emit], fresh[next_emit].data(),
                                   static_cast<int>(row_len));
                ++next_emit;
            }
        }
    }

    for (std::int64_t ti = 0; ti < n_todo; ++ti) {
        const std::int64_t b = todo[static_cast<std::size_t>(ti)];
        rows[static_cast<std::size_t>(b)] = std::move(fresh[static_cast<std::size_t>(ti)]);
        have[static_cast<std::size_t>(b)] = 1;
    }

    table.complete = true;
    for (std::int64_t b = 0; b < n_batches; ++b) {
        if (!have[static_cast<std::size_t>(b)]) {
            table.complete = false;
            continue;
        }
        table.batch_index.push_back(b);
        const auto& r = rows[static_cast<std::size_t>(b)];
        table.sums.insert(table.sums.end(), r.begin(), r.end());
    }
    return table;
}

// ---- estimators ------------------------------------------------------------

namespace {

// runs the engine for a prepared kernel; empty result signals "interrupted"
bool run_table(const CorrelatorRequest& req, const EstimatorEnv& env,
               const SampleKernel& kernel, BatchTable& out) {
    if (env.domain == nullptr) throw InconsistentInputs("estimator env has no domain");
    out = compute_batches(*env.domain, env.master_seed, env.stream, req.n_samples,
                          req.batch_size, kernel, env.hooks);
    return out.complete;
}

} // namespace

EstimateRecord estimate_pi(const Domain& domain, std::uint64_t master_seed,
                           std::uint32_t stream, std::int64_t n_samples,
                           std::int64_t batch_size, const EngineHooks& hooks) {
    if (domain.radius() <= 1.0 + domain.spacing())
        throw DomainTooSmall("one-arm target needs radius > 1 + spacing, have " +
                             std::to_string(domain.radius()));
    if (n_samples > 0 && batch_size > 0 && n_samples % batch_size == 0 &&
        n_samples / batch_size < 30)
        throw ConfigInvalid("pi_a estimate needs at least 30 batches");
    ArmCurveKernel kernel;
    kernel.center = nearest_vertex({0.0, 0.0}, domain);
    kernel.radii = {1.0};
    kernel.four_arm = false;
    BatchTable table = compute_batches(domain, master_seed, stream, n_samples, batch_size,
                                       kernel, hooks);
    if (!table.complete) throw MissingData("pi_a estimate was interrupted before completion");
    TableView v{&table};
    std::vector<double> vals(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) vals[r] = v.mean(r, 0);
    return build_record("pi_a", CorrelatorKind::pi_a, domain.spacing(), "[]", n_samples,
                        series_stats(vals), Normalization{}, std::nullopt);
}

std::vector<EstimateRecord> estimate_spin_n_point(const CorrelatorRequest& req,
                                                  const EstimatorEnv& env) {
    validate_sampling(req);
    if (req.points.empty() || req.points.size() % 2 != 0)
        throw OddPointCount("spin correlator needs an even, positive number of points");
    if (!env.pi) throw InconsistentInputs("spin_n_point needs the pi_a plug-in");
    auto kernel = build_spin_kernel(req, *env.domain);

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    std::vector<double> vals(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) vals[r] = v.mean(r, 0);
    Normalization norm;
    norm.pi_power = -static_cast<int>(req.points.size());
    return {build_record(req.request_id, req.kind, req.spacing, points_json(req.points),
                         req.n_samples, series_stats(vals), norm, env.pi)};
}

std::vector<EstimateRecord> estimate_energy_spin_spin(const CorrelatorRequest& req,
                                                      const EstimatorEnv& env) {
    validate_sampling(req);
    if (!env.pi) throw InconsistentInputs("energy_spin_spin needs the pi_a plug-in");
    auto kernel = build_energy_spin_spin_kernel(req, *env.domain);

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    std::vector<double> sum(v.rows()), r1(v.rows()), r2(v.rows()), r3(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) {
        r1[r] = v.mean(r, 0);
        r2[r] = v.mean(r, 1);
        r3[r] = v.halves_cov(r, 2, 3, 4);
        sum[r] = r1[r] + r2[r] + r3[r];
    }
    Normalization norm;
    norm.pi_power = -2;
    norm.a_power = -1.25;
    norm.log_power = -1;
    const std::string pj = points_json(req.points);
    std::vector<EstimateRecord> out;
    out.push_back(build_record(req.request_id, req.kind, req.spacing, pj, req.n_samples,
                               series_stats(sum), norm, env.pi));
    out.push_back(build_record(req.request_id + "#R1", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r1), Normalization{}, env.pi));
    out.push_back(build_record(req.request_id + "#R2", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r2), Normalization{}, env.pi));
    out.push_back(build_record(req.request_id + "#R3", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r3), Normalization{}, env.pi));
    return out;
}

std::vector<EstimateRecord> estimate_energy_energy(const CorrelatorRequest& req,
                                                   const EstimatorEnv& env) {
    validate_sampling(req);
    auto kernel = build_energy_energy_kernel(req, *env.domain);

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    std::vector<double> sum(v.rows()), r1(v.rows()), r2(v.rows()), r3(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) {
        r1[r] = v.mean(r, 0);
        r2[r] = v.mean(r, 1);
        r3[r] = v.halves_cov(r, 2, 3, 4) + v.halves_cov(r, 5, 6, 7);
        sum[r] = r1[r] + r2[r] + r3[r];
    }
    const Series s = series_stats(sum);
    const std::string pj = points_json(req.points);
    Normalization vanishing;
    vanishing.a_power = -2.5;
    vanishing.log_power = -2;
    Normalization bounded;
    bounded.a_power = -2.5;
    bounded.log_power = -1;
    std::vector<EstimateRecord> out;
    out.push_back(build_record(req.request_id + "#vanishing", req.kind, req.spacing, pj,
                               req.n_samples, s, vanishing, env.pi));
    out.push_back(build_record(req.request_id + "#bounded", req.kind, req.spacing, pj,
                               req.n_samples, s, bounded, env.pi));
    out.push_back(build_record(req.request_id + "#R1", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r1), Normalization{}, env.pi));
    out.push_back(build_record(req.request_id + "#R2", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r2), Normalization{}, env.pi));
    out.push_back(build_record(req.request_id + "#R3", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(r3), Normalization{}, env.pi));
    return out;
}

std::vector<EstimateRecord> estimate_edelta_correlators(const CorrelatorRequest& req,
                                                        const EstimatorEnv& env) {
    validate_sampling(req);
    if (!env.pi) throw InconsistentInputs("edelta correlators need the pi_a plug-in");
    Normalization norm;
    switch (req.kind) {
        case CorrelatorKind::edelta_spin_spin:
        case CorrelatorKind::edelta_edelta:
            norm.pi_power = -4;
            break;
        case CorrelatorKind::edelta_energy:
            norm.pi_power = -2;
            norm.a_power = -1.25;
            norm.log_power = -1;
            break;
        default:
            throw ConfigInvalid("estimate_edelta_correlators got a non-edelta kind");
    }
    auto kernel = build_edelta_kernel(req, *env.domain);

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    std::vector<double> vals(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r)
        vals[r] = v.mean(r, 0) - v.halves_product(r, 1, 2);
    return {build_record(req.request_id, req.kind, req.spacing, points_json(req.points),
                         req.n_samples, series_stats(vals), norm, env.pi)};
}

std::vector<EstimateRecord> estimate_arm_curve(const CorrelatorRequest& req,
                                               const EstimatorEnv& env) {
    validate_sampling(req);
    auto kernel = build_arm_kernel(req, *env.domain);

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    const std::string pj = points_json(req.points);
    std::vector<EstimateRecord> out;
    char suffix[48];
    for (std::size_t k = 0; k < kernel->radii.size(); ++k) {
        std::vector<double> vals(v.rows());
        for (std::size_t r = 0; r < v.rows(); ++r) vals[r] = v.mean(r, static_cast<int>(k));
        std::snprintf(suffix, sizeof suffix, "#r=%.9g", kernel->radii[k]);
        out.push_back(build_record(req.request_id + suffix, req.kind, req.spacing, pj,
                                   req.n_samples, series_stats(vals), Normalization{},
                                   env.pi));
    }
    return out;
}

std::vector<EstimateRecord> estimate_annulus_terms(const CorrelatorRequest& req,
                                                   const EstimatorEnv& env) {
    validate_sampling(req);
    const bool single = req.points.size() == 3;
    if (!single && req.points.size() != 2)
        throw ConfigInvalid("request '" + req.request_id +
                            "': annulus_terms takes [energy, spin, spin] or [energy, energy]");
    const std::string pj = points_json(req.points);
    std::vector<EstimateRecord> out;
    char suffix[32];

    if (single) {
        if (!env.pi) throw InconsistentInputs("annulus_terms (single) needs the pi_a plug-in");
        auto kernel = build_annulus_single_kernel(req, *env.domain);
        const int M = kernel->M;

        BatchTable table;
        if (!run_table(req, env, *kernel, table)) return {};
        TableView v{&table};
        std::vector<double> running(v.rows(), 0.0);
        for (int m = 2; m <= M; ++m) {
            std::vector<double> vals(v.rows());
            const int base = 3 * (m - 2);
            for (std::size_t r = 0; r < v.rows(); ++r) {
                vals[r] = v.halves_cov(r, base, base + 1, base + 2);
                running[r] += vals[r];
            }
            std::snprintf(suffix, sizeof suffix, "#m=%d", m);
            out.push_back(build_record(req.request_id + suffix, req.kind, req.spacing, pj,
                                       req.n_samples, series_stats(vals), Normalization{},
                                       env.pi));
        }
        Normalization norm;
        norm.pi_power = -2;
        norm.a_power = -1.25;
        norm.log_power = -1;
        out.push_back(build_record(req.request_id + "#sum", req.kind, req.spacing, pj,
                                   req.n_samples, series_stats(running), norm, env.pi));
        return out;
    }

    auto kernel = build_annulus_double_kernel(req, *env.domain);
    const int M = kernel->M;

    BatchTable table;
    if (!run_table(req, env, *kernel, table)) return {};
    TableView v{&table};
    std::vector<double> running(v.rows(), 0.0);
    for (int m = 2; m <= M; ++m) {
        std::vector<double> vals(v.rows());
        const int base = 6 * (m - 2);
        for (std::size_t r = 0; r < v.rows(); ++r) {
            vals[r] = v.halves_cov(r, base, base + 1, base + 2) +
                      v.halves_cov(r, base + 3, base + 4, base + 5);
            running[r] += vals[r];
        }
        std::snprintf(suffix, sizeof suffix, "#m=%d", m);
        out.push_back(build_record(req.request_id + suffix, req.kind, req.spacing, pj,
                                   req.n_samples, series_stats(vals), Normalization{},
                                   env.pi));
    }
    Normalization norm;
    norm.a_power = -2.5;
    norm.log_power = -1;
    out.push_back(build_record(req.request_id + "#sum", req.kind, req.spacing, pj,
                               req.n_samples, series_stats(running), norm, env.pi));
    return out;
}

EstimateRecord compose_log_partner(const EstimateRecord& eta_delta, const EstimateRecord& phi,
                                   double delta, const LogPartnerConstants& constants) {
    if (eta_delta.spacing != phi.spacing)
        throw InconsistentInputs("log-partner inputs come from different spacings");
    if (delta <= 0.0) throw InconsistentInputs("log-partner delta must be positive");
    if (!(constants.C2 != 0.0) || !std::isfinite(constants.C1) ||
        !std::isfinite(constants.CL) || !std::isfinite(constants.C2))
        throw InconsistentInputs("log-partner constants must be finite with C2 != 0");
    const double two_delta = 2.0 * delta;
    const double w_eta = std::pow(two_delta, -25.0 / 24.0);
    const double w_phi = constants.C1 * constants.CL / constants.C2 * std::log(two_delta);
    EstimateRecord r;
    r.request_id = eta_delta.request_id + "+log_partner";
    r.kind = eta_delta.kind;
    r.spacing = eta_delta.spacing;
    r.point_json = eta_delta.point_json;
    r.n = std::min(eta_delta.n, phi.n);
    r.raw_mean = w_eta * eta_delta.normalized_value + w_phi * phi.normalized_value;
    r.std_error = std::sqrt(w_eta * w_eta * eta_delta.normalized_std_error *
                                eta_delta.normalized_std_error +
                            w_phi * w_phi * phi.normalized_std_error * phi.normalized_std_error);
    r.norm = Normalization{};
    r.normalized_value = r.raw_mean;
    r.normalized_std_error = r.std_error;
    return r;
}

std::unique_ptr<SampleKernel> make_sample_kernel(const CorrelatorRequest& req,
                                                 const Domain& domain) {
    switch (req.kind) {
        case CorrelatorKind::spin_n_point:
            return build_spin_kernel(req, domain);
        case CorrelatorKind::energy_spin_spin:
            return build_energy_spin_spin_kernel(req, domain);
        case CorrelatorKind::energy_energy:
            return build_energy_energy_kernel(req, domain);
        case CorrelatorKind::edelta_spin_spin:
        case CorrelatorKind::edelta_energy:
        case CorrelatorKind::edelta_edelta:
            return build_edelta_kernel(req, domain);
        case CorrelatorKind::one_arm_curve:
        case CorrelatorKind::four_arm_curve:
            return build_arm_kernel(req, domain);
        case CorrelatorKind::annulus_terms:
            if (req.points.size() == 3) return build_annulus_single_kernel(req, domain);
            if (req.points.size() == 2) return build_annulus_double_kernel(req, domain);
            throw ConfigInvalid("annulus_terms takes [energy, spin, spin] or [energy, energy]");
        case CorrelatorKind::pi_a: {
            if (domain.radius() <= 1.0 + domain.spacing())
                throw DomainTooSmall("one-arm target needs radius > 1 + spacing");
            auto kernel = std::make_unique<ArmCurveKernel>();
            kernel->center = nearest_vertex({0.0, 0.0}, domain);
            kernel->radii = {1.0};
            kernel->four_arm = false;
            return kernel;
        }
    }
    throw ConfigInvalid("unhandled correlator kind");
}

std::vector<EstimateRecord> run_request(const CorrelatorRequest& req, const EstimatorEnv& env) {
    switch (req.kind) {
        case CorrelatorKind::spin_n_point:
            return estimate_spin_n_point(req, env);
        case CorrelatorKind::energy_spin_spin:
            return estimate_energy_spin_spin(req, env);
        case CorrelatorKind::energy_energy:
            return estimate_energy_energy(req, env);
        case CorrelatorKind::edelta_spin_spin:
        case CorrelatorKind::edelta_energy:
        case CorrelatorKind::edelta_edelta:
            return estimate_edelta_correlators(req, env);
        case CorrelatorKind::one_arm_curve:
        case CorrelatorKind::four_arm_curve:
            return estimate_arm_curve(req, env);
        case CorrelatorKind::annulus_terms:
            return estimate_annulus_terms(req, env);
        case CorrelatorKind::pi_a: {
            validate_sampling(req);
            if (env.domain == nullptr) throw InconsistentInputs("estimator env has no domain");
            try {
                EstimateRecord rec = estimate_pi(*env.domain, env.master_seed, env.stream,
                                                 req.n_samples, req.batch_size, env.hooks);
                rec.request_id = req.request_id;
                rec.spacing = req.spacing;
                return {rec};
            } catch (const MissingData&) {
                return {}; // interrupted
            }
        }
    }
    throw ConfigInvalid("unhandled correlator kind");
}

} // namespace perclab
