// fitting and identity-checking helpers. everything here is deterministic
// arithmetic on completed estimate tables; no sampling.

#include "perclab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "perclab/errors.hpp"

namespace perclab {

namespace {

struct Wls {
    double slope = 0.0, intercept = 0.0;
    double slope_err = 0.0, intercept_err = 0.0;
    double chi2 = 0.0;
    int dof = 0;
};

// straight-line weighted least squares with the standard closed form.
// sigmas all zero -> unit weights (chi2 is then a plain residual sum).
Wls wls_line(const std::vector<double>& x, const std::vector<double>& y,
             const std::vector<double>& sigma) {
    const std::size_t n = x.size();
    if (n < 3 || y.size() != n || sigma.size() != n)
        throw DegenerateInput("line fit needs >= 3 matching (x, y, err) triples");
    bool any_pos = false, any_zero = false;
    for (double s : sigma) {
        if (s > 0.0)
            any_pos = true;
        else if (s == 0.0)
            any_zero = true;
        else
            throw DegenerateInput("negative error bar");
    }
    if (any_pos && any_zero)
        throw DegenerateInput("mixing zero and positive error bars");
    // the determinant check below cancels catastrophically when the abscissas
    // coincide, so test the spread directly
    double xmin = x[0], xmax = x[0];
    for (double v : x) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    if (xmax - xmin <= 1e-12 * std::max({std::abs(xmin), std::abs(xmax), 1.0}))
        throw DegenerateInput("degenerate abscissas in line fit");
    double S = 0.0, Sx = 0.0, Sy = 0.0, Sxx = 0.0, Sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = any_pos ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
        S += w;
        Sx += w * x[i];
        Sy += w * y[i];
        Sxx += w * x[i] * x[i];
        Sxy += w * x[i] * y[i];
    }
    const double D = S * Sxx - Sx * Sx;
    if (!(D > 0.0) || !std::isfinite(D))
        throw DegenerateInput("degenerate abscissas in line fit");
    Wls r;
    r.slope = (S * Sxy - Sx * Sy) / D;
    r.intercept = (Sxx * Sy - Sx * Sxy) / D;
    r.slope_err = std::sqrt(S / D);
    r.intercept_err = std::sqrt(Sxx / D);
    r.dof = static_cast<int>(n) - 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = any_pos ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
        const double res = y[i] - r.intercept - r.slope * x[i];
        r.chi2 += w * res * res;
    }
    return r;
}

FitResult to_fit(const Wls& w) {
    FitResult f;
    f.exponent_or_slope = w.slope;
    f.intercept = w.intercept;
    f.slope_std_error = w.slope_err;
    f.intercept_std_error = w.intercept_err;
    f.chi_square = w.chi2;
    f.dof = w.dof;
    return f;
}

} // namespace

double eval_F(std::complex<double> z1, std::complex<double> z2, std::complex<double> z3) {
    const double d12 = std::abs(z1 - z2);
    const double d13 = std::abs(z1 - z3);
    const double d32 = std::abs(z3 - z2);
    if (d12 == 0.0 || d13 == 0.0 || d32 == 0.0)
        throw CoincidentPoints("eval_F needs pairwise distinct points");
    return std::pow(d12, -1.25) * std::pow(d13, -1.25) * std::pow(d32, 25.0 / 24.0);
}

FitResult fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<double>& y_errs) {
    const std::size_t n = xs.size();
    if (n < 3 || ys.size() != n || y_errs.size() != n)
        throw DegenerateInput("power-law fit needs >= 3 matching points");
    std::vector<double> lx(n), ly(n), ls(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
            throw DegenerateInput("power-law fit needs positive xs and ys");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
        ls[i] = y_errs[i] / ys[i]; // first-order error of log y
    }
    return to_fit(wls_line(lx, ly, ls));
}

FitResult fit_log_correction(const std::vector<double>& spacings,
                             const std::vector<double>& ys,
                             const std::vector<double>& y_errs) {
    const std::size_t n = spacings.size();
    if (n < 4 || ys.size() != n || y_errs.size() != n)
        throw DegenerateInput("log-correction fit needs >= 4 spacings");
    double a_min = spacings[0], a_max = spacings[0];
    for (double a : spacings) {
        if (!(a > 0.0) || !(a < 1.0))
            throw DegenerateInput("spacings must lie in (0, 1) for log(1/a) fits");
        a_min = std::min(a_min, a);
        a_max = std::max(a_max, a);
    }
    if (a_max < 8.0 * a_min - 1e-12)
        throw DegenerateInput("log-correction fit needs spacings spanning a factor >= 8");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::log(1.0 / spacings[i]);
    bool all_equal = true;
    for (std::size_t i = 1; i < n; ++i)
        if (ys[i] != ys[0]) all_equal = false;
    Wls w = wls_line(x, ys, y_errs);
    if (all_equal) { // constant data has no log term, exactly
        w.slope = 0.0;
        w.intercept = ys[0];
        w.chi2 = 0.0;
    }
    return to_fit(w);
}

ValueWithError mobius_covariance_check(
    const std::vector<PointSpec>& points, const std::vector<double>& weights,
    const SimilarityMap& map,
    const std::function<ValueWithError(const std::vector<PointSpec>&)>& correlator_fn) {
    if (points.empty() || weights.size() != points.size())
        throw InconsistentInputs("covariance check needs one weight per point");
    if (!(map.scale > 0.0))
        throw InconsistentInputs("similarity maps need a positive scale");
    std::vector<PointSpec> moved = points;
    for (auto& p : moved) {
        p.z = map.apply(p.z);
        p.delta *= map.scale;
    }
    const ValueWithError base = correlator_fn(points);
    const ValueWithError xfrm = correlator_fn(moved);
    double jacobian = 1.0; // prod_i |phi'(z_i)|^{-w_i}
    for (double w : weights) jacobian *= std::pow(map.scale, -w);
    const double denom = base.value * jacobian;
    if (denom == 0.0) throw DegenerateInput("covariance check divides by a zero estimate");
    ValueWithError out;
    out.value = xfrm.value / denom;
    const double rel_x = xfrm.value != 0.0 ? xfrm.std_error / xfrm.value : 0.0;
    const double rel_b = base.std_error / base.value;
    out.std_error = std::abs(out.value) * std::sqrt(rel_x * rel_x + rel_b * rel_b);
    return out;
}

ConstantLedger fit_constant_ledger(const LedgerSweeps& sweeps) {
    ConstantLedger ledger;
    char buf[256];

    // C1: square of the two-point amplitude
    if (sweeps.pair_rec.size() < 3 || sweeps.pair_sep.size() != sweeps.pair_rec.size())
        throw MissingSweep("constant ledger needs a <psi psi> separation sweep (>= 3 points)");
    {
        std::vector<double> v, e;
        for (const auto& r : sweeps.pair_rec) {
            v.push_back(r.normalized_value);
            e.push_back(r.normalized_std_error);
        }
        const FitResult f = fit_power_law(sweeps.pair_sep, v, e);
        const double amp = std::exp(f.intercept);
        ledger.C1 = amp * amp;
        ledger.C1_std_error = 2.0 * amp * amp * f.intercept_std_error;
    }

    // C2: slope of the log fit to <E S S>, divided by the geometry's F
    if (sweeps.ess_rec.size() < 4)
        throw MissingSweep("constant ledger needs an <E S S> spacing sweep (>= 4 spacings)");
    if (!(sweeps.F_ess > 0.0)) throw InconsistentInputs("F value for the <E S S> geometry must be positive");
    {
        std::vector<double> a, y, e;
        for (const auto& r : sweeps.ess_rec) {
            const double lg = std::log(1.0 / r.spacing);
            a.push_back(r.spacing);
            y.push_back(r.normalized_value * lg); // undo the log division
            e.push_back(r.normalized_std_error * lg);
        }
        const FitResult f = fit_log_correction(a, y, e);
        ledger.C2 = f.exponent_or_slope / sweeps.F_ess;
        ledger.C2_std_error = f.slope_std_error / sweeps.F_ess;
    }

    // C0 and CL: regression of the merging four-point residual on the log of
    // the cross-ratio
    if (sweeps.four_rec.size() < 3 || sweeps.merge_z1.size() != sweeps.four_rec.size() ||
        sweeps.merge_z2.size() != sweeps.four_rec.size())
        throw MissingSweep("constant ledger needs a merging four-point sweep (>= 3 points)");
    if (!(ledger.C1 > 0.0)) throw DegenerateInput("C1 must be positive to form the residual");
    {
        std::vector<double> x, r, e;
        double s_min = 1e300, s_max = 0.0;
        for (std::size_t i = 0; i < sweeps.four_rec.size(); ++i) {
            const std::complex<double> z1 = sweeps.merge_z1[i], z2 = sweeps.merge_z2[i];
            const double s = std::abs(z2 - z1);
            if (s == 0.0) throw CoincidentPoints("merging sweep has coincident z1, z2");
            s_min = std::min(s_min, s);
            s_max = std::max(s_max, s);
            const double F = eval_F(z1, sweeps.z3, sweeps.z4);
            const double cross = std::abs((z2 - z1) * (sweeps.z4 - sweeps.z3) /
                                          ((sweeps.z3 - z1) * (sweeps.z4 - z2)));
            const double lead = ledger.C1 * std::pow(s, -5.0 / 24.0);
            const double scale = std::pow(s, 1.25) * F;
            const double v = sweeps.four_rec[i].normalized_value;
            const double resid =
                (v / lead - std::pow(std::abs(sweeps.z4 - sweeps.z3), -5.0 / 24.0)) / scale;
            x.push_back(std::log(cross));
            r.push_back(resid);
            e.push_back(sweeps.four_rec[i].normalized_std_error / (lead * scale));
        }
        const Wls w = wls_line(x, r, e);
        ledger.CL = -w.slope; // residual = C0 - CL * log(cross)
        ledger.CL_std_error = w.slope_err;
        ledger.C0 = w.intercept;
        ledger.C0_std_error = w.intercept_err;
        std::snprintf(buf, sizeof buf,
                      "{\"pair_sep\":[%.17g,%.17g],\"ess_a\":[%.17g,%.17g],"
                      "\"merge_sep\":[%.17g,%.17g]}",
                      sweeps.pair_sep.front(), sweeps.pair_sep.back(),
                      sweeps.ess_rec.front().spacing, sweeps.ess_rec.back().spacing, s_min,
                      s_max);
        ledger.data_ranges = buf;
    }
    return ledger;
}

} // namespace perclab
