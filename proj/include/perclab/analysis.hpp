#pragma once
// regression and identity layer on top of completed estimate tables: power-law
// exponent fits, log-correction fits, the three-point similarity function F,
// covariance checks under similarity maps, and the fitted-constant ledger.

#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "perclab/estimators.hpp"

namespace perclab {

struct FitResult {
    double exponent_or_slope = 0.0; // power-law exponent, or beta of a log fit
    double intercept = 0.0;         // log-amplitude, or alpha of a log fit
    double slope_std_error = 0.0;
    double intercept_std_error = 0.0;
    double chi_square = 0.0;
    int dof = 0; // points - 2, always >= 1
};

// |z1-z2|^{-5/4} |z1-z3|^{-5/4} |z3-z2|^{25/24}; similarity-covariant with
// total weight 35/24
double eval_F(std::complex<double> z1, std::complex<double> z2, std::complex<double> z3);

// weighted least squares of log y on log x. needs >= 3 points, positive xs
// and ys. errs of 0 (all of them) mean an unweighted fit.
FitResult fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<double>& y_errs);

// fits ys = alpha + beta * log(1/a) over spacings. ys must already carry the
// caller's normalization (for the energy correlators: raw * a^{-5/4} *
// pi_a^{-2}, i.e. the recorded normalized value times log(1/a)). needs >= 4
// spacings spanning at least a factor of 8. all-equal ys give beta = 0
// exactly.
FitResult fit_log_correction(const std::vector<double>& spacings,
                             const std::vector<double>& ys,
                             const std::vector<double>& y_errs);

// z -> scale * e^{i rotation} * z + translation; |phi'| = scale everywhere
struct SimilarityMap {
    double scale = 1.0;
    double rotation = 0.0; // radians
    std::complex<double> translation{0.0, 0.0};

    std::complex<double> apply(std::complex<double> z) const {
        return scale * std::polar(1.0, rotation) * z + translation;
    }
};

struct ValueWithError {
    double value = 0.0;
    double std_error = 0.0;
};

// evaluates correlator_fn at the original and the transformed points and
// returns estimate(transformed) / (estimate(original) * prod_i scale^{-w_i}),
// which tends to 1 when the correlator is covariant with weights w_i.
// energy-delta offsets are scaled along with the points.
ValueWithError mobius_covariance_check(
    const std::vector<PointSpec>& points, const std::vector<double>& weights,
    const SimilarityMap& map,
    const std::function<ValueWithError(const std::vector<PointSpec>&)>& correlator_fn);

struct ConstantLedger {
    double C1 = 0.0, C1_std_error = 0.0; // two-point amplitude squared
    double C2 = 0.0, C2_std_error = 0.0; // <E S S> limit divided by F
    double C0 = 0.0, C0_std_error = 0.0; // constant term of the merging residual
    double CL = 0.0, CL_std_error = 0.0; // log coefficient of the merging residual
    std::string data_ranges;             // json echo of the ranges each fit used
};

// everything fit_constant_ledger consumes. records carry normalized values.
struct LedgerSweeps {
    // <psi psi> against separation at one fixed spacing
    std::vector<double> pair_sep;
    std::vector<EstimateRecord> pair_rec;
    // <E S S> (the "#sum" records) against spacing at fixed geometry, plus the
    // F value of that geometry
    std::vector<EstimateRecord> ess_rec;
    double F_ess = 0.0;
    // four-point <psi psi psi psi> with z1, z2 merging at fixed z3, z4
    std::vector<std::complex<double>> merge_z1, merge_z2;
    std::complex<double> z3{0.0, 0.0}, z4{0.0, 0.0};
    std::vector<EstimateRecord> four_rec;
};

// fits C1, C2 and the merging-residual pair (C0, CL). throws MissingSweep
// when a prerequisite sweep is absent or too short.
ConstantLedger fit_constant_ledger(const LedgerSweeps& sweeps);

} // namespace perclab
