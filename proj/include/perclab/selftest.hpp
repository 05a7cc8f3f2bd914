#pragma once

// built-in correctness corpus: a fixed set of tiny disk patches on which every
// detector and correlator is checked against exhaustive enumeration, against
// frozen hand counts where one exists, and (optionally) against monte carlo
// at N = 1e5 within 4 standard errors.

#include <iosfwd>
#include <string>
#include <vector>

namespace perclab {

struct SelftestLine {
    std::string name;
    double expected = 0.0;
    double got = 0.0;
    double tolerance = 0.0; // 0 means the comparison must be exact
    bool pass = false;
};

struct SelftestReport {
    std::vector<SelftestLine> lines;
    int failures = 0;
    int patches = 0; // distinct (patch, target) cases exercised
};

// with_mc adds the sampling comparisons (slower); max_sites restricts the
// corpus to patches at most that large (quick exact-only subset for reports)
SelftestReport run_oracle_selftest(bool with_mc, int max_sites = 24);

void print_selftest_report(const SelftestReport& rep, std::ostream& out);

} // namespace perclab
