// benchmark: the parallel batch engine against its serial path, and the
// interface-walk four-arm detector against the component-interleaving
// reference. both comparisons also assert agreement, so the benchmark doubles
// as a coarse smoke test.
//
// usage: bench_threads [n_samples] [max_workers]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "perclab/estimators.hpp"
#include "perclab/events.hpp"
#include "perclab/sampler.hpp"

using namespace perclab;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

} // namespace

int main(int argc, char** argv) {
    const std::int64_t n_samples = argc > 1 ? std::atoll(argv[1]) : 40000;
    const int max_workers = argc > 2 ? std::atoi(argv[2]) : 8;
    const std::int64_t batch_size = 1000;

    const double a = 1.0 / 16.0;
    Domain dom(a, 1.25);
    std::printf("domain: spacing %.5f, radius %.2f, %d sites\n", a, 1.25, dom.n_sites());

    CorrelatorRequest req;
    req.request_id = "bench_spin_pair";
    req.kind = CorrelatorKind::spin_n_point;
    req.points = {{{0.25, 0.0}, PointRole::spin, 0.0}, {{-0.25, 0.0}, PointRole::spin, 0.0}};
    req.spacing = a;
    req.n_samples = n_samples;
    req.batch_size = batch_size;
    auto kernel = make_sample_kernel(req, dom);

    std::printf("\nbatch engine: spin-pair kernel, %lld samples, batch %lld\n",
                static_cast<long long>(n_samples), static_cast<long long>(batch_size));
    std::printf("%8s %10s %12s %9s %10s\n", "workers", "seconds", "samples/s", "speedup",
                "identical");

    std::vector<double> reference_sums;
    double serial_time = 0.0;
    bool all_identical = true;
    for (int workers = 1; workers <= max_workers; workers *= 2) {
        EngineHooks hooks;
        hooks.workers = workers;
        const double t0 = now_s();
        BatchTable table = compute_batches(dom, 0xbe9c4u, 7, n_samples, batch_size, *kernel, hooks);
        const double dt = now_s() - t0;
        bool identical = true;
        if (workers == 1) {
            reference_sums = table.sums;
            serial_time = dt;
        } else {
            identical = table.sums.size() == reference_sums.size() &&
                        std::memcmp(table.sums.data(), reference_sums.data(),
                                    reference_sums.size() * sizeof(double)) == 0;
            all_identical = all_identical && identical;
        }
        std::printf("%8d %10.3f %12.0f %9.2f %10s\n", workers, dt,
                    static_cast<double>(n_samples) / dt, serial_time / dt,
                    identical ? "yes" : "NO");
    }

    std::printf("\nfour-arm detectors: interface walk vs component reference\n");
    const AnnulusSpec spec{{0.0, 0.0}, 0.25, 1.0};
    const std::int64_t n_det = std::min<std::int64_t>(n_samples, 4000);
    Configuration cfg;
    std::int64_t hits_fast = 0, hits_ref = 0, disagreements = 0;
    double t_fast = 0.0, t_ref = 0.0;
    for (std::int64_t i = 0; i < n_det; ++i) {
        sample_config_into(dom, 0xbe9c4u, static_cast<std::uint64_t>(i), 99, cfg);
        double t0 = now_s();
        const bool fast = four_arm_annulus(cfg, spec);
        t_fast += now_s() - t0;
        t0 = now_s();
        const bool ref = four_arm_annulus_reference(cfg, spec);
        t_ref += now_s() - t0;
        hits_fast += fast;
        hits_ref += ref;
        disagreements += fast != ref;
    }
    std::printf("  %lld configs, %lld events, %lld disagreements\n",
                static_cast<long long>(n_det), static_cast<long long>(hits_fast),
                static_cast<long long>(disagreements));
    std::printf("  interface walk: %8.2f us/config\n", 1e6 * t_fast / static_cast<double>(n_det));
    std::printf("  reference:      %8.2f us/config  (x%.2f)\n",
                1e6 * t_ref / static_cast<double>(n_det), t_ref / t_fast);

    if (!all_identical || disagreements != 0 || hits_fast != hits_ref) {
        std::printf("\nBENCH FAILURE: paths disagree\n");
        return 1;
    }
    std::printf("\nall paths agree\n");
    return 0;
}
