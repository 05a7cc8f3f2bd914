#include "perclab/sampler.hpp"

#include <algorithm>

namespace perclab {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::array<uint32_t, 4>& x, uint32_t k0, uint32_t k1) {
    const uint64_t p0 = uint64_t{kPhiloxM0} * x[0];
    const uint64_t p1 = uint64_t{kPhiloxM1} * x[2];
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
    x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
}

} // namespace

std::array<uint32_t, 4> philox4x32(uint64_t key, std::array<uint32_t, 4> counter) {
    uint32_t k0 = static_cast<uint32_t>(key);
    uint32_t k1 = static_cast<uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        philox_round(counter, k0, k1);
        k0 += kPhiloxW0;
        k1 += kPhiloxW1;
    }
    return counter;
}

void sample_config_into(const Domain& domain, uint64_t master_seed, uint64_t sample_index,
                        uint32_t stream, Configuration& cfg) {
    const int n = domain.n_sites();
    const std::size_t n_blocks = (static_cast<std::size_t>(n) + 127) / 128;
    cfg.domain = &domain;
    cfg.sample_index = sample_index;
    cfg.words.resize(2 * n_blocks);
    const uint32_t c0 = static_cast<uint32_t>(sample_index);
    const uint32_t c1 = static_cast<uint32_t>(sample_index >> 32);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::array<uint32_t, 4> r =
            philox4x32(master_seed, {c0, c1, static_cast<uint32_t>(b), stream});
        cfg.words[2 * b] = (uint64_t{r[1]} << 32) | r[0];
        cfg.words[2 * b + 1] = (uint64_t{r[3]} << 32) | r[2];
    }
}

Configuration sample_config(const Domain& domain, uint64_t master_seed, uint64_t sample_index,
                            uint32_t stream) {
    Configuration cfg;
    sample_config_into(domain, master_seed, sample_index, stream, cfg);
    return cfg;
}

namespace {

// union-find scratch reused across calls on the same thread
struct UfScratch {
    std::vector<int32_t> parent;
    std::vector<int32_t> size;
    std::vector<int32_t> min_rank;
};

int32_t uf_find(std::vector<int32_t>& parent, int32_t i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
        parent[static_cast<std::size_t>(i)] =
            parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
        i = parent[static_cast<std::size_t>(i)];
    }
    return i;
}

} // namespace

void label_clusters_into(const Configuration& cfg, ClusterLabels& out) {
    static thread_local UfScratch scratch;
    const Domain& domain = *cfg.domain;
    const int n = domain.n_sites();
    auto& parent = scratch.parent;
    auto& size = scratch.size;
    auto& min_rank = scratch.min_rank;
    parent.resize(static_cast<std::size_t>(n));
    size.resize(static_cast<std::size_t>(n));
    min_rank.resize(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        parent[static_cast<std::size_t>(i)] = i;
        size[static_cast<std::size_t>(i)] = 1;
    }
    // union by size over each black-black edge once (neighbor index < site)
    for (int i = 0; i < n; ++i) {
        if (!cfg.black(i)) continue;
        const auto& nbs = domain.neighbors(i);
        for (int d = 0; d < 6; ++d) {
            const int32_t j = nbs[static_cast<std::size_t>(d)];
            if (j < 0 || j >= i || !cfg.black(j)) continue;
            int32_t ri = uf_find(parent, i);
            int32_t rj = uf_find(parent, j);
            if (ri == rj) continue;
            if (size[static_cast<std::size_t>(ri)] < size[static_cast<std::size_t>(rj)])
                std::swap(ri, rj);
            parent[static_cast<std::size_t>(rj)] = ri;
            size[static_cast<std::size_t>(ri)] += size[static_cast<std::size_t>(rj)];
        }
    }
    // canonicalize: label = minimum site rank in the cluster. the minimum-rank
    // site is the first cluster site in scan order, so one forward pass that
    // records the first site seen per root does it.
    out.label.assign(static_cast<std::size_t>(n), ClusterLabels::kWhite);
    out.cluster_count = 0;
    for (int i = 0; i < n; ++i)
        min_rank[static_cast<std::size_t>(i)] = -1;
    for (int i = 0; i < n; ++i) {
        if (!cfg.black(i)) continue;
        const int32_t root = uf_find(parent, i);
        if (min_rank[static_cast<std::size_t>(root)] < 0) {
            min_rank[static_cast<std::size_t>(root)] = i;
            ++out.cluster_count;
        }
        out.label[static_cast<std::size_t>(i)] = min_rank[static_cast<std::size_t>(root)];
    }
}

ClusterLabels label_clusters(const Configuration& cfg) {
    ClusterLabels out;
    label_clusters_into(cfg, out);
    return out;
}

double spin_product_expectation(const ClusterLabels& labels, const Configuration& cfg,
                                std::span<const int> site_indices) {
    if (site_indices.size() % 2 != 0) return 0.0; // odd multiplicity vanishes
    // all points black, and each cluster hosts an even number of them
    std::array<int32_t, 16> ls{};
    const std::size_t n = site_indices.size();
    if (n > ls.size()) {
        // arbitrary-size fallback (not used by the shipped estimators)
        std::vector<int32_t> lv;
        lv.reserve(n);
        for (const int s : site_indices) {
            if (!cfg.black(s)) return 0.0;
            lv.push_back(labels.label[static_cast<std::size_t>(s)]);
        }
        std::sort(lv.begin(), lv.end());
        for (std::size_t i = 0; i < lv.size();) {
            std::size_t j = i;
            while (j < lv.size() && lv[j] == lv[i]) ++j;
            if ((j - i) % 2 != 0) return 0.0;
            i = j;
        }
        return 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const int s = site_indices[i];
        if (!cfg.black(s)) return 0.0;
        ls[i] = labels.label[static_cast<std::size_t>(s)];
    }
    std::sort(ls.begin(), ls.begin() + static_cast<std::ptrdiff_t>(n));
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && ls[j] == ls[i]) ++j;
        if ((j - i) % 2 != 0) return 0.0;
        i = j;
    }
    return 1.0;
}

double spin_product_expectation(const ClusterLabels& labels, const Configuration& cfg,
                                std::span<const LatticePoint> points) {
    std::vector<int> idx;
    idx.reserve(points.size());
    for (const LatticePoint& p : points) {
        const int s = cfg.domain->site_index(p);
        if (s < 0) throw OutOfDomain("spin_product_expectation: point outside the domain");
        idx.push_back(s);
    }
    return spin_product_expectation(labels, cfg, std::span<const int>(idx));
}

} // namespace perclab
