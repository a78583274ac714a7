#ifndef LPGFLOW_LORA_HPP
#define LPGFLOW_LORA_HPP

// Low-rank adapters over frozen linear weights: h = x·W0 + scale·(x·A^T)·B^T.
// A carries the down-projection [r, d_in], B the up-projection [d_out, r];
// B starts at zero so a fresh adapter leaves the base forward untouched.

#include <map>
#include <string>
#include <vector>

#include "lpgflow/ops.hpp"
#include "lpgflow/rng.hpp"

namespace lpgflow {

struct LoraSite {
    Tensor a;  // [r, d_in]
    Tensor b;  // [d_out, r]

    int rank() const { return a.rows(); }
    int d_in() const { return a.cols(); }
    int d_out() const { return b.rows(); }
};

struct LoraAdapter {
    std::map<std::string, LoraSite> sites;
    int rank     = 0;  // nominal rank; individual sites may deviate
    float scale  = 1.0f;
    std::string task;

    bool has(const std::string& site) const { return sites.count(site) != 0; }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [_, s] : sites) n += int64_t(s.rank()) * (s.d_in() + s.d_out());
        return n;
    }
};

inline LoraSite make_lora_site(int d_in, int d_out, int rank, RngStream& rng,
                               bool trainable = true) {
    LPG_REQUIRE(d_in > 0 && d_out > 0, "lora site: bad dims");
    LPG_REQUIRE(rank > 0 && rank <= std::min(d_in, d_out), "lora site: bad rank");
    LoraSite s;
    const float std_a = 1.0f / std::sqrt(float(d_in));
    std::vector<float> av(size_t(rank) * d_in);
    for (auto& v : av) v = rng.next_normal() * std_a;
    s.a = Tensor::from_vec(av, rank, d_in, trainable);
    s.b = Tensor::zeros(d_out, rank, trainable);
    return s;
}

// x [T, d_in] through one adapted site; base_out is the frozen x·W0 + b.
inline Tensor lora_apply(const Tensor& x, const Tensor& base_out, const LoraSite& site,
                         float scale) {
    LPG_REQUIRE(site.a.rows() == site.b.cols(), "lora_apply: A/B rank mismatch");
    LPG_REQUIRE(site.a.cols() == x.cols(), "lora_apply: A width vs input");
    LPG_REQUIRE(site.b.rows() == base_out.cols(), "lora_apply: B height vs output");
    Tensor down = matmul_nt(x, site.a);      // [T, r]
    Tensor up   = matmul_nt(down, site.b);   // [T, d_out]
    return add(base_out, ::lpgflow::scale(up, scale));
}

// Rank-concatenation merge: stacked A rows, B columns pre-scaled by each
// adapter's scale, so the merged forward is the sum of the individual deltas.
inline LoraAdapter lora_merge(const std::vector<LoraAdapter>& adapters) {
    LPG_REQUIRE(!adapters.empty(), "lora_merge: no adapters");
    const auto& first = adapters.front();
    for (const auto& ad : adapters) {
        LPG_REQUIRE(ad.sites.size() == first.sites.size(),
                    "lora_merge: differing layer-site sets");
        for (const auto& [name, s] : ad.sites) {
            auto it = first.sites.find(name);
            LPG_REQUIRE(it != first.sites.end(), "lora_merge: differing layer-site sets");
            LPG_REQUIRE(s.d_in() == it->second.d_in() && s.d_out() == it->second.d_out(),
                        "lora_merge: site dims disagree");
        }
    }

    LoraAdapter out;
    out.scale = 1.0f;
    out.rank  = 0;
    for (size_t i = 0; i < adapters.size(); i++) {
        out.rank += adapters[i].rank;
        if (i) out.task += "+";
        out.task += adapters[i].task;
    }

    for (const auto& [name, ref] : first.sites) {
        const int din = ref.d_in(), dout = ref.d_out();
        int rsum = 0;
        for (const auto& ad : adapters) rsum += ad.sites.at(name).rank();

        std::vector<float> am(size_t(rsum) * din);
        std::vector<float> bm(size_t(dout) * rsum);
        int roff = 0;
        for (const auto& ad : adapters) {
            const LoraSite& s = ad.sites.at(name);
            const int r       = s.rank();
            std::copy(s.a.data().begin(), s.a.data().end(),
                      am.begin() + size_t(roff) * din);
            for (int o = 0; o < dout; o++)
                for (int j = 0; j < r; j++)
                    bm[size_t(o) * rsum + roff + j] =
                        ad.scale * s.b.data()[size_t(o) * r + j];
            roff += r;
        }
        LoraSite m;
        m.a = Tensor::from_vec(am, rsum, din, false);
        m.b = Tensor::from_vec(bm, dout, rsum, false);
        out.sites.emplace(name, std::move(m));
    }
    return out;
}

}  // namespace lpgflow

#endif
