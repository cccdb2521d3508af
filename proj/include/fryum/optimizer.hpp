#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fryum/common.hpp"
#include "fryum/keyrate.hpp"
#include "fryum/parallel.hpp"
#include "fryum/segmentation.hpp"

namespace fryum {

// Where the azimuthal arc gap of a ring is measured. The inner kept radius
// (r_k + band half width) is the default; measuring at the raw inner radius
// would reject the wide outer rings the protocol relies on.
enum class AzimuthalReference { kept_inner, inner, mean, outer };

struct ValidityRules {
    double band_multiplier = 3.0;
    bool first_ring_single = true;
    bool last_segment_auxiliary = true;  // structural: Eq-derived a_aux closes the wheel
    AzimuthalReference azimuthal_reference = AzimuthalReference::kept_inner;
    // Defaults derive from band_multiplier * sigma_cond when unset.
    std::optional<double> min_radial_gap;
    std::optional<double> min_azimuthal_gap;

    double radial_gap(const BeamStats& stats) const {
        return min_radial_gap.value_or(band_multiplier * stats.sigma_cond);
    }
    double azimuthal_gap(const BeamStats& stats) const {
        return min_azimuthal_gap.value_or(band_multiplier * stats.sigma_cond);
    }
    double band_half(const BeamStats& stats) const {
        return 0.5 * band_multiplier * stats.sigma_cond;
    }
};

struct ValidityResult {
    bool ok = true;
    std::vector<std::string> reasons;

    void fail(std::string reason) {
        ok = false;
        reasons.push_back(std::move(reason));
    }
    explicit operator bool() const { return ok; }
};

namespace detail {

inline double equal_mass_radius(double sigma, double in_aperture_mass, int c, int d) {
    return sigma * std::sqrt(-2.0 * std::log1p(-in_aperture_mass * c / d));
}

inline double azimuthal_reference_radius(AzimuthalReference ref, double r_in, double r_out,
                                         double band_half) {
    switch (ref) {
        case AzimuthalReference::inner: return r_in;
        case AzimuthalReference::mean: return 0.5 * (r_in + r_out);
        case AzimuthalReference::outer: return r_out;
        default: return r_in + band_half;
    }
}

}  // namespace detail

inline ValidityResult is_valid(const AngularSpec& angular, const BeamStats& stats, double r_ap,
                               const ValidityRules& rules) {
    ValidityResult res;
    if (angular.counts.empty()) {
        res.fail("empty angular spec");
        return res;
    }
    if (rules.first_ring_single && angular.counts.front() != 1) {
        res.fail("first ring must hold a single macropixel");
        return res;
    }
    for (int a : angular.counts)
        if (a < 1) {
            res.fail("angular counts must be positive");
            return res;
        }
    const int n = static_cast<int>(angular.counts.size());
    const int d = angular.total();
    const double sigma = stats.sigma;
    const double mass = -std::expm1(-0.5 * r_ap * r_ap / (sigma * sigma));
    const double h = rules.band_half(stats);
    const double g_r = rules.radial_gap(stats);
    const double g_a = rules.azimuthal_gap(stats);

    std::vector<double> r(n + 1);
    r[0] = 0.0;
    std::vector<int> c(1, 0);
    int acc = 0;
    for (int a : angular.counts) c.push_back(acc += a);
    for (int k = 1; k < n; ++k) r[k] = detail::equal_mass_radius(sigma, mass, c[k], d);
    r[n] = r_ap;

    if (r[1] <= h) res.fail("central disk vanishes after bands");
    for (int k = 1; k + 1 < n; ++k) {
        if (r[k + 1] - r[k] <= std::max(g_r, 2.0 * h))
            res.fail("radial gap below minimum between r_" + std::to_string(k) + " and r_" +
                     std::to_string(k + 1));
    }
    if (n >= 2 && r_ap - r[n - 1] <= h) res.fail("outer annulus vanishes after bands");

    for (int k = 1; k < n; ++k) {
        const int a = angular.counts[k];
        if (a < 2) continue;
        const double ref =
            detail::azimuthal_reference_radius(rules.azimuthal_reference, r[k], r[k + 1], h);
        if (two_pi * ref / a <= g_a)
            res.fail("azimuthal gap below minimum in ring " + std::to_string(k));
        const double r_kept_outer = r[k + 1] - (k + 1 < n ? h : 0.0);
        if (r_kept_outer <= h || two_pi / a <= 2.0 * std::asin(std::min(1.0, h / r_kept_outer)))
            res.fail("sector kept region vanishes in ring " + std::to_string(k));
    }
    // Eq-derived auxiliary segment is positive for any finite aperture.
    if (!(d / std::expm1(0.5 * r_ap * r_ap / (sigma * sigma)) > 0.0))
        res.fail("auxiliary segment not positive");
    return res;
}

enum class EpsilonMode { crosstalk, bound027 };

inline const char* to_string(EpsilonMode m) {
    return m == EpsilonMode::crosstalk ? "crosstalk" : "bound027";
}

struct EvaluateOptions {
    EpsilonMode mode = EpsilonMode::crosstalk;
    long crosstalk_samples = 1'000'000;
    std::uint64_t seed = 0x5eedf00d;
};

// Mean number of edge-adjacent macropixels, used by the conservative
// 0.27%-per-neighbor bound.
inline double mean_neighbor_count(const Segmentation& seg) {
    const int n = seg.rings();
    const auto& a = seg.angular.counts;
    long total = 0;
    // Same-ring neighbors.
    for (int k = 0; k < n; ++k)
        total += static_cast<long>(a[k]) * std::min(2, a[k] - 1);
    // Adjacent-ring overlaps, positive arc overlap only.
    for (int k = 0; k + 1 < n; ++k) {
        const double pa = seg.sector_phase[k] / two_pi;
        const double pb = seg.sector_phase[k + 1] / two_pi;
        for (int i = 0; i < a[k]; ++i) {
            const double s0 = pa + static_cast<double>(i) / a[k];
            const double s1 = s0 + 1.0 / a[k];
            for (int j = 0; j < a[k + 1]; ++j) {
                const double t0 = pb + static_cast<double>(j) / a[k + 1];
                // Compare on the circle: shift t into [s0 - 1, s0).
                double u0 = t0 - std::floor(t0 - s0 + 1.0);
                bool overlap = false;
                for (int wrap = 0; wrap < 2 && !overlap; ++wrap) {
                    const double v0 = u0 + wrap;
                    const double v1 = v0 + 1.0 / a[k + 1];
                    overlap = std::min(s1, v1) - std::max(s0, v0) > 1e-12;
                }
                if (overlap) total += 2;  // counts for both macropixels
            }
        }
    }
    return static_cast<double>(total) / seg.dimension();
}

struct Evaluation {
    AngularSpec angular;
    Segmentation segmentation;
    RateReport report;
    double mean_neighbors = 0.0;
    EpsilonMode eps_mode = EpsilonMode::crosstalk;
};

namespace detail {

inline std::uint64_t angular_key(const AngularSpec& a) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int v : a.counts) {
        h ^= static_cast<std::uint64_t>(v) + 0x9e37;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// Builds, bands, equalizes and scores one candidate. p is the kept in-aperture
// mass c_N alpha - discarded; eps comes from the crosstalk Monte Carlo or from
// the 0.27%-per-neighbor bound in fast mode.
inline Evaluation evaluate(const AngularSpec& angular, const BeamStats& stats, double r_ap,
                           const ValidityRules& rules, const EvaluateOptions& opts = {}) {
    const ValidityResult validity = is_valid(angular, stats, r_ap, rules);
    if (!validity) {
        std::string msg = "evaluate: invalid angular spec:";
        for (const auto& r : validity.reasons) msg += " " + r + ";";
        throw std::invalid_argument(msg);
    }
    Evaluation ev;
    ev.angular = angular;
    ev.eps_mode = opts.mode;
    Segmentation seg = build_segmentation(angular, stats, r_ap);
    seg = apply_discard_bands(std::move(seg), stats, rules.band_multiplier);
    seg = equalize_kept_probability(std::move(seg), stats);
    ev.segmentation = seg;
    ev.mean_neighbors = mean_neighbor_count(seg);
    const int d = seg.dimension();
    const double p = total_kept_probability(seg, stats);
    double eps = 0.0;
    if (d >= 2) {
        if (opts.mode == EpsilonMode::crosstalk) {
            CrosstalkOptions co;
            co.samples = opts.crosstalk_samples;
            co.seed = splitmix64(opts.seed ^ detail::angular_key(angular));
            const Mat m = predicted_crosstalk(seg, stats, co);
            // no joint mass sampled: the kept regions are slivers, score worst case
            eps = m.sum() > 0.0 ? crosstalk_epsilon(m) : 1.0 - 1.0 / d;
            eps = std::min(eps, 1.0 - 1e-12);  // keep the rate formula in domain
        } else {
            eps = std::min(0.0027 * ev.mean_neighbors, 0.5);
        }
    }
    ev.report = make_rate_report(d, Qder{eps, eps, eps}, p);
    return ev;
}

// Exhaustive enumeration of valid angular specs with N rings. Per-ring counts
// are capped by the azimuthal gap rule, which makes the space finite.
inline std::vector<AngularSpec> enumerate_valid(const BeamStats& stats, double r_ap,
                                                const ValidityRules& rules, int n_rings,
                                                long* examined = nullptr) {
    std::vector<AngularSpec> out;
    const double sigma = stats.sigma;
    const double mass = -std::expm1(-0.5 * r_ap * r_ap / (sigma * sigma));
    const double h = rules.band_half(stats);
    const double g_r = std::max(rules.radial_gap(stats), 2.0 * h);
    const double g_a = rules.azimuthal_gap(stats);
    long seen = 0;

    if (n_rings == 1) {
        AngularSpec a({1});
        ++seen;
        if (is_valid(a, stats, r_ap, rules)) out.push_back(a);
        if (examined) *examined += seen;
        return out;
    }

    const int cap_any = std::max(1, static_cast<int>(two_pi * (r_ap + h) / g_a));
    const int d_max = 1 + (n_rings - 1) * cap_any;

    std::vector<int> c(n_rings + 1, 0);
    for (int d = n_rings; d <= d_max; ++d) {
        const auto radius = [&](int ck) { return detail::equal_mass_radius(sigma, mass, ck, d); };
        if (radius(1) <= h) break;  // central disk only shrinks as d grows
        c[0] = 0;
        c[1] = 1;
        c[n_rings] = d;
        auto dfs = [&](auto&& self, int k) -> void {  // choose c[k+1], ring k spans c[k]..c[k+1]
            const double r_k = radius(c[k]);
            const int remaining = n_rings - 1 - k;  // rings after ring k
            if (k == n_rings - 1) {
                const int a = d - c[k];
                if (a < 1) return;
                ++seen;
                if (r_ap - r_k <= h) return;
                if (a >= 2) {
                    const double ref = detail::azimuthal_reference_radius(
                        rules.azimuthal_reference, r_k, r_ap, h);
                    if (two_pi * ref / a <= g_a) return;
                }
                std::vector<int> counts(n_rings);
                for (int i = 0; i < n_rings; ++i) counts[i] = c[i + 1] - c[i];
                AngularSpec cand(counts);
                if (is_valid(cand, stats, r_ap, rules)) out.push_back(cand);
                return;
            }
            const double ref =
                detail::azimuthal_reference_radius(rules.azimuthal_reference, r_k, r_ap, h);
            const int a_cap = static_cast<int>(two_pi * ref / g_a);  // arc must exceed g_a
            for (int a = 1; a <= a_cap; ++a) {
                const int next = c[k] + a;
                if (next > d - remaining) break;
                const double r_next = radius(next);
                if (r_next - r_k <= g_r) continue;  // radial gap; grows with a, keep scanning
                if (k >= 1 && a >= 2) {
                    const double ref_k = detail::azimuthal_reference_radius(
                        rules.azimuthal_reference, r_k, r_next, h);
                    if (two_pi * ref_k / a <= g_a) continue;  // r_next moves with a; keep scanning
                }
                c[k + 1] = next;
                self(self, k + 1);
            }
        };
        dfs(dfs, 1);
    }
    if (examined) *examined += seen;
    return out;
}

struct SweepOptions {
    EpsilonMode mode = EpsilonMode::crosstalk;
    long ranking_samples = 100'000;  // per-candidate Monte Carlo during the search
    long final_samples = 1'000'000;  // re-evaluation of each per-N winner
    std::uint64_t seed = 0x5eedf00d;
    int workers = 1;
    bool keep_all = false;  // evaluate every candidate; disables the bound pruning
};

struct SearchSize {
    long examined = 0;
    long valid = 0;
    long pruned = 0;  // valid candidates skipped by the p*log2(d) bound
};

struct OptimizationResult {
    std::map<int, Evaluation> best_per_n;
    std::optional<Evaluation> global_best;
    SearchSize search;
    std::vector<int> empty_n;
    std::vector<Evaluation> all;  // populated when keep_all is set
};

namespace detail {

// Ranking: clamped rate first (negative rates sort below all non-negative),
// then smaller N, then lexicographically smaller A.
inline bool better_candidate(const Evaluation& a, const Evaluation& b) {
    const double ra = std::max(0.0, a.report.rate_mod);
    const double rb = std::max(0.0, b.report.rate_mod);
    if (std::abs(ra - rb) > 1e-9) return ra > rb;
    if (a.angular.rings() != b.angular.rings()) return a.angular.rings() < b.angular.rings();
    return a.angular.counts < b.angular.counts;
}

}  // namespace detail

namespace detail {

// Kept fraction alone; p * log2(d) bounds the modified rate from above.
inline double kept_fraction_only(const AngularSpec& a, const BeamStats& stats, double r_ap,
                                 const ValidityRules& rules) {
    try {
        Segmentation seg = build_segmentation(a, stats, r_ap);
        seg = apply_discard_bands(std::move(seg), stats, rules.band_multiplier);
        seg = equalize_kept_probability(std::move(seg), stats);
        return total_kept_probability(seg, stats);
    } catch (const std::domain_error&) {
        return 0.0;  // numerically degenerate kept region
    }
}

inline Evaluation evaluate_or_floor(const AngularSpec& a, const BeamStats& stats, double r_ap,
                                    const ValidityRules& rules, const EvaluateOptions& opts) {
    try {
        return evaluate(a, stats, r_ap, rules, opts);
    } catch (const std::domain_error&) {
        Evaluation ev;
        ev.angular = a;
        ev.eps_mode = opts.mode;
        ev.report.d = a.total();
        return ev;  // zero rate, ranks last
    }
}

}  // namespace detail

// Exhaustive sweep over N in [n_lo, n_hi]. Candidates that cannot beat the
// per-N pivot even at zero error (p * log2 d bound) skip the epsilon Monte
// Carlo; the argmax is unchanged. Deterministic for fixed options, including
// the Monte Carlo epsilon estimates, for any worker count.
inline OptimizationResult sweep(const BeamStats& stats, double r_ap, const ValidityRules& rules,
                                int n_lo, int n_hi, const SweepOptions& opts = {}) {
    require(n_lo >= 1 && n_hi >= n_lo, "sweep: bad N range");
    OptimizationResult result;
    EvaluateOptions ranking;
    ranking.mode = opts.mode;
    ranking.crosstalk_samples = opts.ranking_samples;
    ranking.seed = opts.seed;

    for (int n = n_lo; n <= n_hi; ++n) {
        std::vector<AngularSpec> candidates =
            enumerate_valid(stats, r_ap, rules, n, &result.search.examined);
        result.search.valid += static_cast<long>(candidates.size());
        if (candidates.empty()) {
            result.empty_n.push_back(n);
            continue;
        }

        std::vector<double> bound(candidates.size());
        parallel_for(candidates.size(), opts.workers, [&](std::size_t i) {
            const double p = detail::kept_fraction_only(candidates[i], stats, r_ap, rules);
            bound[i] = p * std::log2(std::max(2, candidates[i].total()));
        });

        std::vector<std::size_t> order;
        if (opts.keep_all) {
            order.resize(candidates.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        } else {
            std::size_t pivot = 0;
            for (std::size_t i = 1; i < candidates.size(); ++i)
                if (bound[i] > bound[pivot]) pivot = i;
            const Evaluation pivot_eval =
                detail::evaluate_or_floor(candidates[pivot], stats, r_ap, rules, ranking);
            const double floor_rate = std::max(0.0, pivot_eval.report.rate_mod);
            for (std::size_t i = 0; i < candidates.size(); ++i)
                if (bound[i] >= floor_rate - 1e-12) order.push_back(i);
            result.search.pruned +=
                static_cast<long>(candidates.size()) - static_cast<long>(order.size());
        }

        std::vector<Evaluation> evals(order.size());
        parallel_for(order.size(), opts.workers, [&](std::size_t i) {
            evals[i] = detail::evaluate_or_floor(candidates[order[i]], stats, r_ap, rules, ranking);
        });
        std::size_t best = 0;
        for (std::size_t i = 1; i < evals.size(); ++i)
            if (detail::better_candidate(evals[i], evals[best])) best = i;
        EvaluateOptions final_opts = ranking;
        final_opts.crosstalk_samples = opts.final_samples;
        result.best_per_n.emplace(
            n, detail::evaluate_or_floor(candidates[order[best]], stats, r_ap, rules, final_opts));
        if (opts.keep_all)
            result.all.insert(result.all.end(), evals.begin(), evals.end());
    }
    for (const auto& [n, ev] : result.best_per_n)
        if (!result.global_best || detail::better_candidate(ev, *result.global_best))
            result.global_best = ev;
    return result;
}

}  // namespace fryum
