#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fryum/biphoton.hpp"
#include "fryum/common.hpp"
#include "fryum/numeric.hpp"
#include "fryum/rng.hpp"

namespace fryum {

// Angular counts a_0..a_{N-1}; the innermost macropixel is always a full disk.
struct AngularSpec {
    std::vector<int> counts;

    AngularSpec() = default;
    explicit AngularSpec(std::vector<int> c) : counts(std::move(c)) { validate(); }
    AngularSpec(std::initializer_list<int> c) : counts(c) { validate(); }

    void validate() const {
        require(!counts.empty(), "AngularSpec: empty");
        require(counts.front() == 1, "AngularSpec: a_0 must be 1");
        for (int a : counts) require(a >= 1, "AngularSpec: all counts must be >= 1");
    }

    int rings() const { return static_cast<int>(counts.size()); }

    // c_k = number of macropixels strictly inside radius r_k, k = 0..N.
    std::vector<int> offsets() const {
        std::vector<int> c(counts.size() + 1, 0);
        std::partial_sum(counts.begin(), counts.end(), c.begin() + 1);
        return c;
    }

    int total() const { return std::accumulate(counts.begin(), counts.end(), 0); }
};

struct MacropixelId {
    enum class Kind : std::uint8_t { macropixel, discarded, outside_aperture };

    Kind kind = Kind::outside_aperture;
    int ring = -1;
    int sector = -1;
    int linear = -1;

    bool is_macropixel() const { return kind == Kind::macropixel; }

    static MacropixelId discarded() { return {Kind::discarded, -1, -1, -1}; }
    static MacropixelId outside() { return {Kind::outside_aperture, -1, -1, -1}; }
    static MacropixelId pixel(int ring, int sector, int linear) {
        return {Kind::macropixel, ring, sector, linear};
    }
};

// The fryum wheel: equiprobable rings/sectors from Eq-of-equal-mass radii,
// plus optional discard bands around every interior boundary. Immutable after
// construction; all queries are pure.
class Segmentation {
public:
    AngularSpec angular;
    std::vector<double> radii;         // r_0 = 0 .. r_N = r_ap, um
    double alpha = 0.0;                // pre-discard probability per macropixel
    double a_aux = 0.0;                // auxiliary angular segment, Eq-derived real
    double band_multiplier = 0.0;      // k in "total band width = k * sigma_cond"
    double band_half = 0.0;            // k * sigma_cond / 2, um
    std::vector<double> widening;      // per-macropixel extra one-sided width, um
    std::vector<double> sector_phase;  // per-ring angular offset, rad
    double sigma = 0.0;                // beam width the radii were built from, um
    double sigma_cond = 0.0;           // conditional width at build time, um

    int rings() const { return angular.rings(); }
    int dimension() const { return angular.total(); }
    double aperture() const { return radii.back(); }

    bool inner_banded(int ring) const { return ring > 0; }
    bool outer_banded(int ring) const { return ring < rings() - 1; }

    // Effective one-sided band half width for a macropixel's own boundaries.
    double half_width(int linear) const {
        return band_half + (linear < static_cast<int>(widening.size()) ? widening[linear] : 0.0);
    }

    MacropixelId classify(Vec2 point) const { return classify_impl(point, true); }

    // Macropixel by pure geometry, all discard bands ignored.
    MacropixelId classify_unbanded(Vec2 point) const { return classify_impl(point, false); }

    MacropixelId from_linear(int linear) const {
        const auto c = angular.offsets();
        for (int k = 0; k < rings(); ++k)
            if (linear < c[k + 1]) return MacropixelId::pixel(k, linear - c[k], linear);
        throw std::out_of_range("Segmentation: linear index out of range");
    }

private:
    MacropixelId classify_impl(Vec2 point, bool with_bands) const {
        const double r = point.norm();
        if (r > radii.back()) return MacropixelId::outside();
        // Ring index: largest k with radii[k] <= r; r == r_ap maps to the last ring.
        int ring = static_cast<int>(std::upper_bound(radii.begin(), radii.end(), r) -
                                    radii.begin()) - 1;
        ring = std::clamp(ring, 0, rings() - 1);
        const int a = angular.counts[ring];
        const double span = two_pi / a;
        int sector = 0;
        double local = 0.0;
        if (a > 1) {
            double theta = std::atan2(point.y, point.x) - sector_phase[ring];
            theta -= two_pi * std::floor(theta / two_pi);
            sector = std::min(static_cast<int>(theta / span), a - 1);
            local = theta - sector * span;
        }
        const int linear = offsets_cache(ring) + sector;
        const double h = with_bands ? half_width(linear) : 0.0;
        if (h > 0.0) {
            if (inner_banded(ring) && r - radii[ring] < h) return MacropixelId::discarded();
            if (outer_banded(ring) && radii[ring + 1] - r < h) return MacropixelId::discarded();
            if (a > 1) {
                const double d_lo = local;
                const double d_hi = span - local;
                if (spoke_distance(r, d_lo) < h || spoke_distance(r, d_hi) < h)
                    return MacropixelId::discarded();
            }
        }
        return MacropixelId::pixel(ring, sector, linear);
    }

    // Euclidean distance to a bounding spoke at angular offset dtheta.
    static double spoke_distance(double r, double dtheta) {
        if (dtheta >= std::numbers::pi / 2.0) return std::numeric_limits<double>::infinity();
        return r * std::sin(dtheta);
    }

    int offsets_cache(int ring) const {
        int c = 0;
        for (int k = 0; k < ring; ++k) c += angular.counts[k];
        return c;
    }
};

// Radii from the equal-mass condition r_k = sigma sqrt(-2 ln(1 - c_k alpha)),
// the auxiliary segment a_aux = c_N / (exp(r_ap^2 / 2 sigma^2) - 1), and
// alpha = 1 / (c_N + a_aux).
inline Segmentation build_segmentation(const AngularSpec& angular, const BeamStats& stats,
                                       double r_ap, std::vector<double> sector_phase = {}) {
    angular.validate();
    require(r_ap > 0.0, "build_segmentation: aperture must be positive");
    Segmentation seg;
    seg.angular = angular;
    seg.sigma = stats.sigma;
    seg.sigma_cond = stats.sigma_cond;
    const int d = angular.total();
    const double x = 0.5 * r_ap * r_ap / (stats.sigma * stats.sigma);
    const double denom = std::expm1(x);
    require(denom > 0.0, "build_segmentation: aperture too small for a positive auxiliary segment");
    seg.a_aux = d / denom;
    seg.alpha = 1.0 / (d + seg.a_aux);
    const auto c = angular.offsets();
    seg.radii.resize(angular.rings() + 1);
    seg.radii.front() = 0.0;
    for (int k = 1; k < angular.rings(); ++k) {
        const double mass = c[k] * seg.alpha;
        require(mass < 1.0, "build_segmentation: interior mass c_k * alpha reached 1");
        seg.radii[k] = stats.sigma * std::sqrt(-2.0 * std::log1p(-mass));
    }
    seg.radii.back() = r_ap;
    for (int k = 0; k < angular.rings(); ++k)
        require(seg.radii[k] < seg.radii[k + 1], "build_segmentation: radii must increase strictly");
    seg.widening.assign(d, 0.0);
    if (sector_phase.empty()) sector_phase.assign(angular.rings(), 0.0);
    require(static_cast<int>(sector_phase.size()) == angular.rings(),
            "build_segmentation: one sector phase per ring");
    seg.sector_phase = std::move(sector_phase);
    return seg;
}

namespace detail {

// Kept probability of one sector in ring `ring` with one-sided half width h on
// every banded boundary of that sector. Radial trims are closed-form; spoke
// trims integrate the kept angular width.
inline double ring_kept_probability(const Segmentation& seg, const BeamStats& stats, int ring,
                                    double h) {
    const double s2 = stats.sigma * stats.sigma;
    const double r_lo = seg.radii[ring] + (seg.inner_banded(ring) ? h : 0.0);
    const double r_hi = seg.radii[ring + 1] - (seg.outer_banded(ring) ? h : 0.0);
    if (r_hi <= r_lo) return 0.0;
    const int a = seg.angular.counts[ring];
    const double span = two_pi / a;
    if (a == 1 || h <= 0.0) {
        const double mass = std::exp(-0.5 * r_lo * r_lo / s2) - std::exp(-0.5 * r_hi * r_hi / s2);
        return mass / a;
    }
    const auto kept_width = [&](double r) {
        const double trim = 2.0 * std::asin(std::min(1.0, h / r));
        return std::max(0.0, span - trim);
    };
    const auto f = [&](double r) {
        return kept_width(r) * std::exp(-0.5 * r * r / s2) * r / (two_pi * s2);
    };
    return integrate(f, r_lo, r_hi, 1e-11);
}

}  // namespace detail

// Symmetric discard bands of total width k * sigma_{2|1} on every shared
// macropixel boundary (half on each side); the outer aperture carries none.
inline Segmentation apply_discard_bands(Segmentation seg, const BeamStats& stats, double k = 3.0) {
    require(k >= 0.0, "apply_discard_bands: multiplier must be non-negative");
    seg.band_multiplier = k;
    seg.band_half = 0.5 * k * stats.sigma_cond;
    seg.sigma_cond = stats.sigma_cond;
    std::fill(seg.widening.begin(), seg.widening.end(), 0.0);
    for (int ring = 0; ring < seg.rings(); ++ring) {
        if (detail::ring_kept_probability(seg, stats, ring, seg.band_half) <= 0.0)
            throw std::domain_error("apply_discard_bands: a macropixel kept region vanished");
    }
    return seg;
}

// Kept (post-band) probability of one macropixel.
inline double kept_probability(const Segmentation& seg, MacropixelId id, const BeamStats& stats) {
    require(id.is_macropixel(), "kept_probability: sentinel id");
    return detail::ring_kept_probability(seg, stats, id.ring,
                                         seg.half_width(id.linear));
}

inline double total_kept_probability(const Segmentation& seg, const BeamStats& stats) {
    double total = 0.0;
    const auto c = seg.angular.offsets();
    for (int ring = 0; ring < seg.rings(); ++ring)
        total += seg.angular.counts[ring] *
                 detail::ring_kept_probability(seg, stats, ring, seg.half_width(c[ring]));
    return total;
}

// In-aperture mass lost to the bands: c_N alpha - sum of kept probabilities.
inline double discarded_mass(const Segmentation& seg, const BeamStats& stats) {
    return seg.dimension() * seg.alpha - total_kept_probability(seg, stats);
}

// Widens each over-probable macropixel's own side of its boundaries until all
// kept probabilities equal the minimum one, to relative tolerance 1e-6.
inline Segmentation equalize_kept_probability(Segmentation seg, const BeamStats& stats) {
    const int n_rings = seg.rings();
    const auto c = seg.angular.offsets();
    std::vector<double> kept(n_rings);
    for (int ring = 0; ring < n_rings; ++ring) {
        kept[ring] = detail::ring_kept_probability(seg, stats, ring, seg.half_width(c[ring]));
        require(kept[ring] > 0.0, "equalize_kept_probability: kept probability must be positive");
    }
    const double target = *std::min_element(kept.begin(), kept.end());
    for (int ring = 0; ring < n_rings; ++ring) {
        if (kept[ring] <= target * (1.0 + 1e-12)) continue;
        const double base = seg.band_half;
        const auto kept_at = [&](double extra) {
            return detail::ring_kept_probability(seg, stats, ring, base + extra);
        };
        double hi = std::max(1e-3 * stats.sigma, 2.0 * stats.sigma_cond);
        const double cap = seg.radii[ring + 1] + stats.sigma;
        while (kept_at(hi) > target) {
            hi *= 2.0;
            if (hi > cap)
                throw std::domain_error("equalize_kept_probability: no widening reaches target");
        }
        const double extra =
            find_root([&](double t) { return kept_at(t) - target; }, 0.0, hi, 48);
        for (int m = c[ring]; m < c[ring + 1]; ++m) seg.widening[m] = extra;
    }
    return seg;
}

struct CrosstalkOptions {
    long samples = 1'000'000;
    std::uint64_t seed = 0x66726d77686c;
};

// Joint landing probabilities M_ij = P(Alice kept in i and Bob kept in j),
// Bob drawn from the conditional Gaussian centered on rho * alice with width
// sigma_{2|1}. Seeded Monte Carlo, deterministic per seed.
inline Mat predicted_crosstalk(const Segmentation& seg, const BeamStats& stats,
                               const CrosstalkOptions& opts = {}) {
    const int d = seg.dimension();
    Mat m(d, d);
    RandomStream rng(opts.seed);
    const double rho = std::abs(stats.correlation());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(d) * d, 0);
    for (long s = 0; s < opts.samples; ++s) {
        const Vec2 alice{stats.sigma * rng.normal(), stats.sigma * rng.normal()};
        const Vec2 bob{rho * alice.x + stats.sigma_cond * rng.normal(),
                       rho * alice.y + stats.sigma_cond * rng.normal()};
        const MacropixelId ia = seg.classify(alice);
        if (!ia.is_macropixel()) continue;
        const MacropixelId ib = seg.classify(bob);
        if (!ib.is_macropixel()) continue;
        ++counts[static_cast<std::size_t>(ia.linear) * d + ib.linear];
    }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            m(i, j) = static_cast<double>(counts[static_cast<std::size_t>(i) * d + j]) /
                      static_cast<double>(opts.samples);
    return m;
}

// Diagonal deficit of a crosstalk/error matrix: 1 - tr(M) / sum(M).
inline double crosstalk_epsilon(const Mat& m) {
    const double total = m.sum();
    require(total > 0.0, "crosstalk_epsilon: empty matrix");
    return 1.0 - m.trace() / total;
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::ordered_json segmentation_to_json(const Segmentation& seg) {
    nlohmann::ordered_json j;
    j["A"] = seg.angular.counts;
    j["aAux"] = seg.a_aux;
    j["alpha"] = seg.alpha;
    j["R_um"] = seg.radii;
    j["bandMultiplier"] = seg.band_multiplier;
    j["perBoundaryWidening"] = seg.widening;
    j["sectorPhase"] = seg.sector_phase;
    j["meta"] = {{"sigma_um", seg.sigma}, {"sigmaCond_um", seg.sigma_cond}};
    return j;
}

inline Segmentation segmentation_from_json(const nlohmann::json& j) {
    Segmentation seg;
    seg.angular = AngularSpec(j.at("A").get<std::vector<int>>());
    seg.a_aux = j.at("aAux").get<double>();
    seg.alpha = j.at("alpha").get<double>();
    seg.radii = j.at("R_um").get<std::vector<double>>();
    seg.band_multiplier = j.at("bandMultiplier").get<double>();
    seg.widening = j.at("perBoundaryWidening").get<std::vector<double>>();
    seg.sector_phase = j.at("sectorPhase").get<std::vector<double>>();
    seg.sigma = j.at("meta").at("sigma_um").get<double>();
    seg.sigma_cond = j.at("meta").at("sigmaCond_um").get<double>();
    seg.band_half = 0.5 * seg.band_multiplier * seg.sigma_cond;
    const int d = seg.dimension();
    require(static_cast<int>(seg.radii.size()) == seg.rings() + 1,
            "segmentation_from_json: radii array must have N + 1 entries");
    require(static_cast<int>(seg.widening.size()) == d,
            "segmentation_from_json: one widening entry per macropixel");
    require(static_cast<int>(seg.sector_phase.size()) == seg.rings(),
            "segmentation_from_json: one phase entry per ring");
    require(std::abs(seg.alpha * (d + seg.a_aux) - 1.0) <= 1e-9,
            "segmentation_from_json: alpha * (c_N + aAux) must equal 1");
    for (int k = 0; k + 1 < static_cast<int>(seg.radii.size()); ++k)
        require(seg.radii[k] < seg.radii[k + 1], "segmentation_from_json: radii must increase");
    return seg;
}

}  // namespace fryum
