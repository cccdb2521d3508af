#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fryum/common.hpp"
#include "fryum/rng.hpp"

namespace fryum {

enum class Basis : std::uint8_t { position = 0, momentum = 1 };

inline const char* to_string(Basis b) { return b == Basis::position ? "position" : "momentum"; }

// Double-Gaussian source. w0 is the pump beam waist and b the phase-matching
// scale, both in the same length unit (um throughout the library).
struct SourceParams {
    double w0;
    double b;

    SourceParams(double w0_, double b_) : w0(w0_), b(b_) {
        require(w0 > 0.0 && b > 0.0, "SourceParams: w0 and b must be positive");
    }

    // b^2 = L / (3 k_p), crystal length in mm, pump wavevector in 1/um.
    static SourceParams from_crystal(double length_mm, double pump_wavevector_per_um, double w0_um) {
        require(length_mm > 0.0 && pump_wavevector_per_um > 0.0,
                "SourceParams: crystal length and wavevector must be positive");
        const double length_um = length_mm * 1000.0;
        return {w0_um, std::sqrt(length_um / (3.0 * pump_wavevector_per_um))};
    }

    // Dimensionless mode: choose (w0, b) so the position-basis marginal width
    // equals `sigma` and the Schmidt number equals K.
    static SourceParams from_schmidt(double schmidt, double sigma = 1.0) {
        require(schmidt >= 1.0, "SourceParams: Schmidt number must be >= 1");
        require(sigma > 0.0, "SourceParams: sigma must be positive");
        const double t = std::sqrt(schmidt) + std::sqrt(schmidt - 1.0);  // w0/b
        const double s = 2.0 * sigma / std::sqrt(t * t + 1.0);
        return {t * s, s};
    }
};

// K = (b/w0 + w0/b)^2 / 4
inline double schmidt_number(const SourceParams& p) {
    const double r = p.b / p.w0 + p.w0 / p.b;
    return 0.25 * r * r;
}

// Marginal and conditional widths of one basis, in detector coordinates.
struct BeamStats {
    double sigma;       // marginal width of the detected beam
    double schmidt;     // K
    double sigma_cond;  // conditional width sigma_{2|1}, same frame as sigma
    Basis basis = Basis::position;

    // Matched-basis correlation per axis: +sqrt(1-1/K) for position,
    // -sqrt(1-1/K) for momentum.
    double correlation() const {
        const double rho = std::sqrt(std::max(0.0, 1.0 - 1.0 / schmidt));
        return basis == Basis::position ? rho : -rho;
    }
};

inline BeamStats beam_stats(const SourceParams& p, Basis basis, double scale) {
    require(scale > 0.0, "beam_stats: scale must be positive");
    const double w2 = p.w0 * p.w0;
    const double b2 = p.b * p.b;
    BeamStats s;
    s.schmidt = schmidt_number(p);
    s.basis = basis;
    if (basis == Basis::position) {
        s.sigma = scale * 0.5 * std::sqrt(w2 + b2);
        s.sigma_cond = scale * p.w0 * p.b / std::sqrt(w2 + b2);
    } else {
        s.sigma = scale * 0.5 * std::sqrt(1.0 / w2 + 1.0 / b2);
        s.sigma_cond = scale / std::sqrt(w2 + b2);
    }
    return s;
}

// Isotropic marginal of the detected beam: N exp(-r^2 / 2 sigma^2).
inline double marginal_density(const BeamStats& stats, double r) {
    require(r >= 0.0, "marginal_density: r must be non-negative");
    const double s2 = stats.sigma * stats.sigma;
    return std::exp(-0.5 * r * r / s2) / (two_pi * s2);
}

// Mass inside radius r: 1 - exp(-r^2 / 2 sigma^2).
inline double radial_cdf(const BeamStats& stats, double r) {
    return -std::expm1(-0.5 * r * r / (stats.sigma * stats.sigma));
}

// Optical scale factors mapping source coordinates to detector um, one per
// basis. The momentum factor includes the Fourier-lens conversion.
struct BasisScales {
    double position = 1.0;
    double momentum = 1.0;

    double of(Basis b) const { return b == Basis::position ? position : momentum; }
};

// Momentum scale that gives both bases the same detected beam width.
inline double matched_momentum_scale(const SourceParams& p, double position_scale = 1.0) {
    return position_scale * p.w0 * p.b;
}

inline BasisScales matched_scales(const SourceParams& p, double position_scale = 1.0) {
    return {position_scale, matched_momentum_scale(p, position_scale)};
}

struct PhotonPair {
    Vec2 alice;
    Vec2 bob;
    Basis alice_basis;
    Basis bob_basis;
};

// Draws one pair. Matched position bases are correlated with per-axis sum
// variance w0^2 and difference variance b^2; matched momentum bases are the
// anti-correlated reciprocal analog; mismatched bases are independent
// marginals. Draw order is fixed so results are reproducible per seed.
inline PhotonPair sample_pair(const SourceParams& p, Basis alice_basis, Basis bob_basis,
                              const BasisScales& scales, RandomStream& rng) {
    PhotonPair out;
    out.alice_basis = alice_basis;
    out.bob_basis = bob_basis;
    if (alice_basis == bob_basis) {
        const double scale = scales.of(alice_basis);
        // Sum/difference widths per axis; reciprocal parameters in momentum.
        const double sum_w = (alice_basis == Basis::position) ? p.w0 : 1.0 / p.w0;
        const double diff_w = (alice_basis == Basis::position) ? p.b : 1.0 / p.b;
        const double sx = sum_w * rng.normal();
        const double dx = diff_w * rng.normal();
        const double sy = sum_w * rng.normal();
        const double dy = diff_w * rng.normal();
        out.alice = {scale * 0.5 * (sx + dx), scale * 0.5 * (sy + dy)};
        out.bob = {scale * 0.5 * (sx - dx), scale * 0.5 * (sy - dy)};
    } else {
        const BeamStats sa = beam_stats(p, alice_basis, scales.of(alice_basis));
        const BeamStats sb = beam_stats(p, bob_basis, scales.of(bob_basis));
        out.alice = {sa.sigma * rng.normal(), sa.sigma * rng.normal()};
        out.bob = {sb.sigma * rng.normal(), sb.sigma * rng.normal()};
    }
    return out;
}

// Estimates sigma_{2|1} from matched-basis pairs as the regression residual
// width of bob against alice (bob negated in the momentum basis). Exact for
// the DG at any K, unlike the raw difference width which only works at K >> 1.
inline double conditional_width_estimate(std::span<const PhotonPair> pairs) {
    double n = 0.0;
    double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
    for (const PhotonPair& pr : pairs) {
        if (pr.alice_basis != pr.bob_basis) continue;
        const double sign = (pr.alice_basis == Basis::position) ? 1.0 : -1.0;
        const double a[2] = {pr.alice.x, pr.alice.y};
        const double b[2] = {sign * pr.bob.x, sign * pr.bob.y};
        for (int axis = 0; axis < 2; ++axis) {
            n += 1.0;
            sa += a[axis];
            sb += b[axis];
            saa += a[axis] * a[axis];
            sbb += b[axis] * b[axis];
            sab += a[axis] * b[axis];
        }
    }
    require(n >= 2000.0, "conditional_width_estimate: needs >= 1000 matched-basis pairs");
    const double var_a = (saa - sa * sa / n) / n;
    const double var_b = (sbb - sb * sb / n) / n;
    const double cov = (sab - sa * sb / n) / n;
    const double rho2 = (var_a > 0.0 && var_b > 0.0) ? cov * cov / (var_a * var_b) : 0.0;
    return std::sqrt(std::max(0.0, var_b * (1.0 - std::min(1.0, rho2))));
}

}  // namespace fryum
