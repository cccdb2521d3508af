#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fryum/biphoton.hpp"
#include "fryum/common.hpp"

namespace fryum {

// Asymptotic secure key rate for d outcomes and dit error ratio eps:
//   log2 d + 2 eps log2(eps/(d-1)) + 2 (1-eps) log2(1-eps)
// with x log2 x -> 0 as x -> 0. May be negative; callers clamp if they must.
inline double secure_rate(int d, double eps) {
    require(d >= 2, "secure_rate: d must be >= 2");
    require(eps >= 0.0 && eps < 1.0, "secure_rate: eps must lie in [0, 1)");
    double r = std::log2(static_cast<double>(d));
    if (eps > 0.0) r += 2.0 * eps * std::log2(eps / (d - 1));
    if (eps < 1.0 && eps > 0.0) r += 2.0 * (1.0 - eps) * std::log2(1.0 - eps);
    return r;
}

// Discard-corrected rate: p * R(d, eps), p the kept fraction of events.
inline double modified_rate(int d, double eps, double p) {
    require(p >= 0.0 && p <= 1.0, "modified_rate: p must lie in [0, 1]");
    return p * secure_rate(d, eps);
}

// Coincidence-probability blocks for the four basis pairs.
class ErrorMatrix {
public:
    ErrorMatrix() = default;
    ErrorMatrix(int d, long frames, bool corrected)
        : d_(d), frames_(frames), corrected_(corrected) {
        for (auto& b : blocks_) b = Mat(d, d);
    }

    static int block_index(Basis alice, Basis bob) {
        return 2 * static_cast<int>(alice) + static_cast<int>(bob);
    }
    static const char* block_name(int idx) {
        static constexpr const char* names[4] = {"xx", "xp", "px", "pp"};
        return names[idx];
    }

    int dimension() const { return d_; }
    long frames() const { return frames_; }
    bool background_corrected() const { return corrected_; }

    Mat& block(Basis alice, Basis bob) { return blocks_[block_index(alice, bob)]; }
    const Mat& block(Basis alice, Basis bob) const { return blocks_[block_index(alice, bob)]; }
    Mat& block(int idx) { return blocks_[idx]; }
    const Mat& block(int idx) const { return blocks_[idx]; }

private:
    int d_ = 0;
    long frames_ = 0;
    bool corrected_ = false;
    std::array<Mat, 4> blocks_{};
};

struct Qder {
    double position = 0.0;
    double momentum = 0.0;
    double combined = 0.0;
};

// QDER per matched basis: 1 - Tr(E^mm) / sum(E^mm), blocks normalized by their
// own mass first. Combined value is the mass-weighted mean of the two bases.
inline Qder qder(const ErrorMatrix& e) {
    Qder out;
    double masses[2];
    double values[2];
    for (int m = 0; m < 2; ++m) {
        const Basis basis = static_cast<Basis>(m);
        const Mat& block = e.block(basis, basis);
        const double mass = block.sum();
        require(mass > 0.0, "qder: matched-basis block has non-positive mass");
        masses[m] = mass;
        values[m] = 1.0 - block.trace() / mass;
    }
    out.position = values[0];
    out.momentum = values[1];
    out.combined = (masses[0] * values[0] + masses[1] * values[1]) / (masses[0] + masses[1]);
    return out;
}

struct RateReport {
    int d = 0;
    Qder eps;
    double p = 0.0;
    double rate = 0.0;      // R(d, eps)
    double rate_mod = 0.0;  // p * R(d, eps)
};

// Corrected estimators can fluctuate below zero on quiet runs; the report
// clamps them into [0, 1] (raw values live in the error matrices) and the
// rate evaluation stays inside the formula's domain.
inline RateReport make_rate_report(int d, const Qder& eps, double p) {
    RateReport r;
    r.d = d;
    r.eps.position = std::clamp(eps.position, 0.0, 1.0);
    r.eps.momentum = std::clamp(eps.momentum, 0.0, 1.0);
    r.eps.combined = std::clamp(eps.combined, 0.0, 1.0);
    r.p = p;
    const double eps_rate = std::min(r.eps.combined, 1.0 - 1e-12);
    r.rate = d >= 2 ? secure_rate(d, eps_rate) : 0.0;
    r.rate_mod = p * r.rate;
    return r;
}

}  // namespace fryum
