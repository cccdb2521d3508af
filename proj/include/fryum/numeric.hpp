#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>

namespace fryum {

// Adaptive Gauss-Kronrod on [a, b].
template <typename F>
double integrate(const F& f, double a, double b, double rel_tol = 1e-12) {
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 12, rel_tol);
}

// Root of a continuous monotone-ish f on [lo, hi]; f(lo) and f(hi) must bracket.
template <typename F>
double find_root(const F& f, double lo, double hi, int digit_bits = 50) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo < 0.0) == (fhi < 0.0))
        throw std::invalid_argument("find_root: endpoints do not bracket a root");
    boost::math::tools::eps_tolerance<double> tol(digit_bits);
    std::uintmax_t iters = 200;
    auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, iters);
    return 0.5 * (r.first + r.second);
}

// Survival function of the chi-squared distribution.
inline double chi_squared_sf(double stat, double dof) {
    boost::math::chi_squared_distribution<double> dist(dof);
    return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace fryum
