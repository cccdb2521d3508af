#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fryum/common.hpp"
#include "fryum/keyrate.hpp"

namespace fryum {

// Uniform-disk packing comparison: circles vs hexagons vs fryum rings, atom
// radius r, discarded areas in units of pi r^2.
struct PackingReport {
    int n = 0;                       // radial segment count
    long count_circle = 0;           // 3n^2 - 3n + 1
    long count_hexagon = 0;          // same lattice, hexagonal atoms
    long count_fryum_bound = 0;      // 1 + sum_k floor(12 pi (k-1)/(pi+2))
    double disc_circle = 0.0;        // 6 (n-1)(n-1/2)
    double disc_hexagon = 0.0;       // (9-b) n^2 - (12-b) n + 4 - b/3, b = 6 sqrt(3)/pi
    double disc_fryum = 0.0;         // floor(12/(pi+2) n(n-1)) + 3 (n-1)^2
    double disc_fryum_loose = 0.0;   // 5.33 n^2 - 8.33 n - 3, floor dropped
    bool hexagon_formula_valid = true;  // the closed form undercounts at n = 1
    double fraction_hexagon = 0.0;   // relative to the circle scheme, n >= 2
    double fraction_fryum = 0.0;
};

inline long centered_hex_count(int n) { return 3L * n * n - 3L * n + 1; }

// Outer radius of the k-th radial segment in the circle scheme, units of r.
inline double circle_ring_radius(int k) { return 3.0 * k - 2.0; }

// Angular segment count of fryum annulus k (k >= 2), uniform distribution.
inline long fryum_ring_segments(int k) {
    return static_cast<long>(std::floor(12.0 * std::numbers::pi * (k - 1) /
                                        (std::numbers::pi + 2.0)));
}

inline PackingReport packing_report(int n) {
    require(n >= 1, "packing_report: n must be >= 1");
    PackingReport rep;
    rep.n = n;
    rep.count_circle = centered_hex_count(n);
    rep.count_hexagon = rep.count_circle;
    rep.count_fryum_bound = 1;
    for (int k = 2; k <= n; ++k) rep.count_fryum_bound += fryum_ring_segments(k);
    rep.disc_circle = 6.0 * (n - 1) * (n - 0.5);
    const double beta = 6.0 * std::sqrt(3.0) / std::numbers::pi;
    rep.disc_hexagon = (9.0 - beta) * n * n - (12.0 - beta) * n + 4.0 - beta / 3.0;
    rep.hexagon_formula_valid = n >= 2;
    rep.disc_fryum = std::floor(12.0 / (std::numbers::pi + 2.0) * n * (n - 1.0)) +
                     3.0 * (n - 1.0) * (n - 1.0);
    rep.disc_fryum_loose = 5.33 * n * n - 8.33 * n - 3.0;
    if (n >= 2) {
        rep.fraction_hexagon = rep.disc_hexagon / rep.disc_circle;
        rep.fraction_fryum = rep.disc_fryum / rep.disc_circle;
    }
    return rep;
}

inline PackingReport circle_packing(int n) { return packing_report(n); }
inline PackingReport hex_packing(int n) { return packing_report(n); }
inline PackingReport fryum_packing_bound(int n) { return packing_report(n); }

// --- uniform-grid border error (Appendix-style pixel counting) ---------------

struct GridSpec {
    int width = 0;
    int height = 0;
    std::vector<int> labels;  // row-major macropixel label per pixel

    int at(int ix, int iy) const { return labels[static_cast<std::size_t>(iy) * width + ix]; }

    int macropixels() const {
        int max_label = -1;
        for (int l : labels) max_label = std::max(max_label, l);
        return max_label + 1;
    }

    void validate() const {
        require(width > 0 && height > 0, "GridSpec: empty grid");
        require(static_cast<std::size_t>(width) * height == labels.size(),
                "GridSpec: label count does not match dimensions");
        std::set<int> seen(labels.begin(), labels.end());
        require(!seen.empty() && *seen.begin() == 0, "GridSpec: labels must start at 0");
        require(*seen.rbegin() == static_cast<int>(seen.size()) - 1,
                "GridSpec: labels must be contiguous from 0");
    }
};

// Number of in-grid edge neighbors belonging to a different macropixel.
inline int foreign_edge_count(const GridSpec& g, int ix, int iy) {
    static constexpr int dx[4] = {1, -1, 0, 0};
    static constexpr int dy[4] = {0, 0, 1, -1};
    const int self = g.at(ix, iy);
    int n = 0;
    for (int k = 0; k < 4; ++k) {
        const int nx = ix + dx[k];
        const int ny = iy + dy[k];
        if (nx < 0 || ny < 0 || nx >= g.width || ny >= g.height) continue;
        if (g.at(nx, ny) != self) ++n;
    }
    return n;
}

// Per-pixel mistag probability by shared-border class, from the quarter-square
// weights of the canonical boundary patterns: 0, 1/4, 7/16, 3/4 for 0/1/2/4
// shared borders; three shared borders score as the two-border case.
inline double border_error_weight(int foreign_edges) {
    switch (foreign_edges) {
        case 0: return 0.0;
        case 1: return 0.25;
        case 2: return 7.0 / 16.0;
        case 3: return 7.0 / 16.0;
        default: return 0.75;
    }
}

struct BorderErrorBreakdown {
    double epsilon = 0.0;
    std::array<long, 5> pixels_by_class{};  // indexed by foreign edge count
};

inline BorderErrorBreakdown uniform_grid_border_error_breakdown(const GridSpec& g) {
    g.validate();
    BorderErrorBreakdown out;
    double total = 0.0;
    for (int iy = 0; iy < g.height; ++iy)
        for (int ix = 0; ix < g.width; ++ix) {
            const int f = foreign_edge_count(g, ix, iy);
            ++out.pixels_by_class[f];
            total += border_error_weight(f);
        }
    out.epsilon = total / (static_cast<double>(g.width) * g.height);
    return out;
}

inline double uniform_grid_border_error(const GridSpec& g) {
    return uniform_grid_border_error_breakdown(g).epsilon;
}

struct GridRate {
    int d = 0;
    double eps = 0.0;
    double p = 0.0;
    double rate_mod = 0.0;
};

// With border discarding: drop every pixel that shares an edge with a foreign
// macropixel, error goes to zero and p is the kept pixel fraction. Without:
// keep everything and pay the border error.
inline GridRate discarded_grid_rate(const GridSpec& g, bool border_discard) {
    g.validate();
    GridRate out;
    out.d = g.macropixels();
    const long n_pixels = static_cast<long>(g.width) * g.height;
    if (border_discard) {
        long kept = 0;
        for (int iy = 0; iy < g.height; ++iy)
            for (int ix = 0; ix < g.width; ++ix)
                if (foreign_edge_count(g, ix, iy) == 0) ++kept;
        require(kept > 0, "discarded_grid_rate: all pixels discarded");
        out.eps = 0.0;
        out.p = static_cast<double>(kept) / n_pixels;
    } else {
        out.eps = uniform_grid_border_error(g);
        out.p = 1.0;
    }
    out.rate_mod = out.d >= 2 ? modified_rate(out.d, out.eps, out.p) : 0.0;
    return out;
}

// --- grid CSV I/O -------------------------------------------------------------

inline GridSpec read_grid_csv(std::istream& in) {
    GridSpec g;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream row(line);
        std::string cell;
        int count = 0;
        while (std::getline(row, cell, ',')) {
            g.labels.push_back(std::stoi(cell));
            ++count;
        }
        if (g.width == 0) g.width = count;
        require(count == g.width, "read_grid_csv: ragged row");
        ++g.height;
    }
    g.validate();
    return g;
}

inline GridSpec read_grid_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_grid_csv: cannot open " + path);
    return read_grid_csv(in);
}

}  // namespace fryum
