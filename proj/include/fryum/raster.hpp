#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fryum/common.hpp"
#include "fryum/segmentation.hpp"

namespace fryum {

// Detector pixel grid. `origin` is the beam center in pixel coordinates.
struct PixelGrid {
    double pitch = 1.0;  // um per pixel
    int width = 0;
    int height = 0;
    Vec2 origin{};  // pixel coords of the beam center, e.g. {w/2, h/2}

    Vec2 pixel_center(int ix, int iy) const {
        return {(ix + 0.5 - origin.x) * pitch, (iy + 0.5 - origin.y) * pitch};
    }

    bool contains(Vec2 world) const {
        const double x = world.x / pitch + origin.x;
        const double y = world.y / pitch + origin.y;
        return x >= 0.0 && x < width && y >= 0.0 && y < height;
    }

    bool covers_aperture(double r_ap) const {
        return (-origin.x * pitch <= -r_ap) && ((width - origin.x) * pitch >= r_ap) &&
               (-origin.y * pitch <= -r_ap) && ((height - origin.y) * pitch >= r_ap);
    }
};

inline constexpr std::uint16_t label_discarded = 65534;
inline constexpr std::uint16_t label_outside = 65535;

struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> labels;  // row-major, y * width + x
    bool coarse_warning = false;        // pitch > sigma_cond

    std::uint16_t at(int ix, int iy) const {
        return labels[static_cast<std::size_t>(iy) * width + ix];
    }
};

inline std::uint16_t encode_label(MacropixelId id) {
    switch (id.kind) {
        case MacropixelId::Kind::macropixel: return static_cast<std::uint16_t>(id.linear);
        case MacropixelId::Kind::discarded: return label_discarded;
        default: return label_outside;
    }
}

// Labels every pixel by classifying its center. Deterministic for fixed inputs.
inline LabelMap rasterize(const Segmentation& seg, const PixelGrid& grid) {
    require(grid.pitch > 0.0 && grid.width > 0 && grid.height > 0, "rasterize: bad grid");
    require(grid.covers_aperture(seg.aperture()), "rasterize: grid does not cover the aperture");
    LabelMap map;
    map.width = grid.width;
    map.height = grid.height;
    map.coarse_warning = seg.sigma_cond > 0.0 && grid.pitch > seg.sigma_cond;
    map.labels.resize(static_cast<std::size_t>(grid.width) * grid.height);
    for (int iy = 0; iy < grid.height; ++iy)
        for (int ix = 0; ix < grid.width; ++ix)
            map.labels[static_cast<std::size_t>(iy) * grid.width + ix] =
                encode_label(seg.classify(grid.pixel_center(ix, iy)));
    return map;
}

// 16-bit binary PGM, big-endian sample order per the format.
inline void write_pgm16(const LabelMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_pgm16: cannot open " + path);
    out << "P5\n" << map.width << " " << map.height << "\n65535\n";
    for (std::uint16_t v : map.labels) {
        const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
        out.write(bytes, 2);
    }
}

inline void write_label_csv(const LabelMap& map, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "write_label_csv: cannot open " + path);
    for (int iy = 0; iy < map.height; ++iy) {
        for (int ix = 0; ix < map.width; ++ix) {
            if (ix) out << ',';
            out << map.at(ix, iy);
        }
        out << '\n';
    }
}

}  // namespace fryum
