#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fryum/biphoton.hpp"
#include "fryum/common.hpp"
#include "fryum/keyrate.hpp"
#include "fryum/parallel.hpp"
#include "fryum/raster.hpp"
#include "fryum/rng.hpp"
#include "fryum/segmentation.hpp"

namespace fryum {

struct DetectorModel {
    double efficiency = 1.0;            // per-photon survival probability
    double dark_rate = 0.0;             // expected dark counts per frame per half
    double mean_pairs_per_frame = 0.1;  // Poisson mean of generated pairs
    long frames = 0;
    PixelGrid grid;
};

enum class BasisMode : std::uint8_t {
    per_pair,  // each party draws uniformly per pair (BBM92)
    fixed      // bases fixed for the whole batch (per-run lens placement)
};

// Which side drops events in the discard bands. Symmetric discarding is the
// default; alice_only reproduces a sender-side-only veto, Bob then keeps his
// full sectors.
enum class DiscardSide : std::uint8_t { both, alice_only };

struct SimulateOptions {
    BasisMode basis_mode = BasisMode::per_pair;
    Basis fixed_alice = Basis::position;
    Basis fixed_bob = Basis::position;
    DiscardSide discard_side = DiscardSide::both;
    BasisScales scales{};
    std::uint64_t seed = 1;
    int workers = 1;
};

// One detected event; layout mirrors the binary event-log record.
struct FrameEvent {
    std::uint32_t frame = 0;
    std::uint8_t party = 0;  // 0 Alice, 1 Bob
    std::uint8_t basis = 0;  // 0 position, 1 momentum
    float x = 0.0f;
    float y = 0.0f;
};

struct FrameBatch {
    long n_frames = 0;
    std::uint64_t seed = 0;
    std::vector<FrameEvent> events;  // ordered by frame, then generation order
};

namespace detail {

inline void simulate_one_frame(const SourceParams& src, const DetectorModel& det,
                               const SimulateOptions& opts, std::uint32_t frame,
                               std::vector<FrameEvent>& out) {
    RandomStream rng = RandomStream::substream(opts.seed, frame);
    const int pairs = rng.poisson(det.mean_pairs_per_frame);
    for (int i = 0; i < pairs; ++i) {
        Basis alice_basis = opts.fixed_alice;
        Basis bob_basis = opts.fixed_bob;
        if (opts.basis_mode == BasisMode::per_pair) {
            alice_basis = rng.bernoulli(0.5) ? Basis::momentum : Basis::position;
            bob_basis = rng.bernoulli(0.5) ? Basis::momentum : Basis::position;
        }
        const PhotonPair pair = sample_pair(src, alice_basis, bob_basis, opts.scales, rng);
        const bool keep_a = rng.bernoulli(det.efficiency);
        const bool keep_b = rng.bernoulli(det.efficiency);
        if (keep_a && det.grid.contains(pair.alice))
            out.push_back({frame, 0, static_cast<std::uint8_t>(alice_basis),
                           static_cast<float>(pair.alice.x), static_cast<float>(pair.alice.y)});
        if (keep_b && det.grid.contains(pair.bob))
            out.push_back({frame, 1, static_cast<std::uint8_t>(bob_basis),
                           static_cast<float>(pair.bob.x), static_cast<float>(pair.bob.y)});
    }
    for (int party = 0; party < 2; ++party) {
        const int darks = rng.poisson(det.dark_rate);
        for (int i = 0; i < darks; ++i) {
            const double x = (rng.uniform() * det.grid.width - det.grid.origin.x) * det.grid.pitch;
            const double y = (rng.uniform() * det.grid.height - det.grid.origin.y) * det.grid.pitch;
            const Basis basis = rng.bernoulli(0.5) ? Basis::momentum : Basis::position;
            out.push_back({frame, static_cast<std::uint8_t>(party),
                           static_cast<std::uint8_t>(basis), static_cast<float>(x),
                           static_cast<float>(y)});
        }
    }
}

}  // namespace detail

// Frame-based Monte Carlo of the source + detector. Each frame derives its own
// substream from (seed, frame index), so the batch is byte-identical for any
// worker count.
inline FrameBatch simulate_frames(const SourceParams& src, const DetectorModel& det,
                                  const SimulateOptions& opts) {
    require(det.frames >= 1, "simulate_frames: needs at least one frame");
    require(det.efficiency > 0.0 && det.efficiency <= 1.0, "simulate_frames: bad efficiency");
    require(det.dark_rate >= 0.0, "simulate_frames: bad dark rate");
    require(det.mean_pairs_per_frame > 0.0, "simulate_frames: bad pair rate");
    FrameBatch batch;
    batch.n_frames = det.frames;
    batch.seed = opts.seed;
    constexpr long chunk = 1 << 16;
    const long n_chunks = (det.frames + chunk - 1) / chunk;
    std::vector<std::vector<FrameEvent>> parts(n_chunks);
    parallel_for(static_cast<std::size_t>(n_chunks), opts.workers, [&](std::size_t ci) {
        const long lo = static_cast<long>(ci) * chunk;
        const long hi = std::min(det.frames, lo + chunk);
        auto& local = parts[ci];
        for (long f = lo; f < hi; ++f)
            detail::simulate_one_frame(src, det, opts, static_cast<std::uint32_t>(f), local);
    });
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    batch.events.reserve(total);
    for (auto& p : parts) batch.events.insert(batch.events.end(), p.begin(), p.end());
    return batch;
}

// Momentum-basis coordinates are inverted before labeling so matched-basis
// sifting is label identity in both bases. With alice_only discarding Bob is
// labeled by pure geometry.
inline MacropixelId classify_event(const Segmentation& seg, const FrameEvent& ev,
                                   DiscardSide side = DiscardSide::both) {
    Vec2 p{ev.x, ev.y};
    if (ev.party == 1 && static_cast<Basis>(ev.basis) == Basis::momentum) p = -p;
    if (ev.party == 1 && side == DiscardSide::alice_only) return seg.classify_unbanded(p);
    return seg.classify(p);
}

namespace detail {

struct FrameCounts {
    std::uint32_t frame = 0;
    // (basis, macropixel) pairs per party; multiplicity by repetition.
    std::vector<std::pair<int, int>> alice, bob;
};

inline std::vector<FrameCounts> tag_frames(const FrameBatch& batch, const Segmentation& seg,
                                           DiscardSide side) {
    std::vector<FrameCounts> tagged;
    for (const FrameEvent& ev : batch.events) {
        if (tagged.empty() || tagged.back().frame != ev.frame) {
            tagged.push_back({});
            tagged.back().frame = ev.frame;
        }
        const MacropixelId id = classify_event(seg, ev, side);
        if (!id.is_macropixel()) continue;  // sentinels never enter the matrix
        auto& list = ev.party == 0 ? tagged.back().alice : tagged.back().bob;
        list.emplace_back(ev.basis, id.linear);
    }
    return tagged;
}

}  // namespace detail

// Coincidence-count matrix with next-frame background correction:
//   E_ij^{mm'} = (1/N) sum_n [ C_{n,i}^m B_{n,j}^{m'} - C_{n,i}^m B_{n+1,j}^{m'} ].
// The shifted index wraps so every frame contributes one accidental term.
inline ErrorMatrix error_matrix(const FrameBatch& batch, const Segmentation& seg,
                                bool background_correction = true,
                                DiscardSide side = DiscardSide::both) {
    require(batch.n_frames >= 2, "error_matrix: needs at least two frames");
    const int d = seg.dimension();
    const auto tagged = detail::tag_frames(batch, seg, side);
    std::array<std::vector<std::int64_t>, 4> signal;
    std::array<std::vector<std::int64_t>, 4> accidental;
    for (int b = 0; b < 4; ++b) {
        signal[b].assign(static_cast<std::size_t>(d) * d, 0);
        accidental[b].assign(static_cast<std::size_t>(d) * d, 0);
    }
    const auto accumulate = [&](std::array<std::vector<std::int64_t>, 4>& acc,
                                const detail::FrameCounts& a, const detail::FrameCounts& b) {
        for (const auto& [ma, ia] : a.alice)
            for (const auto& [mb, ib] : b.bob)
                ++acc[2 * ma + mb][static_cast<std::size_t>(ia) * d + ib];
    };
    // Map frame -> tagged index for the shifted lookup.
    for (std::size_t t = 0; t < tagged.size(); ++t) {
        accumulate(signal, tagged[t], tagged[t]);
        const std::uint32_t next =
            (tagged[t].frame + 1 == static_cast<std::uint32_t>(batch.n_frames))
                ? 0u
                : tagged[t].frame + 1;
        // events are frame-ordered; the shifted partner is adjacent or absent
        const detail::FrameCounts* partner = nullptr;
        if (t + 1 < tagged.size() && tagged[t + 1].frame == next) partner = &tagged[t + 1];
        if (next == 0 && !tagged.empty() && tagged.front().frame == 0) partner = &tagged.front();
        if (partner) accumulate(accidental, tagged[t], *partner);
    }
    ErrorMatrix e(d, batch.n_frames, background_correction);
    const double norm = static_cast<double>(batch.n_frames);
    for (int b = 0; b < 4; ++b)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * d + j;
                double v = static_cast<double>(signal[b][idx]);
                if (background_correction) v -= static_cast<double>(accidental[b][idx]);
                e.block(b)(i, j) = v / norm;
            }
    return e;
}

// Entries more than five standard errors below zero, block-major.
inline std::vector<std::array<int, 3>> flagged_negative_entries(const ErrorMatrix& e) {
    std::vector<std::array<int, 3>> out;
    const int d = e.dimension();
    for (int b = 0; b < 4; ++b) {
        const Mat& m = e.block(b);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                const double counts = std::abs(m(i, j)) * e.frames();
                const double se = std::sqrt(std::max(counts, 1.0)) / e.frames();
                if (m(i, j) < -5.0 * se) out.push_back({b, i, j});
            }
    }
    return out;
}

struct SiftedKey {
    std::vector<std::uint16_t> alice;
    std::vector<std::uint16_t> bob;
    std::vector<std::uint8_t> basis;

    std::size_t size() const { return alice.size(); }

    double error_rate() const {
        if (alice.empty()) return 0.0;
        std::size_t bad = 0;
        for (std::size_t i = 0; i < alice.size(); ++i) bad += alice[i] != bob[i];
        return static_cast<double>(bad) / static_cast<double>(alice.size());
    }
};

struct SiftStats {
    long matched_coincidences = 0;  // 1+1 frames with matching bases
    long alice_kept = 0;            // of those, Alice in a kept macropixel
    long both_kept = 0;             // of those, both in kept macropixels
    long multi_photon_frames = 0;   // nonempty frames that are not 1+1

    // Kept fraction of matched-basis coincidences, Alice side; this is the
    // empirical counterpart of the quadrature kept mass p.
    double measured_p() const {
        return matched_coincidences > 0
                   ? static_cast<double>(alice_kept) / static_cast<double>(matched_coincidences)
                   : 0.0;
    }
};

// Keeps frames with exactly one detected photon per half, matching bases and
// both photons in kept macropixels. Multi-photon frames are counted but never
// contribute dits.
inline std::pair<SiftedKey, SiftStats> sift_key(const FrameBatch& batch, const Segmentation& seg,
                                                DiscardSide side = DiscardSide::both) {
    SiftedKey key;
    SiftStats stats;
    std::size_t i = 0;
    const auto& ev = batch.events;
    while (i < ev.size()) {
        std::size_t j = i;
        while (j < ev.size() && ev[j].frame == ev[i].frame) ++j;
        int n_alice = 0, n_bob = 0;
        std::size_t ia = 0, ib = 0;
        for (std::size_t k = i; k < j; ++k) {
            if (ev[k].party == 0) {
                ++n_alice;
                ia = k;
            } else {
                ++n_bob;
                ib = k;
            }
        }
        if (n_alice == 1 && n_bob == 1) {
            if (ev[ia].basis == ev[ib].basis) {
                ++stats.matched_coincidences;
                const MacropixelId a = classify_event(seg, ev[ia], side);
                const MacropixelId b = classify_event(seg, ev[ib], side);
                if (a.is_macropixel()) ++stats.alice_kept;
                if (a.is_macropixel() && b.is_macropixel()) {
                    ++stats.both_kept;
                    key.alice.push_back(static_cast<std::uint16_t>(a.linear));
                    key.bob.push_back(static_cast<std::uint16_t>(b.linear));
                    key.basis.push_back(ev[ia].basis);
                }
            }
        } else if (n_alice > 1 || n_bob > 1) {
            ++stats.multi_photon_frames;
        }
        i = j;
    }
    return {std::move(key), std::move(stats)};
}

struct SimulationReport {
    RateReport rate;
    ErrorMatrix matrix;
    SiftStats sift;
    SiftedKey key;
};

// End to end: simulate, correct, estimate QDER, sift, score.
inline SimulationReport run_report(const SourceParams& src, const DetectorModel& det,
                                   const Segmentation& seg, const SimulateOptions& opts) {
    SimulationReport rep;
    const FrameBatch batch = simulate_frames(src, det, opts);
    rep.matrix = error_matrix(batch, seg, true, opts.discard_side);
    auto [key, stats] = sift_key(batch, seg, opts.discard_side);
    rep.key = std::move(key);
    rep.sift = stats;
    rep.rate = make_rate_report(seg.dimension(), qder(rep.matrix), stats.measured_p());
    return rep;
}

// --- binary event log --------------------------------------------------------
// Record: u32 frame, u8 party, u8 basis, f32 x, f32 y, little-endian.

namespace detail {

inline void put_u32le(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32le(std::string& buf, float f) {
    put_u32le(buf, std::bit_cast<std::uint32_t>(f));
}

}  // namespace detail

inline void write_event_log(const FrameBatch& batch, const std::string& path) {
    std::string buf;
    buf.reserve(batch.events.size() * 14);
    for (const FrameEvent& ev : batch.events) {
        detail::put_u32le(buf, ev.frame);
        buf.push_back(static_cast<char>(ev.party));
        buf.push_back(static_cast<char>(ev.basis));
        detail::put_f32le(buf, ev.x);
        detail::put_f32le(buf, ev.y);
    }
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_event_log: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline FrameBatch read_event_log(const std::string& path, long n_frames) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_event_log: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(buf.size() % 14 == 0, "read_event_log: truncated record");
    FrameBatch batch;
    batch.n_frames = n_frames;
    batch.events.resize(buf.size() / 14);
    const auto get_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[off + i]);
        return v;
    };
    for (std::size_t r = 0; r < batch.events.size(); ++r) {
        const std::size_t off = r * 14;
        FrameEvent& ev = batch.events[r];
        ev.frame = get_u32(off);
        ev.party = static_cast<std::uint8_t>(buf[off + 4]);
        ev.basis = static_cast<std::uint8_t>(buf[off + 5]);
        ev.x = std::bit_cast<float>(get_u32(off + 6));
        ev.y = std::bit_cast<float>(get_u32(off + 10));
    }
    return batch;
}

}  // namespace fryum
