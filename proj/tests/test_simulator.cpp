#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fryum/simulator.hpp"

using namespace fryum;

namespace {

const SourceParams reference_source = SourceParams::from_schmidt(104.6);
const BeamStats reference_stats = beam_stats(reference_source, Basis::position, 1.0);
const double reference_rap = 2.0516;

PixelGrid test_grid(double half_extent, double pitch) {
    PixelGrid g;
    g.pitch = pitch;
    const int half = static_cast<int>(std::ceil(half_extent / pitch)) + 1;
    g.width = g.height = 2 * half;
    g.origin = {static_cast<double>(half), static_cast<double>(half)};
    return g;
}

// Grid reaching far into the Gaussian tail so clipping is negligible in the
// statistical checks below.
DetectorModel detector(long frames, double mean_pairs, double efficiency = 1.0,
                       double dark_rate = 0.0) {
    DetectorModel det;
    det.frames = frames;
    det.mean_pairs_per_frame = mean_pairs;
    det.efficiency = efficiency;
    det.dark_rate = dark_rate;
    det.grid = test_grid(5.5 * reference_stats.sigma, reference_stats.sigma_cond / 5.0);
    return det;
}

SimulateOptions sim_options(std::uint64_t seed, int workers = 1) {
    SimulateOptions opts;
    opts.scales = matched_scales(reference_source);
    opts.seed = seed;
    opts.workers = workers;
    return opts;
}

Segmentation banded_wheel(const AngularSpec& spec, double band_multiplier) {
    Segmentation seg = build_segmentation(spec, reference_stats, reference_rap);
    seg = apply_discard_bands(std::move(seg), reference_stats, band_multiplier);
    return equalize_kept_probability(std::move(seg), reference_stats);
}

}  // namespace

TEST_CASE("near-zero pair rate yields only single-pair frames") {
    const FrameBatch batch = simulate_frames(reference_source, detector(100'000, 0.005),
                                             sim_options(2));
    long nonempty = 0, crowded = 0;
    std::size_t i = 0;
    while (i < batch.events.size()) {
        std::size_t j = i;
        while (j < batch.events.size() && batch.events[j].frame == batch.events[i].frame) ++j;
        ++nonempty;
        if (j - i > 2) ++crowded;
        i = j;
    }
    CHECK(nonempty > 300);
    // P(>=2 pairs | >=1 pair) ~ mean/2 = 0.25%
    CHECK(static_cast<double>(crowded) / nonempty < 0.01);
}

TEST_CASE("mean detected photons per half match the Poisson composition") {
    const double mean_pairs = 0.12, efficiency = 0.7, dark_rate = 0.05;
    const long frames = 100'000;
    const FrameBatch batch = simulate_frames(
        reference_source, detector(frames, mean_pairs, efficiency, dark_rate), sim_options(3));
    long alice = 0, bob = 0;
    for (const FrameEvent& ev : batch.events) (ev.party == 0 ? alice : bob)++;
    // detected = pairs * efficiency (minus the grid-tail clip) + darks
    const double expected = mean_pairs * efficiency + dark_rate;
    const double se = std::sqrt(expected / frames);
    CHECK(std::abs(static_cast<double>(alice) / frames - expected) < 3.0 * se + 0.001);
    CHECK(std::abs(static_cast<double>(bob) / frames - expected) < 3.0 * se + 0.001);
}

TEST_CASE("frame batches are byte-identical for any worker count") {
    const DetectorModel det = detector(200'000, 0.1, 0.9, 0.02);
    const FrameBatch a = simulate_frames(reference_source, det, sim_options(77, 1));
    const FrameBatch b = simulate_frames(reference_source, det, sim_options(77, 8));
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        REQUIRE(a.events[i].frame == b.events[i].frame);
        REQUIRE(a.events[i].party == b.events[i].party);
        REQUIRE(a.events[i].basis == b.events[i].basis);
        REQUIRE(a.events[i].x == b.events[i].x);
        REQUIRE(a.events[i].y == b.events[i].y);
    }
}

TEST_CASE("error matrix needs at least two frames") {
    FrameBatch batch;
    batch.n_frames = 1;
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    CHECK_THROWS_AS(error_matrix(batch, seg), std::invalid_argument);
}

TEST_CASE("matched-basis mass concentrates on the diagonal") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    SimulateOptions opts = sim_options(5);
    opts.basis_mode = BasisMode::fixed;  // both parties in the position basis
    const FrameBatch batch = simulate_frames(reference_source, detector(150'000, 0.05), opts);
    const ErrorMatrix e = error_matrix(batch, seg);
    const ErrorMatrix raw = error_matrix(batch, seg, false);
    const Mat& xx = e.block(Basis::position, Basis::position);
    const Mat& xx_raw = raw.block(Basis::position, Basis::position);
    const double off = 1.0 - xx.trace() / xx.sum();
    const double predicted =
        crosstalk_epsilon(predicted_crosstalk(seg, reference_stats, {1'000'000, 9}));
    // residual noise comes from the accidental subtraction: signal plus
    // estimator off-diagonal counts both fluctuate
    const double total = xx.sum() * e.frames();
    const double off_raw = (xx_raw.sum() - xx_raw.trace()) * e.frames();
    const double off_acc = off_raw - (xx.sum() - xx.trace()) * e.frames();
    const double se = std::sqrt(std::max(off_raw + off_acc, 1.0)) / total;
    CHECK(off < predicted + 3.0 * se + 1e-3);
}

TEST_CASE("background correction removes accidental inflation") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 1.0);
    SimulateOptions opts = sim_options(6);
    const long frames = 60'000;
    const FrameBatch low = simulate_frames(reference_source, detector(frames, 0.1), opts);
    const FrameBatch high = simulate_frames(reference_source, detector(frames, 1.0), opts);
    const double low_eps = qder(error_matrix(low, seg)).combined;
    const double high_corrected = qder(error_matrix(high, seg)).combined;
    const double high_raw = qder(error_matrix(high, seg, false)).combined;
    CHECK(high_raw > high_corrected + 0.01);       // accidentals inflate the raw estimate
    CHECK(std::abs(high_corrected - low_eps) < 0.02);  // correction restores the low-rate value
}

TEST_CASE("sifted strings are identical for a sharp conditional") {
    const SourceParams sharp = SourceParams::from_schmidt(4e6);
    const BeamStats stats = beam_stats(sharp, Basis::position, 1.0);
    Segmentation seg = build_segmentation(AngularSpec{1, 6}, stats, reference_rap);
    seg = apply_discard_bands(std::move(seg), stats, 3.0);
    DetectorModel det;
    det.frames = 40'000;
    det.mean_pairs_per_frame = 0.1;
    det.grid = test_grid(reference_rap, stats.sigma_cond);
    SimulateOptions opts;
    opts.scales = matched_scales(sharp);
    opts.seed = 8;
    const FrameBatch batch = simulate_frames(sharp, det, opts);
    const auto [key, stats_out] = sift_key(batch, seg);
    REQUIRE(key.size() > 500);
    CHECK(key.error_rate() == 0.0);
    CHECK(stats_out.both_kept == static_cast<long>(key.size()));
}

TEST_CASE("sift error rate agrees with the matrix QDER") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 1.0);  // thin bands, visible error
    const FrameBatch batch =
        simulate_frames(reference_source, detector(400'000, 0.05), sim_options(9));
    const auto [key, sift_stats] = sift_key(batch, seg);
    const double sift_eps = key.error_rate();
    const double matrix_eps = qder(error_matrix(batch, seg)).combined;
    REQUIRE(key.size() > 2000);
    const double se = std::sqrt(sift_eps * (1.0 - sift_eps) / key.size());
    CHECK(std::abs(sift_eps - matrix_eps) < 3.0 * se + 5e-3);
}

TEST_CASE("sifting keeps half the single-pair frames times the kept mass") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    const long frames = 2'000'000;
    const FrameBatch batch =
        simulate_frames(reference_source, detector(frames, 0.01), sim_options(10));
    const auto [key, sift_stats] = sift_key(batch, seg);
    long nonempty = 0;
    std::size_t i = 0;
    while (i < batch.events.size()) {
        std::size_t j = i;
        while (j < batch.events.size() && batch.events[j].frame == batch.events[i].frame) ++j;
        ++nonempty;
        i = j;
    }
    // half the joint kept mass: basis match probability 1/2 times P(both kept);
    // the Alice-side kept mass p alone overestimates by the partner's band loss
    const double joint = predicted_crosstalk(seg, reference_stats, {1'000'000, 99}).sum();
    const double p = total_kept_probability(seg, reference_stats);
    CHECK(joint < p);
    const double expected = 0.5 * joint;
    const double measured = static_cast<double>(key.size()) / nonempty;
    const double se = std::sqrt(expected * (1.0 - expected) / nonempty);
    CHECK(std::abs(measured - expected) < 3.0 * se + 2e-3);
}

TEST_CASE("multi-photon frames are counted but excluded from the key") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    const FrameBatch batch =
        simulate_frames(reference_source, detector(20'000, 1.5), sim_options(11));
    const auto [key, sift_stats] = sift_key(batch, seg);
    CHECK(sift_stats.multi_photon_frames > 1000);
    CHECK(static_cast<long>(key.size()) <= sift_stats.matched_coincidences);
}

TEST_CASE("measured kept fraction matches the quadrature mass") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 6, 8, 21}, 3.0);
    const FrameBatch batch =
        simulate_frames(reference_source, detector(600'000, 0.05), sim_options(12));
    const auto [key, sift_stats] = sift_key(batch, seg);
    const double p = total_kept_probability(seg, reference_stats);
    const double se =
        std::sqrt(p * (1.0 - p) / std::max<long>(1, sift_stats.matched_coincidences));
    CHECK(std::abs(sift_stats.measured_p() - p) < 3.0 * se);
}

TEST_CASE("measured QDER agrees with the predicted crosstalk at zero dark rate") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 6, 8, 21}, 3.0);
    const FrameBatch batch =
        simulate_frames(reference_source, detector(800'000, 0.05), sim_options(13));
    const ErrorMatrix e = error_matrix(batch, seg);
    const ErrorMatrix raw = error_matrix(batch, seg, false);
    const Qder q = qder(e);
    const double eps_pred =
        crosstalk_epsilon(predicted_crosstalk(seg, reference_stats, {2'000'000, 14}));
    double total = 0.0, off_raw = 0.0, off_corr = 0.0;
    for (int m = 0; m < 2; ++m) {
        const Basis basis = static_cast<Basis>(m);
        total += e.block(basis, basis).sum();
        off_raw += raw.block(basis, basis).sum() - raw.block(basis, basis).trace();
        off_corr += e.block(basis, basis).sum() - e.block(basis, basis).trace();
    }
    const double frames = static_cast<double>(e.frames());
    const double noise = (2.0 * off_raw - off_corr) * frames;  // signal + subtracted counts
    const double se = std::sqrt(std::max(noise, 1.0)) / (total * frames);
    CHECK(std::abs(q.combined - eps_pred) < 3.0 * se + 1e-3);
}

TEST_CASE("background correction is unbiased on dark-dominated batches") {
    // Dark counts only: every coincidence is accidental, so the corrected
    // mismatched-block mass is zero in expectation. Pool counts over seeds and
    // compare against the Poisson-propagated error of the pooled sum.
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 0.5);
    double corrected_sum = 0.0;
    double count_scale = 0.0;  // raw plus subtracted counts, for the error bar
    const long frames = 20'000;
    for (int s = 0; s < 16; ++s) {
        DetectorModel det = detector(frames, 1e-4, 1.0, 0.6);
        const FrameBatch batch = simulate_frames(reference_source, det, sim_options(100 + s));
        const ErrorMatrix e = error_matrix(batch, seg);
        const ErrorMatrix raw = error_matrix(batch, seg, false);
        for (int b : {ErrorMatrix::block_index(Basis::position, Basis::momentum),
                      ErrorMatrix::block_index(Basis::momentum, Basis::position)}) {
            corrected_sum += e.block(b).sum() * frames;
            const double raw_counts = raw.block(b).sum() * frames;
            const double acc_counts = raw_counts - e.block(b).sum() * frames;
            count_scale += raw_counts + acc_counts;
        }
    }
    CHECK(std::abs(corrected_sum) < 3.0 * std::sqrt(std::max(count_scale, 1.0)));
}

TEST_CASE("alice-only discarding keeps every Bob sector") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    const FrameBatch batch =
        simulate_frames(reference_source, detector(120'000, 0.05), sim_options(18));
    const auto [sym_key, sym] = sift_key(batch, seg, DiscardSide::both);
    const auto [one_key, one] = sift_key(batch, seg, DiscardSide::alice_only);
    CHECK(one.alice_kept == sym.alice_kept);          // Alice's veto unchanged
    CHECK(one.both_kept > sym.both_kept);             // Bob no longer drops band events
    CHECK(one_key.size() > sym_key.size());
    // without Bob-side separation the key picks up crosstalk
    CHECK(one_key.error_rate() >= sym_key.error_rate());
    const ErrorMatrix e = error_matrix(batch, seg, true, DiscardSide::alice_only);
    CHECK(e.block(Basis::position, Basis::position).sum() >
          error_matrix(batch, seg).block(Basis::position, Basis::position).sum());
    CHECK(flagged_negative_entries(e).size() <= 2);
}

TEST_CASE("run report ties everything together") {
    const Segmentation seg = banded_wheel(AngularSpec{1, 6}, 3.0);
    DetectorModel det = detector(120'000, 0.08);
    const SimulationReport rep = run_report(reference_source, det, seg, sim_options(15));
    CHECK(rep.rate.d == 7);
    CHECK(rep.rate.p == Catch::Approx(rep.sift.measured_p()));
    CHECK(rep.rate.rate_mod == Catch::Approx(rep.rate.p * rep.rate.rate).margin(1e-12));
    CHECK(rep.sift.matched_coincidences > 0);
    CHECK(rep.matrix.background_corrected());
}

TEST_CASE("event log round trip preserves the batch exactly") {
    const DetectorModel det = detector(5'000, 0.3, 0.8, 0.1);
    const FrameBatch batch = simulate_frames(reference_source, det, sim_options(16));
    const auto path = std::filesystem::temp_directory_path() / "fryum_events_test.bin";
    write_event_log(batch, path.string());
    const FrameBatch back = read_event_log(path.string(), batch.n_frames);
    std::filesystem::remove(path);
    REQUIRE(back.events.size() == batch.events.size());
    for (std::size_t i = 0; i < batch.events.size(); ++i) {
        REQUIRE(back.events[i].frame == batch.events[i].frame);
        REQUIRE(back.events[i].party == batch.events[i].party);
        REQUIRE(back.events[i].basis == batch.events[i].basis);
        REQUIRE(back.events[i].x == batch.events[i].x);
        REQUIRE(back.events[i].y == batch.events[i].y);
    }
    const Segmentation seg = banded_wheel(AngularSpec{1, 5}, 3.0);
    const ErrorMatrix ea = error_matrix(batch, seg);
    const ErrorMatrix eb = error_matrix(back, seg);
    for (int b = 0; b < 4; ++b) CHECK(ea.block(b).data() == eb.block(b).data());
}
