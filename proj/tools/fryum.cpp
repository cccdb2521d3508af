// Command-line frontend: optimize / simulate / tiling / border-error / sample.
// Exit codes: 0 success, 2 config or parse error, 3 empty result, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fryum/fryum.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double display_gamma = 0.4;  // power-law scaling recorded for plotting parity

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyResult : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Resolved run configuration; every output embeds the json it came from.
struct RunConfig {
    fryum::SourceParams source{1.0, 1.0};
    fryum::BasisScales scales;
    double sigma = 0.0;  // position-basis detected beam width
    double r_ap = 0.0;
    fryum::ValidityRules rules;
    int n_lo = 2;
    int n_hi = 9;
    fryum::EpsilonMode eps_mode = fryum::EpsilonMode::crosstalk;
    long crosstalk_samples = 1'000'000;
    long ranking_samples = 30'000;
    double pitch = 0.0;
    long frames = 100'000;
    double mean_pairs_per_frame = 0.1;
    double efficiency = 1.0;
    double dark_rate = 0.0;
    fryum::BasisMode basis_mode = fryum::BasisMode::per_pair;
    fryum::Basis fixed_alice = fryum::Basis::position;
    fryum::Basis fixed_bob = fryum::Basis::position;
    fryum::DiscardSide discard_side = fryum::DiscardSide::both;
    std::uint64_t seed = 1;
    int workers = 1;
    ordered_json resolved;

    fryum::BeamStats stats() const {
        return fryum::beam_stats(source, fryum::Basis::position, scales.position);
    }
};

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("cannot open config file: " + path);
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

// Applies --set key.path=value overrides onto the raw config.
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        const std::string path = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // plain string
        }
        json* node = &cfg;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot - start);
            if (key.empty()) throw ConfigError("--set has an empty key segment: " + kv);
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
}

fryum::Basis parse_basis(const std::string& s) {
    if (s == "position" || s == "x") return fryum::Basis::position;
    if (s == "momentum" || s == "p") return fryum::Basis::momentum;
    throw ConfigError("unknown basis: " + s);
}

fryum::AzimuthalReference parse_azimuthal_reference(const std::string& s) {
    if (s == "keptInner") return fryum::AzimuthalReference::kept_inner;
    if (s == "inner") return fryum::AzimuthalReference::inner;
    if (s == "mean") return fryum::AzimuthalReference::mean;
    if (s == "outer") return fryum::AzimuthalReference::outer;
    throw ConfigError("unknown azimuthalReference: " + s);
}

RunConfig resolve_config(const json& cfg) {
    RunConfig rc;
    try {
        const json& source = cfg.at("source");
        const bool has_k = source.contains("K");
        const bool has_b = source.contains("b_um");
        const bool has_crystal = source.contains("crystalLength_mm");
        if (has_k + has_b + has_crystal != 1)
            throw ConfigError("source: exactly one of K, b_um, crystalLength_mm forms required");
        if (has_k) {
            rc.source = fryum::SourceParams::from_schmidt(source.at("K").get<double>());
        } else if (has_b) {
            rc.source = fryum::SourceParams(source.at("w0_um").get<double>(),
                                            source.at("b_um").get<double>());
        } else {
            rc.source = fryum::SourceParams::from_crystal(
                source.at("crystalLength_mm").get<double>(),
                source.at("pumpWavevector_per_um").get<double>(), source.at("w0_um").get<double>());
        }
        rc.scales.position = 1.0;
        rc.scales.momentum = fryum::matched_momentum_scale(rc.source, 1.0);
        if (cfg.contains("basisScales")) {
            const json& bs = cfg.at("basisScales");
            if (bs.contains("position")) rc.scales.position = bs.at("position").get<double>();
            if (bs.contains("momentum") && bs.at("momentum").is_number())
                rc.scales.momentum = bs.at("momentum").get<double>();
            else
                rc.scales.momentum = fryum::matched_momentum_scale(rc.source, rc.scales.position);
        }
        rc.sigma = rc.stats().sigma;

        const json& ap = cfg.at("aperture");
        if (ap.contains("r_ap_um"))
            rc.r_ap = ap.at("r_ap_um").get<double>();
        else
            rc.r_ap = ap.at("r_ap_over_sigma").get<double>() * rc.sigma;
        if (rc.r_ap <= 0.0) throw ConfigError("aperture must be positive");

        if (cfg.contains("rules")) {
            const json& rules = cfg.at("rules");
            rc.rules.band_multiplier = rules.value("bandMultiplier", 3.0);
            if (rules.contains("Nrange")) {
                rc.n_lo = rules.at("Nrange").at(0).get<int>();
                rc.n_hi = rules.at("Nrange").at(1).get<int>();
            }
            if (rules.contains("azimuthalReference"))
                rc.rules.azimuthal_reference =
                    parse_azimuthal_reference(rules.at("azimuthalReference").get<std::string>());
            if (rules.contains("minRadialGap_um"))
                rc.rules.min_radial_gap = rules.at("minRadialGap_um").get<double>();
            if (rules.contains("minAzimuthalGap_um"))
                rc.rules.min_azimuthal_gap = rules.at("minAzimuthalGap_um").get<double>();
        }
        if (cfg.contains("crosstalk")) {
            const json& ct = cfg.at("crosstalk");
            if (ct.value("mode", "crosstalk") == std::string("bound027"))
                rc.eps_mode = fryum::EpsilonMode::bound027;
            rc.crosstalk_samples = ct.value("samples", rc.crosstalk_samples);
            rc.ranking_samples = ct.value("rankingSamples", rc.ranking_samples);
        }
        if (cfg.contains("detector")) {
            const json& det = cfg.at("detector");
            rc.pitch = det.value("pitch_um", 0.0);
            rc.frames = det.value("frames", rc.frames);
            rc.mean_pairs_per_frame = det.value("meanPairsPerFrame", rc.mean_pairs_per_frame);
            rc.efficiency = det.value("efficiency", rc.efficiency);
            rc.dark_rate = det.value("darkRate", rc.dark_rate);
        }
        if (cfg.contains("simulate")) {
            const json& sim = cfg.at("simulate");
            if (sim.value("basisMode", "perPair") == std::string("fixed"))
                rc.basis_mode = fryum::BasisMode::fixed;
            rc.fixed_alice = parse_basis(sim.value("fixedAlice", "position"));
            rc.fixed_bob = parse_basis(sim.value("fixedBob", "position"));
            const std::string side = sim.value("discardSide", "both");
            if (side == "aliceOnly")
                rc.discard_side = fryum::DiscardSide::alice_only;
            else if (side != "both")
                throw ConfigError("unknown discardSide: " + side);
        }
        rc.seed = cfg.value("seed", 1ull);
        rc.workers = cfg.value("workers", 1);
        if (rc.workers < 1) throw ConfigError("workers must be >= 1");
        if (rc.pitch <= 0.0) rc.pitch = rc.stats().sigma_cond / 5.0;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config error: ") + e.what());
    }
    rc.resolved = ordered_json{
        {"source", {{"w0_um", rc.source.w0}, {"b_um", rc.source.b},
                    {"K", fryum::schmidt_number(rc.source)}}},
        {"basisScales", {{"position", rc.scales.position}, {"momentum", rc.scales.momentum}}},
        {"aperture", {{"r_ap_um", rc.r_ap}, {"r_ap_over_sigma", rc.r_ap / rc.sigma}}},
        {"rules",
         {{"bandMultiplier", rc.rules.band_multiplier},
          {"Nrange", {rc.n_lo, rc.n_hi}},
          {"azimuthalReference",
           rc.rules.azimuthal_reference == fryum::AzimuthalReference::kept_inner ? "keptInner"
           : rc.rules.azimuthal_reference == fryum::AzimuthalReference::inner    ? "inner"
           : rc.rules.azimuthal_reference == fryum::AzimuthalReference::mean     ? "mean"
                                                                                 : "outer"},
          {"minRadialGap_um", rc.rules.radial_gap(rc.stats())},
          {"minAzimuthalGap_um", rc.rules.azimuthal_gap(rc.stats())}}},
        {"crosstalk",
         {{"mode", fryum::to_string(rc.eps_mode)},
          {"samples", rc.crosstalk_samples},
          {"rankingSamples", rc.ranking_samples}}},
        {"detector",
         {{"pitch_um", rc.pitch},
          {"frames", rc.frames},
          {"meanPairsPerFrame", rc.mean_pairs_per_frame},
          {"efficiency", rc.efficiency},
          {"darkRate", rc.dark_rate}}},
        {"simulate",
         {{"basisMode", rc.basis_mode == fryum::BasisMode::per_pair ? "perPair" : "fixed"},
          {"fixedAlice", fryum::to_string(rc.fixed_alice)},
          {"fixedBob", fryum::to_string(rc.fixed_bob)},
          {"discardSide",
           rc.discard_side == fryum::DiscardSide::both ? "both" : "aliceOnly"}}},
        {"seed", rc.seed}};
    // worker count is execution infrastructure: outputs must not depend on it
    return rc;
}

std::uint64_t config_hash(const ordered_json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string angular_to_string(const fryum::AngularSpec& a) {
    std::string s;
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        if (i) s += '-';
        s += std::to_string(a.counts[i]);
    }
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

ordered_json rate_report_json(const fryum::RateReport& r) {
    return ordered_json{{"d", r.d},
                        {"epsilon",
                         {{"position", r.eps.position},
                          {"momentum", r.eps.momentum},
                          {"combined", r.eps.combined}}},
                        {"p", r.p},
                        {"R", r.rate},
                        {"Rmod", r.rate_mod}};
}

// Reaches past the aperture and well into the beam tail; a detector cut close
// to the aperture would bias coincidence statistics toward the beam center.
fryum::PixelGrid make_grid(const RunConfig& rc) {
    fryum::PixelGrid grid;
    grid.pitch = rc.pitch;
    const double extent = std::max(1.1 * rc.r_ap, 4.5 * rc.sigma);
    const int half = static_cast<int>(std::ceil(extent / rc.pitch)) + 1;
    grid.width = grid.height = 2 * half;
    grid.origin = {static_cast<double>(half), static_cast<double>(half)};
    return grid;
}

// --- subcommands --------------------------------------------------------------

int cmd_optimize(const RunConfig& rc, const fs::path& out_dir, bool dump_all, bool labels) {
    const fryum::BeamStats stats = rc.stats();
    fryum::SweepOptions opts;
    opts.mode = rc.eps_mode;
    opts.ranking_samples = rc.ranking_samples;
    opts.final_samples = rc.crosstalk_samples;
    opts.seed = rc.seed;
    opts.workers = rc.workers;
    opts.keep_all = dump_all;
    const fryum::OptimizationResult result =
        fryum::sweep(stats, rc.r_ap, rc.rules, rc.n_lo, rc.n_hi, opts);
    if (!result.global_best) throw EmptyResult("no valid segmentation in the requested N range");

    const std::uint64_t hash = config_hash(rc.resolved);
    std::string csv = "# config_hash=" + std::to_string(hash) +
                      " seed=" + std::to_string(rc.seed) + "\n";
    csv += "N,bestA,d,p,epsilon,R,Rmod\n";
    for (const auto& [n, ev] : result.best_per_n) {
        csv += std::to_string(n) + "," + angular_to_string(ev.angular) + "," +
               std::to_string(ev.report.d) + "," + format_double(ev.report.p) + "," +
               format_double(ev.report.eps.combined) + "," + format_double(ev.report.rate) + "," +
               format_double(ev.report.rate_mod) + "\n";
    }
    write_text(out_dir / "sweep.csv", csv);

    const fryum::Evaluation& best = *result.global_best;
    ordered_json seg_json = fryum::segmentation_to_json(best.segmentation);
    seg_json["meta"]["seed"] = rc.seed;
    seg_json["meta"]["config"] = rc.resolved;
    write_text(out_dir / "best_segmentation.json", seg_json.dump(2) + "\n");

    ordered_json summary{{"bestA", best.angular.counts},
                         {"aAux", best.segmentation.a_aux},
                         {"report", rate_report_json(best.report)},
                         {"epsilonMode", fryum::to_string(best.eps_mode)},
                         {"meanNeighbors", best.mean_neighbors},
                         {"search",
                          {{"examined", result.search.examined},
                           {"valid", result.search.valid},
                           {"emptyN", result.empty_n}}},
                         {"config", rc.resolved},
                         {"seed", rc.seed}};
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");

    if (dump_all) {
        ordered_json all = ordered_json::array();
        for (const auto& ev : result.all)
            all.push_back(ordered_json{{"A", ev.angular.counts},
                                       {"report", rate_report_json(ev.report)}});
        write_text(out_dir / "candidates.json",
                   ordered_json{{"config", rc.resolved}, {"candidates", all}}.dump(2) + "\n");
    }

    if (labels) {
        const fryum::LabelMap map = fryum::rasterize(best.segmentation, make_grid(rc));
        fryum::write_pgm16(map, (out_dir / "best_labels.pgm").string());
        fryum::write_label_csv(map, (out_dir / "best_labels.csv").string());
        if (map.coarse_warning)
            std::printf("warning: label-map pitch exceeds the conditional width\n");
    }

    std::printf("best A = (%s), d = %d, aux = %.4f\n", angular_to_string(best.angular).c_str(),
                best.report.d, best.segmentation.a_aux);
    std::printf("p = %.4f, epsilon = %.6f, R = %.4f, Rmod = %.4f bits/photon\n", best.report.p,
                best.report.eps.combined, best.report.rate, best.report.rate_mod);
    return 0;
}

int cmd_simulate(const RunConfig& rc, const fs::path& seg_path, const fs::path& out_dir,
                 bool event_log) {
    const json seg_doc = parse_json_file(seg_path.string());
    fryum::Segmentation seg;
    try {
        seg = fryum::segmentation_from_json(seg_doc);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("segmentation file: ") + e.what());
    }
    const fryum::BeamStats stats = rc.stats();
    if (std::abs(seg.sigma - stats.sigma) > 1e-6 * stats.sigma ||
        std::abs(seg.sigma_cond - stats.sigma_cond) > 1e-6 * stats.sigma_cond)
        throw ConfigError("segmentation beam geometry does not match the config source");

    fryum::DetectorModel det;
    det.efficiency = rc.efficiency;
    det.dark_rate = rc.dark_rate;
    det.mean_pairs_per_frame = rc.mean_pairs_per_frame;
    det.frames = rc.frames;
    det.grid = make_grid(rc);

    fryum::SimulateOptions opts;
    opts.basis_mode = rc.basis_mode;
    opts.fixed_alice = rc.fixed_alice;
    opts.fixed_bob = rc.fixed_bob;
    opts.discard_side = rc.discard_side;
    opts.scales = rc.scales;
    opts.seed = rc.seed;
    opts.workers = rc.workers;

    const fryum::FrameBatch batch = fryum::simulate_frames(rc.source, det, opts);
    const fryum::ErrorMatrix matrix = fryum::error_matrix(batch, seg, true, rc.discard_side);
    auto [key, sift] = fryum::sift_key(batch, seg, rc.discard_side);
    fryum::Qder q{};
    bool enough_mass = true;
    try {
        q = fryum::qder(matrix);
    } catch (const std::invalid_argument&) {
        enough_mass = false;  // degenerate batch: a matched block saw no coincidences
    }
    fryum::RateReport rate;
    if (enough_mass) {
        rate = fryum::make_rate_report(seg.dimension(), q, sift.measured_p());
    } else {
        rate.d = seg.dimension();
        rate.p = sift.measured_p();
    }

    const std::uint64_t hash = config_hash(rc.resolved);
    for (int b = 0; b < 4; ++b) {
        std::string csv = "# block=" + std::string(fryum::ErrorMatrix::block_name(b)) +
                          " gamma=" + format_double(display_gamma) +
                          " config_hash=" + std::to_string(hash) + "\n";
        const fryum::Mat& m = matrix.block(b);
        for (int i = 0; i < m.rows(); ++i) {
            for (int j = 0; j < m.cols(); ++j) {
                if (j) csv += ',';
                csv += format_double(m(i, j));
            }
            csv += '\n';
        }
        write_text(out_dir / ("error_matrix_" +
                              std::string(fryum::ErrorMatrix::block_name(b)) + ".csv"),
                   csv);
    }

    const bool low_statistics = !enough_mass || sift.matched_coincidences < 100;
    ordered_json report{{"rate", rate_report_json(rate)},
                        {"sift",
                         {{"matchedCoincidences", sift.matched_coincidences},
                          {"aliceKept", sift.alice_kept},
                          {"bothKept", sift.both_kept},
                          {"multiPhotonFrames", sift.multi_photon_frames},
                          {"siftedLength", static_cast<long>(key.size())},
                          {"keyErrorRate", key.error_rate()}}},
                        {"frames", batch.n_frames},
                        {"events", static_cast<long>(batch.events.size())},
                        {"flaggedNegativeEntries",
                         static_cast<long>(fryum::flagged_negative_entries(matrix).size())},
                        {"wideUncertainty", low_statistics},
                        {"config", rc.resolved},
                        {"seed", rc.seed}};
    write_text(out_dir / "rate_report.json", report.dump(2) + "\n");

    if (event_log) fryum::write_event_log(batch, (out_dir / "events.bin").string());

    std::printf("frames = %ld, matched coincidences = %ld, sifted dits = %zu\n", batch.n_frames,
                sift.matched_coincidences, key.size());
    std::printf("p = %.4f, epsilon = %.4f%% (x) / %.4f%% (p), Rmod = %.4f bits/photon\n",
                rate.p, 100.0 * rate.eps.position, 100.0 * rate.eps.momentum, rate.rate_mod);
    if (low_statistics) std::printf("warning: fewer than 100 matched coincidences\n");
    return 0;
}

int cmd_tiling(int n_max, const fs::path& out_dir) {
    if (n_max < 2) throw ConfigError("tiling: nMax must be >= 2");
    std::string csv = "n,N_circle,N_fryum_bound,disc_circle,disc_hex,disc_fry,frac_hex,frac_fry\n";
    for (int n = 2; n <= n_max; ++n) {
        const fryum::PackingReport rep = fryum::packing_report(n);
        csv += std::to_string(n) + "," + std::to_string(rep.count_circle) + "," +
               std::to_string(rep.count_fryum_bound) + "," + format_double(rep.disc_circle) + "," +
               format_double(rep.disc_hexagon) + "," + format_double(rep.disc_fryum) + "," +
               format_double(rep.fraction_hexagon) + "," + format_double(rep.fraction_fryum) + "\n";
    }
    write_text(out_dir / "packing.csv", csv);
    std::printf("packing table written for n = 2..%d\n", n_max);
    return 0;
}

int cmd_border_error(const fs::path& grid_path, const fs::path& out_dir) {
    fryum::GridSpec grid;
    try {
        grid = fryum::read_grid_csv(grid_path.string());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("grid file: ") + e.what());
    }
    const fryum::BorderErrorBreakdown breakdown =
        fryum::uniform_grid_border_error_breakdown(grid);
    ordered_json report{{"width", grid.width},
                        {"height", grid.height},
                        {"macropixels", grid.macropixels()},
                        {"epsilon", breakdown.epsilon},
                        {"pixelsByForeignEdges", breakdown.pixels_by_class}};
    const fryum::GridRate no_discard = fryum::discarded_grid_rate(grid, false);
    report["noDiscard"] = ordered_json{{"d", no_discard.d},
                                       {"eps", no_discard.eps},
                                       {"p", no_discard.p},
                                       {"Rmod", no_discard.rate_mod}};
    try {
        const fryum::GridRate discard = fryum::discarded_grid_rate(grid, true);
        report["discard"] = ordered_json{{"d", discard.d},
                                         {"eps", discard.eps},
                                         {"p", discard.p},
                                         {"Rmod", discard.rate_mod}};
    } catch (const std::exception& e) {
        report["discard"] = ordered_json{{"error", e.what()}};
    }
    write_text(out_dir / "border_error.json", report.dump(2) + "\n");
    std::printf("epsilon = %.6f over %dx%d grid with %d macropixels\n", breakdown.epsilon,
                grid.width, grid.height, grid.macropixels());
    return 0;
}

int cmd_sample(const RunConfig& rc, long pairs, const std::string& alice_basis,
               const std::string& bob_basis, const fs::path& out_dir) {
    if (pairs < 1) throw ConfigError("sample: pairs must be >= 1");
    const fryum::Basis ab = parse_basis(alice_basis);
    const fryum::Basis bb = parse_basis(bob_basis);
    fryum::RandomStream rng(rc.seed);
    std::vector<fryum::PhotonPair> drawn;
    drawn.reserve(pairs);
    std::string csv = "# config_hash=" + std::to_string(config_hash(rc.resolved)) +
                      " seed=" + std::to_string(rc.seed) + "\n";
    csv += "aliceX,aliceY,bobX,bobY,aliceBasis,bobBasis\n";
    for (long i = 0; i < pairs; ++i) {
        const fryum::PhotonPair pr = fryum::sample_pair(rc.source, ab, bb, rc.scales, rng);
        drawn.push_back(pr);
        csv += format_double(pr.alice.x) + "," + format_double(pr.alice.y) + "," +
               format_double(pr.bob.x) + "," + format_double(pr.bob.y) + "," +
               fryum::to_string(pr.alice_basis) + "," + fryum::to_string(pr.bob_basis) + "\n";
    }
    write_text(out_dir / "pairs.csv", csv);

    ordered_json summary{{"pairs", pairs},
                         {"aliceBasis", fryum::to_string(ab)},
                         {"bobBasis", fryum::to_string(bb)},
                         {"config", rc.resolved},
                         {"seed", rc.seed}};
    if (ab == bb && pairs >= 1000)
        summary["conditionalWidthEstimate"] = fryum::conditional_width_estimate(drawn);
    write_text(out_dir / "sample_summary.json", summary.dump(2) + "\n");
    std::printf("wrote %ld pairs\n", pairs);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fryum: equiprobable beam segmentation, key-rate optimization and protocol simulation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir_str = ".";

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--set", overrides, "override config entries, key.path=value");
        sub->add_option("--out-dir", out_dir_str, "output directory");
    };

    auto* opt = app.add_subcommand("optimize", "sweep angular specs and report the best wheel");
    bool dump_all = false;
    bool labels = false;
    add_common(opt, true);
    opt->add_flag("--dump-all", dump_all, "also write every evaluated candidate");
    opt->add_flag("--labels", labels, "rasterize the best wheel to PGM and CSV label maps");

    auto* sim = app.add_subcommand("simulate", "frame-based Monte Carlo of the full protocol");
    std::string seg_path;
    bool event_log = false;
    add_common(sim, true);
    sim->add_option("--segmentation", seg_path, "segmentation JSON")->required();
    sim->add_flag("--event-log", event_log, "write the binary event log");

    auto* til = app.add_subcommand("tiling", "uniform-disk packing comparison table");
    int n_max = 12;
    add_common(til, false);
    til->add_option("--n-max", n_max, "largest radial segment count");

    auto* border = app.add_subcommand("border-error", "uniform-grid border error report");
    std::string grid_path;
    add_common(border, false);
    border->add_option("--grid", grid_path, "CSV of integer macropixel labels")->required();

    auto* sample = app.add_subcommand("sample", "draw photon pairs for inspection");
    long pairs = 10'000;
    std::string alice_basis = "position", bob_basis = "position";
    add_common(sample, true);
    sample->add_option("--pairs", pairs, "number of pairs");
    sample->add_option("--alice-basis", alice_basis, "position|momentum");
    sample->add_option("--bob-basis", bob_basis, "position|momentum");

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path out_dir(out_dir_str);
        fs::create_directories(out_dir);
        RunConfig rc;
        if (!config_path.empty()) {
            json cfg = parse_json_file(config_path);
            apply_overrides(cfg, overrides);
            rc = resolve_config(cfg);
            write_text(out_dir / "config_resolved.json", rc.resolved.dump(2) + "\n");
        }
        if (opt->parsed()) return cmd_optimize(rc, out_dir, dump_all, labels);
        if (sim->parsed()) return cmd_simulate(rc, seg_path, out_dir, event_log);
        if (til->parsed()) return cmd_tiling(n_max, out_dir);
        if (border->parsed()) return cmd_border_error(grid_path, out_dir);
        if (sample->parsed()) return cmd_sample(rc, pairs, alice_basis, bob_basis, out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const EmptyResult& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
