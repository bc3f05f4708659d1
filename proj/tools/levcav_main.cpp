// Command-line front end: closed-form coupling sweeps, virtual ramp
// experiments with the fit pipeline, and short-range coupling estimates.

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "levcav/coupling.hpp"
#include "levcav/errors.hpp"
#include "levcav/experiment.hpp"
#include "levcav/io.hpp"
#include "levcav/params.hpp"
#include "levcav/version.hpp"

namespace {

using namespace levcav;

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Inclusive grid "start:stop:count".
std::vector<double> parse_grid(const std::string& text) {
    std::vector<std::string> parts;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ':')) parts.push_back(token);
    if (parts.size() != 3)
        throw ValidationError("grid must be start:stop:count, got '" + text +
                              "'");
    const double start = parse_double(parts[0]);
    const double stop = parse_double(parts[1]);
    const long count = std::lround(parse_double(parts[2]));
    if (count < 1) throw ValidationError("grid count must be at least 1");
    std::vector<double> values;
    if (count == 1) {
        values.push_back(start);
        return values;
    }
    for (long i = 0; i < count; ++i)
        values.push_back(start + (stop - start) * static_cast<double>(i) /
                                     static_cast<double>(count - 1));
    return values;
}

std::vector<Axis> parse_axes(const std::string& text) {
    std::vector<Axis> axes;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ','))
        if (!token.empty()) axes.push_back(axis_from_name(token));
    if (axes.empty()) throw ValidationError("empty axis list");
    return axes;
}

std::string resolve_out_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("LEVCAV_OUT_DIR"); env && *env)
        return env;
    return ".";
}

RunManifest make_manifest(int argc, char** argv, const std::string& config,
                          std::uint64_t seed, const std::string& out_dir) {
    RunManifest m;
    std::ostringstream cmd;
    for (int i = 0; i < argc; ++i) {
        if (i) cmd << ' ';
        cmd << argv[i];
    }
    m.command = cmd.str();
    m.config_path = config;
    m.seed = seed;
    m.out_dir = out_dir;
    m.tool_version = version_string;
    m.created_utc = utc_now();
    return m;
}

// Shared flags of every subcommand.
struct CommonArgs {
    std::string config_path;
    std::string out_flag;
    std::uint64_t seed = 1;
    bool dry_run = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "configuration file (INI)")
            ->required();
        cmd->add_option("--out", out_flag,
                        "output directory (default: $LEVCAV_OUT_DIR or .)");
        cmd->add_option("--seed", seed, "random seed for stochastic runs");
        cmd->add_flag("--dry-run", dry_run,
                      "validate inputs and print the manifest, compute "
                      "nothing");
    }
};

// Validate, resolve the output directory, and either print the manifest
// (dry run, returns false) or write it and let the caller proceed.
bool prepare_run(const CommonArgs& args, int argc, char** argv,
                 ValidatedConfig& vc, std::string& out_dir) {
    vc = validate_config(load_config(args.config_path));
    for (const std::string& w : vc.warnings)
        std::cerr << "warning: " << w << "\n";
    out_dir = resolve_out_dir(args.out_flag);
    const RunManifest manifest =
        make_manifest(argc, argv, args.config_path, args.seed, out_dir);
    if (args.dry_run) {
        std::cout << manifest_to_json(manifest).dump(2) << "\n";
        return false;
    }
    std::filesystem::create_directories(out_dir);
    write_manifest(out_dir + "/manifest.json", manifest);
    return true;
}

int run_couple(const CommonArgs& args, const std::string& detuning_grid,
               const std::string& distance_grid, const std::string& phase_grid,
               int argc, char** argv) {
    const int given = (!detuning_grid.empty()) + (!distance_grid.empty()) +
                      (!phase_grid.empty());
    if (given != 1)
        throw ValidationError("couple needs exactly one of --detuning "
                              "(MHz), --distance (wavelengths), --phase "
                              "(rad)");

    ValidatedConfig vc;
    std::string out_dir;
    if (!prepare_run(args, argc, argv, vc, out_dir)) return 0;

    SweepResult sweep;
    if (!detuning_grid.empty()) {
        std::vector<double> values = parse_grid(detuning_grid);
        for (double& v : values) v = rad_per_s(v * 1e6);
        sweep = detuning_sweep(vc, values);
    } else if (!distance_grid.empty()) {
        std::vector<double> values = parse_grid(distance_grid);
        for (double& v : values) v *= vc.config.cavity.wavelength;
        sweep = distance_sweep(vc, values);
    } else {
        sweep = phase_sweep(vc, parse_grid(phase_grid));
    }

    const std::string path = out_dir + "/sweep_" + sweep.variable + ".csv";
    write_sweep_csv(path, sweep);
    std::cout << "wrote " << path << " (" << sweep.points.size()
              << " rows)\n";
    return 0;
}

struct SpectrogramArgs {
    std::string mode = "analytic";
    int steps = 200;
    double duration = 0.0;  // 0 = derived from steps and the slowest mode
    double span_frac = 0.4; // peak-to-peak power span / center power
    double bin_hz = 150.0;
    std::string axes = "x,y,z";
    std::string fit_axes = "y,z";
    std::string detuning_grid, distance_grid, phase_grid;
    bool save_spectrograms = false;
    int workers = 0;
};

int run_spectrogram_cmd(const CommonArgs& args, const SpectrogramArgs& sa,
                        int argc, char** argv) {
    ValidatedConfig vc;
    std::string out_dir;
    if (!prepare_run(args, argc, argv, vc, out_dir)) return 0;

    SpectrogramOptions options;
    options.mode = sa.mode == "stochastic"
                       ? SpectrogramOptions::Mode::Stochastic
                       : SpectrogramOptions::Mode::Analytic;
    options.axes = parse_axes(sa.axes);
    options.bin_hz = sa.bin_hz;
    options.seed = args.seed;

    // Default ramp: antisymmetric span around the mean configured power,
    // each step long enough for quasi-stationary spectra (50 periods of the
    // slowest mode, and room for the Welch segments in stochastic mode).
    const double p_center = 0.5 * (vc.config.particles[0].power +
                                   vc.config.particles[1].power);
    double duration = sa.duration;
    if (duration <= 0.0) {
        double omega_min = vc.config.particles[0].mech_freq.minCoeff();
        omega_min = std::min(omega_min,
                             vc.config.particles[1].mech_freq.minCoeff());
        double step = 50.0 * two_pi / omega_min;
        if (options.mode == SpectrogramOptions::Mode::Stochastic)
            step = std::max(step,
                            (options.welch_segments + 1) / (2.0 * sa.bin_hz));
        duration = sa.steps * step;
    }
    const RampSchedule schedule = make_power_ramp(
        p_center, sa.span_frac * p_center, sa.steps, duration);

    const int grids = (!sa.detuning_grid.empty()) +
                      (!sa.distance_grid.empty()) + (!sa.phase_grid.empty());
    if (grids > 1)
        throw ValidationError(
            "give at most one campaign grid (--detuning/--distance/--phase)");

    if (grids == 0) {
        const SpectrogramData data = run_spectrogram(vc, schedule, options);
        save_spectrogram(out_dir + "/spectrogram", data);
        const std::vector<FitResult> fits =
            analyze_spectrogram(data, vc, parse_axes(sa.fit_axes));
        nlohmann::json out = nlohmann::json::array();
        for (const FitResult& fit : fits) {
            out.push_back(fit_result_to_json(fit));
            std::cout << "axis " << axis_name(fit.axis) << ": splitting "
                      << fmt_double(hz(fit.splitting)) << " Hz +- "
                      << fmt_double(hz(fit.sigma_splitting)) << " Hz ("
                      << (fit.resolved ? "resolved" : "unresolved") << ")\n";
        }
        write_text_file(out_dir + "/fits.json", out.dump(2) + "\n");
        std::cout << "wrote " << out_dir << "/spectrogram.csv and fits.json\n";
        return 0;
    }

    CampaignOptions campaign;
    campaign.spectrogram = options;
    campaign.fit_axes = parse_axes(sa.fit_axes);
    campaign.max_workers = sa.workers;
    if (sa.save_spectrograms) campaign.save_dir = out_dir + "/spectrograms";

    SweepCampaignResult result;
    if (!sa.detuning_grid.empty()) {
        std::vector<double> values = parse_grid(sa.detuning_grid);
        for (double& v : values) v = rad_per_s(v * 1e6);
        result = run_detuning_campaign(vc, values, schedule, campaign);
    } else if (!sa.distance_grid.empty()) {
        std::vector<double> values = parse_grid(sa.distance_grid);
        for (double& v : values) v *= vc.config.cavity.wavelength;
        result = run_distance_campaign(vc, values, schedule, campaign);
    } else {
        result = run_phase_campaign(vc, parse_grid(sa.phase_grid), schedule,
                                    campaign);
    }

    const std::string path = out_dir + "/campaign_" + result.variable + ".csv";
    write_campaign_csv(path, result);
    for (size_t i = 0; i < result.points.size(); ++i) {
        const CampaignPointResult& p = result.points[i];
        std::cout << result.variable << "[" << i
                  << "] = " << fmt_double(p.value);
        if (!p.error.empty()) {
            std::cout << ": error: " << p.error << "\n";
            continue;
        }
        for (const FitResult& fit : p.fits)
            std::cout << "  " << axis_name(fit.axis) << " "
                      << fmt_double(hz(fit.splitting)) << " Hz";
        std::cout << "\n";
    }
    std::cout << "wrote " << path << " (" << result.points.size()
              << " rows)\n";
    return 0;
}

int run_estimate(const CommonArgs& args, int argc, char** argv) {
    ValidatedConfig vc;
    std::string out_dir;
    if (!prepare_run(args, argc, argv, vc, out_dir)) return 0;

    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const double omega =
        0.5 * (p1.mech_freq_axis(Axis::Y) + p2.mech_freq_axis(Axis::Y));
    const double g_coulomb =
        coulomb_coupling_estimate(p1, p2, vc.distance, omega);
    const double g_binding = optical_binding_estimate(
        p1, p2, vc.distance, omega, vc.config.cavity);
    const double g_cavity = std::abs(effective_model(vc, Axis::Y).G.G);

    // Resolution floor from the configured mechanical linewidths (the
    // dominant peak-width scale at these parameters).
    const double width = std::max(p1.gas_damping, p2.gas_damping);

    auto verdict = [width](double g) {
        const Resolvability r = resolvability(2.0 * g, width);
        if (!r.resolved) return "below_floor";
        return r.near_floor ? "near_floor" : "resolvable";
    };

    const nlohmann::json out{
        {"distance_m", vc.distance},
        {"coulomb_hz", hz(g_coulomb)},
        {"optical_binding_hz", hz(g_binding)},
        {"cavity_hz", hz(g_cavity)},
        {"resolution_floor_hz", hz(0.25 * width)},
        {"verdicts",
         {{"coulomb", verdict(g_coulomb)},
          {"optical_binding", verdict(g_binding)},
          {"cavity", verdict(g_cavity)}}}};
    write_text_file(out_dir + "/estimate.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled levitated-particle cavity toolkit"};
    app.set_version_flag("--version", version_string);
    app.require_subcommand(1);

    CommonArgs couple_args;
    std::string det_grid, dist_grid, phase_grid;
    CLI::App* couple = app.add_subcommand(
        "couple", "closed-form coupling sweeps (CSV)");
    couple_args.attach(couple);
    couple->add_option("--detuning", det_grid,
                       "detuning grid start:stop:count in MHz");
    couple->add_option("--distance", dist_grid,
                       "separation grid start:stop:count in wavelengths "
                       "(bare flag: 2:6:81)")
        ->expected(0, 1);
    couple->add_option("--phase", phase_grid,
                       "standing-wave phase grid start:stop:count in rad");

    CommonArgs spect_args;
    SpectrogramArgs sa;
    CLI::App* spect = app.add_subcommand(
        "spectrogram", "virtual ramp experiment + avoided-crossing fits");
    spect_args.attach(spect);
    spect->add_option("--mode", sa.mode, "analytic or stochastic")
        ->check(CLI::IsMember({"analytic", "stochastic"}));
    spect->add_option("--steps", sa.steps, "ramp steps")
        ->check(CLI::PositiveNumber);
    spect->add_option("--duration", sa.duration, "ramp duration in s");
    spect->add_option("--span-frac", sa.span_frac,
                      "power span as a fraction of the center power");
    spect->add_option("--bin-hz", sa.bin_hz, "frequency bin width in Hz");
    spect->add_option("--axes", sa.axes, "axes to synthesize, e.g. x,y");
    spect->add_option("--fit-axes", sa.fit_axes, "axes to fit, e.g. y,z");
    spect->add_option("--detuning", sa.detuning_grid,
                      "campaign grid start:stop:count in MHz");
    spect->add_option("--distance", sa.distance_grid,
                      "campaign grid start:stop:count in wavelengths");
    spect->add_option("--phase", sa.phase_grid,
                      "campaign grid start:stop:count in rad");
    spect->add_flag("--save-spectrograms", sa.save_spectrograms,
                    "persist every campaign point's spectrogram");
    spect->add_option("--workers", sa.workers,
                      "concurrent campaign points (0 = hardware)");

    CommonArgs est_args;
    CLI::App* estimate = app.add_subcommand(
        "estimate", "short-range vs cavity-mediated coupling comparison");
    est_args.attach(estimate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    if (couple->count("--distance") > 0 && dist_grid.empty())
        dist_grid = "2:6:81";

    try {
        if (app.got_subcommand(couple))
            return run_couple(couple_args, det_grid, dist_grid, phase_grid,
                              argc, argv);
        if (app.got_subcommand(spect))
            return run_spectrogram_cmd(spect_args, sa, argc, argv);
        if (app.got_subcommand(estimate))
            return run_estimate(est_args, argc, argv);
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
