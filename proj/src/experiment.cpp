#include "levcav/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "levcav/coupling.hpp"
#include "levcav/dynamics.hpp"
#include "levcav/io.hpp"
#include "levcav/version.hpp"

namespace levcav {

RampSchedule make_power_ramp(double p_center, double span, int steps,
                             double duration) {
    std::vector<std::string> issues;
    if (!(p_center > 0.0)) issues.push_back("center power must be positive");
    if (!(span >= 0.0)) issues.push_back("power span must be non-negative");
    if (!(p_center - 0.5 * span > 0.0))
        issues.push_back("ramp reaches a non-positive power");
    if (steps < 2) issues.push_back("a ramp needs at least 2 steps");
    if (!(duration > 0.0)) issues.push_back("ramp duration must be positive");
    if (!issues.empty()) throw ValidationError(std::move(issues));

    RampSchedule s;
    s.duration = duration;
    s.steps = steps;
    s.differential = true;
    for (int k = 0; k < steps; ++k) {
        const double frac = static_cast<double>(k) / (steps - 1);
        s.p1.push_back(p_center + 0.5 * span - span * frac);
        s.p2.push_back(p_center - 0.5 * span + span * frac);
    }
    return s;
}

namespace {

namespace fs = std::filesystem;

// Both tweezer powers changed together: the quoted mechanical frequencies
// follow sqrt(P), the coupling scaling is handled downstream via power.
Config config_at_powers(const Config& base, double power1, double power2) {
    Config c = base;
    const double powers[2] = {power1, power2};
    for (size_t i = 0; i < 2; ++i) {
        ParticleSpec& p = c.particles[i];
        for (int ax = 0; ax < 3; ++ax)
            p.mech_freq[ax] =
                mech_freq_from_power(p.mech_freq[ax], powers[i], p.power);
        p.power = powers[i];
    }
    return c;
}

void check_schedule(const RampSchedule& schedule) {
    std::vector<std::string> issues;
    if (schedule.steps < 2) issues.push_back("schedule needs at least 2 steps");
    if (schedule.p1.size() != static_cast<size_t>(schedule.steps) ||
        schedule.p2.size() != static_cast<size_t>(schedule.steps))
        issues.push_back("schedule power arrays do not match the step count");
    if (!(schedule.duration > 0.0))
        issues.push_back("schedule duration must be positive");
    for (double p : schedule.p1)
        if (!(p > 0.0)) {
            issues.push_back("schedule contains a non-positive power (p1)");
            break;
        }
    for (double p : schedule.p2)
        if (!(p > 0.0)) {
            issues.push_back("schedule contains a non-positive power (p2)");
            break;
        }
    if (!issues.empty()) throw ValidationError(std::move(issues));
}

// Frequency band covering every selected mode over the whole ramp, padded
// for the coupling-induced branch spread and the peak tails.
void derive_band(const ValidatedConfig& vc, const RampSchedule& schedule,
                 const SpectrogramOptions& options, double& lo, double& hi) {
    if (options.freq_min > 0.0 || options.freq_max > 0.0) {
        if (!(options.freq_max > options.freq_min && options.freq_min > 0.0))
            throw ValidationError("explicit frequency band must satisfy "
                                  "0 < freq_min < freq_max");
        lo = options.freq_min;
        hi = options.freq_max;
        return;
    }

    double pmin1 = schedule.p1[0], pmax1 = schedule.p1[0];
    for (double p : schedule.p1) {
        pmin1 = std::min(pmin1, p);
        pmax1 = std::max(pmax1, p);
    }
    double pmin2 = schedule.p2[0], pmax2 = schedule.p2[0];
    for (double p : schedule.p2) {
        pmin2 = std::min(pmin2, p);
        pmax2 = std::max(pmax2, p);
    }

    lo = std::numeric_limits<double>::max();
    hi = 0.0;
    double g_bound = 0.0;
    const ValidatedConfig vc_max = validate_config(
        config_at_powers(vc.config, pmax1, pmax2));
    for (Axis axis : options.axes) {
        const ParticleSpec& a = vc.config.particles[0];
        const ParticleSpec& b = vc.config.particles[1];
        lo = std::min({lo,
                       mech_freq_from_power(a.mech_freq_axis(axis), pmin1,
                                            a.power),
                       mech_freq_from_power(b.mech_freq_axis(axis), pmin2,
                                            b.power)});
        hi = std::max({hi,
                       mech_freq_from_power(a.mech_freq_axis(axis), pmax1,
                                            a.power),
                       mech_freq_from_power(b.mech_freq_axis(axis), pmax2,
                                            b.power)});
        g_bound = std::max(g_bound, std::abs(effective_model(vc_max, axis).G.G));
    }
    const double margin = 1.5 * g_bound + two_pi * 5e3;
    lo = std::max(lo - margin, two_pi * 2e3);
    hi = hi + margin;
}

// Per-axis, per-particle gain of the direct position readout, set so a
// bare oscillator peaks direct_gain_target above the unit floor. The peak
// one-sided PSD of the dimensionless q is 4 nbar / gamma.
double direct_gain(const ParticleSpec& p, Axis axis, double temperature,
                   double target) {
    const double omega = p.mech_freq_axis(axis);
    const double nbar = k_boltzmann * temperature / (hbar * omega);
    return target * p.gas_damping / (4.0 * nbar);
}

// Cavity-only model: shared baseline of the per-axis heterodyne spectra.
// Summing the per-axis PSDs counts it once per axis; the overcount is
// subtracted so the cavity noise bump appears once, as in a single joint
// detection.
StateSpaceModel empty_cavity_model(const CavitySpec& cavity) {
    StateSpaceModel m;
    m.has_cavity = true;
    m.kappa = cavity.linewidth;
    m.detuning = cavity.detuning;
    m.labels = {"X", "Y"};
    m.drift = Eigen::MatrixXd::Zero(2, 2);
    m.drift(0, 0) = -0.5 * cavity.linewidth;
    m.drift(0, 1) = cavity.detuning;
    m.drift(1, 0) = -cavity.detuning;
    m.drift(1, 1) = -0.5 * cavity.linewidth;
    m.diffusion = 0.5 * cavity.linewidth * Eigen::MatrixXd::Identity(2, 2);
    return m;
}

Eigen::VectorXd empty_cavity_psd(const CavitySpec& cavity,
                                 const Eigen::VectorXd& grid) {
    const StateSpaceModel empty = empty_cavity_model(cavity);
    Observable het = heterodyne_signal(empty);
    het.floor = 0.0;
    return psd_frequency_domain(empty, het, grid).values;
}

// All detector rows of one per-axis model: the two heterodyne quadratures
// plus (optionally) the weak direct readout of each particle. The flat
// floor is added once for the whole spectrogram, not per observable.
Observable detection_rows(const StateSpaceModel& model,
                          const std::array<double, 2>& gains,
                          bool include_direct) {
    Observable het = heterodyne_signal(model);
    het.floor = 0.0;
    if (!include_direct) return het;
    Observable combined;
    combined.name = het.name + "+direct";
    combined.floor = 0.0;
    combined.rows = Eigen::MatrixXd::Zero(4, model.dim());
    combined.rows.topRows(2) = het.rows;
    combined.rows(2, 0) = std::sqrt(gains[0]); // q1
    combined.rows(3, 2) = std::sqrt(gains[1]); // q2
    return combined;
}

Eigen::VectorXd gaussian_state_draw(const Eigen::MatrixXd& cov,
                                    GaussianSource& noise) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        0.5 * (cov + cov.transpose()));
    const Eigen::MatrixXd factor =
        eig.eigenvectors() *
        eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::VectorXd draw(cov.rows());
    for (Eigen::Index i = 0; i < draw.size(); ++i) draw[i] = noise();
    return factor * draw;
}

nlohmann::json base_metadata(const ValidatedConfig& vc,
                             const RampSchedule& schedule,
                             const SpectrogramOptions& options, double lo,
                             double hi) {
    const Config& c = vc.config;
    nlohmann::json axes = nlohmann::json::array();
    for (Axis a : options.axes) axes.push_back(axis_name(a));
    nlohmann::json meta{
        {"mode", options.mode == SpectrogramOptions::Mode::Analytic
                     ? "analytic"
                     : "stochastic"},
        {"axes", axes},
        {"seed", options.seed},
        {"floor", 1.0},
        {"freq_min_hz", hz(lo)},
        {"freq_max_hz", hz(hi)},
        {"detuning_hz", hz(c.cavity.detuning)},
        {"linewidth_hz", hz(c.cavity.linewidth)},
        {"distance_m", vc.distance},
        {"phase_rad",
         {phase_from_position(c.particles[0].position, c.cavity.wavelength)
              .phase,
          phase_from_position(c.particles[1].position, c.cavity.wavelength)
              .phase}},
        {"ref_power_w", c.cavity.ref_power},
        {"schedule",
         {{"duration_s", schedule.duration},
          {"steps", schedule.steps},
          {"p1_w", schedule.p1},
          {"p2_w", schedule.p2},
          {"differential", schedule.differential}}},
        {"tool_version", version_string}};
    if (options.include_direct_channel) {
        nlohmann::json gains;
        for (Axis a : options.axes)
            gains[axis_name(a)] = {
                direct_gain(c.particles[0], a, c.noise.temperature,
                            options.direct_gain_target),
                direct_gain(c.particles[1], a, c.noise.temperature,
                            options.direct_gain_target)};
        meta["direct_gain"] = gains;
    }
    return meta;
}

void check_spectrogram_options(const SpectrogramOptions& options) {
    std::vector<std::string> issues;
    if (options.axes.empty()) issues.push_back("no axes selected");
    for (size_t i = 0; i < options.axes.size(); ++i)
        for (size_t j = i + 1; j < options.axes.size(); ++j)
            if (options.axes[i] == options.axes[j]) {
                issues.push_back("duplicate axis in the selection");
                i = options.axes.size();
                break;
            }
    if (!(options.bin_hz > 0.0))
        issues.push_back("frequency bin width must be positive");
    if (options.welch_segments < 1)
        issues.push_back("welch_segments must be at least 1");
    if (!(options.sample_rate_factor >= 2.2))
        issues.push_back("sample_rate_factor must be at least 2.2 "
                         "(Nyquist margin over the band top)");
    if (!(options.direct_gain_target > 0.0))
        issues.push_back("direct gain target must be positive");
    if (!issues.empty()) throw ValidationError(std::move(issues));
}

SpectrogramData run_analytic(const ValidatedConfig& vc,
                             const RampSchedule& schedule,
                             const SpectrogramOptions& options, double lo,
                             double hi) {
    const double domega = rad_per_s(options.bin_hz);
    const Eigen::Index n_freq =
        static_cast<Eigen::Index>(std::floor((hi - lo) / domega)) + 1;
    if (n_freq < 8)
        throw ValidationError("frequency band narrower than 8 bins");
    Eigen::VectorXd grid(n_freq);
    for (Eigen::Index j = 0; j < n_freq; ++j) grid[j] = lo + j * domega;

    const Eigen::VectorXd baseline =
        empty_cavity_psd(vc.config.cavity, grid);
    const int overcount = static_cast<int>(options.axes.size()) - 1;

    SpectrogramData data;
    data.frequency_bins.assign(grid.data(), grid.data() + n_freq);
    data.psd.resize(schedule.steps, n_freq);

    for (int k = 0; k < schedule.steps; ++k) {
        data.time_bins.push_back((k + 0.5) * schedule.step_duration());
        const ValidatedConfig vck = validate_config(config_at_powers(
            vc.config, schedule.p1[static_cast<size_t>(k)],
            schedule.p2[static_cast<size_t>(k)]));
        Eigen::VectorXd row = Eigen::VectorXd::Zero(n_freq);
        for (Axis axis : options.axes) {
            const StateSpaceModel model = build_state_space(vck, axis);
            const std::array<double, 2> gains{
                direct_gain(vc.config.particles[0], axis,
                            vc.config.noise.temperature,
                            options.direct_gain_target),
                direct_gain(vc.config.particles[1], axis,
                            vc.config.noise.temperature,
                            options.direct_gain_target)};
            const Observable obs = detection_rows(
                model, gains, options.include_direct_channel);
                row += psd_frequency_domain(model, obs, grid).values;
        }
        row -= overcount * baseline;
        data.psd.row(k) =
            (row.cwiseMax(0.0).array() + 1.0).matrix().transpose();
    }

    data.metadata = base_metadata(vc, schedule, options, lo, hi);
    data.metadata["bin_hz"] = hz(domega);
    return data;
}

// Largest even 5-smooth number not above n. The FFT behind welch_psd is
// quadratic in large prime factors, so a nearby smooth length is orders of
// magnitude cheaper than an arbitrary even one.
int fft_friendly_below(int n) {
    for (int k = n - n % 2; k >= 8; k -= 2) {
        int m = k;
        for (int f : {2, 3, 5})
            while (m % f == 0) m /= f;
        if (m == 1) return k;
    }
    return 8;
}

SpectrogramData run_stochastic(const ValidatedConfig& vc,
                               const RampSchedule& schedule,
                               const SpectrogramOptions& options, double lo,
                               double hi) {
    const double fs = options.sample_rate_factor * hz(hi);
    const double window = 1.0 / fs;
    const int n_win =
        static_cast<int>(std::llround(schedule.step_duration() * fs));

    // Segment length for the requested resolution, shortened when the step
    // cannot hold welch_segments half-overlapping segments.
    int segment = static_cast<int>(std::llround(fs / options.bin_hz));
    segment -= segment % 2;
    int max_segment = 2 * n_win / (options.welch_segments + 1);
    max_segment -= max_segment % 2;
    bool degraded = false;
    if (segment > max_segment) {
        segment = max_segment;
        degraded = true;
    }
    if (segment < 8)
        throw ValidationError(
            "ramp steps are too short for the requested Welch settings");
    segment = fft_friendly_below(segment);

    const double df = fs / segment;
    const int k_lo = static_cast<int>(std::ceil(hz(lo) / df));
    const int k_hi =
        std::min(static_cast<int>(std::floor(hz(hi) / df)), segment / 2);
    const int n_freq = k_hi - k_lo + 1;
    if (n_freq < 8)
        throw ValidationError("frequency band narrower than 8 bins");

    Eigen::VectorXd grid(n_freq);
    for (int j = 0; j < n_freq; ++j)
        grid[j] = rad_per_s((k_lo + j) * df);
    const Eigen::VectorXd baseline =
        empty_cavity_psd(vc.config.cavity, grid);
    const int overcount = static_cast<int>(options.axes.size()) - 1;

    // The acquisition windows average the state over 1/fs; in band this
    // attenuates the spectrum by sinc^2(pi f / fs), undone exactly here.
    Eigen::VectorXd recovery(n_freq);
    for (int j = 0; j < n_freq; ++j) {
        const double x = pi * (k_lo + j) * df / fs;
        const double s = x > 0.0 ? std::sin(x) / x : 1.0;
        recovery[j] = 1.0 / (s * s);
    }

    SpectrogramData data;
    data.frequency_bins.assign(grid.data(), grid.data() + n_freq);
    data.psd = Eigen::MatrixXd::Zero(schedule.steps, n_freq);
    for (int k = 0; k < schedule.steps; ++k)
        data.time_bins.push_back((k + 0.5) * schedule.step_duration());

    std::vector<ValidatedConfig> step_configs;
    for (int k = 0; k < schedule.steps; ++k)
        step_configs.push_back(validate_config(config_at_powers(
            vc.config, schedule.p1[static_cast<size_t>(k)],
            schedule.p2[static_cast<size_t>(k)])));

    int n_segments = 0;
    for (size_t axis_idx = 0; axis_idx < options.axes.size(); ++axis_idx) {
        const Axis axis = options.axes[axis_idx];
        const std::array<double, 2> gains{
            direct_gain(vc.config.particles[0], axis,
                        vc.config.noise.temperature,
                        options.direct_gain_target),
            direct_gain(vc.config.particles[1], axis,
                        vc.config.noise.temperature,
                        options.direct_gain_target)};
        GaussianSource noise(mix_seed(options.seed, axis_idx));

        const StateSpaceModel first =
            build_state_space(step_configs[0], axis);
        Eigen::VectorXd state =
            gaussian_state_draw(stationary_covariance(first), noise);
        Eigen::VectorXd average(first.dim());

        const int n_channels = options.include_direct_channel ? 4 : 2;
        std::vector<std::vector<double>> channels(
            static_cast<size_t>(n_channels),
            std::vector<double>(static_cast<size_t>(n_win)));
        const double root_kappa = std::sqrt(vc.config.cavity.linewidth);
        const double root_w1 = std::sqrt(gains[0]);
        const double root_w2 = std::sqrt(gains[1]);

        for (int k = 0; k < schedule.steps; ++k) {
            const StateSpaceModel model =
                build_state_space(step_configs[static_cast<size_t>(k)], axis);
            const WindowAverager stepper(model, window);
            const Eigen::Index ix = model.dim() - 2;
            const Eigen::Index iy = model.dim() - 1;
            for (int j = 0; j < n_win; ++j) {
                stepper.step(state, average, noise);
                channels[0][static_cast<size_t>(j)] = root_kappa * average[ix];
                channels[1][static_cast<size_t>(j)] = root_kappa * average[iy];
                if (n_channels == 4) {
                    channels[2][static_cast<size_t>(j)] = root_w1 * average[0];
                    channels[3][static_cast<size_t>(j)] = root_w2 * average[2];
                }
            }
            for (const auto& samples : channels) {
                const PSDCurve est = welch_psd(samples, window, segment);
                for (int j = 0; j < n_freq; ++j)
                    data.psd(k, j) += est.values[k_lo + j] * recovery[j];
            }
            n_segments = 2 * n_win / segment - 1;
        }
    }

    for (int k = 0; k < schedule.steps; ++k) {
        Eigen::VectorXd row = data.psd.row(k).transpose();
        row -= overcount * baseline;
        data.psd.row(k) =
            (row.cwiseMax(0.0).array() + 1.0).matrix().transpose();
    }

    data.metadata = base_metadata(vc, schedule, options, lo, hi);
    data.metadata["bin_hz"] = df;
    data.metadata["sample_rate_hz"] = fs;
    data.metadata["segment_length"] = segment;
    data.metadata["segments_per_step"] = n_segments;
    if (degraded)
        data.metadata["note"] =
            "frequency resolution reduced to fit the requested number of "
            "Welch segments into one step";
    return data;
}

} // namespace

SpectrogramData run_spectrogram(const ValidatedConfig& vc,
                                const RampSchedule& schedule,
                                const SpectrogramOptions& options) {
    check_schedule(schedule);
    check_spectrogram_options(options);
    double lo = 0.0, hi = 0.0;
    derive_band(vc, schedule, options, lo, hi);
    if (options.mode == SpectrogramOptions::Mode::Analytic)
        return run_analytic(vc, schedule, options, lo, hi);
    return run_stochastic(vc, schedule, options, lo, hi);
}

void save_spectrogram(const std::string& stem, const SpectrogramData& data) {
    const fs::path base(stem);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());

    nlohmann::json meta;
    nlohmann::json freq = nlohmann::json::array();
    for (double w : data.frequency_bins) freq.push_back(hz(w));
    meta["frequency_hz"] = std::move(freq);
    meta["metadata"] = data.metadata;
    write_text_file(stem + ".meta.json", meta.dump(2) + "\n");

    CsvTable table;
    table.header.push_back("time_s");
    for (double w : data.frequency_bins)
        table.header.push_back(fmt_double(hz(w)));
    for (size_t t = 0; t < data.time_bins.size(); ++t) {
        std::vector<std::string> row;
        row.push_back(fmt_double(data.time_bins[t]));
        for (Eigen::Index j = 0; j < data.psd.cols(); ++j)
            row.push_back(fmt_double(data.psd(static_cast<Eigen::Index>(t), j)));
        table.rows.push_back(std::move(row));
    }
    write_csv(stem + ".csv", table);
}

SpectrogramData load_spectrogram(const std::string& stem) {
    SpectrogramData data;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(stem + ".meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad spectrogram metadata: ") + e.what());
    }
    if (!meta.contains("frequency_hz") || !meta["frequency_hz"].is_array())
        throw IoError("spectrogram metadata lacks the frequency grid");
    for (const auto& v : meta["frequency_hz"])
        data.frequency_bins.push_back(rad_per_s(v.get<double>()));
    data.metadata = meta.value("metadata", nlohmann::json::object());

    const CsvTable table = read_csv(stem + ".csv");
    const size_t n_freq = data.frequency_bins.size();
    if (table.header.size() != n_freq + 1)
        throw IoError("spectrogram CSV does not match the frequency grid");
    data.psd.resize(static_cast<Eigen::Index>(table.rows.size()),
                    static_cast<Eigen::Index>(n_freq));
    for (size_t t = 0; t < table.rows.size(); ++t) {
        const auto& row = table.rows[t];
        if (row.size() != n_freq + 1)
            throw IoError("spectrogram CSV row has the wrong width");
        data.time_bins.push_back(parse_double(row[0]));
        for (size_t j = 0; j < n_freq; ++j)
            data.psd(static_cast<Eigen::Index>(t),
                     static_cast<Eigen::Index>(j)) = parse_double(row[j + 1]);
    }
    return data;
}

std::vector<FitResult> analyze_spectrogram(const SpectrogramData& data,
                                           const ValidatedConfig& vc,
                                           const std::vector<Axis>& fit_axes,
                                           const FitOptions& fit_options) {
    if (data.psd.size() == 0) throw ValidationError("spectrogram is empty");

    // Prominence threshold in PSD units: min_prominence times the
    // background, estimated by the median (peaks occupy few bins).
    std::vector<double> flat(data.psd.data(),
                             data.psd.data() + data.psd.size());
    std::nth_element(flat.begin(), flat.begin() + flat.size() / 2, flat.end());
    const double floor_est = std::max(flat[flat.size() / 2], 1e-300);

    // Between time bins every mechanical line moves in proportion to the
    // square root of its tweezer power; coarse ramps outrun the default
    // tracker gate, so size the gate from the recorded schedule.
    int max_jump_bins = 3;
    if (data.metadata.contains("schedule") && data.frequency_bins.size() > 1) {
        const nlohmann::json& sched = data.metadata.at("schedule");
        double step_frac = 0.0;
        for (const char* key : {"p1_w", "p2_w"}) {
            if (!sched.contains(key)) continue;
            const auto p = sched.at(key).get<std::vector<double>>();
            for (size_t k = 0; k + 1 < p.size(); ++k)
                if (p[k] > 0.0 && p[k + 1] > 0.0)
                    step_frac = std::max(
                        step_frac,
                        std::abs(std::sqrt(p[k + 1]) - std::sqrt(p[k])) /
                            std::sqrt(std::min(p[k], p[k + 1])));
        }
        const double bin_width =
            data.frequency_bins[1] - data.frequency_bins[0];
        const double drift = data.frequency_bins.back() * step_frac;
        max_jump_bins = std::max(
            3, static_cast<int>(std::ceil(1.5 * drift / bin_width)));
    }

    const std::vector<PeakTrack> tracks = track_modes(
        data, fit_options.min_prominence * floor_est, max_jump_bins);
    const PowerCalibration powers = calibrate_powers_from_x(
        tracks, vc, static_cast<int>(data.time_bins.size()));

    double pmax = 1.0;
    for (size_t t = 0; t < powers.p1.size(); ++t)
        pmax = std::max({pmax, powers.p1[t], powers.p2[t]});

    std::vector<FitResult> results;
    for (Axis axis : fit_axes) {
        FitOptions per_axis = fit_options;
        if (per_axis.band_margin <= 0.0) {
            // Mode repulsion pushes branches up to |G| outside the bare
            // range; widen the track-selection band by the coupling
            // expected from the configuration at the largest ramp power.
            const double g_bound =
                pmax * std::abs(effective_model(vc, axis).G.G);
            per_axis.band_margin =
                1.5 * g_bound + std::max(two_pi * 1.5e3,
                                         0.03 * vc.config.particles[0]
                                                    .mech_freq_axis(axis));
        }
        results.push_back(
            fit_avoided_crossing(tracks, powers, vc, axis, per_axis));
    }
    return results;
}

namespace {

std::string sanitize_csv_field(std::string text) {
    for (char& c : text)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return text;
}

SweepCampaignResult run_campaign(
    const std::string& variable, const ValidatedConfig& vc,
    const std::vector<double>& values, const RampSchedule& schedule,
    const CampaignOptions& options,
    const std::function<void(Config&, double)>& apply,
    const std::function<double(double)>& to_si) {
    check_schedule(schedule);
    if (values.empty())
        throw ValidationError("campaign grid is empty");
    if (!options.save_dir.empty()) fs::create_directories(options.save_dir);

    SweepCampaignResult result;
    result.variable = variable;
    result.points.resize(values.size());

    auto run_point = [&](size_t index) {
        CampaignPointResult point;
        point.value = to_si(values[index]);
        try {
            Config c = vc.config;
            apply(c, values[index]);
            const ValidatedConfig vcp = validate_config(c);

            SpectrogramOptions so = options.spectrogram;
            so.seed = mix_seed(options.spectrogram.seed, index);
            const SpectrogramData data = run_spectrogram(vcp, schedule, so);
            if (!options.save_dir.empty()) {
                std::ostringstream stem;
                stem << options.save_dir << "/" << variable << "_"
                     << index;
                save_spectrogram(stem.str(), data);
                point.spectrogram_ref = stem.str();
            }

            point.metadata["detuning_hz"] = hz(vcp.config.cavity.detuning);
            point.metadata["distance_m"] = vcp.distance;
            point.metadata["phase_rad"] = {
                phase_from_position(vcp.config.particles[0].position,
                                    vcp.config.cavity.wavelength)
                    .phase,
                phase_from_position(vcp.config.particles[1].position,
                                    vcp.config.cavity.wavelength)
                    .phase};

            point.fits =
                analyze_spectrogram(data, vcp, options.fit_axes, options.fit);

            // Fitted effective coupling at the nominal references, same
            // convention as the closed-form sweep tables.
            for (const FitResult& fit : point.fits) {
                const double root = std::sqrt(std::max(fit.coupling_product, 0.0));
                const OptoCoupling g1{root, fit.axis};
                const OptoCoupling g2{root, fit.axis};
                const double mean_ref =
                    0.5 * (vcp.config.particles[0].mech_freq_axis(fit.axis) +
                           vcp.config.particles[1].mech_freq_axis(fit.axis));
                const EffectiveCoupling G = effective_coupling(
                    g1, g2, mean_ref, vcp.config.cavity);
                point.metadata[std::string("G_fit_hz_") +
                               axis_name(fit.axis)] = {hz(G.G.real()),
                                                       hz(G.G.imag())};
            }
        } catch (const std::exception& e) {
            point.error = e.what();
        }
        result.points[index] = std::move(point);
    };

    unsigned workers = options.max_workers > 0
                           ? static_cast<unsigned>(options.max_workers)
                           : std::thread::hardware_concurrency();
    workers = std::max(1u, std::min(workers,
                                    static_cast<unsigned>(values.size())));
    if (workers == 1) {
        for (size_t i = 0; i < values.size(); ++i) run_point(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < values.size();
                     i = next.fetch_add(1))
                    run_point(i);
            });
        for (std::thread& t : pool) t.join();
    }
    return result;
}

} // namespace

SweepCampaignResult run_detuning_campaign(const ValidatedConfig& vc,
                                          const std::vector<double>& detunings,
                                          const RampSchedule& schedule,
                                          const CampaignOptions& options) {
    return run_campaign(
        "detuning", vc, detunings, schedule, options,
        [](Config& c, double v) { c.cavity.detuning = v; },
        [](double v) { return hz(v); });
}

SweepCampaignResult run_distance_campaign(const ValidatedConfig& vc,
                                          const std::vector<double>& distances,
                                          const RampSchedule& schedule,
                                          const CampaignOptions& options) {
    return run_campaign(
        "distance", vc, distances, schedule, options,
        [](Config& c, double v) {
            c.particles[1].position = c.particles[0].position + v;
        },
        [](double v) { return v; });
}

SweepCampaignResult run_phase_campaign(const ValidatedConfig& vc,
                                       const std::vector<double>& phases,
                                       const RampSchedule& schedule,
                                       const CampaignOptions& options) {
    const double separation = vc.config.particles[1].position -
                              vc.config.particles[0].position;
    const double wavelength = vc.config.cavity.wavelength;
    return run_campaign(
        "phase", vc, phases, schedule, options,
        [separation, wavelength](Config& c, double v) {
            if (!(v >= 0.0 && v <= 0.5 * pi + 1e-9))
                throw ValidationError(
                    "standing-wave phase must lie in [0, pi/2]");
            const double y1 = v * wavelength / two_pi;
            c.particles[0].position = y1;
            c.particles[1].position = y1 + separation;
            const double phase2 =
                phase_from_position(y1 + separation, wavelength).phase;
            if (std::abs(phase2 - v) > 1e-9)
                throw ValidationError(
                    "phase campaign requires a particle separation that is "
                    "a multiple of half the wavelength");
        },
        [](double v) { return v; });
}

void write_campaign_csv(const std::string& path,
                        const SweepCampaignResult& result) {
    CsvTable table;
    table.header = {"sweep_variable", "value_si",  "splitting_hz_y",
                    "splitting_hz_z", "G_real",    "G_imag",
                    "sigma_hz_y",     "sigma_hz_z", "resolved_y",
                    "resolved_z",     "error"};
    for (const CampaignPointResult& point : result.points) {
        const FitResult* fit_y = nullptr;
        const FitResult* fit_z = nullptr;
        for (const FitResult& f : point.fits) {
            if (f.axis == Axis::Y) fit_y = &f;
            if (f.axis == Axis::Z) fit_z = &f;
        }
        const FitResult* primary = fit_y ? fit_y : fit_z;

        std::vector<std::string> row;
        row.push_back(result.variable);
        row.push_back(fmt_double(point.value));
        row.push_back(fit_y ? fmt_double(hz(fit_y->splitting)) : "");
        row.push_back(fit_z ? fmt_double(hz(fit_z->splitting)) : "");
        if (primary) {
            const std::string key =
                std::string("G_fit_hz_") + axis_name(primary->axis);
            if (point.metadata.contains(key)) {
                row.push_back(fmt_double(point.metadata[key][0].get<double>()));
                row.push_back(fmt_double(point.metadata[key][1].get<double>()));
            } else {
                row.push_back("");
                row.push_back("");
            }
        } else {
            row.push_back("");
            row.push_back("");
        }
        row.push_back(fit_y ? fmt_double(hz(fit_y->sigma_splitting)) : "");
        row.push_back(fit_z ? fmt_double(hz(fit_z->sigma_splitting)) : "");
        row.push_back(fit_y ? (fit_y->resolved ? "true" : "false") : "");
        row.push_back(fit_z ? (fit_z->resolved ? "true" : "false") : "");
        row.push_back(sanitize_csv_field(point.error));
        table.rows.push_back(std::move(row));
    }
    write_csv(path, table);
}

} // namespace levcav
