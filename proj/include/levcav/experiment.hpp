#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "levcav/analysis.hpp"
#include "levcav/params.hpp"

namespace levcav {

// Stepped-hold power schedule: within each step both tweezer powers are
// constant, and the spectral estimate for that step treats the system as
// stationary.
struct RampSchedule {
    double duration = 0.0; // s
    int steps = 0;
    std::vector<double> p1; // W, per step
    std::vector<double> p2; // W, per step
    bool differential = false; // true when P1+P2 is held constant

    double step_duration() const { return duration / steps; }
};

// Linear antisymmetric ramp: P1 from P_center+span/2 down to
// P_center-span/2, P2 mirrored, so the x modes cross mid-ramp while the
// total power stays constant.
RampSchedule make_power_ramp(double p_center, double span, int steps,
                             double duration);

// Time-resolved PSD from a virtual ramp experiment. psd(t, f) is the
// spectral density in time bin t at frequency_bins[f].
struct SpectrogramData {
    std::vector<double> time_bins;      // s, step midpoints
    std::vector<double> frequency_bins; // rad/s, strictly increasing
    Eigen::MatrixXd psd;                // time x frequency, >= 0
    nlohmann::json metadata;            // detuning, distance, phases, schedule, STFT
};

struct SpectrogramOptions {
    enum class Mode { Analytic, Stochastic };
    Mode mode = Mode::Analytic;
    std::vector<Axis> axes{Axis::X, Axis::Y, Axis::Z};

    // Frequency band; 0 means derive from the configuration and schedule.
    double freq_min = 0.0; // rad/s
    double freq_max = 0.0; // rad/s
    double bin_hz = 150.0; // frequency resolution (Hz)

    // Stochastic mode only.
    std::uint64_t seed = 1;
    int welch_segments = 8;          // Hann segments per time bin, 50% overlap
    double sample_rate_factor = 4.5; // detector rate = factor * band top

    // The detected record is the cavity heterodyne signal plus a direct
    // readout of each particle's motion (the per-tweezer detectors used
    // for power calibration); without it, modes that do not scatter into
    // the cavity would be invisible. The gain places a bare oscillator's
    // peak this far above the unit shot floor; it has to clear the
    // off-resonant tails of strongly coupled modes, which reach ~1e7 of
    // the floor when a coupled peak sits at ~1e9.
    bool include_direct_channel = true;
    double direct_gain_target = 1e8;
};

// Synthesize the spectrogram of a ramp experiment. Analytic mode stacks
// per-step frequency-domain PSDs (noise-free); stochastic mode integrates
// the SDE through the ramp, carrying the state across step boundaries, and
// runs Welch estimates on the simulated detector records.
SpectrogramData run_spectrogram(const ValidatedConfig& vc,
                                const RampSchedule& schedule,
                                const SpectrogramOptions& options);

// metadata JSON written to <stem>.meta.json (which also carries the
// frequency grid), PSD matrix to <stem>.csv with a time_s column.
void save_spectrogram(const std::string& stem, const SpectrogramData& data);
SpectrogramData load_spectrogram(const std::string& stem);

// Track + calibrate + fit pipeline on one spectrogram; one FitResult per
// requested axis (x is always tracked internally for the power
// calibration).
std::vector<FitResult> analyze_spectrogram(const SpectrogramData& data,
                                           const ValidatedConfig& vc,
                                           const std::vector<Axis>& fit_axes,
                                           const FitOptions& fit_options = {});

// One grid point of a sweep campaign. Failures are recorded here rather
// than aborting the campaign.
struct CampaignPointResult {
    double value = 0.0; // swept variable in its I/O unit (Hz / m / rad)
    std::vector<FitResult> fits;
    std::string error;            // empty on success
    nlohmann::json metadata;      // ground-truth phases, detuning, distance
    std::string spectrogram_ref;  // path when persisted, else empty
};

struct SweepCampaignResult {
    std::string variable; // "detuning" | "distance" | "phase"
    std::vector<CampaignPointResult> points;
};

struct CampaignOptions {
    SpectrogramOptions spectrogram;
    FitOptions fit;
    std::vector<Axis> fit_axes{Axis::Y, Axis::Z};
    std::string save_dir;  // persist per-point spectrograms when non-empty
    int max_workers = 0;   // 0 = hardware concurrency
};

// One spectrogram + fit per grid point. detunings in rad/s, distances in
// m (particle 1 pinned, particle 2 moved), phases in rad (both particles
// shifted together, separation kept).
SweepCampaignResult run_detuning_campaign(const ValidatedConfig& vc,
                                          const std::vector<double>& detunings,
                                          const RampSchedule& schedule,
                                          const CampaignOptions& options);
SweepCampaignResult run_distance_campaign(const ValidatedConfig& vc,
                                          const std::vector<double>& distances,
                                          const RampSchedule& schedule,
                                          const CampaignOptions& options);
SweepCampaignResult run_phase_campaign(const ValidatedConfig& vc,
                                       const std::vector<double>& phases,
                                       const RampSchedule& schedule,
                                       const CampaignOptions& options);

// Campaign summary CSV: the sweep schema (sweep_variable, value_si,
// splitting_hz_y, splitting_hz_z, G_real, G_imag) plus fit-uncertainty and
// verdict columns (sigma_hz_y, sigma_hz_z, resolved_y, resolved_z, error).
void write_campaign_csv(const std::string& path,
                        const SweepCampaignResult& result);

} // namespace levcav
