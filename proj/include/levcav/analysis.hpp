#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "levcav/params.hpp"

namespace levcav {

struct SpectrogramData; // experiment.hpp

// One spectral peak in one time bin.
struct Peak {
    double center = 0.0; // rad/s
    double width = 0.0;  // full width at half maximum, rad/s
    double height = 0.0; // PSD units above the local background
};

// Local maxima of one PSD row with prominence above min_prominence
// (absolute PSD units); widths from the half-maximum crossings, centers
// refined by a parabolic fit through the apex bin and its neighbors.
std::vector<Peak> detect_peaks(const std::vector<double>& frequencies,
                               const std::vector<double>& psd,
                               double min_prominence);

// A mode followed through consecutive spectrogram time bins.
struct PeakTrack {
    std::vector<int> bins;    // time-bin indices, strictly increasing
    std::vector<Peak> peaks;  // one per entry of bins
    std::string label;        // e.g. "y/upper"; empty until assigned

    double center(int i) const { return peaks[static_cast<size_t>(i)].center; }
    int size() const { return static_cast<int>(bins.size()); }
};

// Nearest-neighbor linking of per-bin peaks into tracks. A track advances
// to the closest peak predicted by its current velocity; jumps beyond
// max_jump_bins frequency bins break the track, and both segments are
// returned. Deterministic for a given spectrogram.
std::vector<PeakTrack> track_modes(const SpectrogramData& spectrogram,
                                   double min_prominence,
                                   int max_jump_bins = 3);

// Per-time-bin relative tweezer powers P_i(t)/P_ref recovered from the two
// x-mode tracks via Omega_{i,x} = Omega_ref,x sqrt(P_i/P_ref). Column i of
// the result is particle i (particle 1 = the track starting higher, which
// is the tweezer that starts at the high end of the ramp).
struct PowerCalibration {
    std::vector<double> p1; // P_1(t)/P_ref, one entry per time bin
    std::vector<double> p2;
};

PowerCalibration calibrate_powers_from_x(const std::vector<PeakTrack>& tracks,
                                         const ValidatedConfig& vc,
                                         int n_time_bins);

// Outcome of the avoided-crossing fit on one axis.
struct FitResult {
    Axis axis = Axis::Y;
    double coupling_product = 0.0; // fitted |g1 g2| at ref_power, rad^2/s^2
    double splitting = 0.0;        // min over the ramp of lambda+ - lambda-, rad/s
    double sigma_splitting = 0.0;  // one s.d., rad/s
    double sigma_product = 0.0;    // one s.d., rad^2/s^2
    bool resolved = false;
    bool near_floor = false;       // resolved, but within 1.5x of the floor
    double resolution_floor = 0.0; // rad/s, 0.25 x median peak width
    double residual = 0.0;         // RMS frequency residual of used bins, rad/s
    int n_bins_used = 0;
    std::string warning;
};

// Weighted least squares for the single free scalar c = |g1 g2| at the
// reference power. The model builds, per time bin, the self-energy-shifted
// frequencies and the effective coupling from the calibrated powers with
// the symmetric split |g1| = |g2| = sqrt(c) (scaled by sqrt(P_i/P_ref)),
// taking the bare reference frequencies from the track edges. Bins where
// the two branches merge (separation under 0.2 widths) are excluded.
// Throws FitError when either branch keeps fewer than min_branch_bins
// usable bins.
struct FitOptions {
    double coupling_ratio = 1.0; // |g1|/|g2| override; 1 = symmetric
    int min_branch_bins = 10;
    double min_prominence = 3.0;
    // Half-width added around the bare-crossing frequency range when
    // selecting tracks. Mode repulsion pushes branches outside the bare
    // range by up to |G|, so callers that know the expected coupling
    // should pass ~1.5 |G| plus a little; 0 keeps a small default.
    double band_margin = 0.0; // rad/s
};

FitResult fit_avoided_crossing(const std::vector<PeakTrack>& tracks,
                               const PowerCalibration& powers,
                               const ValidatedConfig& vc, Axis axis,
                               const FitOptions& options = {});

// Resolution verdict: the smallest resolvable coupling is a quarter of the
// peak width, so a splitting is resolved iff splitting/2 >= 0.25 * width.
struct Resolvability {
    bool resolved = false;
    double floor = 0.0; // rad/s
    bool near_floor = false;
};

Resolvability resolvability(double splitting, double peak_width);

// {axis, coupling_product_hz2, splitting_hz, sigma_hz, resolved, residual,
//  n_bins_used}
nlohmann::json fit_result_to_json(const FitResult& fit);

} // namespace levcav
