#include "levcav/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "levcav/coupling.hpp"
#include "levcav/experiment.hpp"

namespace levcav {

namespace {

double interp_crossing(double f0, double v0, double f1, double v1,
                       double level) {
    if (v1 == v0) return f1;
    return f0 + (level - v0) * (f1 - f0) / (v1 - v0);
}

} // namespace

std::vector<Peak> detect_peaks(const std::vector<double>& frequencies,
                               const std::vector<double>& psd,
                               double min_prominence) {
    if (frequencies.size() != psd.size())
        throw ValidationError("frequency and PSD arrays differ in length");
    const int n = static_cast<int>(psd.size());
    std::vector<Peak> peaks;
    if (n < 3) return peaks;

    for (int i = 1; i + 1 < n; ++i) {
        if (!(psd[i] > psd[i - 1] && psd[i] >= psd[i + 1])) continue;

        // Prominence: drop to the lowest saddle before a higher value (or
        // the edge) is met, on the worse of the two sides.
        double left_min = psd[i];
        for (int j = i - 1; j >= 0; --j) {
            if (psd[j] > psd[i]) break;
            left_min = std::min(left_min, psd[j]);
        }
        double right_min = psd[i];
        for (int j = i + 1; j < n; ++j) {
            if (psd[j] > psd[i]) break;
            right_min = std::min(right_min, psd[j]);
        }
        const double base = std::max(left_min, right_min);
        const double height = psd[i] - base;
        if (!(height >= min_prominence)) continue;

        const double half = base + 0.5 * height;
        double f_left = frequencies[0];
        for (int j = i; j > 0; --j) {
            if (psd[j - 1] <= half) {
                f_left = interp_crossing(frequencies[j - 1], psd[j - 1],
                                         frequencies[j], psd[j], half);
                break;
            }
            f_left = frequencies[j - 1];
        }
        double f_right = frequencies[static_cast<size_t>(n) - 1];
        for (int j = i; j + 1 < n; ++j) {
            if (psd[j + 1] <= half) {
                f_right = interp_crossing(frequencies[j], psd[j],
                                          frequencies[j + 1], psd[j + 1], half);
                break;
            }
            f_right = frequencies[j + 1];
        }

        // Parabolic apex refinement through the three bins around the top.
        double center = frequencies[i];
        const double denom = psd[i - 1] - 2.0 * psd[i] + psd[i + 1];
        if (denom < 0.0) {
            const double shift = 0.5 * (psd[i - 1] - psd[i + 1]) / denom;
            center += shift * 0.5 *
                      (frequencies[i + 1] - frequencies[i - 1]);
        }

        peaks.push_back(Peak{center, std::max(f_right - f_left, 0.0), height});
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.center < b.center; });
    return peaks;
}

namespace {

struct ActiveTrack {
    PeakTrack data;
    double velocity = 0.0; // rad/s per time bin
    int misses = 0;

    double predicted(int bin) const {
        const int last_bin = data.bins.back();
        return data.peaks.back().center + velocity * (bin - last_bin);
    }
};

} // namespace

std::vector<PeakTrack> track_modes(const SpectrogramData& spectrogram,
                                   double min_prominence, int max_jump_bins) {
    const int n_time = static_cast<int>(spectrogram.time_bins.size());
    const auto& freqs = spectrogram.frequency_bins;
    if (n_time == 0 || freqs.size() < 3)
        throw ValidationError("spectrogram is empty");
    const double bin_width = freqs[1] - freqs[0];
    const double gate = max_jump_bins * bin_width;

    std::vector<ActiveTrack> active;
    std::vector<PeakTrack> done;

    std::vector<double> row(freqs.size());
    for (int t = 0; t < n_time; ++t) {
        for (size_t k = 0; k < freqs.size(); ++k)
            row[k] = spectrogram.psd(t, static_cast<Eigen::Index>(k));
        std::vector<Peak> peaks = detect_peaks(freqs, row, min_prominence);

        // Greedy assignment by ascending |peak - prediction|.
        struct Cand {
            double dist;
            size_t track, peak;
        };
        std::vector<Cand> cands;
        for (size_t a = 0; a < active.size(); ++a)
            for (size_t p = 0; p < peaks.size(); ++p) {
                const double d =
                    std::abs(peaks[p].center - active[a].predicted(t));
                if (d <= gate) cands.push_back(Cand{d, a, p});
            }
        std::sort(cands.begin(), cands.end(),
                  [](const Cand& a, const Cand& b) { return a.dist < b.dist; });

        std::vector<bool> track_used(active.size(), false);
        std::vector<bool> peak_used(peaks.size(), false);
        for (const Cand& c : cands) {
            if (track_used[c.track] || peak_used[c.peak]) continue;
            track_used[c.track] = true;
            peak_used[c.peak] = true;
            ActiveTrack& tr = active[c.track];
            const int gap = t - tr.data.bins.back();
            tr.velocity =
                (peaks[c.peak].center - tr.data.peaks.back().center) / gap;
            tr.data.bins.push_back(t);
            tr.data.peaks.push_back(peaks[c.peak]);
            tr.misses = 0;
        }

        // Tracks missing for more than four consecutive bins are closed;
        // both segments of a broken mode end up in the output. Four rides
        // out short detection dropouts in noisy spectra.
        std::vector<ActiveTrack> survivors;
        for (size_t a = 0; a < active.size(); ++a) {
            if (track_used[a]) {
                survivors.push_back(std::move(active[a]));
            } else if (++active[a].misses <= 4) {
                survivors.push_back(std::move(active[a]));
            } else {
                done.push_back(std::move(active[a].data));
            }
        }
        active = std::move(survivors);

        for (size_t p = 0; p < peaks.size(); ++p) {
            if (peak_used[p]) continue;
            ActiveTrack fresh;
            fresh.data.bins.push_back(t);
            fresh.data.peaks.push_back(peaks[p]);
            active.push_back(std::move(fresh));
        }
    }
    for (ActiveTrack& tr : active) done.push_back(std::move(tr.data));

    std::sort(done.begin(), done.end(),
              [](const PeakTrack& a, const PeakTrack& b) {
                  if (a.bins.front() != b.bins.front())
                      return a.bins.front() < b.bins.front();
                  return a.peaks.front().center < b.peaks.front().center;
              });
    return done;
}

namespace {

// Least-squares line y = a + b x.
void linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                double& a, double& b) {
    const double n = static_cast<double>(x.size());
    const double sx = std::accumulate(x.begin(), x.end(), 0.0);
    const double sy = std::accumulate(y.begin(), y.end(), 0.0);
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) {
        a = sy / n;
        b = 0.0;
        return;
    }
    b = (n * sxy - sx * sy) / denom;
    a = (sy - b * sx) / n;
}

std::vector<const PeakTrack*> tracks_in_band(const std::vector<PeakTrack>& tracks,
                                             double lo, double hi) {
    std::vector<const PeakTrack*> out;
    for (const PeakTrack& t : tracks) {
        if (t.size() < 2) continue;
        int inside = 0;
        for (const Peak& p : t.peaks)
            if (p.center >= lo && p.center <= hi) ++inside;
        if (inside * 2 >= t.size()) out.push_back(&t);
    }
    return out;
}

} // namespace

PowerCalibration calibrate_powers_from_x(const std::vector<PeakTrack>& tracks,
                                         const ValidatedConfig& vc,
                                         int n_time_bins) {
    const double ref1 = vc.config.particles[0].mech_freq[0];
    const double ref2 = vc.config.particles[1].mech_freq[0];

    // Generous band: ramps of +-35% in power move the x modes by +-16%.
    const double lo = 0.82 * std::min(ref1, ref2);
    const double hi = 1.18 * std::max(ref1, ref2);

    // Pool every in-band detection per time bin. Track membership is not
    // trusted here: where the two x lines cross, the tracker can stitch
    // them into spurious V shapes, so the lines are re-identified from the
    // raw detections instead.
    std::vector<std::vector<Peak>> pool(static_cast<size_t>(n_time_bins));
    std::vector<double> widths;
    for (const PeakTrack& track : tracks)
        for (int i = 0; i < track.size(); ++i) {
            const int bin = track.bins[static_cast<size_t>(i)];
            const Peak& peak = track.peaks[static_cast<size_t>(i)];
            if (bin < 0 || bin >= n_time_bins) continue;
            if (peak.center < lo || peak.center > hi) continue;
            pool[static_cast<size_t>(bin)].push_back(peak);
            widths.push_back(peak.width);
        }
    for (auto& peaks : pool)
        std::sort(peaks.begin(), peaks.end(),
                  [](const Peak& a, const Peak& b) {
                      return a.height > b.height;
                  });

    const auto fragmented = [] {
        return FitError("power calibration failed: the two x-mode tracks are "
                       "missing or too fragmented");
    };
    if (widths.empty()) throw fragmented();

    // A linear power ramp makes Omega^2(t) a straight line. A detection
    // belongs to a candidate line when it sits within about a linewidth of
    // it; the tolerance is linearised as |w^2 - pred| <= 2 w tol.
    std::nth_element(widths.begin(), widths.begin() + widths.size() / 2,
                     widths.end());
    const double tol_omega =
        std::max(0.75 * widths[widths.size() / 2], 1e-4 * (hi - lo));

    struct Claim {
        int bin;
        int index;
    };
    struct Line {
        double a = 0.0, b = 0.0;  // Omega^2 = a + b * bin
        std::vector<Claim> claims;
        double rms = std::numeric_limits<double>::infinity();
    };
    std::vector<std::vector<char>> used(pool.size());
    for (size_t bin = 0; bin < pool.size(); ++bin)
        used[bin].assign(pool[bin].size(), 0);

    // Collect the claims of the line through (a, b): per bin the nearest
    // unclaimed detection within tolerance.
    const auto evaluate = [&](Line& line) {
        line.claims.clear();
        double ss = 0.0;
        for (int bin = 0; bin < n_time_bins; ++bin) {
            const double pred = line.a + line.b * bin;
            int best = -1;
            double best_err = std::numeric_limits<double>::infinity();
            const auto& peaks = pool[static_cast<size_t>(bin)];
            for (size_t k = 0; k < peaks.size(); ++k) {
                if (used[static_cast<size_t>(bin)][k]) continue;
                const double w = peaks[k].center;
                const double err = std::abs(w * w - pred);
                if (err < best_err && err <= 2.0 * w * tol_omega) {
                    best = static_cast<int>(k);
                    best_err = err;
                }
            }
            if (best < 0) continue;
            line.claims.push_back({bin, best});
            ss += best_err * best_err;
        }
        line.rms = line.claims.empty()
                       ? std::numeric_limits<double>::infinity()
                       : std::sqrt(ss / static_cast<double>(line.claims.size()));
    };
    const auto refit = [&](Line& line) {
        if (line.claims.size() < 2) return;
        std::vector<double> t, w2;
        for (const Claim& c : line.claims) {
            const double w = pool[static_cast<size_t>(c.bin)]
                                 [static_cast<size_t>(c.index)].center;
            t.push_back(c.bin);
            w2.push_back(w * w);
        }
        linear_fit(t, w2, line.a, line.b);
    };

    // Seed candidate lines from pairs of tall detections near the two ends
    // of the ramp, keep the candidate claiming the most detections, and
    // polish it with one refit-and-recount pass.
    const auto best_line = [&]() {
        std::vector<int> occupied;
        for (int bin = 0; bin < n_time_bins; ++bin) {
            const auto& flags = used[static_cast<size_t>(bin)];
            if (std::count(flags.begin(), flags.end(), 0) > 0)
                occupied.push_back(bin);
        }
        Line best;
        if (occupied.size() < 2) return best;
        std::vector<int> front(occupied.begin(),
                               occupied.begin() +
                                   std::min<size_t>(2, occupied.size()));
        std::vector<int> back(occupied.end() -
                                  std::min<size_t>(2, occupied.size()),
                              occupied.end());
        const auto seeds = [&](int bin) {
            std::vector<int> out;
            const auto& flags = used[static_cast<size_t>(bin)];
            for (size_t k = 0; k < flags.size() && out.size() < 3; ++k)
                if (!flags[k]) out.push_back(static_cast<int>(k));
            return out;
        };
        for (int fb : front)
            for (int lb : back) {
                if (lb <= fb) continue;
                for (int fi : seeds(fb))
                    for (int li : seeds(lb)) {
                        const double wf =
                            pool[static_cast<size_t>(fb)]
                                [static_cast<size_t>(fi)].center;
                        const double wl =
                            pool[static_cast<size_t>(lb)]
                                [static_cast<size_t>(li)].center;
                        Line cand;
                        cand.b = (wl * wl - wf * wf) / (lb - fb);
                        cand.a = wf * wf - cand.b * fb;
                        evaluate(cand);
                        refit(cand);
                        evaluate(cand);
                        if (cand.claims.size() > best.claims.size() ||
                            (cand.claims.size() == best.claims.size() &&
                             cand.rms < best.rms))
                            best = cand;
                    }
            }
        return best;
    };

    Line first = best_line();
    if (static_cast<int>(first.claims.size()) < n_time_bins / 2)
        throw fragmented();
    for (const Claim& c : first.claims)
        used[static_cast<size_t>(c.bin)][static_cast<size_t>(c.index)] = 1;
    Line second = best_line();
    if (static_cast<int>(second.claims.size()) < n_time_bins / 2)
        throw fragmented();

    // Particle 1 is the tweezer that starts at the high-power end of the
    // ramp, hence the higher x frequency at the start of the record.
    const Line* la = &first;
    const Line* lb = &second;
    if (lb->a > la->a) std::swap(la, lb);

    PowerCalibration cal;
    cal.p1.resize(static_cast<size_t>(n_time_bins));
    cal.p2.resize(static_cast<size_t>(n_time_bins));
    for (int bin = 0; bin < n_time_bins; ++bin) {
        cal.p1[static_cast<size_t>(bin)] =
            (la->a + la->b * bin) / (ref1 * ref1);
        cal.p2[static_cast<size_t>(bin)] =
            (lb->a + lb->b * bin) / (ref2 * ref2);
    }
    for (int bin = 0; bin < n_time_bins; ++bin)
        if (!(cal.p1[static_cast<size_t>(bin)] > 0.0) ||
            !(cal.p2[static_cast<size_t>(bin)] > 0.0))
            throw FitError("power calibration produced a non-positive power");
    return cal;
}

namespace {

// Per-bin branch observations pooled from the tracks of one axis.
struct BranchData {
    std::vector<int> bins;
    std::vector<double> lower, upper;   // centers, rad/s
    std::vector<double> weight;         // shared per-bin fit weight
    std::vector<double> width;          // mean peak width per bin
};

// The closed-form crossing model for a candidate coupling product c:
// power-scaled bare frequencies, self-energy shifts with the symmetric
// split |g1| = sqrt(c r), |g2| = sqrt(c / r), and the normal modes of the
// effective coupling.
struct CrossingModel {
    const CavitySpec* cavity = nullptr;
    Axis axis = Axis::Y;
    double ratio = 1.0;
    const PowerCalibration* powers = nullptr;

    NormalModes eval(double c, double ref1, double ref2, double power1,
                     double power2) const {
        const double g1_mag = std::sqrt(std::max(c, 0.0) * ratio * power1);
        const double g2_mag = std::sqrt(std::max(c, 0.0) / ratio * power2);
        const OptoCoupling g1{g1_mag, axis};
        const OptoCoupling g2{g2_mag, axis};
        const double w1 = ref1 * std::sqrt(power1);
        const double w2 = ref2 * std::sqrt(power2);
        const double s1 = w1 + self_energy(g1, w1, *cavity).shift;
        const double s2 = w2 + self_energy(g2, w2, *cavity).shift;
        const EffectiveCoupling G =
            effective_coupling(g1, g2, 0.5 * (s1 + s2), *cavity);
        return normal_mode_frequencies(s1, s2, G);
    }

    NormalModes eval_bin(double c, double ref1, double ref2, int bin) const {
        return eval(c, ref1, ref2, powers->p1[static_cast<size_t>(bin)],
                    powers->p2[static_cast<size_t>(bin)]);
    }
};

// Invert one edge observation (f_lower, f_upper) for the bare reference
// frequencies at the given c. particle1_upper says which particle owns the
// upper branch at this bin. Fixed-point iteration: the self-energy and |G|
// corrections are small against the mode separation at the ramp edges.
bool invert_edge(const CrossingModel& model, double c, int bin, double f_lower,
                 double f_upper, bool particle1_upper, double& ref1,
                 double& ref2) {
    const double power1 = model.powers->p1[static_cast<size_t>(bin)];
    const double power2 = model.powers->p2[static_cast<size_t>(bin)];
    double r1 = (particle1_upper ? f_upper : f_lower) / std::sqrt(power1);
    double r2 = (particle1_upper ? f_lower : f_upper) / std::sqrt(power2);

    for (int it = 0; it < 60; ++it) {
        const double g1_mag = std::sqrt(std::max(c, 0.0) * model.ratio * power1);
        const double g2_mag = std::sqrt(std::max(c, 0.0) / model.ratio * power2);
        const OptoCoupling g1{g1_mag, model.axis};
        const OptoCoupling g2{g2_mag, model.axis};
        const double w1 = r1 * std::sqrt(power1);
        const double w2 = r2 * std::sqrt(power2);
        const double shift1 = self_energy(g1, w1, *model.cavity).shift;
        const double shift2 = self_energy(g2, w2, *model.cavity).shift;
        const double mean_obs = 0.5 * (f_lower + f_upper);
        const double half_gap = 0.5 * (f_upper - f_lower);
        const EffectiveCoupling G =
            effective_coupling(g1, g2, mean_obs, *model.cavity);
        const double g_abs = std::abs(G.G);
        // lambda_pm inversion: the bare (shifted) half-detuning that
        // reproduces the observed half-gap.
        const double half_det =
            half_gap > g_abs ? std::sqrt(half_gap * half_gap - g_abs * g_abs)
                             : 0.0;
        const double upper_shifted = mean_obs + half_det;
        const double lower_shifted = mean_obs - half_det;
        const double s1 = particle1_upper ? upper_shifted : lower_shifted;
        const double s2 = particle1_upper ? lower_shifted : upper_shifted;
        const double next_r1 = (s1 - shift1) / std::sqrt(power1);
        const double next_r2 = (s2 - shift2) / std::sqrt(power2);
        const double change =
            std::abs(next_r1 - r1) + std::abs(next_r2 - r2);
        r1 = next_r1;
        r2 = next_r2;
        // Relative tolerance: an absolute one can sit below the spacing of
        // representable doubles at these magnitudes and never be met.
        if (change < 1e-12 * (std::abs(r1) + std::abs(r2) + 1.0)) {
            ref1 = r1;
            ref2 = r2;
            return true;
        }
    }
    return false;
}

} // namespace

FitResult fit_avoided_crossing(const std::vector<PeakTrack>& tracks,
                               const PowerCalibration& powers,
                               const ValidatedConfig& vc, Axis axis,
                               const FitOptions& options) {
    const ParticleSpec& part1 = vc.config.particles[0];
    const ParticleSpec& part2 = vc.config.particles[1];
    const int ax = static_cast<int>(axis);
    const int n_time = static_cast<int>(powers.p1.size());

    // Band selection uses the nominal reference frequencies only as a
    // coarse prior for which tracks belong to this axis.
    double pmin = std::numeric_limits<double>::max(), pmax = 0.0;
    for (int t = 0; t < n_time; ++t) {
        pmin = std::min({pmin, powers.p1[static_cast<size_t>(t)],
                         powers.p2[static_cast<size_t>(t)]});
        pmax = std::max({pmax, powers.p1[static_cast<size_t>(t)],
                         powers.p2[static_cast<size_t>(t)]});
    }
    const double ref_lo = std::min(part1.mech_freq[ax], part2.mech_freq[ax]);
    const double ref_hi = std::max(part1.mech_freq[ax], part2.mech_freq[ax]);
    const double margin = options.band_margin > 0.0
                              ? options.band_margin
                              : std::max(two_pi * 1.5e3, 0.03 * ref_hi);
    const double band_lo = ref_lo * std::sqrt(pmin) - margin;
    const double band_hi = ref_hi * std::sqrt(pmax) + margin;

    std::vector<const PeakTrack*> selected =
        tracks_in_band(tracks, band_lo, band_hi);

    // Pool the track points per time bin and keep the two most prominent.
    // Short-lived tracks are detection noise: a mechanical mode persists
    // over an appreciable part of the ramp.
    const int min_track = std::max(2, n_time / 8);
    std::vector<std::vector<Peak>> per_bin(static_cast<size_t>(n_time));
    for (const PeakTrack* track : selected) {
        if (track->size() < min_track) continue;
        for (int i = 0; i < track->size(); ++i) {
            const int bin = track->bins[static_cast<size_t>(i)];
            if (bin >= 0 && bin < n_time)
                per_bin[static_cast<size_t>(bin)].push_back(
                    track->peaks[static_cast<size_t>(i)]);
        }
    }

    // Single-bin noise spikes show up as implausibly narrow peaks that can
    // out-shine a weak branch near the crossing. A mechanical line is never
    // much narrower than its siblings in the same band, so detections far
    // below the median linewidth are dropped before the pairs are picked.
    std::vector<double> pooled_widths;
    for (const auto& pts : per_bin)
        for (const Peak& p : pts) pooled_widths.push_back(p.width);
    double width_floor = 0.0;
    if (!pooled_widths.empty()) {
        std::nth_element(pooled_widths.begin(),
                         pooled_widths.begin() + pooled_widths.size() / 2,
                         pooled_widths.end());
        width_floor = 0.45 * pooled_widths[pooled_widths.size() / 2];
    }

    BranchData data;
    for (int bin = 0; bin < n_time; ++bin) {
        auto& pts = per_bin[static_cast<size_t>(bin)];
        pts.erase(std::remove_if(
                      pts.begin(), pts.end(),
                      [&](const Peak& p) { return p.width < width_floor; }),
                  pts.end());
        if (pts.size() < 2) continue;
        std::sort(pts.begin(), pts.end(),
                  [](const Peak& a, const Peak& b) { return a.height > b.height; });
        Peak lo_peak = pts[0], hi_peak = pts[1];
        if (lo_peak.center > hi_peak.center) std::swap(lo_peak, hi_peak);

        const double mean_width = 0.5 * (lo_peak.width + hi_peak.width);
        // Merged bins: branches closer than a fifth of a linewidth carry no
        // usable splitting information and are excluded from the fit.
        if (hi_peak.center - lo_peak.center < 0.2 * mean_width) continue;

        // Center uncertainty scales as width / (height * sqrt(bins across
        // the peak)); with a uniform grid that is sqrt(width)/height up to
        // a constant, which normalization removes.
        auto center_sigma = [](const Peak& p) {
            return std::sqrt(std::max(p.width, 1e-300)) /
                   std::max(p.height, 1e-300);
        };
        const double sigma = 0.5 * (center_sigma(lo_peak) + center_sigma(hi_peak));
        data.bins.push_back(bin);
        data.lower.push_back(lo_peak.center);
        data.upper.push_back(hi_peak.center);
        data.weight.push_back(1.0 / (sigma * sigma));
        data.width.push_back(mean_width);
    }

    // The branch gap evolves smoothly with power: even through the crossing
    // it closes over several bins, never in one. A gap far below both of
    // its neighbours marks a spurious pair (a noise line paired with one
    // branch), not the avoided crossing itself.
    if (data.bins.size() >= 3) {
        const int n_data = static_cast<int>(data.bins.size());
        const auto gap = [&](int i) {
            return data.upper[static_cast<size_t>(i)] -
                   data.lower[static_cast<size_t>(i)];
        };
        std::vector<char> keep(static_cast<size_t>(n_data), 1);
        for (int i = 0; i < n_data; ++i) {
            double neighbour = std::numeric_limits<double>::max();
            if (i > 0) neighbour = std::min(neighbour, gap(i - 1));
            if (i + 1 < n_data) neighbour = std::min(neighbour, gap(i + 1));
            if (gap(i) < 0.5 * neighbour) keep[static_cast<size_t>(i)] = 0;
        }
        BranchData kept;
        for (int i = 0; i < n_data; ++i) {
            if (!keep[static_cast<size_t>(i)]) continue;
            kept.bins.push_back(data.bins[static_cast<size_t>(i)]);
            kept.lower.push_back(data.lower[static_cast<size_t>(i)]);
            kept.upper.push_back(data.upper[static_cast<size_t>(i)]);
            kept.weight.push_back(data.weight[static_cast<size_t>(i)]);
            kept.width.push_back(data.width[static_cast<size_t>(i)]);
        }
        data = std::move(kept);
    }

    const int n_used = static_cast<int>(data.bins.size());
    if (n_used < options.min_branch_bins) {
        std::ostringstream msg;
        msg << "avoided-crossing fit on axis " << axis_name(axis) << " has "
            << n_used << " usable bins, needs " << options.min_branch_bins
            << " on each branch";
        throw FitError(msg.str());
    }

    // Normalize weights so the scale-free residual logic stays tame.
    const double wmax = *std::max_element(data.weight.begin(), data.weight.end());
    for (double& w : data.weight) w /= wmax;

    CrossingModel model;
    model.cavity = &vc.config.cavity;
    model.axis = axis;
    model.ratio = options.coupling_ratio;
    model.powers = &powers;

    // Branch-to-particle assignment from the nominal references (prior
    // only; the fitted references come from the data). The upper branch
    // swaps particles across the crossing, which this tracks through the
    // power ratio.
    auto particle1_upper = [&](int bin) {
        return part1.mech_freq[ax] *
                   std::sqrt(powers.p1[static_cast<size_t>(bin)]) >
               part2.mech_freq[ax] *
                   std::sqrt(powers.p2[static_cast<size_t>(bin)]);
    };

    // Bare references at a candidate c: invert up to three bins at each
    // ramp edge and average the results.
    auto solve_refs = [&](double c, double& ref1, double& ref2) -> bool {
        double acc1 = 0.0, acc2 = 0.0;
        int count = 0;
        const int n_edge = std::min(3, n_used / 2);
        for (int k = 0; k < n_edge; ++k) {
            for (int idx : {k, n_used - 1 - k}) {
                const int bin = data.bins[static_cast<size_t>(idx)];
                const bool upper_is_1 = particle1_upper(bin);
                double r1 = 0.0, r2 = 0.0;
                if (!invert_edge(model, c, bin,
                                 data.lower[static_cast<size_t>(idx)],
                                 data.upper[static_cast<size_t>(idx)],
                                 upper_is_1, r1, r2))
                    return false;
                acc1 += r1;
                acc2 += r2;
                ++count;
            }
        }
        ref1 = acc1 / count;
        ref2 = acc2 / count;
        return true;
    };

    auto chi2 = [&](double c) -> double {
        double ref1 = 0.0, ref2 = 0.0;
        if (!solve_refs(c, ref1, ref2))
            return std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (int i = 0; i < n_used; ++i) {
            const NormalModes nm =
                model.eval_bin(c, ref1, ref2, data.bins[static_cast<size_t>(i)]);
            const double rl = data.lower[static_cast<size_t>(i)] - nm.lambda_minus;
            const double ru = data.upper[static_cast<size_t>(i)] - nm.lambda_plus;
            acc += data.weight[static_cast<size_t>(i)] * (rl * rl + ru * ru);
        }
        return acc;
    };

    // Initial scale for c from the smallest observed branch separation:
    // min gap ~= 2|G| and G is linear in c.
    double min_gap = std::numeric_limits<double>::max();
    double gap_mean_freq = 0.0;
    for (int i = 0; i < n_used; ++i) {
        const double gap = data.upper[static_cast<size_t>(i)] -
                           data.lower[static_cast<size_t>(i)];
        if (gap < min_gap) {
            min_gap = gap;
            gap_mean_freq = 0.5 * (data.upper[static_cast<size_t>(i)] +
                                   data.lower[static_cast<size_t>(i)]);
        }
    }
    const double response =
        std::abs(cavity_response(gap_mean_freq, vc.config.cavity));
    double c_scale = 0.5 * min_gap / std::max(response, 1e-300);
    // The excluded merged region hides gaps below ~0.2 linewidths; never
    // start the bracket below the equivalent floor.
    const double width_med = data.width[static_cast<size_t>(n_used / 2)];
    c_scale = std::max(c_scale, 0.1 * width_med / std::max(response, 1e-300));

    // Golden-section over c >= 0, expanding the bracket while the minimum
    // sits on the upper edge.
    double lo = 0.0, hi = 4.0 * c_scale;
    double best_c = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (int expand = 0; expand < 8; ++expand) {
        const double inv_phi = 0.6180339887498949;
        double a = lo, b = hi;
        double x1 = b - inv_phi * (b - a);
        double x2 = a + inv_phi * (b - a);
        double f1 = chi2(x1), f2 = chi2(x2);
        for (int it = 0; it < 90; ++it) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = chi2(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = chi2(x2);
            }
            if (b - a < 1e-10 * std::max(hi, 1.0)) break;
        }
        best_c = 0.5 * (a + b);
        best_val = chi2(best_c);
        if (best_c < 0.94 * hi) break;
        lo = 0.5 * hi;
        hi *= 4.0;
    }
    if (!std::isfinite(best_val))
        throw FitError("avoided-crossing fit did not converge "
                       "(edge inversion failed at every candidate)");

    FitResult fit;
    fit.axis = axis;
    fit.coupling_product = best_c;
    fit.n_bins_used = n_used;

    double ref1 = 0.0, ref2 = 0.0;
    solve_refs(best_c, ref1, ref2);

    // Minimal branch gap over the ramp at the fitted c, scanned on a 10x
    // refined linear interpolation of the calibrated powers.
    double splitting = std::numeric_limits<double>::max();
    for (int t = 0; t < n_time; ++t) {
        const int steps = (t + 1 < n_time) ? 10 : 1;
        for (int s = 0; s < steps; ++s) {
            const double frac = s / 10.0;
            const size_t a = static_cast<size_t>(t);
            const size_t b = (t + 1 < n_time) ? a + 1 : a;
            const double power1 =
                powers.p1[a] * (1.0 - frac) + powers.p1[b] * frac;
            const double power2 =
                powers.p2[a] * (1.0 - frac) + powers.p2[b] * frac;
            const NormalModes nm = model.eval(best_c, ref1, ref2, power1, power2);
            splitting = std::min(splitting, nm.lambda_plus - nm.lambda_minus);
        }
    }
    fit.splitting = splitting;

    // One-sigma uncertainty from the residual curvature, with the residual
    // variance estimated from the fit itself.
    const int dof = std::max(1, 2 * n_used - 3);
    const double s2 = best_val / dof;
    const double h = std::max(1e-3 * best_c, 1e-6 * c_scale);
    const double curvature =
        (chi2(best_c + h) - 2.0 * best_val + chi2(std::max(best_c - h, 0.0))) /
        (h * h);
    if (curvature > 0.0) {
        fit.sigma_product = std::sqrt(2.0 * s2 / curvature);
    } else {
        fit.sigma_product = std::max(best_c, c_scale);
        fit.warning = "near-degenerate curvature; sigma widened to the full "
                      "coupling scale";
    }
    // splitting is linear in c, so relative errors carry over directly.
    fit.sigma_splitting =
        best_c > 0.0 ? fit.splitting * fit.sigma_product / best_c
                     : 2.0 * response * fit.sigma_product;

    double unweighted = 0.0;
    for (int i = 0; i < n_used; ++i) {
        const NormalModes nm =
            model.eval_bin(best_c, ref1, ref2, data.bins[static_cast<size_t>(i)]);
        const double rl = data.lower[static_cast<size_t>(i)] - nm.lambda_minus;
        const double ru = data.upper[static_cast<size_t>(i)] - nm.lambda_plus;
        unweighted += rl * rl + ru * ru;
    }
    fit.residual = std::sqrt(unweighted / (2.0 * n_used));

    std::vector<double> widths = data.width;
    std::nth_element(widths.begin(), widths.begin() + n_used / 2, widths.end());
    const Resolvability verdict =
        resolvability(fit.splitting, widths[static_cast<size_t>(n_used) / 2]);
    fit.resolved = verdict.resolved;
    fit.near_floor = verdict.near_floor;
    fit.resolution_floor = verdict.floor;
    return fit;
}

Resolvability resolvability(double splitting, double peak_width) {
    if (!(peak_width > 0.0))
        throw ValidationError("peak width must be positive");
    if (splitting < 0.0)
        throw ValidationError("splitting must be non-negative");
    Resolvability r;
    r.floor = 0.25 * peak_width;
    r.resolved = 0.5 * splitting >= r.floor;
    r.near_floor = r.resolved && 0.5 * splitting < 1.5 * r.floor;
    return r;
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
    return nlohmann::json{
        {"axis", axis_name(fit.axis)},
        {"coupling_product_hz2", fit.coupling_product / (two_pi * two_pi)},
        {"splitting_hz", hz(fit.splitting)},
        {"sigma_hz", hz(fit.sigma_splitting)},
        {"resolved", fit.resolved},
        {"residual", hz(fit.residual)},
        {"n_bins_used", fit.n_bins_used}};
}

} // namespace levcav
