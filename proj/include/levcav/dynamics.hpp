#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "levcav/coupling.hpp"
#include "levcav/params.hpp"

namespace levcav {

// One mechanical mode as it enters the state-space model. q is the
// dimensionless position quadrature with stationary variance nbar;
// multiply by position_scale = sqrt(hbar/(m Omega)) for meters.
struct MechMode {
    double omega = 0.0;          // rad/s
    double gamma = 0.0;          // rad/s
    double nbar = 0.0;           // k_B T / (hbar Omega)
    double position_scale = 0.0; // m
    std::complex<double> g{0.0, 0.0}; // coupling to the cavity, rad/s
};

// Linear Langevin model in the quadrature basis. State ordering is
// (q1, p1, q2, p2, X, Y) for the coupled problem; the cavity block is
// absent for purely mechanical models.
//
//   q_i' =  Omega_i p_i
//   p_i' = -Omega_i q_i - gamma_i p_i - 2 g_i X + xi_i
//   X'   = -kappa/2 X + Delta Y + xi_X
//   Y'   = -Delta X - kappa/2 Y - 2 sum_i g_i q_i + xi_Y
//
// with <xi_i xi_i> = 2 gamma_i nbar_i (thermal force) and
// <xi_X xi_X> = <xi_Y xi_Y> = kappa/2 (cavity input noise).
struct StateSpaceModel {
    Eigen::MatrixXd drift;     // A
    Eigen::MatrixXd diffusion; // D, symmetric PSD
    std::vector<std::string> labels;

    std::vector<MechMode> mechanics;
    bool has_cavity = false;
    double kappa = 0.0;    // rad/s
    double detuning = 0.0; // rad/s
    Axis axis = Axis::Y;

    Eigen::Index dim() const { return drift.rows(); }
};

// Coupled two-particle + cavity model for one axis of a validated
// configuration. Throws StabilityError (naming the eigenvalue) if any drift
// eigenvalue has a positive real part.
StateSpaceModel build_state_space(const ValidatedConfig& vc, Axis axis);

// Single damped oscillator without a cavity; the smallest model the
// integrator and the spectral estimators accept.
StateSpaceModel build_single_mode(double omega, double gamma,
                                  double temperature, double mass);

struct ModeFrequency {
    double omega = 0.0;   // rad/s, positive branch of the eigenvalue pair
    double damping = 0.0; // full linewidth, -2 Re(eigenvalue), rad/s
};

// Oscillatory eigenvalues of the drift matrix, sorted ascending by
// frequency. The damping entries are full widths (FWHM of the
// corresponding spectral peaks).
std::vector<ModeFrequency> eigenfrequencies(const StateSpaceModel& model);

// Stationary covariance C solving A C + C A^T + D = 0.
Eigen::MatrixXd stationary_covariance(const StateSpaceModel& model);

// A detected quantity: the sum of the PSDs of rows * state, plus a flat
// noise floor. Using independent rows (rather than one summed row) models
// channels whose shot noise is uncorrelated.
struct Observable {
    Eigen::MatrixXd rows; // each row is a linear form on the state
    double floor = 0.0;   // flat PSD background
    std::string name;
};

// Physical position of one particle (meters).
Observable position_observable(const StateSpaceModel& model, int particle);

// Balanced heterodyne detection of the cavity output: both output
// quadratures sqrt(kappa) X, sqrt(kappa) Y against a unit shot-noise
// floor. The spectral axis is offset so the tweezer frequency sits at
// zero; the mechanical anti-Stokes sidebands of every coupled particle
// then appear directly at Omega_{i,mu}.
Observable heterodyne_signal(const StateSpaceModel& model);

// One-sided power spectral density. frequencies are rad/s, strictly
// increasing; values are densities per Hz, so the variance of the
// observable is the integral of values over nu = omega/2pi.
struct PSDCurve {
    Eigen::VectorXd frequencies; // rad/s
    Eigen::VectorXd values;      // units^2 / Hz
};

// S(omega) = sum_rows c^T (i omega I - A)^-1 D (-i omega I - A^T)^-1 c,
// doubled for the one-sided convention, plus the observable's floor.
PSDCurve psd_frequency_domain(const StateSpaceModel& model,
                              const Observable& observable,
                              const Eigen::VectorXd& grid);

// Largest integration step the fast scales allow,
// 0.1 * min(2 pi / Omega_max, 1 / kappa).
double max_sde_step(const StateSpaceModel& model);

// Gaussian stream with an explicitly owned generator, so every consumer of
// randomness in the library is seeded independently and reproducibly.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}
    double operator()() { return normal_(rng_); }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_;
};

// Exact one-step discretization of the linear SDE: state transition
// Phi = exp(A dt) and per-step noise covariance
// Q = int_0^dt exp(A s) D exp(A^T s) ds, both obtained from one matrix
// exponential of the (2n x 2n) Van Loan block matrix. Stepping with these
// is free of time-discretization bias at any dt.
class ExactStepper {
public:
    ExactStepper(const StateSpaceModel& model, double dt);

    void step(Eigen::VectorXd& state, GaussianSource& noise) const;

    const Eigen::MatrixXd& transition() const { return phi_; }
    const Eigen::MatrixXd& noise_factor() const { return noise_factor_; }

private:
    Eigen::MatrixXd phi_;
    Eigen::MatrixXd noise_factor_; // Q = L L^T
    mutable Eigen::VectorXd draw_;
};

// Joint exact propagator for (state, window average): advances the state
// by one acquisition window T and simultaneously draws the continuous-time
// average of the state over that window, with the exact joint Gaussian
// statistics of the augmented linear SDE. This is how the virtual
// experiments sample band-limited detector records without resolving the
// cavity timescale step by step.
class WindowAverager {
public:
    WindowAverager(const StateSpaceModel& model, double window);

    // On entry `state` is the state at the window start; on exit it is the
    // state at the window end and `average` the window-averaged state.
    void step(Eigen::VectorXd& state, Eigen::VectorXd& average,
              GaussianSource& noise) const;

    double window() const { return window_; }

private:
    double window_;
    Eigen::MatrixXd phi_;        // state transition over the window
    Eigen::MatrixXd avg_map_;    // mean contribution of the start state
    Eigen::MatrixXd noise_factor_; // joint (state, average) noise, 2n x 2n
    mutable Eigen::VectorXd draw_;
};

// Integrated trajectory. samples(t, k) is state component k at time t*dt.
struct TimeTrace {
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> labels;
    Eigen::MatrixXd samples;
};

// Exact-discretization integration starting from a draw of the stationary
// state. Throws StepSizeError if dt exceeds max_sde_step.
TimeTrace integrate_sde(const StateSpaceModel& model, double duration,
                        double dt, std::uint64_t seed);

// Reduction of the full model to the closed-form description: self-energy
// shifted frequencies and the effective coupling at the mean mechanical
// frequency. Valid deep in the adiabatic regime; outside kappa or |Delta|
// >= 5 Omega a warning is attached and the numbers still returned.
struct EffectiveReduction {
    double omega1_shifted = 0.0; // rad/s
    double omega2_shifted = 0.0; // rad/s
    EffectiveCoupling G;
    std::string warning;
};

EffectiveReduction effective_model_reduction(const StateSpaceModel& model);

// Welch PSD estimate with a Hann window, 50% overlap and per-segment mean
// removal, in the same one-sided per-Hz normalization as
// psd_frequency_domain.
PSDCurve welch_psd(const std::vector<double>& samples, double dt,
                   int segment_length);

// Binary columnar trace file: header (dt, seed, labels) then one
// little-endian float64 column per state component.
void write_trace(const std::string& path, const TimeTrace& trace);
TimeTrace read_trace(const std::string& path);

// CSV with header frequency_hz,psd_value.
void write_psd_csv(const std::string& path, const PSDCurve& curve);

} // namespace levcav
