#pragma once

#include <complex>
#include <string>
#include <vector>

#include "levcav/params.hpp"

namespace levcav {

// Per-axis optomechanical coupling of one particle to the cavity mode.
// Real-valued under the default phase convention (the trig factor carries
// the sign); complex overrides enter only through user-supplied values.
struct OptoCoupling {
    std::complex<double> g{0.0, 0.0}; // rad/s
    Axis axis = Axis::Y;
};

// Cavity-mediated particle-particle coupling G_{mu,mu}.
struct EffectiveCoupling {
    std::complex<double> G{0.0, 0.0}; // rad/s
    Axis axis = Axis::Y;
};

struct NormalModes {
    double lambda_minus = 0.0; // rad/s
    double lambda_plus = 0.0;  // rad/s
};

// Cavity-induced frequency shift (optical spring) and extra damping
// (cavity cooling) of one mechanical mode.
struct SelfEnergy {
    double shift = 0.0;   // Re Sigma, rad/s, negative = softening
    double damping = 0.0; // Gamma_opt = -2 Im Sigma, rad/s
};

// g = g_max * sqrt(P/P_ref) * sin(phi) for the transverse axes (x, y),
// cos(phi) for z: motion along the cavity axis couples at the intensity
// slopes, motion across it at the nodes.
OptoCoupling single_particle_coupling(const StandingWavePhase& phi, Axis axis,
                                      double power, const CavitySpec& cavity);

// The two-pole cavity response summed over the two sidebands at +/-Omega:
//   1/((Delta+Omega) + i kappa/2) + 1/((Delta-Omega) - i kappa/2)
std::complex<double> cavity_response(double omega, const CavitySpec& cavity);

// Effective coupling between two degenerate mechanical modes after
// eliminating the cavity:
//   G = g1 g2* / ((Delta+Omega) + i kappa/2) + g1* g2 / ((Delta-Omega) - i kappa/2)
// evaluated exactly (no approximation in kappa or Delta).
EffectiveCoupling effective_coupling(const OptoCoupling& g1,
                                     const OptoCoupling& g2, double omega,
                                     const CavitySpec& cavity);

// Rotating-wave normal modes of two coupled oscillators at the (already
// self-energy-shifted) frequencies omega1, omega2:
//   lambda_pm = (omega1+omega2)/2 +/- sqrt((omega1-omega2)^2/4 + |G|^2)
NormalModes normal_mode_frequencies(double omega1, double omega2,
                                    const EffectiveCoupling& G);

// Minimal gap between the two normal-mode branches over a frequency sweep,
// attained at degeneracy: 2|G|.
double min_splitting(const EffectiveCoupling& G);

// Optical spring and damping of a single mode,
//   Sigma(Omega) = -|g|^2 [ 1/((Delta+Omega) + i kappa/2)
//                         + 1/((Delta-Omega) - i kappa/2) ],
// shift = Re Sigma, damping = -2 Im Sigma. For Delta > 0 the damping is
// positive (cooling) and the shift negative, both growing as Delta comes
// down toward Omega.
SelfEnergy self_energy(const OptoCoupling& g, double omega,
                       const CavitySpec& cavity);

// Electrostatic coupling rate between two charged particles,
// q1 q2 e^2 / (4 pi eps0 d^3 * 2 m Omega). Scales as 1/d^3.
double coulomb_coupling_estimate(const ParticleSpec& p1,
                                 const ParticleSpec& p2, double distance,
                                 double omega);

// Light-mediated short-range (optical binding) coupling rate. Exact 1/d
// scaling with the amplitude pinned by a single calibrated model constant.
double optical_binding_estimate(const ParticleSpec& p1,
                                const ParticleSpec& p2, double distance,
                                double omega, const CavitySpec& cavity);

// Everything the closed-form model says about one axis of a validated
// configuration: per-particle couplings, self-energies, effective coupling
// at the mean mechanical frequency, and the resulting normal modes.
struct EffectiveModel {
    Axis axis = Axis::Y;
    OptoCoupling g1, g2;
    SelfEnergy sigma1, sigma2;
    double omega1_shifted = 0.0; // rad/s
    double omega2_shifted = 0.0; // rad/s
    EffectiveCoupling G;
    NormalModes modes;
};

EffectiveModel effective_model(const ValidatedConfig& vc, Axis axis);

// One row of a parameter sweep. value_si is the swept variable in its I/O
// unit (detuning: Hz, distance: m, phase: rad); splittings are 2|G| in Hz;
// G_y is the complex y-axis effective coupling in Hz.
struct SweepPoint {
    double value_si = 0.0;
    double splitting_hz_y = 0.0;
    double splitting_hz_z = 0.0;
    std::complex<double> G_y{0.0, 0.0};
};

struct SweepResult {
    std::string variable; // "detuning" | "distance" | "phase"
    std::vector<SweepPoint> points;
};

// Closed-form sweeps over Eq. parameters with everything else held at the
// configured values. detunings in rad/s, distances in m (particle 1 stays
// put, particle 2 moves), phases in rad (both particles shifted together,
// keeping their separation).
SweepResult detuning_sweep(const ValidatedConfig& vc,
                           const std::vector<double>& detunings);
SweepResult distance_sweep(const ValidatedConfig& vc,
                           const std::vector<double>& distances);
SweepResult phase_sweep(const ValidatedConfig& vc,
                        const std::vector<double>& phases);

// CSV with header sweep_variable,value_si,splitting_hz_y,splitting_hz_z,
// G_real,G_imag.
void write_sweep_csv(const std::string& path, const SweepResult& sweep);

} // namespace levcav
