#include "levcav/coupling.hpp"

#include <cmath>

#include "levcav/io.hpp"

namespace levcav {

namespace {

// Optical-binding reference point: coupling amplitude at 3.5 wavelengths
// of separation. Together with the exact 1/d law this fixes the estimate
// everywhere.
constexpr double binding_ref_coupling = two_pi * 140.0; // rad/s
constexpr double binding_ref_distance = 3.5;            // units of wavelength

} // namespace

OptoCoupling single_particle_coupling(const StandingWavePhase& phi, Axis axis,
                                      double power, const CavitySpec& cavity) {
    if (!(power > 0.0)) throw ValidationError("power must be positive");
    // Tolerate rounded grid endpoints like 1.5708 just past pi/2.
    if (phi.phase < -1e-12 || phi.phase > pi / 2.0 + 1e-4)
        throw ValidationError("standing-wave phase must lie in [0, pi/2]");
    const double trig =
        axis == Axis::Z ? std::cos(phi.phase) : std::sin(phi.phase);
    const double magnitude = cavity.coupling_scale_axis(axis) *
                             std::sqrt(power / cavity.ref_power) * trig;
    return OptoCoupling{std::complex<double>(magnitude, 0.0), axis};
}

std::complex<double> cavity_response(double omega, const CavitySpec& cavity) {
    const std::complex<double> i(0.0, 1.0);
    const double delta = cavity.detuning;
    const double half_kappa = 0.5 * cavity.linewidth;
    return 1.0 / ((delta + omega) + i * half_kappa) +
           1.0 / ((delta - omega) - i * half_kappa);
}

EffectiveCoupling effective_coupling(const OptoCoupling& g1,
                                     const OptoCoupling& g2, double omega,
                                     const CavitySpec& cavity) {
    if (g1.axis != g2.axis)
        throw ValidationError("couplings belong to different axes");
    if (!(omega > 0.0))
        throw ValidationError("mechanical frequency must be positive");
    const std::complex<double> i(0.0, 1.0);
    const double delta = cavity.detuning;
    const double half_kappa = 0.5 * cavity.linewidth;
    const std::complex<double> G =
        g1.g * std::conj(g2.g) / ((delta + omega) + i * half_kappa) +
        std::conj(g1.g) * g2.g / ((delta - omega) - i * half_kappa);
    return EffectiveCoupling{G, g1.axis};
}

NormalModes normal_mode_frequencies(double omega1, double omega2,
                                    const EffectiveCoupling& G) {
    if (!(omega1 > 0.0) || !(omega2 > 0.0))
        throw ValidationError("mechanical frequencies must be positive");
    const double mean = 0.5 * (omega1 + omega2);
    const double half_det = 0.5 * (omega1 - omega2);
    const double root = std::hypot(half_det, std::abs(G.G));
    return NormalModes{mean - root, mean + root};
}

double min_splitting(const EffectiveCoupling& G) { return 2.0 * std::abs(G.G); }

SelfEnergy self_energy(const OptoCoupling& g, double omega,
                       const CavitySpec& cavity) {
    if (!(omega > 0.0))
        throw ValidationError("mechanical frequency must be positive");
    if (!(cavity.linewidth > 0.0))
        throw ValidationError("cavity linewidth must be positive");
    const double g2 = std::norm(g.g);
    const std::complex<double> sigma = -g2 * cavity_response(omega, cavity);
    return SelfEnergy{sigma.real(), -2.0 * sigma.imag()};
}

double coulomb_coupling_estimate(const ParticleSpec& p1,
                                 const ParticleSpec& p2, double distance,
                                 double omega) {
    if (!(distance > 0.0)) throw ValidationError("distance must be positive");
    if (!(omega > 0.0))
        throw ValidationError("mechanical frequency must be positive");
    const double q1 = p1.charge * elementary_charge;
    const double q2 = p2.charge * elementary_charge;
    const double mass = std::sqrt(mass_from_spec(p1) * mass_from_spec(p2));
    const double spring = std::abs(q1 * q2) /
                          (4.0 * pi * vacuum_permittivity *
                           distance * distance * distance);
    return spring / (2.0 * mass * omega);
}

double optical_binding_estimate(const ParticleSpec& p1,
                                const ParticleSpec& p2, double distance,
                                double omega, const CavitySpec& cavity) {
    if (!(distance > 0.0)) throw ValidationError("distance must be positive");
    // Particle and trap parameters enter only through the calibrated
    // reference amplitude; the estimate exists to check "below the
    // resolution floor" rather than for precision.
    (void)p1;
    (void)p2;
    (void)omega;
    return binding_ref_coupling *
           (binding_ref_distance * cavity.wavelength) / distance;
}

EffectiveModel effective_model(const ValidatedConfig& vc, Axis axis) {
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const CavitySpec& cavity = vc.config.cavity;

    EffectiveModel m;
    m.axis = axis;
    const StandingWavePhase phi1 =
        phase_from_position(p1.position, cavity.wavelength);
    const StandingWavePhase phi2 =
        phase_from_position(p2.position, cavity.wavelength);
    m.g1 = single_particle_coupling(phi1, axis, p1.power, cavity);
    m.g2 = single_particle_coupling(phi2, axis, p2.power, cavity);

    const double omega1 = p1.mech_freq_axis(axis);
    const double omega2 = p2.mech_freq_axis(axis);
    m.sigma1 = self_energy(m.g1, omega1, cavity);
    m.sigma2 = self_energy(m.g2, omega2, cavity);
    m.omega1_shifted = omega1 + m.sigma1.shift;
    m.omega2_shifted = omega2 + m.sigma2.shift;

    const double omega_mean = 0.5 * (m.omega1_shifted + m.omega2_shifted);
    m.G = effective_coupling(m.g1, m.g2, omega_mean, cavity);
    m.modes = normal_mode_frequencies(m.omega1_shifted, m.omega2_shifted, m.G);
    return m;
}

namespace {

// Splittings for both transverse-coupled axes at fixed couplings; the
// closed-form sweeps evaluate Eq.-level quantities only (no self-energy),
// so the advertised functional laws hold exactly.
SweepPoint sweep_point(const OptoCoupling& gy1, const OptoCoupling& gy2,
                       const OptoCoupling& gz1, const OptoCoupling& gz2,
                       double omega_y, double omega_z,
                       const CavitySpec& cavity, double value_si) {
    SweepPoint point;
    point.value_si = value_si;
    const EffectiveCoupling Gy = effective_coupling(gy1, gy2, omega_y, cavity);
    const EffectiveCoupling Gz = effective_coupling(gz1, gz2, omega_z, cavity);
    point.splitting_hz_y = hz(min_splitting(Gy));
    point.splitting_hz_z = hz(min_splitting(Gz));
    point.G_y = Gy.G / two_pi;
    return point;
}

struct SweepInputs {
    StandingWavePhase phi1, phi2;
    double omega_y, omega_z; // mean bare frequencies, rad/s
};

SweepInputs sweep_inputs(const ValidatedConfig& vc) {
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const double wavelength = vc.config.cavity.wavelength;
    SweepInputs in;
    in.phi1 = phase_from_position(p1.position, wavelength);
    in.phi2 = phase_from_position(p2.position, wavelength);
    in.omega_y = 0.5 * (p1.mech_freq[1] + p2.mech_freq[1]);
    in.omega_z = 0.5 * (p1.mech_freq[2] + p2.mech_freq[2]);
    return in;
}

} // namespace

SweepResult detuning_sweep(const ValidatedConfig& vc,
                           const std::vector<double>& detunings) {
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const SweepInputs in = sweep_inputs(vc);

    SweepResult result;
    result.variable = "detuning";
    for (double delta : detunings) {
        CavitySpec cavity = vc.config.cavity;
        cavity.detuning = delta;
        const OptoCoupling gy1 =
            single_particle_coupling(in.phi1, Axis::Y, p1.power, cavity);
        const OptoCoupling gy2 =
            single_particle_coupling(in.phi2, Axis::Y, p2.power, cavity);
        const OptoCoupling gz1 =
            single_particle_coupling(in.phi1, Axis::Z, p1.power, cavity);
        const OptoCoupling gz2 =
            single_particle_coupling(in.phi2, Axis::Z, p2.power, cavity);
        result.points.push_back(sweep_point(gy1, gy2, gz1, gz2, in.omega_y,
                                            in.omega_z, cavity, hz(delta)));
    }
    return result;
}

SweepResult distance_sweep(const ValidatedConfig& vc,
                           const std::vector<double>& distances) {
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const CavitySpec& cavity = vc.config.cavity;
    const SweepInputs in = sweep_inputs(vc);

    SweepResult result;
    result.variable = "distance";
    for (double d : distances) {
        if (!(d > 0.0)) throw ValidationError("distance must be positive");
        const StandingWavePhase phi2 =
            phase_from_position(p1.position + d, cavity.wavelength);
        const OptoCoupling gy1 =
            single_particle_coupling(in.phi1, Axis::Y, p1.power, cavity);
        const OptoCoupling gy2 =
            single_particle_coupling(phi2, Axis::Y, p2.power, cavity);
        const OptoCoupling gz1 =
            single_particle_coupling(in.phi1, Axis::Z, p1.power, cavity);
        const OptoCoupling gz2 =
            single_particle_coupling(phi2, Axis::Z, p2.power, cavity);
        result.points.push_back(sweep_point(gy1, gy2, gz1, gz2, in.omega_y,
                                            in.omega_z, cavity, d));
    }
    return result;
}

SweepResult phase_sweep(const ValidatedConfig& vc,
                        const std::vector<double>& phases) {
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const CavitySpec& cavity = vc.config.cavity;

    // Both particles share the swept phase, which requires a separation of
    // a whole number of half-wavelengths.
    const double half = 0.5 * cavity.wavelength;
    const double frac = std::abs(
        vc.distance / half - std::round(vc.distance / half));
    if (frac > 1e-6)
        throw ValidationError("phase sweep requires the particle separation "
                              "to be a multiple of half the wavelength");

    const SweepInputs in = sweep_inputs(vc);
    SweepResult result;
    result.variable = "phase";
    for (double phase : phases) {
        const StandingWavePhase phi{phase};
        const OptoCoupling gy1 =
            single_particle_coupling(phi, Axis::Y, p1.power, cavity);
        const OptoCoupling gy2 =
            single_particle_coupling(phi, Axis::Y, p2.power, cavity);
        const OptoCoupling gz1 =
            single_particle_coupling(phi, Axis::Z, p1.power, cavity);
        const OptoCoupling gz2 =
            single_particle_coupling(phi, Axis::Z, p2.power, cavity);
        result.points.push_back(sweep_point(gy1, gy2, gz1, gz2, in.omega_y,
                                            in.omega_z, cavity, phase));
    }
    return result;
}

void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
    CsvTable table;
    table.header = {"sweep_variable", "value_si",  "splitting_hz_y",
                    "splitting_hz_z", "G_real",    "G_imag"};
    for (const SweepPoint& p : sweep.points)
        table.rows.push_back({sweep.variable, fmt_double(p.value_si),
                              fmt_double(p.splitting_hz_y),
                              fmt_double(p.splitting_hz_z),
                              fmt_double(p.G_y.real()),
                              fmt_double(p.G_y.imag())});
    write_csv(path, table);
}

} // namespace levcav
