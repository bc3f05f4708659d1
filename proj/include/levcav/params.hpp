#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "levcav/constants.hpp"
#include "levcav/errors.hpp"

namespace levcav {

// Mechanical axes of a trapped particle. y lies along the cavity axis,
// z along the tweezer propagation direction, x transverse to both.
enum class Axis { X = 0, Y = 1, Z = 2 };

const char* axis_name(Axis axis);
Axis axis_from_name(const std::string& name);

// One levitated nanoparticle and its trap.
struct ParticleSpec {
    double radius = 75e-9;     // m
    double density = 1850.0;   // kg/m^3, fused silica
    int charge = 0;            // net charge in units of e
    double power = 0.130;      // tweezer power, W
    double position = 0.0;     // coordinate y_i along the cavity axis, m
    Eigen::Vector3d mech_freq{two_pi * 59e3, two_pi * 80e3, two_pi * 30e3};
    // bare mechanical frequencies Omega_{i,mu} at `power`, rad/s
    double gas_damping = two_pi * 600.0; // gamma, rad/s

    double mech_freq_axis(Axis axis) const {
        return mech_freq[static_cast<int>(axis)];
    }
};

// Cavity mode parameters. detuning is Delta = omega_cav - omega_tweezer,
// signed; positive means the cavity is blue of the tweezer.
struct CavitySpec {
    double linewidth = two_pi * 600e3; // kappa, rad/s
    double detuning = two_pi * 1.2e6;  // Delta, rad/s
    double wavelength = 1550e-9;       // m
    Eigen::Vector3d coupling_scale{0.0, 0.0, 0.0};
    // g_max per axis: coupling magnitude at the ideal standing-wave
    // position and ref_power, rad/s
    double ref_power = 0.130;          // W

    // Optional metadata, not used in any computation.
    double length = 0.0;               // m, 0 = unspecified
    std::string mirror_transmissions;

    double coupling_scale_axis(Axis axis) const {
        return coupling_scale[static_cast<int>(axis)];
    }
};

// Noise environment shared by both particles.
struct NoiseSpec {
    double temperature = 300.0; // effective bath temperature, K
};

// Distance of a particle to the closest intensity maximum of the cavity
// standing wave, expressed as a phase in [0, pi/2]. 0 = antinode, pi/2 = node.
struct StandingWavePhase {
    double phase = 0.0; // rad
};

struct Config {
    std::vector<ParticleSpec> particles;
    CavitySpec cavity;
    NoiseSpec noise;
};

// Result of validate_config: the checked configuration plus derived
// quantities and non-fatal warnings.
struct ValidatedConfig {
    Config config;
    double distance = 0.0; // |y_1 - y_2|, m
    std::vector<std::string> warnings;
};

// Sphere mass from radius and density.
double mass_from_spec(const ParticleSpec& p);

// Fold a position along the cavity axis into the standing-wave phase,
// using the lambda/2 periodicity and the mirror symmetry about each
// antinode of the intensity pattern.
StandingWavePhase phase_from_position(double y, double wavelength);

// Mechanical frequency under a power change, Omega_ref * sqrt(P / P_ref).
double mech_freq_from_power(double omega_ref, double power, double ref_power);

// Check every type invariant, compute the inter-particle distance, and
// attach warnings (e.g. short-range couplings no longer negligible at the
// configured separation). Throws ValidationError listing every violation.
ValidatedConfig validate_config(const Config& config);
ValidatedConfig validate_config(const std::vector<ParticleSpec>& particles,
                                const CavitySpec& cavity,
                                const NoiseSpec& noise = {});

// Load a configuration from an INI-style file with sections
// [particle.1], [particle.2], ..., [cavity], [noise]. Frequencies in the
// file are plain Hz ("/2pi" values) and are converted to rad/s on load.
Config load_config(const std::string& path);

// Inverse of load_config; writes Hz values.
void save_config(const std::string& path, const Config& config);

} // namespace levcav
