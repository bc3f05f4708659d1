#pragma once

// Physical constants (SI, CODATA 2018) and angular-frequency helpers.
//
// Convention used throughout the library: frequencies are stored internally
// as angular frequencies (rad/s). File formats and CLI flags use ordinary
// frequencies (Hz); convert at the boundary with hz()/rad_per_s().

namespace levcav {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

inline constexpr double k_boltzmann = 1.380649e-23;          // J/K
inline constexpr double hbar = 1.054571817e-34;              // J s
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m

// rad/s -> Hz
inline constexpr double hz(double omega) { return omega / two_pi; }

// Hz -> rad/s
inline constexpr double rad_per_s(double nu) { return nu * two_pi; }

} // namespace levcav
