#include "levcav/params.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "levcav/coupling.hpp"
#include "levcav/io.hpp"

namespace levcav {

const char* axis_name(Axis axis) {
    switch (axis) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
    }
    return "?";
}

Axis axis_from_name(const std::string& name) {
    if (name == "x") return Axis::X;
    if (name == "y") return Axis::Y;
    if (name == "z") return Axis::Z;
    throw ValidationError("unknown axis '" + name + "' (expected x, y or z)");
}

double mass_from_spec(const ParticleSpec& p) {
    std::vector<std::string> issues;
    if (!(p.radius > 0.0)) issues.push_back("radius must be positive");
    if (!(p.density > 0.0)) issues.push_back("density must be positive");
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return 4.0 / 3.0 * pi * p.radius * p.radius * p.radius * p.density;
}

StandingWavePhase phase_from_position(double y, double wavelength) {
    if (!(wavelength > 0.0))
        throw ValidationError("wavelength must be positive");
    // The intensity pattern repeats every lambda/2 and is mirror-symmetric
    // about each antinode, so any position folds into [0, lambda/8]...
    // expressed as a phase: fold y/lambda into [0, 1/4] and scale by 2 pi.
    double u = std::fmod(y / wavelength, 0.5);
    if (u < 0.0) u += 0.5;
    if (u > 0.25) u = 0.5 - u;
    return StandingWavePhase{two_pi * u};
}

double mech_freq_from_power(double omega_ref, double power, double ref_power) {
    std::vector<std::string> issues;
    if (!(power > 0.0)) issues.push_back("power must be positive");
    if (!(ref_power > 0.0)) issues.push_back("ref_power must be positive");
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return omega_ref * std::sqrt(power / ref_power);
}

namespace {

bool distinct(double a, double b) {
    return std::abs(a - b) > 1e-9 * std::max(std::abs(a), std::abs(b));
}

void check_particle(const ParticleSpec& p, int index,
                    std::vector<std::string>& issues) {
    const std::string tag = "particle." + std::to_string(index) + ".";
    if (!(p.radius > 0.0)) issues.push_back(tag + "radius must be positive");
    if (!(p.density > 0.0)) issues.push_back(tag + "density must be positive");
    if (!(p.power > 0.0)) issues.push_back(tag + "power must be positive");
    if (!(p.gas_damping >= 0.0))
        issues.push_back(tag + "gas_damping must be non-negative");
    const char* names[3] = {"mech_freq_x", "mech_freq_y", "mech_freq_z"};
    for (int a = 0; a < 3; ++a)
        if (!(p.mech_freq[a] > 0.0))
            issues.push_back(tag + names[a] + " must be positive");
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
            if (p.mech_freq[a] > 0.0 && p.mech_freq[b] > 0.0 &&
                !distinct(p.mech_freq[a], p.mech_freq[b]))
                issues.push_back(tag + names[a] + " and " + tag + names[b] +
                                 " must be distinct");
}

} // namespace

ValidatedConfig validate_config(const Config& config) {
    std::vector<std::string> issues;

    if (config.particles.size() != 2)
        issues.push_back("exactly two particles are supported, got " +
                         std::to_string(config.particles.size()));
    for (size_t i = 0; i < config.particles.size(); ++i)
        check_particle(config.particles[i], static_cast<int>(i) + 1, issues);

    const CavitySpec& c = config.cavity;
    if (!(c.linewidth > 0.0)) issues.push_back("cavity.linewidth must be positive");
    if (!(c.wavelength > 0.0)) issues.push_back("cavity.wavelength must be positive");
    if (!(c.ref_power > 0.0)) issues.push_back("cavity.ref_power must be positive");
    const char* scale_names[3] = {"coupling_scale_x", "coupling_scale_y",
                                  "coupling_scale_z"};
    for (int a = 0; a < 3; ++a)
        if (!(c.coupling_scale[a] >= 0.0))
            issues.push_back(std::string("cavity.") + scale_names[a] +
                             " must be non-negative");
    if (!(config.noise.temperature >= 0.0))
        issues.push_back("noise.temperature must be non-negative");

    double distance = 0.0;
    if (config.particles.size() == 2) {
        distance = std::abs(config.particles[0].position -
                            config.particles[1].position);
        if (!(distance > 0.0))
            issues.push_back("particle positions coincide; "
                             "zero separation is unsupported");
    }

    if (!issues.empty()) throw ValidationError(std::move(issues));

    ValidatedConfig vc;
    vc.config = config;
    vc.distance = distance;

    // Short-range couplings (Coulomb, optical binding) are not part of the
    // cavity-mediated model; flag separations where they would no longer be
    // buried under the fit resolution floor of a quarter peak width.
    const ParticleSpec& p1 = config.particles[0];
    const ParticleSpec& p2 = config.particles[1];
    const double omega_y = 0.5 * (p1.mech_freq[1] + p2.mech_freq[1]);
    const double floor = 0.25 * std::max(p1.gas_damping, p2.gas_damping);
    const double g_coulomb = coulomb_coupling_estimate(p1, p2, distance, omega_y);
    const double g_binding =
        optical_binding_estimate(p1, p2, distance, omega_y, c);
    if (g_coulomb >= floor || g_binding >= floor) {
        std::ostringstream msg;
        msg << "short-range couplings at d = " << distance * 1e6
            << " um reach the resolution floor (Coulomb " << hz(g_coulomb)
            << " Hz, optical binding " << hz(g_binding) << " Hz, floor "
            << hz(floor) << " Hz); they are not modeled";
        vc.warnings.push_back(msg.str());
    }
    return vc;
}

ValidatedConfig validate_config(const std::vector<ParticleSpec>& particles,
                                const CavitySpec& cavity,
                                const NoiseSpec& noise) {
    Config config;
    config.particles = particles;
    config.cavity = cavity;
    config.noise = noise;
    return validate_config(config);
}

namespace {

using Section = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::map<std::string, Section> parse_ini(const std::string& text,
                                         const std::string& path) {
    std::map<std::string, Section> sections;
    std::string current;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw IoError(path + ":" + std::to_string(lineno) +
                              ": unterminated section header");
            current = trim(line.substr(1, line.size() - 2));
            sections[current];
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos || current.empty())
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": expected 'key = value' inside a section");
        sections[current][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return sections;
}

// Pop a key from a section, with unit handling done by the caller.
std::optional<std::string> take(Section& s, const std::string& key) {
    auto it = s.find(key);
    if (it == s.end()) return std::nullopt;
    std::string v = it->second;
    s.erase(it);
    return v;
}

double take_double(Section& s, const std::string& key, double fallback) {
    auto v = take(s, key);
    return v ? parse_double(*v) : fallback;
}

void reject_leftovers(const Section& s, const std::string& name,
                      std::vector<std::string>& issues) {
    for (const auto& [key, value] : s)
        issues.push_back("unknown key '" + key + "' in section [" + name + "]");
}

} // namespace

Config load_config(const std::string& path) {
    auto sections = parse_ini(read_text_file(path), path);
    Config config;
    std::vector<std::string> issues;

    // Particle sections are [particle.1], [particle.2], ... contiguous.
    for (int index = 1;; ++index) {
        auto it = sections.find("particle." + std::to_string(index));
        if (it == sections.end()) break;
        Section& s = it->second;
        ParticleSpec p;
        p.radius = take_double(s, "radius", p.radius);
        p.density = take_double(s, "density", p.density);
        p.charge = static_cast<int>(take_double(s, "charge", p.charge));
        p.power = take_double(s, "power", p.power);
        p.position = take_double(s, "position", p.position);
        p.mech_freq[0] = rad_per_s(take_double(s, "mech_freq_x", hz(p.mech_freq[0])));
        p.mech_freq[1] = rad_per_s(take_double(s, "mech_freq_y", hz(p.mech_freq[1])));
        p.mech_freq[2] = rad_per_s(take_double(s, "mech_freq_z", hz(p.mech_freq[2])));
        p.gas_damping = rad_per_s(take_double(s, "gas_damping", hz(p.gas_damping)));
        reject_leftovers(s, it->first, issues);
        config.particles.push_back(p);
        sections.erase(it);
    }

    if (auto it = sections.find("cavity"); it != sections.end()) {
        Section& s = it->second;
        CavitySpec& c = config.cavity;
        c.linewidth = rad_per_s(take_double(s, "linewidth", hz(c.linewidth)));
        c.detuning = rad_per_s(take_double(s, "detuning", hz(c.detuning)));
        c.wavelength = take_double(s, "wavelength", c.wavelength);
        c.coupling_scale[0] =
            rad_per_s(take_double(s, "coupling_scale_x", hz(c.coupling_scale[0])));
        c.coupling_scale[1] =
            rad_per_s(take_double(s, "coupling_scale_y", hz(c.coupling_scale[1])));
        c.coupling_scale[2] =
            rad_per_s(take_double(s, "coupling_scale_z", hz(c.coupling_scale[2])));
        c.ref_power = take_double(s, "ref_power", c.ref_power);
        c.length = take_double(s, "length", c.length);
        if (auto v = take(s, "mirror_transmissions")) c.mirror_transmissions = *v;
        reject_leftovers(s, "cavity", issues);
        sections.erase(it);
    }

    if (auto it = sections.find("noise"); it != sections.end()) {
        Section& s = it->second;
        config.noise.temperature =
            take_double(s, "temperature", config.noise.temperature);
        reject_leftovers(s, "noise", issues);
        sections.erase(it);
    }

    for (const auto& [name, section] : sections)
        issues.push_back("unknown section [" + name + "]");
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return config;
}

void save_config(const std::string& path, const Config& config) {
    std::ostringstream out;
    for (size_t i = 0; i < config.particles.size(); ++i) {
        const ParticleSpec& p = config.particles[i];
        out << "[particle." << i + 1 << "]\n";
        out << "radius = " << fmt_double(p.radius) << "\n";
        out << "density = " << fmt_double(p.density) << "\n";
        out << "charge = " << p.charge << "\n";
        out << "power = " << fmt_double(p.power) << "\n";
        out << "position = " << fmt_double(p.position) << "\n";
        out << "mech_freq_x = " << fmt_double(hz(p.mech_freq[0])) << "\n";
        out << "mech_freq_y = " << fmt_double(hz(p.mech_freq[1])) << "\n";
        out << "mech_freq_z = " << fmt_double(hz(p.mech_freq[2])) << "\n";
        out << "gas_damping = " << fmt_double(hz(p.gas_damping)) << "\n\n";
    }
    const CavitySpec& c = config.cavity;
    out << "[cavity]\n";
    out << "linewidth = " << fmt_double(hz(c.linewidth)) << "\n";
    out << "detuning = " << fmt_double(hz(c.detuning)) << "\n";
    out << "wavelength = " << fmt_double(c.wavelength) << "\n";
    out << "coupling_scale_x = " << fmt_double(hz(c.coupling_scale[0])) << "\n";
    out << "coupling_scale_y = " << fmt_double(hz(c.coupling_scale[1])) << "\n";
    out << "coupling_scale_z = " << fmt_double(hz(c.coupling_scale[2])) << "\n";
    out << "ref_power = " << fmt_double(c.ref_power) << "\n";
    if (c.length > 0.0) out << "length = " << fmt_double(c.length) << "\n";
    if (!c.mirror_transmissions.empty())
        out << "mirror_transmissions = " << c.mirror_transmissions << "\n";
    out << "\n[noise]\n";
    out << "temperature = " << fmt_double(config.noise.temperature) << "\n";
    write_text_file(path, out.str());
}

} // namespace levcav
