// Configuration types: standing-wave phase folding, power scaling,
// validation, and the INI round trip.

#include <levcav/params.hpp>

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include <levcav/io.hpp>

namespace {

using namespace levcav;

Config reference_config() {
    Config c;
    c.particles.resize(2);
    c.particles[0].position = 0.0;
    c.particles[0].charge = 50;
    c.particles[1].position = 6.2e-6;
    c.particles[1].charge = -50;
    c.particles[1].mech_freq = {two_pi * 61e3, two_pi * 81.5e3, two_pi * 30.5e3};
    c.cavity.coupling_scale = {two_pi * 3e3, two_pi * 30e3, two_pi * 60e3};
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("axis names round-trip") {
    for (Axis a : {Axis::X, Axis::Y, Axis::Z})
        CHECK(axis_from_name(axis_name(a)) == a);
    CHECK_THROWS_AS(axis_from_name("w"), ValidationError);
}

TEST_CASE("mass follows the sphere volume") {
    ParticleSpec p;
    p.radius = 75e-9;
    p.density = 1850.0;
    const double expected = 4.0 / 3.0 * pi * std::pow(75e-9, 3) * 1850.0;
    CHECK(mass_from_spec(p) == doctest::Approx(expected).epsilon(1e-14));

    p.radius = -1.0;
    CHECK_THROWS_AS(mass_from_spec(p), ValidationError);
}

TEST_CASE("phase folding maps positions onto [0, pi/2]") {
    const double lambda = 1.55e-6;

    CHECK(phase_from_position(0.0, lambda).phase == doctest::Approx(0.0));
    CHECK(phase_from_position(lambda / 4, lambda).phase ==
          doctest::Approx(pi / 2));
    CHECK(phase_from_position(lambda / 2, lambda).phase ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(phase_from_position(lambda / 8, lambda).phase ==
          doctest::Approx(pi / 4));

    // lambda/2 periodicity of the intensity pattern and mirror symmetry
    // about the antinode.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-5e-6, 5e-6);
    for (int i = 0; i < 200; ++i) {
        const double y = pos(rng);
        const double phi = phase_from_position(y, lambda).phase;
        CHECK(phi >= 0.0);
        CHECK(phi <= pi / 2 + 1e-12);
        CHECK(phase_from_position(y + lambda / 2, lambda).phase ==
              doctest::Approx(phi).epsilon(1e-9));
        CHECK(phase_from_position(-y, lambda).phase ==
              doctest::Approx(phi).epsilon(1e-9));
    }

    CHECK_THROWS_AS(phase_from_position(0.0, 0.0), ValidationError);
}

TEST_CASE("mechanical frequency scales as the square root of power") {
    const double omega = two_pi * 80e3;
    CHECK(mech_freq_from_power(omega, 0.52, 0.13) ==
          doctest::Approx(2.0 * omega));
    CHECK(mech_freq_from_power(omega, 0.13, 0.13) == doctest::Approx(omega));
    CHECK_THROWS_AS(mech_freq_from_power(omega, 0.0, 0.13), ValidationError);
    CHECK_THROWS_AS(mech_freq_from_power(omega, 0.13, -1.0), ValidationError);
}

TEST_CASE("validate_config accepts the reference layout") {
    const ValidatedConfig vc = validate_config(reference_config());
    CHECK(vc.distance == doctest::Approx(6.2e-6));
    CHECK(vc.warnings.empty());
}

TEST_CASE("validate_config lists every violation at once") {
    Config c = reference_config();
    c.particles[0].radius = -1.0;
    c.particles[1].power = 0.0;
    c.cavity.linewidth = 0.0;
    c.noise.temperature = -5.0;
    try {
        validate_config(c);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.issues().size() == 4);
    }
}

TEST_CASE("validate_config requires exactly two particles") {
    Config c = reference_config();
    c.particles.pop_back();
    CHECK_THROWS_AS(validate_config(c), ValidationError);
    c = reference_config();
    c.particles.push_back(c.particles[0]);
    c.particles[2].position = 1e-5;
    CHECK_THROWS_AS(validate_config(c), ValidationError);
}

TEST_CASE("validate_config rejects coinciding particles") {
    Config c = reference_config();
    c.particles[1].position = c.particles[0].position;
    CHECK_THROWS_AS(validate_config(c), ValidationError);
}

TEST_CASE("validate_config rejects degenerate mechanical frequencies") {
    Config c = reference_config();
    c.particles[0].mech_freq[0] = c.particles[0].mech_freq[1];
    CHECK_THROWS_AS(validate_config(c), ValidationError);
}

TEST_CASE("close particles trigger a short-range warning") {
    Config c = reference_config();
    c.particles[0].charge = 500;
    c.particles[1].charge = 500;
    c.particles[1].position = c.particles[0].position + 1.0e-6;
    const ValidatedConfig vc = validate_config(c);
    REQUIRE(!vc.warnings.empty());
    CHECK(vc.warnings[0].find("short-range") != std::string::npos);
}

TEST_CASE("config files survive a save/load/save round trip byte-identically") {
    Config c = reference_config();
    c.cavity.detuning = two_pi * 0.45e6;
    c.cavity.length = 0.01;
    c.cavity.mirror_transmissions = "30ppm/350ppm";

    const std::string path1 = temp_path("levcav_cfg_a.ini");
    const std::string path2 = temp_path("levcav_cfg_b.ini");
    save_config(path1, c);
    const Config loaded = load_config(path1);

    CHECK(loaded.particles.size() == 2);
    CHECK(loaded.particles[1].mech_freq[1] ==
          doctest::Approx(c.particles[1].mech_freq[1]).epsilon(1e-15));
    CHECK(loaded.particles[1].charge == -50);
    CHECK(loaded.cavity.detuning ==
          doctest::Approx(c.cavity.detuning).epsilon(1e-15));
    CHECK(loaded.cavity.mirror_transmissions == "30ppm/350ppm");

    save_config(path2, loaded);
    CHECK(read_text_file(path1) == read_text_file(path2));
    std::remove(path1.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("load_config reports unknown keys and sections") {
    const std::string path = temp_path("levcav_cfg_bad.ini");
    write_text_file(path, "[particle.1]\nradius = 1e-7\nmisspelt = 3\n"
                          "[mystery]\nx = 1\n");
    try {
        load_config(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.issues().size() == 2);
    }
    std::remove(path.c_str());
}

TEST_CASE("load_config rejects malformed INI syntax") {
    const std::string path = temp_path("levcav_cfg_syntax.ini");
    write_text_file(path, "[particle.1\nradius = 1e-7\n");
    CHECK_THROWS_AS(load_config(path), IoError);
    write_text_file(path, "radius = 1e-7\n");
    CHECK_THROWS_AS(load_config(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("frequencies in files are Hz, in memory rad/s") {
    const std::string path = temp_path("levcav_cfg_units.ini");
    write_text_file(path,
                    "[particle.1]\nmech_freq_y = 80000\nposition = 0\n"
                    "[particle.2]\nmech_freq_y = 81500\nposition = 6.2e-06\n"
                    "[cavity]\ndetuning = 450000\n");
    const Config c = load_config(path);
    CHECK(c.particles[0].mech_freq[1] == doctest::Approx(two_pi * 80e3));
    CHECK(c.cavity.detuning == doctest::Approx(two_pi * 0.45e6));
    std::remove(path.c_str());
}
