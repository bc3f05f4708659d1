// State-space dynamics: model assembly, stationary statistics, the exact
// discretization, window-averaged sampling, spectra, and the trace files.

#include <levcav/dynamics.hpp>

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

namespace {

using namespace levcav;

// Single silica sphere trap with round numbers; mass fixed by the default
// radius/density so nbar and the position scale are reproducible.
StateSpaceModel single_mode(double omega_hz, double gamma_hz,
                            double temperature = 300.0) {
    ParticleSpec p;
    return build_single_mode(two_pi * omega_hz, two_pi * gamma_hz, temperature,
                             mass_from_spec(p));
}

// Two particles on standing-wave nodes, both y modes at 80 kHz, deep in
// the adiabatic regime (kappa/Omega = 7.5, Delta/Omega = 15).
ValidatedConfig degenerate_node_config() {
    Config c;
    c.particles.resize(2);
    c.particles[0].position = 1.55e-6 / 4;
    c.particles[1].position = 1.55e-6 / 4 + 4 * 1.55e-6;
    c.cavity.coupling_scale = {0.0, two_pi * 30e3, two_pi * 60e3};
    return validate_config(c);
}

double sample_variance(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return acc / (xs.size() - 1);
}

} // namespace

TEST_CASE("single-mode model carries the right stationary physics") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    REQUIRE(m.dim() == 2);
    REQUIRE(m.mechanics.size() == 1);
    CHECK(!m.has_cavity);

    const double nbar = m.mechanics[0].nbar;
    CHECK(nbar == doctest::Approx(k_boltzmann * 300.0 /
                                  (hbar * two_pi * 80e3)));

    // Equipartition in the dimensionless quadratures.
    const Eigen::MatrixXd cov = stationary_covariance(m);
    CHECK(cov(0, 0) == doctest::Approx(nbar).epsilon(1e-9));
    CHECK(cov(1, 1) == doctest::Approx(nbar).epsilon(1e-9));
    CHECK(std::abs(cov(0, 1)) < 1e-6 * nbar);

    // In meters the position variance is k_B T / (m Omega^2).
    ParticleSpec p;
    const double scale = m.mechanics[0].position_scale;
    const double var_x = cov(0, 0) * scale * scale;
    const double expect = k_boltzmann * 300.0 /
                          (mass_from_spec(p) * std::pow(two_pi * 80e3, 2));
    CHECK(var_x == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("stationary covariance solves the Lyapunov equation") {
    const StateSpaceModel m = build_state_space(degenerate_node_config(),
                                                Axis::Y);
    const Eigen::MatrixXd cov = stationary_covariance(m);
    const Eigen::MatrixXd residual =
        m.drift * cov + cov * m.drift.transpose() + m.diffusion;
    CHECK(residual.norm() < 1e-9 * m.diffusion.norm());
}

TEST_CASE("coupled model wires the quadrature equations") {
    const ValidatedConfig vc = degenerate_node_config();
    const StateSpaceModel m = build_state_space(vc, Axis::Y);
    REQUIRE(m.dim() == 6);
    CHECK(m.has_cavity);
    CHECK(m.axis == Axis::Y);
    REQUIRE(m.mechanics.size() == 2);

    const double omega = vc.config.particles[0].mech_freq[1];
    const double gamma = vc.config.particles[0].gas_damping;
    const double g = m.mechanics[0].g.real();
    CHECK(g == doctest::Approx(two_pi * 30e3)); // node, full y coupling

    CHECK(m.drift(0, 1) == doctest::Approx(omega));
    CHECK(m.drift(1, 0) == doctest::Approx(-omega));
    CHECK(m.drift(1, 1) == doctest::Approx(-gamma));
    CHECK(m.drift(1, 4) == doctest::Approx(-2.0 * g));
    CHECK(m.drift(4, 4) == doctest::Approx(-0.5 * m.kappa));
    CHECK(m.drift(4, 5) == doctest::Approx(m.detuning));
    CHECK(m.drift(5, 4) == doctest::Approx(-m.detuning));
    CHECK(m.drift(5, 0) == doctest::Approx(-2.0 * g));
    CHECK(m.drift(5, 2) == doctest::Approx(-2.0 * m.mechanics[1].g.real()));

    CHECK(m.diffusion(1, 1) ==
          doctest::Approx(2.0 * gamma * m.mechanics[0].nbar));
    CHECK(m.diffusion(4, 4) == doctest::Approx(0.5 * m.kappa));
    CHECK(m.diffusion(5, 5) == doctest::Approx(0.5 * m.kappa));
    CHECK(m.diffusion(0, 0) == 0.0);
}

TEST_CASE("red detuning with weak gas damping is flagged unstable") {
    Config c = degenerate_node_config().config;
    c.cavity.detuning = -c.cavity.detuning;
    c.particles[0].gas_damping = two_pi * 0.01;
    c.particles[1].gas_damping = two_pi * 0.01;
    const ValidatedConfig vc = validate_config(c);
    CHECK_THROWS_AS(build_state_space(vc, Axis::Y), StabilityError);
}

TEST_CASE("eigenfrequencies report the damped oscillator line") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    const auto modes = eigenfrequencies(m);
    REQUIRE(modes.size() == 1);
    const double omega = two_pi * 80e3, gamma = two_pi * 600.0;
    CHECK(modes[0].omega ==
          doctest::Approx(std::sqrt(omega * omega - gamma * gamma / 4))
              .epsilon(1e-12));
    CHECK(modes[0].damping == doctest::Approx(gamma).epsilon(1e-12));
}

TEST_CASE("drift-matrix mode gap approaches twice the effective coupling") {
    const ValidatedConfig vc = degenerate_node_config();
    const StateSpaceModel m = build_state_space(vc, Axis::Y);
    const EffectiveReduction red = effective_model_reduction(m);
    CHECK(red.warning.empty());

    std::vector<double> mech;
    for (const ModeFrequency& mode : eigenfrequencies(m))
        if (mode.omega < 2.0 * vc.config.particles[0].mech_freq[1])
            mech.push_back(mode.omega);
    REQUIRE(mech.size() == 2);
    const double gap = mech[1] - mech[0];
    CHECK(gap ==
          doctest::Approx(2.0 * std::abs(red.G.G)).epsilon(0.05));
}

TEST_CASE("the reduction warns outside the adiabatic regime") {
    Config c = degenerate_node_config().config;
    c.cavity.linewidth = two_pi * 100e3; // kappa comparable to Omega
    c.cavity.detuning = two_pi * 150e3;
    const StateSpaceModel m = build_state_space(validate_config(c), Axis::Y);
    CHECK(!effective_model_reduction(m).warning.empty());
}

TEST_CASE("max_sde_step tracks the fastest timescale") {
    const StateSpaceModel mech = single_mode(80e3, 600.0);
    CHECK(max_sde_step(mech) == doctest::Approx(0.1 / 80e3));

    const StateSpaceModel full =
        build_state_space(degenerate_node_config(), Axis::Y);
    CHECK(max_sde_step(full) ==
          doctest::Approx(0.1 / full.kappa)); // cavity is fastest here
}

TEST_CASE("exact stepper satisfies the semigroup property") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    const double dt = 1e-6;
    const ExactStepper one(m, dt);
    const ExactStepper two(m, 2 * dt);

    CHECK((two.transition() - one.transition() * one.transition()).norm() <
          1e-12 * two.transition().norm());

    // Q(2dt) = Phi Q(dt) Phi^T + Q(dt), reconstructed from the factors.
    const Eigen::MatrixXd q1 =
        one.noise_factor() * one.noise_factor().transpose();
    const Eigen::MatrixXd q2 =
        two.noise_factor() * two.noise_factor().transpose();
    const Eigen::MatrixXd expect =
        one.transition() * q1 * one.transition().transpose() + q1;
    CHECK((q2 - expect).norm() < 1e-10 * q2.norm());
}

TEST_CASE("integrated traces are stationary and reproducible") {
    const StateSpaceModel m = single_mode(80e3, 10e3);
    const double dt = 5e-7;
    const TimeTrace trace = integrate_sde(m, 0.25, dt, 424242);

    REQUIRE(trace.samples.rows() == 500001);
    REQUIRE(trace.samples.cols() == 2);

    std::vector<double> q(trace.samples.col(0).data(),
                          trace.samples.col(0).data() + trace.samples.rows());
    const double nbar = m.mechanics[0].nbar;
    CHECK(sample_variance(q) == doctest::Approx(nbar).epsilon(0.08));

    const TimeTrace again = integrate_sde(m, 0.25, dt, 424242);
    CHECK((trace.samples - again.samples).norm() == 0.0); // bit-identical
    const TimeTrace other = integrate_sde(m, 0.25, dt, 424243);
    CHECK((trace.samples - other.samples).norm() > 0.0);
}

TEST_CASE("too-large integration steps are rejected") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    CHECK_THROWS_AS(integrate_sde(m, 0.01, 1e-4, 1), StepSizeError);
    CHECK_THROWS_AS(integrate_sde(m, 0.0, 1e-7, 1), ValidationError);
}

TEST_CASE("window averager reproduces the deterministic decay average") {
    // With the temperature at zero the diffusion vanishes and the window
    // average must equal the time integral of exp(A s) x0 / T.
    const StateSpaceModel m = single_mode(80e3, 5e3, 0.0);
    const double window = 4e-6;

    const WindowAverager avg(m, window);
    Eigen::VectorXd state(2), mean_out(2);
    state << 1.0, 0.0;
    Eigen::VectorXd x0 = state;
    GaussianSource noise(9);
    avg.step(state, mean_out, noise);

    // Reference: composite Simpson on a fine exact grid.
    const int n = 400;
    const ExactStepper fine(m, window / n);
    Eigen::VectorXd x = x0, integral = Eigen::VectorXd::Zero(2);
    for (int k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        integral += w * x;
        x = (fine.transition() * x).eval();
    }
    integral *= (window / n) / 3.0 / window;

    CHECK((mean_out - integral).norm() < 1e-8 * integral.norm());
    CHECK((state - x0).norm() > 0.0); // state advanced to the window end
}

TEST_CASE("window-averaged sampling keeps the end-state marginal exact") {
    const StateSpaceModel m = single_mode(80e3, 10e3);
    const double window = 2e-6;
    const WindowAverager avg(m, window);
    const double nbar = m.mechanics[0].nbar;

    Eigen::VectorXd state(2), mean_out(2);
    state << 0.0, 0.0;
    GaussianSource noise(31);

    const int n_steps = 120000;
    std::vector<double> ends, avgs;
    ends.reserve(n_steps);
    for (int k = 0; k < n_steps; ++k) {
        avg.step(state, mean_out, noise);
        ends.push_back(state[0]);
        avgs.push_back(mean_out[0]);
    }

    CHECK(sample_variance(ends) == doctest::Approx(nbar).epsilon(0.1));
    // Averaging attenuates the oscillation at Omega; for this window the
    // in-band sinc^2 factor is ~0.92.
    const double ratio = sample_variance(avgs) / sample_variance(ends);
    CHECK(ratio > 0.80);
    CHECK(ratio < 1.0);
}

TEST_CASE("frequency-domain PSD is the thermal Lorentzian") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    const double omega = two_pi * 80e3, gamma = two_pi * 600.0;
    const double nbar = m.mechanics[0].nbar;

    Observable q;
    q.rows = Eigen::MatrixXd::Zero(1, 2);
    q.rows(0, 0) = 1.0;
    q.name = "q";

    Eigen::VectorXd grid(3);
    grid << omega - gamma / 2, omega, omega + gamma / 2;
    const PSDCurve curve = psd_frequency_domain(m, q, grid);

    CHECK(curve.values[1] ==
          doctest::Approx(4.0 * nbar / gamma).epsilon(0.01));
    CHECK(curve.values[0] ==
          doctest::Approx(curve.values[1] / 2).epsilon(0.05));
    CHECK(curve.values[2] ==
          doctest::Approx(curve.values[1] / 2).epsilon(0.05));
}

TEST_CASE("the PSD integrates back to the variance") {
    const StateSpaceModel m = single_mode(80e3, 2e3);
    Observable q;
    q.rows = Eigen::MatrixXd::Zero(1, 2);
    q.rows(0, 0) = 1.0;

    const double omega = two_pi * 80e3, gamma = two_pi * 2e3;
    const int n = 40000;
    Eigen::VectorXd grid(n);
    for (int k = 0; k < n; ++k)
        grid[k] = omega - 50 * gamma + 100.0 * gamma * k / (n - 1);
    const PSDCurve curve = psd_frequency_domain(m, q, grid);

    double integral = 0.0;
    for (int k = 1; k < n; ++k)
        integral += 0.5 * (curve.values[k] + curve.values[k - 1]) *
                    (grid[k] - grid[k - 1]) / two_pi;
    CHECK(integral == doctest::Approx(m.mechanics[0].nbar).epsilon(0.02));
}

TEST_CASE("PSD input validation") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    Observable q;
    q.rows = Eigen::MatrixXd::Zero(1, 2);
    q.rows(0, 0) = 1.0;

    Eigen::VectorXd empty(0);
    CHECK_THROWS_AS(psd_frequency_domain(m, q, empty), ValidationError);

    Eigen::VectorXd bad(2);
    bad << 2.0, 1.0;
    CHECK_THROWS_AS(psd_frequency_domain(m, q, bad), ValidationError);

    Observable wrong;
    wrong.rows = Eigen::MatrixXd::Zero(1, 3);
    Eigen::VectorXd grid(1);
    grid << two_pi * 80e3;
    CHECK_THROWS_AS(psd_frequency_domain(m, wrong, grid), ValidationError);
}

TEST_CASE("Welch estimate agrees with the frequency-domain PSD") {
    const StateSpaceModel m = single_mode(80e3, 10e3);
    const double dt = 1e-6;
    const TimeTrace trace = integrate_sde(m, 0.4, dt, 77);

    std::vector<double> q(trace.samples.col(0).data(),
                          trace.samples.col(0).data() + trace.samples.rows());
    const int segment = 2000; // 500 Hz bins
    const PSDCurve welch = welch_psd(q, dt, segment);

    Observable obs;
    obs.rows = Eigen::MatrixXd::Zero(1, 2);
    obs.rows(0, 0) = 1.0;

    // Compare over the mechanical band, Omega +- 3 gamma.
    const double omega = two_pi * 80e3, gamma = two_pi * 10e3;
    std::vector<double> sel_freq, sel_welch;
    for (Eigen::Index k = 0; k < welch.frequencies.size(); ++k)
        if (std::abs(welch.frequencies[k] - omega) < 3 * gamma) {
            sel_freq.push_back(welch.frequencies[k]);
            sel_welch.push_back(welch.values[k]);
        }
    REQUIRE(sel_freq.size() > 20);

    Eigen::VectorXd grid = Eigen::Map<Eigen::VectorXd>(
        sel_freq.data(), static_cast<Eigen::Index>(sel_freq.size()));
    const PSDCurve exact = psd_frequency_domain(m, obs, grid);

    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < sel_freq.size(); ++k) {
        num += std::pow(sel_welch[k] - exact.values[static_cast<Eigen::Index>(k)], 2);
        den += std::pow(exact.values[static_cast<Eigen::Index>(k)], 2);
    }
    CHECK(std::sqrt(num / den) < 0.10);
}

TEST_CASE("welch_psd validates its inputs") {
    std::vector<double> samples(100, 0.0);
    CHECK_THROWS_AS(welch_psd(samples, 0.0, 16), ValidationError);
    CHECK_THROWS_AS(welch_psd(samples, 1e-6, 7), ValidationError);
    CHECK_THROWS_AS(welch_psd(samples, 1e-6, 15), ValidationError);
    CHECK_THROWS_AS(welch_psd(samples, 1e-6, 128), ValidationError);
}

TEST_CASE("trace files round-trip exactly") {
    const StateSpaceModel m = single_mode(80e3, 600.0);
    const TimeTrace trace = integrate_sde(m, 0.001, 1e-6, 5);

    const std::string path =
        (std::filesystem::temp_directory_path() / "levcav_trace.bin").string();
    write_trace(path, trace);
    const TimeTrace back = read_trace(path);

    CHECK(back.dt == trace.dt);
    CHECK(back.seed == trace.seed);
    CHECK(back.labels == trace.labels);
    CHECK((back.samples - trace.samples).norm() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("gaussian sources with equal seeds emit equal streams") {
    GaussianSource a(123), b(123), c(124);
    bool all_equal = true, any_differ = false;
    for (int i = 0; i < 100; ++i) {
        const double va = a(), vb = b(), vc = c();
        all_equal = all_equal && (va == vb);
        any_differ = any_differ || (va != vc);
    }
    CHECK(all_equal);
    CHECK(any_differ);
}
