#include "levcav/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/MatrixFunctions>

#include "levcav/io.hpp"

namespace levcav {

namespace {

double real_coupling(const std::complex<double>& g) {
    if (std::abs(g.imag()) > 1e-12 * std::max(1.0, std::abs(g)))
        throw ValidationError(
            "the state-space model supports real coupling strengths only");
    return g.real();
}

void check_stability(const Eigen::MatrixXd& drift) {
    Eigen::EigenSolver<Eigen::MatrixXd> eig(drift);
    const double tol = 1e-12 * drift.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < drift.rows(); ++k) {
        const std::complex<double> lambda = eig.eigenvalues()[k];
        if (lambda.real() > tol) {
            std::ostringstream msg;
            msg << "drift eigenvalue " << lambda.real() << " + "
                << lambda.imag() << "i has a positive real part; "
                << "no stationary state exists";
            throw StabilityError(msg.str());
        }
    }
}

MechMode make_mode(double omega, double gamma, double temperature, double mass,
                   double g) {
    std::vector<std::string> issues;
    if (!(omega > 0.0)) issues.push_back("mechanical frequency must be positive");
    if (!(gamma >= 0.0)) issues.push_back("damping must be non-negative");
    if (!(temperature >= 0.0)) issues.push_back("temperature must be non-negative");
    if (!(mass > 0.0)) issues.push_back("mass must be positive");
    if (!issues.empty()) throw ValidationError(std::move(issues));
    MechMode mode;
    mode.omega = omega;
    mode.gamma = gamma;
    mode.nbar = k_boltzmann * temperature / (hbar * omega);
    mode.position_scale = std::sqrt(hbar / (mass * omega));
    mode.g = g;
    return mode;
}

// Symmetric PSD square root with negative eigenvalues (roundoff) clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        0.5 * (m + m.transpose()));
    Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal() *
           eig.eigenvectors().transpose();
}

// Van Loan construction: one matrix exponential of [[-A, D], [0, A^T]] dt
// yields both the transition matrix exp(A dt) and the accumulated noise
// covariance Q = int_0^dt exp(A s) D exp(A^T s) ds.
void van_loan(const Eigen::MatrixXd& drift, const Eigen::MatrixXd& diffusion,
              double dt, Eigen::MatrixXd& transition, Eigen::MatrixXd& noise_cov) {
    const Eigen::Index n = drift.rows();
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = -drift * dt;
    block.topRightCorner(n, n) = diffusion * dt;
    block.bottomRightCorner(n, n) = drift.transpose() * dt;
    const Eigen::MatrixXd expo = block.exp();
    transition = expo.bottomRightCorner(n, n).transpose();
    noise_cov = transition * expo.topRightCorner(n, n);
}

} // namespace

StateSpaceModel build_state_space(const ValidatedConfig& vc, Axis axis) {
    const CavitySpec& cavity = vc.config.cavity;
    const double temperature = vc.config.noise.temperature;

    StateSpaceModel model;
    model.axis = axis;
    model.has_cavity = true;
    model.kappa = cavity.linewidth;
    model.detuning = cavity.detuning;

    for (const ParticleSpec& p : vc.config.particles) {
        const StandingWavePhase phi =
            phase_from_position(p.position, cavity.wavelength);
        const OptoCoupling g =
            single_particle_coupling(phi, axis, p.power, cavity);
        model.mechanics.push_back(make_mode(p.mech_freq_axis(axis),
                                            p.gas_damping, temperature,
                                            mass_from_spec(p),
                                            real_coupling(g.g)));
    }

    const int n_mech = static_cast<int>(model.mechanics.size());
    const int dim = 2 * n_mech + 2;
    const int ix = 2 * n_mech;     // cavity X quadrature
    const int iy = 2 * n_mech + 1; // cavity Y quadrature

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < n_mech; ++i) {
        const MechMode& mode = model.mechanics[static_cast<size_t>(i)];
        const int iq = 2 * i;
        const int ip = 2 * i + 1;
        A(iq, ip) = mode.omega;
        A(ip, iq) = -mode.omega;
        A(ip, ip) = -mode.gamma;
        A(ip, ix) = -2.0 * mode.g.real();
        A(iy, iq) = -2.0 * mode.g.real();
        D(ip, ip) = 2.0 * mode.gamma * mode.nbar;
        model.labels.push_back("q" + std::to_string(i + 1));
        model.labels.push_back("p" + std::to_string(i + 1));
    }
    A(ix, ix) = -0.5 * cavity.linewidth;
    A(ix, iy) = cavity.detuning;
    A(iy, ix) = -cavity.detuning;
    A(iy, iy) = -0.5 * cavity.linewidth;
    D(ix, ix) = 0.5 * cavity.linewidth;
    D(iy, iy) = 0.5 * cavity.linewidth;
    model.labels.push_back("X");
    model.labels.push_back("Y");

    model.drift = std::move(A);
    model.diffusion = std::move(D);
    check_stability(model.drift);
    return model;
}

StateSpaceModel build_single_mode(double omega, double gamma,
                                  double temperature, double mass) {
    if (!(gamma > 0.0))
        throw ValidationError("damping must be positive for a bare mode");
    StateSpaceModel model;
    model.mechanics.push_back(make_mode(omega, gamma, temperature, mass, 0.0));
    model.labels = {"q1", "p1"};
    model.drift = Eigen::MatrixXd::Zero(2, 2);
    model.drift(0, 1) = omega;
    model.drift(1, 0) = -omega;
    model.drift(1, 1) = -gamma;
    model.diffusion = Eigen::MatrixXd::Zero(2, 2);
    model.diffusion(1, 1) = 2.0 * gamma * model.mechanics[0].nbar;
    return model;
}

std::vector<ModeFrequency> eigenfrequencies(const StateSpaceModel& model) {
    Eigen::EigenSolver<Eigen::MatrixXd> eig(model.drift);
    std::vector<ModeFrequency> modes;
    const double tol = 1e-9 * model.drift.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < model.dim(); ++k) {
        const std::complex<double> lambda = eig.eigenvalues()[k];
        if (lambda.imag() > tol)
            modes.push_back(ModeFrequency{lambda.imag(), -2.0 * lambda.real()});
    }
    std::sort(modes.begin(), modes.end(),
              [](const ModeFrequency& a, const ModeFrequency& b) {
                  return a.omega < b.omega;
              });
    return modes;
}

Eigen::MatrixXd stationary_covariance(const StateSpaceModel& model) {
    // Solve A C + C A^T + D = 0 as the Kronecker system
    // (I (x) A + A (x) I) vec(C) = -vec(D).
    const Eigen::Index n = model.dim();
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n * n, n * n);
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
    // Column-major vec: vec(AC) = (I (x) A) vec(C), vec(C A^T) = (A (x) I) vec(C).
    for (Eigen::Index j = 0; j < n; ++j)
        system.block(j * n, j * n, n, n) += model.drift;
    for (Eigen::Index bi = 0; bi < n; ++bi)
        for (Eigen::Index bj = 0; bj < n; ++bj)
            system.block(bi * n, bj * n, n, n) += model.drift(bi, bj) * identity;

    Eigen::VectorXd rhs(n * n);
    for (Eigen::Index j = 0; j < n; ++j)
        rhs.segment(j * n, n) = -model.diffusion.col(j);

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    const Eigen::VectorXd sol = lu.solve(rhs);
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index j = 0; j < n; ++j) cov.col(j) = sol.segment(j * n, n);
    cov = 0.5 * (cov + cov.transpose()).eval();

    const double residual =
        (model.drift * cov + cov * model.drift.transpose() + model.diffusion)
            .cwiseAbs()
            .maxCoeff();
    const double scale = std::max(1.0, model.diffusion.cwiseAbs().maxCoeff());
    if (!(residual < 1e-6 * scale))
        throw NumericalError("Lyapunov solve failed; the model is likely "
                             "marginally stable");
    return cov;
}

Observable position_observable(const StateSpaceModel& model, int particle) {
    if (particle < 0 ||
        particle >= static_cast<int>(model.mechanics.size()))
        throw ValidationError("no such particle in the model");
    Observable obs;
    obs.rows = Eigen::MatrixXd::Zero(1, model.dim());
    obs.rows(0, 2 * particle) =
        model.mechanics[static_cast<size_t>(particle)].position_scale;
    obs.name = "position_" + std::to_string(particle + 1);
    return obs;
}

Observable heterodyne_signal(const StateSpaceModel& model) {
    if (!model.has_cavity)
        throw ValidationError("heterodyne detection requires the cavity mode");
    const double root_kappa = std::sqrt(model.kappa);
    Observable obs;
    obs.rows = Eigen::MatrixXd::Zero(2, model.dim());
    obs.rows(0, model.dim() - 2) = root_kappa;
    obs.rows(1, model.dim() - 1) = root_kappa;
    obs.floor = 1.0;
    obs.name = "heterodyne";
    return obs;
}

PSDCurve psd_frequency_domain(const StateSpaceModel& model,
                              const Observable& observable,
                              const Eigen::VectorXd& grid) {
    if (grid.size() < 1) throw ValidationError("empty frequency grid");
    for (Eigen::Index k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1]))
            throw ValidationError("frequency grid must be strictly increasing");
    if (observable.rows.cols() != model.dim())
        throw ValidationError("observable dimension does not match the model");

    const Eigen::Index n = model.dim();
    const Eigen::MatrixXcd A = model.drift.cast<std::complex<double>>();
    const Eigen::MatrixXcd D = model.diffusion.cast<std::complex<double>>();
    const Eigen::MatrixXcd rows =
        observable.rows.cast<std::complex<double>>();

    PSDCurve curve;
    curve.frequencies = grid;
    curve.values.resize(grid.size());
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
        const std::complex<double> iw(0.0, grid[k]);
        Eigen::MatrixXcd M = -A;
        M.diagonal().array() += iw;
        const Eigen::MatrixXcd K = M.partialPivLu().solve(
            Eigen::MatrixXcd::Identity(n, n));
        double total = 0.0;
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            const Eigen::RowVectorXcd v = rows.row(r) * K;
            total += (v * D * v.adjoint())(0, 0).real();
        }
        // One-sided density per Hz, plus the flat detection floor.
        curve.values[k] = 2.0 * std::max(total, 0.0) + observable.floor;
    }
    return curve;
}

double max_sde_step(const StateSpaceModel& model) {
    double omega_max = 0.0;
    for (const MechMode& mode : model.mechanics)
        omega_max = std::max(omega_max, mode.omega);
    double fastest = omega_max > 0.0 ? two_pi / omega_max : 1.0;
    if (model.has_cavity && model.kappa > 0.0)
        fastest = std::min(fastest, 1.0 / model.kappa);
    return 0.1 * fastest;
}

ExactStepper::ExactStepper(const StateSpaceModel& model, double dt) {
    if (!(dt > 0.0)) throw ValidationError("step size must be positive");
    Eigen::MatrixXd noise_cov;
    van_loan(model.drift, model.diffusion, dt, phi_, noise_cov);
    noise_factor_ = psd_sqrt(noise_cov);
    draw_.resize(model.dim());
}

void ExactStepper::step(Eigen::VectorXd& state, GaussianSource& noise) const {
    for (Eigen::Index k = 0; k < draw_.size(); ++k) draw_[k] = noise();
    Eigen::VectorXd next = phi_ * state;
    next.noalias() += noise_factor_ * draw_;
    state = std::move(next);
}

WindowAverager::WindowAverager(const StateSpaceModel& model, double window)
    : window_(window) {
    if (!(window > 0.0)) throw ValidationError("window must be positive");
    const Eigen::Index n = model.dim();

    // Augment the state with its running integral: z = (s, u), u' = s.
    // One Van Loan pass on the augmented system gives the exact joint
    // transition and noise of (state at window end, window average).
    Eigen::MatrixXd drift_aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    drift_aug.topLeftCorner(n, n) = model.drift;
    drift_aug.bottomLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd diffusion_aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    diffusion_aug.topLeftCorner(n, n) = model.diffusion;

    Eigen::MatrixXd transition_aug, noise_aug;
    van_loan(drift_aug, diffusion_aug, window, transition_aug, noise_aug);

    phi_ = transition_aug.topLeftCorner(n, n);
    avg_map_ = transition_aug.bottomLeftCorner(n, n) / window;

    // Rescale the integral rows to average units before factoring.
    Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(2 * n, 2 * n);
    scale.bottomRightCorner(n, n) /= window;
    noise_factor_ = psd_sqrt(scale * noise_aug * scale.transpose());
    draw_.resize(2 * n);
}

void WindowAverager::step(Eigen::VectorXd& state, Eigen::VectorXd& average,
                          GaussianSource& noise) const {
    const Eigen::Index n = state.size();
    for (Eigen::Index k = 0; k < draw_.size(); ++k) draw_[k] = noise();
    average.noalias() = avg_map_ * state;
    average.noalias() += noise_factor_.bottomRows(n) * draw_;
    Eigen::VectorXd next = phi_ * state;
    next.noalias() += noise_factor_.topRows(n) * draw_;
    state = std::move(next);
}

TimeTrace integrate_sde(const StateSpaceModel& model, double duration,
                        double dt, std::uint64_t seed) {
    if (!(dt > 0.0) || !(duration > 0.0))
        throw ValidationError("duration and step must be positive");
    const double limit = max_sde_step(model);
    if (dt > limit) {
        std::ostringstream msg;
        msg << "step " << dt << " s does not resolve the fastest timescale; "
            << "need dt <= " << limit << " s";
        throw StepSizeError(msg.str());
    }

    const auto n_samples =
        static_cast<Eigen::Index>(std::llround(duration / dt)) + 1;
    const ExactStepper stepper(model, dt);
    GaussianSource noise(seed);

    // Start in the stationary state so every sample is stationary.
    const Eigen::MatrixXd start_factor = psd_sqrt(stationary_covariance(model));
    Eigen::VectorXd state(model.dim());
    for (Eigen::Index k = 0; k < state.size(); ++k) state[k] = noise();
    state = (start_factor * state).eval();

    TimeTrace trace;
    trace.dt = dt;
    trace.seed = seed;
    trace.labels = model.labels;
    trace.samples.resize(n_samples, model.dim());
    trace.samples.row(0) = state.transpose();
    for (Eigen::Index t = 1; t < n_samples; ++t) {
        stepper.step(state, noise);
        trace.samples.row(t) = state.transpose();
    }
    return trace;
}

EffectiveReduction effective_model_reduction(const StateSpaceModel& model) {
    if (!model.has_cavity || model.mechanics.size() != 2)
        throw ValidationError(
            "the reduction needs two mechanical modes and a cavity");

    CavitySpec cavity;
    cavity.linewidth = model.kappa;
    cavity.detuning = model.detuning;

    const MechMode& m1 = model.mechanics[0];
    const MechMode& m2 = model.mechanics[1];
    const OptoCoupling g1{m1.g, model.axis};
    const OptoCoupling g2{m2.g, model.axis};

    EffectiveReduction red;
    red.omega1_shifted = m1.omega + self_energy(g1, m1.omega, cavity).shift;
    red.omega2_shifted = m2.omega + self_energy(g2, m2.omega, cavity).shift;
    const double omega_mean = 0.5 * (red.omega1_shifted + red.omega2_shifted);
    red.G = effective_coupling(g1, g2, omega_mean, cavity);

    const double omega_max = std::max(m1.omega, m2.omega);
    if (std::max(model.kappa, std::abs(model.detuning)) < 5.0 * omega_max)
        red.warning = "outside the adiabatic regime (needs kappa or |detuning|"
                      " >= 5x the mechanical frequencies); the closed-form "
                      "numbers are indicative only";
    return red;
}

PSDCurve welch_psd(const std::vector<double>& samples, double dt,
                   int segment_length) {
    if (!(dt > 0.0)) throw ValidationError("sample step must be positive");
    if (segment_length < 8 || segment_length % 2 != 0)
        throw ValidationError("segment length must be even and at least 8");
    if (samples.size() < static_cast<size_t>(segment_length))
        throw ValidationError("trace shorter than one Welch segment");

    const int L = segment_length;
    const int hop = L / 2;
    const int n_segments =
        1 + static_cast<int>((samples.size() - static_cast<size_t>(L)) /
                             static_cast<size_t>(hop));

    std::vector<double> window(static_cast<size_t>(L));
    double window_power = 0.0;
    for (int n = 0; n < L; ++n) {
        window[static_cast<size_t>(n)] =
            0.5 * (1.0 - std::cos(two_pi * n / L));
        window_power += window[static_cast<size_t>(n)] *
                        window[static_cast<size_t>(n)];
    }

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);

    const int n_bins = L / 2 + 1;
    std::vector<double> accum(static_cast<size_t>(n_bins), 0.0);
    std::vector<double> buffer(static_cast<size_t>(L));
    std::vector<std::complex<double>> spectrum;
    for (int s = 0; s < n_segments; ++s) {
        const size_t offset = static_cast<size_t>(s) * static_cast<size_t>(hop);
        double mean = 0.0;
        for (int n = 0; n < L; ++n)
            mean += samples[offset + static_cast<size_t>(n)];
        mean /= L;
        for (int n = 0; n < L; ++n)
            buffer[static_cast<size_t>(n)] =
                (samples[offset + static_cast<size_t>(n)] - mean) *
                window[static_cast<size_t>(n)];
        fft.fwd(spectrum, buffer);
        for (int k = 0; k < n_bins; ++k)
            accum[static_cast<size_t>(k)] += std::norm(spectrum[static_cast<size_t>(k)]);
    }

    PSDCurve curve;
    curve.frequencies.resize(n_bins);
    curve.values.resize(n_bins);
    const double norm = dt / (window_power * n_segments);
    for (int k = 0; k < n_bins; ++k) {
        const bool edge = (k == 0) || (k == L / 2);
        curve.frequencies[k] = two_pi * k / (L * dt);
        curve.values[k] = (edge ? 1.0 : 2.0) * norm * accum[static_cast<size_t>(k)];
    }
    return curve;
}

void write_trace(const std::string& path, const TimeTrace& trace) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");

    const char magic[8] = {'L', 'V', 'T', 'R', 'A', 'C', 'E', '1'};
    out.write(magic, 8);
    auto put_u64 = [&out](std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    };
    auto put_f64 = [&out](double v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    };
    put_u64(static_cast<std::uint64_t>(trace.samples.cols()));
    put_u64(static_cast<std::uint64_t>(trace.samples.rows()));
    put_f64(trace.dt);
    put_u64(trace.seed);
    for (const std::string& label : trace.labels) {
        const auto len = static_cast<std::uint32_t>(label.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(label.data(), static_cast<std::streamsize>(label.size()));
    }
    for (Eigen::Index c = 0; c < trace.samples.cols(); ++c) {
        const Eigen::VectorXd column = trace.samples.col(c);
        out.write(reinterpret_cast<const char*>(column.data()),
                  static_cast<std::streamsize>(sizeof(double)) * column.size());
    }
    if (!out) throw IoError("write failure on " + path);
}

TimeTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "LVTRACE1", 8) != 0)
        throw IoError(path + " is not a trace file");
    auto get_u64 = [&in]() {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const auto n_states = static_cast<Eigen::Index>(get_u64());
    const auto n_samples = static_cast<Eigen::Index>(get_u64());
    TimeTrace trace;
    in.read(reinterpret_cast<char*>(&trace.dt), 8);
    trace.seed = get_u64();
    if (!in || n_states <= 0 || n_samples <= 0 || n_states > 1024)
        throw IoError(path + " has a corrupt header");
    for (Eigen::Index c = 0; c < n_states; ++c) {
        std::uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), 4);
        if (!in || len > 4096) throw IoError(path + " has a corrupt label");
        std::string label(len, '\0');
        in.read(label.data(), len);
        trace.labels.push_back(std::move(label));
    }
    trace.samples.resize(n_samples, n_states);
    for (Eigen::Index c = 0; c < n_states; ++c) {
        Eigen::VectorXd column(n_samples);
        in.read(reinterpret_cast<char*>(column.data()),
                static_cast<std::streamsize>(sizeof(double)) * n_samples);
        trace.samples.col(c) = column;
    }
    if (!in) throw IoError("read failure on " + path);
    return trace;
}

void write_psd_csv(const std::string& path, const PSDCurve& curve) {
    CsvTable table;
    table.header = {"frequency_hz", "psd_value"};
    for (Eigen::Index k = 0; k < curve.frequencies.size(); ++k)
        table.rows.push_back({fmt_double(hz(curve.frequencies[k])),
                              fmt_double(curve.values[k])});
    write_csv(path, table);
}

} // namespace levcav
