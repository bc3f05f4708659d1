// End-to-end checks of the command-line tool: exit codes, file outputs,
// stdout contracts, and agreement with the library's own numbers. Each case
// invokes the installed binary through the shell.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <levcav/analysis.hpp>
#include <levcav/coupling.hpp>
#include <levcav/io.hpp>
#include <levcav/params.hpp>

#include <json.hpp>

namespace {

using namespace levcav;
namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Run the tool with the given arguments, capturing streams to files in
// scratch (kept outside any --out directory the test inspects).
RunResult run_cli(const std::string& args) {
    static const fs::path scratch = fresh_dir("levcav_cli_streams");
    const std::string out_path = (scratch / "stdout.txt").string();
    const std::string err_path = (scratch / "stderr.txt").string();
    const std::string cmd = std::string(LEVCAV_CLI_PATH) + " " + args + " >" +
                            out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text_file(out_path);
    r.err = read_text_file(err_path);
    return r;
}

// Two-particle configuration mirroring the shipped default: both particles
// a quarter wave from an antinode, four wavelengths apart.
std::string write_config(const fs::path& dir) {
    const std::string path = (dir / "config.ini").string();
    write_text_file(path,
                    "[particle.1]\n"
                    "radius = 7.5e-08\n"
                    "density = 1850\n"
                    "charge = 50\n"
                    "power = 0.13\n"
                    "position = 3.875e-07\n"
                    "mech_freq_x = 59000\n"
                    "mech_freq_y = 80000\n"
                    "mech_freq_z = 30000\n"
                    "gas_damping = 600\n"
                    "\n"
                    "[particle.2]\n"
                    "radius = 7.5e-08\n"
                    "density = 1850\n"
                    "charge = 50\n"
                    "power = 0.13\n"
                    "position = 6.5875e-06\n"
                    "mech_freq_x = 59000\n"
                    "mech_freq_y = 81500\n"
                    "mech_freq_z = 30500\n"
                    "gas_damping = 600\n"
                    "\n"
                    "[cavity]\n"
                    "linewidth = 600000\n"
                    "detuning = 1200000\n"
                    "wavelength = 1.55e-06\n"
                    "coupling_scale_x = 3000\n"
                    "coupling_scale_y = 32611.858961507205\n"
                    "coupling_scale_z = 67729.309577348482\n"
                    "ref_power = 0.13\n"
                    "\n"
                    "[noise]\n"
                    "temperature = 300\n");
    return path;
}

std::vector<std::vector<std::string>> read_rows(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        // A trailing comma means an empty last field.
        if (!line.empty() && line.back() == ',') fields.push_back("");
        rows.push_back(fields);
    }
    return rows;
}

const std::string sweep_header =
    "sweep_variable,value_si,splitting_hz_y,splitting_hz_z,G_real,G_imag";
const std::string campaign_header =
    "sweep_variable,value_si,splitting_hz_y,splitting_hz_z,G_real,G_imag,"
    "sigma_hz_y,sigma_hz_z,resolved_y,resolved_z,error";

} // namespace

TEST_CASE("couple sweeps detuning and reports the row count") {
    const fs::path dir = fresh_dir("levcav_cli_det");
    const std::string cfg = write_config(dir);
    const RunResult r = run_cli("couple --config " + cfg +
                                " --detuning 0.3:3.0:50 --out " + dir.string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("(50 rows)") != std::string::npos);
    CHECK(fs::exists(dir / "manifest.json"));

    const auto rows = read_rows((dir / "sweep_detuning.csv").string());
    REQUIRE(rows.size() == 51);
    std::ostringstream joined;
    for (size_t i = 0; i < rows[0].size(); ++i)
        joined << (i ? "," : "") << rows[0][i];
    CHECK(joined.str() == sweep_header);
    CHECK(rows[1][0] == "detuning");
    CHECK(std::stod(rows[1][1]) == doctest::Approx(0.3e6).epsilon(1e-12));
    CHECK(std::stod(rows[50][1]) == doctest::Approx(3.0e6).epsilon(1e-12));
    // The coupling magnitude falls off with detuning past the optimum.
    CHECK(std::stod(rows[1][2]) > std::stod(rows[50][2]));
}

TEST_CASE("couple sweeps phase with opposite trends for y and z") {
    const fs::path dir = fresh_dir("levcav_cli_phase");
    const std::string cfg = write_config(dir);
    const RunResult r =
        run_cli("couple --config " + cfg +
                " --phase 0:1.5707963267948966:9 --out " + dir.string());
    CHECK(r.exit_code == 0);

    const auto rows = read_rows((dir / "sweep_phase.csv").string());
    REQUIRE(rows.size() == 10);
    for (size_t i = 2; i < rows.size(); ++i) {
        CHECK(std::stod(rows[i][2]) > std::stod(rows[i - 1][2]));
        CHECK(std::stod(rows[i][3]) < std::stod(rows[i - 1][3]));
    }
    CHECK(std::stod(rows[1][1]) == doctest::Approx(0.0));
    CHECK(std::stod(rows[9][1]) ==
          doctest::Approx(1.5707963267948966).epsilon(1e-12));
}

TEST_CASE("couple applies the default distance grid for a bare flag") {
    const fs::path dir = fresh_dir("levcav_cli_dist");
    const std::string cfg = write_config(dir);
    const RunResult r = run_cli("couple --config " + cfg + " --distance --out " +
                                dir.string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("(81 rows)") != std::string::npos);

    const auto rows = read_rows((dir / "sweep_distance.csv").string());
    REQUIRE(rows.size() == 82);
    CHECK(std::stod(rows[1][1]) == doctest::Approx(2.0 * 1.55e-6));
    CHECK(std::stod(rows[81][1]) == doctest::Approx(6.0 * 1.55e-6));
    // 2.25 wavelengths from a node the transverse coupling vanishes.
    CHECK(std::stod(rows[6][1]) == doctest::Approx(2.25 * 1.55e-6));
    CHECK(std::stod(rows[6][2]) < 1e-6 * std::stod(rows[1][2]));
}

TEST_CASE("conflicting sweep grids are rejected") {
    const fs::path dir = fresh_dir("levcav_cli_conflict");
    const std::string cfg = write_config(dir);
    const RunResult r =
        run_cli("couple --config " + cfg + " --detuning 1:2:3 --phase 0:1:3" +
                " --out " + dir.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("a missing configuration file exits with the i/o code") {
    const fs::path dir = fresh_dir("levcav_cli_missing");
    const RunResult r = run_cli("couple --config " +
                                (dir / "nope.ini").string() +
                                " --detuning 1:2:3 --out " + dir.string());
    CHECK(r.exit_code == 3);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("an invalid configuration is reported with its issues") {
    const fs::path dir = fresh_dir("levcav_cli_invalid");
    std::string text = read_text_file(write_config(dir));
    text.replace(text.find("radius = 7.5e-08"), 16, "radius = -1");
    const std::string cfg = (dir / "bad.ini").string();
    write_text_file(cfg, text);

    const RunResult r = run_cli("couple --config " + cfg +
                                " --detuning 1:2:3 --out " + dir.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK(r.err.find("radius") != std::string::npos);
}

TEST_CASE("dry runs print the manifest and write nothing") {
    const fs::path dir = fresh_dir("levcav_cli_dry");
    const std::string cfg = write_config(dir);
    const fs::path out = dir / "sub";
    const RunResult r = run_cli("couple --config " + cfg +
                                " --detuning 1:2:5 --seed 5 --dry-run --out " +
                                out.string());
    CHECK(r.exit_code == 0);
    const nlohmann::json manifest = nlohmann::json::parse(r.out);
    CHECK(manifest.at("seed").get<std::uint64_t>() == 5);
    CHECK(manifest.at("command").get<std::string>().find("couple") !=
          std::string::npos);
    CHECK(manifest.at("config_path").get<std::string>() == cfg);
    CHECK(manifest.contains("tool_version"));
    CHECK(manifest.contains("created_utc"));
    CHECK(!fs::exists(out));
}

TEST_CASE("the output directory falls back to the environment") {
    const fs::path dir = fresh_dir("levcav_cli_envdir");
    const std::string cfg = write_config(dir);
    const fs::path out = dir / "from_env";
    fs::create_directories(out);
    setenv("LEVCAV_OUT_DIR", out.string().c_str(), 1);
    const RunResult r = run_cli("couple --config " + cfg + " --detuning 1:2:3");
    unsetenv("LEVCAV_OUT_DIR");

    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "sweep_detuning.csv"));
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("estimate matches the library and prints its json") {
    const fs::path dir = fresh_dir("levcav_cli_estimate");
    const std::string cfg = write_config(dir);
    const RunResult r =
        run_cli("estimate --config " + cfg + " --out " + dir.string());
    REQUIRE(r.exit_code == 0);

    const nlohmann::json out = nlohmann::json::parse(r.out);
    const nlohmann::json file =
        nlohmann::json::parse(read_text_file((dir / "estimate.json").string()));
    CHECK(out == file);
    CHECK(out.size() == 6);

    const ValidatedConfig vc = validate_config(load_config(cfg));
    const ParticleSpec& p1 = vc.config.particles[0];
    const ParticleSpec& p2 = vc.config.particles[1];
    const double omega = 0.5 * (p1.mech_freq[1] + p2.mech_freq[1]);
    CHECK(out.at("distance_m").get<double>() ==
          doctest::Approx(vc.distance).epsilon(1e-9));
    CHECK(out.at("coulomb_hz").get<double>() ==
          doctest::Approx(hz(coulomb_coupling_estimate(p1, p2, vc.distance,
                                                       omega)))
              .epsilon(1e-9));
    CHECK(out.at("optical_binding_hz").get<double>() ==
          doctest::Approx(hz(optical_binding_estimate(p1, p2, vc.distance,
                                                      omega,
                                                      vc.config.cavity)))
              .epsilon(1e-9));
    CHECK(out.at("cavity_hz").get<double>() ==
          doctest::Approx(hz(std::abs(effective_model(vc, Axis::Y).G.G)))
              .epsilon(1e-9));
    CHECK(out.at("resolution_floor_hz").get<double>() ==
          doctest::Approx(150.0).epsilon(1e-9));
    CHECK(out.at("verdicts").at("cavity").get<std::string>() == "resolvable");
    CHECK(out.at("verdicts").at("coulomb").get<std::string>() ==
          "below_floor");
    CHECK(out.at("verdicts").at("optical_binding").get<std::string>() ==
          "below_floor");
}

TEST_CASE("an analytic spectrogram run writes fits and spectrogram files") {
    const fs::path dir = fresh_dir("levcav_cli_spec");
    const std::string cfg = write_config(dir);
    const RunResult r = run_cli("spectrogram --config " + cfg +
                                " --steps 24 --axes x,y --fit-axes y --out " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("axis y: splitting") != std::string::npos);
    CHECK(r.out.find("(resolved)") != std::string::npos);
    CHECK(fs::exists(dir / "spectrogram.csv"));
    CHECK(fs::exists(dir / "spectrogram.meta.json"));

    const nlohmann::json fits =
        nlohmann::json::parse(read_text_file((dir / "fits.json").string()));
    REQUIRE(fits.is_array());
    REQUIRE(fits.size() == 1);
    CHECK(fits[0].size() == 7);
    CHECK(fits[0].at("axis").get<std::string>() == "y");
    CHECK(fits[0].at("resolved").get<bool>());
    CHECK(fits[0].at("n_bins_used").get<int>() >= 12);

    const ValidatedConfig vc = validate_config(load_config(cfg));
    const double expected = hz(min_splitting(effective_model(vc, Axis::Y).G));
    CHECK(fits[0].at("splitting_hz").get<double>() ==
          doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("stochastic spectrograms are reproducible by seed") {
    const fs::path dir = fresh_dir("levcav_cli_seed");
    const std::string cfg = write_config(dir);
    const std::string common = "spectrogram --config " + cfg +
                               " --mode stochastic --steps 48 --duration 5.76" +
                               " --axes x,y --fit-axes y";

    for (const auto& [sub, seed] : {std::pair<std::string, std::string>{
                                        "a", "7"},
                                    {"b", "7"},
                                    {"c", "8"}}) {
        const fs::path out = dir / sub;
        fs::create_directories(out);
        const RunResult r =
            run_cli(common + " --seed " + seed + " --out " + out.string());
        REQUIRE(r.exit_code == 0);
    }
    const std::string a = read_text_file((dir / "a" / "spectrogram.csv").string());
    const std::string b = read_text_file((dir / "b" / "spectrogram.csv").string());
    const std::string c = read_text_file((dir / "c" / "spectrogram.csv").string());
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("a detuning campaign writes one row per grid point") {
    const fs::path dir = fresh_dir("levcav_cli_campaign");
    const std::string cfg = write_config(dir);
    const RunResult r = run_cli("spectrogram --config " + cfg +
                                " --steps 24 --axes x,y --fit-axes y" +
                                " --detuning 0.45:2.5:3 --workers 1 --out " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("detuning[0]") != std::string::npos);
    CHECK(r.out.find("(3 rows)") != std::string::npos);

    const auto rows = read_rows((dir / "campaign_detuning.csv").string());
    REQUIRE(rows.size() == 4);
    std::ostringstream joined;
    for (size_t i = 0; i < rows[0].size(); ++i)
        joined << (i ? "," : "") << rows[0][i];
    CHECK(joined.str() == campaign_header);
    for (size_t i = 1; i < 4; ++i) {
        CHECK(rows[i][0] == "detuning");
        CHECK(rows[i][10].empty());
    }
    // Splittings fall as the drive moves away from the optimal detuning.
    CHECK(std::stod(rows[1][2]) > std::stod(rows[2][2]));
    CHECK(std::stod(rows[2][2]) > std::stod(rows[3][2]));
}

TEST_CASE("malformed grids are rejected with a parse error") {
    const fs::path dir = fresh_dir("levcav_cli_badgrid");
    const std::string cfg = write_config(dir);
    const RunResult r = run_cli("couple --config " + cfg +
                                " --detuning 0.3:3.0 --out " + dir.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("grid must be start:stop:count") != std::string::npos);
}

TEST_CASE("the version flag prints and exits cleanly") {
    const RunResult r = run_cli("--version");
    CHECK(r.exit_code == 0);
    CHECK(!r.out.empty());
}
