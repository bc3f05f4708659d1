// Serialization primitives: shortest round-trip doubles, CSV tables, seed
// mixing, and the run manifest.

#include <levcav/io.hpp>

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include <levcav/errors.hpp>

namespace {

using namespace levcav;

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("fmt_double emits the shortest exact decimal") {
    CHECK(fmt_double(1.0) == "1");
    CHECK(fmt_double(0.5) == "0.5");
    CHECK(fmt_double(-0.0) == "-0");
    CHECK(fmt_double(1e300) == "1e+300");

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> mant(-1.0, 1.0);
    std::uniform_int_distribution<int> expo(-300, 300);
    for (int i = 0; i < 2000; ++i) {
        const double x = std::ldexp(mant(rng), expo(rng));
        CHECK(parse_double(fmt_double(x)) == x);
    }
}

TEST_CASE("parse_double rejects garbage and trailing junk") {
    CHECK(parse_double("6.2e-6") == doctest::Approx(6.2e-6));
    CHECK_THROWS_AS(parse_double(""), IoError);
    CHECK_THROWS_AS(parse_double("abc"), IoError);
    CHECK_THROWS_AS(parse_double("1.5x"), IoError);
}

TEST_CASE("CSV tables round-trip through text") {
    CsvTable t;
    t.header = {"a", "b", "c"};
    t.rows = {{"1", "2.5", "x"}, {"-3", "4e-6", ""}};
    const std::string text = csv_to_string(t);
    const CsvTable back = csv_from_string(text);
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(csv_to_string(back) == text);
}

TEST_CASE("CSV files round-trip byte-identically") {
    CsvTable t;
    t.header = {"frequency_hz", "psd_value"};
    for (int i = 0; i < 50; ++i)
        t.rows.push_back({fmt_double(1e3 + i * 0.37), fmt_double(1.0 / (1 + i))});

    const std::string path = temp_path("levcav_io_table.csv");
    write_csv(path, t);
    const std::string bytes = read_text_file(path);
    write_csv(path, read_csv(path));
    CHECK(read_text_file(path) == bytes);
    std::remove(path.c_str());
}

TEST_CASE("reading a missing file raises IoError") {
    CHECK_THROWS_AS(read_text_file("/nonexistent/levcav/nowhere.txt"), IoError);
    CHECK_THROWS_AS(read_csv("/nonexistent/levcav/nowhere.csv"), IoError);
}

TEST_CASE("mix_seed separates streams deterministically") {
    CHECK(mix_seed(1, 0) == mix_seed(1, 0));
    std::set<std::uint64_t> seen;
    for (std::uint64_t seed = 0; seed < 8; ++seed)
        for (std::uint64_t stream = 0; stream < 8; ++stream)
            seen.insert(mix_seed(seed, stream));
    CHECK(seen.size() == 64); // no collisions among nearby seeds
}

TEST_CASE("manifest JSON round-trips") {
    RunManifest m;
    m.command = "spectrogram --mode stochastic";
    m.config_path = "configs/paper_default.ini";
    m.seed = 42;
    m.out_dir = "/tmp/run";
    m.tool_version = "0.1.0";
    m.created_utc = "2026-01-02T03:04:05Z";

    const RunManifest back = manifest_from_json(manifest_to_json(m));
    CHECK(back.command == m.command);
    CHECK(back.config_path == m.config_path);
    CHECK(back.seed == m.seed);
    CHECK(back.out_dir == m.out_dir);
    CHECK(back.tool_version == m.tool_version);
    CHECK(back.created_utc == m.created_utc);

    const std::string path = temp_path("levcav_manifest.json");
    write_manifest(path, m);
    const auto j = nlohmann::json::parse(read_text_file(path));
    CHECK(j.at("seed").get<std::uint64_t>() == 42);
    std::remove(path.c_str());
}
