#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <cstdio>

#include "ttv/config.hpp"

using namespace ttv;

TEST_CASE("config parsing basics") {
    auto cfg = Config::parse(
        "# run settings\n"
        "top = 1\n"
        "[trajectories]\n"
        "count = 12\n"
        "duration = 0.75  # seconds\n"
        "name = \"with spaces\"\n"
        "flag = true\n"
        "rates = 5, 10, 20\n");
    CHECK(cfg.get_int("top", 0) == 1);
    CHECK(cfg.get_int("trajectories.count", 0) == 12);
    CHECK(cfg.get_double("trajectories.duration", 0.0) == doctest::Approx(0.75));
    CHECK(cfg.get_string("trajectories.name", "") == "with spaces");
    CHECK(cfg.get_bool("trajectories.flag", false));
    auto rates = cfg.get_doubles("trajectories.rates");
    REQUIRE(rates.size() == 3);
    CHECK(rates[1] == doctest::Approx(10.0));
    CHECK(cfg.get_int("missing.key", 42) == 42);
}

TEST_CASE("config errors carry line numbers and field names") {
    CHECK_THROWS_AS(Config::parse("[section\nkey = 1\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse("keyvalue\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse("a = 1\na = 2\n"), ConfigError);

    auto cfg = Config::parse("[s]\nx = notanumber\n");
    CHECK_THROWS_AS(cfg.get_double("s.x", 0.0), ConfigError);

    try {
        cfg.require("s.missing_field");
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("s.missing_field") != std::string::npos);
    }

    try {
        Config::parse("[s]\nbroken\n");
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("manifest text excludes wall-clock fields") {
    RunManifest m;
    m.subcommand = "simulate";
    m.seed = 7;
    m.out_dir = "/tmp/x";
    m.version = kToolkitVersion;
    auto path = std::string("/tmp/ttv_manifest_test.json");
    m.write(path);
    std::ifstream f(path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(text.find("simulate") != std::string::npos);
    CHECK(text.find("time") == std::string::npos);
    std::remove(path.c_str());
}
