#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pimgpt/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace pimgpt;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    std::string path = "/tmp/pimgpt_test_" + name;
    std::ofstream out(path);
    out << body;
    return path;
}

} // namespace

TEST_CASE("empty file yields the baseline configuration") {
    auto path = write_temp("empty.cfg", "");
    SystemConfig cfg = load_config(path);
    SystemConfig base;
    CHECK(cfg == base);
    CHECK(cfg.timing.tRCD == 12.0);
    CHECK(cfg.timing.tCCD == 1.0);
    CHECK(cfg.timing.tRFC == 455.0);
    CHECK(cfg.timing.tREFI == 6825.0);
    CHECK(cfg.idd.IDD2N == 92.0);
    CHECK(cfg.idd.IDD3N == 142.0);
    CHECK(cfg.idd.VDD == 1.25);
    CHECK(cfg.dram.channels == 8);
    CHECK(cfg.dram.banks_per_channel == 16);
    CHECK(cfg.dram.row_bytes == 2048);
    CHECK(cfg.pim.gb_bytes == 2048);
    CHECK(cfg.asic.num_adders == 256);
    CHECK(cfg.asic.power_mw == doctest::Approx(304.59));
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("single field override keeps everything else at baseline") {
    auto path = write_temp("ch16.cfg", "[dram]\nchannels = 16\ncapacity_per_channel_bits = 4294967296\n");
    SystemConfig cfg = load_config(path);
    CHECK(cfg.dram.channels == 16);
    SystemConfig base;
    base.dram.channels = 16;
    CHECK(cfg == base);
}

TEST_CASE("invariant violations name the constraint") {
    auto path = write_temp("bad.cfg", "[timing]\ntRFC_ns = 7000\ntREFI_ns = 6825\n");
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("tRFC < tREFI") != std::string::npos);
    }
    // parse failure carries line information
    auto bad = write_temp("syntax.cfg", "[timing]\ntRCD_ns 12\n");
    try {
        load_config(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_config("/nonexistent/f.cfg"), ConfigError);
    auto unknown = write_temp("unk.cfg", "[timing]\nbogus = 3\n");
    CHECK_THROWS_AS(load_config(unknown), ConfigError);
}

TEST_CASE("json config accepted") {
    auto path = write_temp("cfg.json", R"({"pim": {"mac_width": 64}, "asic": {"clock_hz": 5e8}})");
    SystemConfig cfg = load_config(path);
    CHECK(cfg.pim.mac_width == 64);
    CHECK(cfg.asic.clock_hz == 5e8);
}

TEST_CASE("serialize round-trips to an equal config") {
    SystemConfig cfg;
    cfg.dram.pin_rate_gbps = 2.0;
    cfg.pim.mac_width = 32;
    cfg.asic.clock_hz = 1e8;
    SystemConfig again = parse_config_text(serialize_config(cfg));
    CHECK(again == cfg);
    SystemConfig jagain = parse_config_text(serialize_config_json(cfg), "x.json");
    CHECK(jagain == cfg);
}

TEST_CASE("channel bandwidth") {
    SystemConfig cfg;
    CHECK(channel_bandwidth(cfg) == 32e9); // 16 pins x 16 Gb/s
    cfg.dram.pin_rate_gbps = 2.0;
    CHECK(channel_bandwidth(cfg) == 4e9);
    cfg.dram.pins_per_channel = 1;
    cfg.dram.pin_rate_gbps = 8.0;
    CHECK(channel_bandwidth(cfg) == 1e9);
}

TEST_CASE("model catalog") {
    const auto& cat = model_catalog();
    REQUIRE(cat.size() == 8);
    for (const auto& m : cat) {
        CHECK_NOTHROW(m.validate());
        CHECK(m.d_model == m.num_heads * m.d_head);
        CHECK(m.d_ffn == 4 * m.d_model);
        double rel = std::fabs(m.approx_params() - m.published_params) / m.published_params;
        INFO(m.name, " approx=", m.approx_params(), " published=", m.published_params);
        CHECK(rel <= 0.05);
    }
    const auto& xl = find_model("gpt3-xl");
    CHECK(xl.approx_params() >= 1.15e9);
    CHECK(xl.approx_params() <= 1.4e9);
    CHECK(find_model("gpt2-xl").d_head == 64);
    CHECK(find_model("gpt3-small").d_model == 768);
    CHECK(find_model("gpt3-small").num_heads == 12);
    CHECK(find_model("gpt3-xl-1.3b").d_model == 2048);
    CHECK_THROWS_AS(find_model("gpt9"), ConfigError);
}
