#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pimgpt {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// DRAM command timing constraints, nanoseconds.
struct TimingConstraints {
    double tRCD = 12.0;
    double tRP = 12.0;
    double tCCD = 1.0;
    double tWR = 12.0;
    double tRFC = 455.0;
    double tREFI = 6825.0;
    double tRAS = 32.0; // not in the GDDR6 table; GDDR5-class value
};

// IDD currents (mA) and supply voltage.
struct CurrentProfile {
    double IDD0 = 122.0;
    double IDD2N = 92.0;
    double IDD3N = 142.0;
    double IDD4R = 530.0;
    double IDD4W = 470.0;
    double IDD5B = 277.0;
    double VDD = 1.25;
};

struct DramGeometry {
    uint32_t channels = 8;
    uint32_t banks_per_channel = 16;
    uint64_t capacity_per_channel = 4ull << 30; // bits
    uint32_t row_bytes = 2048;
    uint32_t columns = 16384; // rows worth of row_bytes per bank
    uint32_t pins_per_channel = 16;
    double pin_rate_gbps = 16.0; // Gb/s/pin
    double dram_clock_hz = 1e9;

    uint64_t rows_per_bank() const { return columns; }
    uint64_t bank_bytes() const { return uint64_t(row_bytes) * columns; }
};

struct PimConfig {
    uint32_t gb_bytes = 2048;        // per-channel global buffer
    uint32_t mac_width = 16;          // elements consumed per bank per cycle
    uint32_t mac_units_per_bank = 1;
    double pim_clock_hz = 1e9;
    double mac_power_mw = 149.29;     // per channel (16 MAC units)
};

struct AsicConfig {
    double clock_hz = 1e9;
    uint32_t sram_bytes = 128 * 1024;
    uint32_t num_adders = 256;
    uint32_t num_multipliers = 128;
    double power_mw = 304.59;
};

struct GptModelConfig {
    std::string name;
    uint32_t num_layers = 0;
    uint32_t d_model = 0;
    uint32_t num_heads = 0;
    uint32_t d_head = 0;
    uint32_t d_ffn = 0;
    uint32_t vocab_size = 0;
    uint32_t max_tokens = 0;          // published context length
    double published_params = 0.0;    // from the GPT-2/GPT-3 publications
    std::string param_source;

    // 12*N*d^2 (QKV + proj + both FFN matrices) + vocab*d (tied embedding);
    // layernorm/bias terms are ignored, the count backs only the 5% check.
    double approx_params() const {
        double d = d_model;
        return 12.0 * num_layers * d * d + double(vocab_size) * d;
    }
    void validate() const;
};

struct SystemConfig {
    TimingConstraints timing;
    CurrentProfile idd;
    DramGeometry dram;
    PimConfig pim;
    AsicConfig asic;

    void validate() const;

    uint32_t row_elems() const { return dram.row_bytes / 2; }
    uint32_t gb_elems() const { return pim.gb_bytes / 2; }
    uint32_t total_banks() const { return dram.channels * dram.banks_per_channel; }
};

// bytes/s across one channel interface: pins * rate / 8.
double channel_bandwidth(const SystemConfig& cfg);

// Parse a config file. Keys missing from the file keep the baseline
// defaults. Two formats: sectioned key=value text, or JSON (by .json
// extension or a leading '{'). An empty file is the baseline config.
SystemConfig load_config(const std::string& path);
SystemConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

// Canonical key=value serialization; parse(serialize(cfg)) == cfg.
std::string serialize_config(const SystemConfig& cfg);
std::string serialize_config_json(const SystemConfig& cfg);

bool operator==(const TimingConstraints&, const TimingConstraints&);
bool operator==(const CurrentProfile&, const CurrentProfile&);
bool operator==(const DramGeometry&, const DramGeometry&);
bool operator==(const PimConfig&, const PimConfig&);
bool operator==(const AsicConfig&, const AsicConfig&);
bool operator==(const SystemConfig&, const SystemConfig&);

// The eight benchmark models (4 GPT-2, 4 GPT-3).
const std::vector<GptModelConfig>& model_catalog();
// Recorded alternate readings (currently the 1.3B gpt3-xl candidate).
const std::vector<GptModelConfig>& model_alternates();
// Looks up catalog then alternates; throws ConfigError when absent.
const GptModelConfig& find_model(const std::string& name);

} // namespace pimgpt
