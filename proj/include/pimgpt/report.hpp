#pragma once

#include "pimgpt/config.hpp"
#include "pimgpt/energy.hpp"
#include "pimgpt/engine.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pimgpt {

struct RunOptions {
    GptModelConfig model;
    uint64_t tokens = 1024;
    SystemConfig cfg;
    bool check_timing = false;       // attach the independent trace checker
    std::string trace_path;          // per-event CSV dump when nonempty
    bool energy_detail = false;
};

struct RunReport {
    std::string model;
    uint64_t tokens = 0;
    double total_latency_s = 0;
    std::vector<double> per_token_s;
    std::vector<double> per_token_refresh_s;
    // layerwise latency breakdown (wall-clock partition)
    double vmm_s = 0, asic_s = 0, transfer_s = 0, kv_s = 0, refresh_s = 0, idle_s = 0;
    double row_hit_rate = 0;
    uint64_t data_movement_bytes = 0;
    uint64_t baseline_bytes = 0;
    uint64_t activates = 0, col_accesses = 0, channel_refreshes = 0;
    double asic_busy_s = 0;
    double mac_busy_s = 0;
    EnergyReport energy;
    uint64_t timing_violations = 0;
    std::string first_violation;
};

// Map, compile and simulate `tokens` autoregressive steps; deterministic.
RunReport run(const RunOptions& opt);

// Bytes a non-PIM system would move over the interface divided by the bytes
// this system moved; zero-token runs have no defined ratio.
std::optional<double> data_movement_reduction(const RunReport& r);

enum class SweepDim { asic_freq, pin_rate, tokens, mac_width, channels };
const char* sweep_dim_name(SweepDim d);

struct SweepRow {
    double value = 0;
    bool ok = false;
    std::string error;
    RunReport report;
    double normalized_latency = 0; // vs the first row
};

struct SweepResult {
    SweepDim dim;
    std::string model;
    std::vector<SweepRow> rows;
};

// One run per value; the first value is the normalization baseline. Invalid
// values report per-row errors and the sweep continues. Rows may execute
// concurrently; assembly order is the input order.
SweepResult sweep(SweepDim dim, const std::vector<double>& values, const RunOptions& base,
                  unsigned parallelism = 0);

std::string report_json(const RunReport& r, bool energy_detail = false);
std::string report_csv(const RunReport& r);
std::string sweep_json(const SweepResult& s);
std::string sweep_csv(const SweepResult& s);

} // namespace pimgpt
