#pragma once

#include "pimgpt/config.hpp"
#include "pimgpt/engine.hpp"

#include <string>

namespace pimgpt {

struct EnergyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Joules per component. IDD currents multiply VDD and the command latency;
// MAC and ASIC terms multiply busy time with the synthesized powers.
struct EnergyReport {
    double dram_background = 0;
    double dram_act_pre = 0;
    double dram_read = 0;
    double dram_write = 0;
    double dram_refresh = 0;
    double pim_mac = 0;
    double asic = 0;
    double transfer_attributed = 0;
    double total = 0;

    // Formula notes emitted with the report: the exact accounting behind
    // every component, for reproducibility.
    static std::string formula_notes();
};

// Energy of one trace event (per covered bank). ACT/PRE pairs follow the
// active-precharge formulation over tRAS+tRP with IDD0 minus background,
// clamped at zero; reads/writes pay the IDD4 deltas over the burst; REF pays
// IDD5B for tRFC with no background subtraction.
double command_energy(const TraceEvent& e, const CurrentProfile& profile,
                      const TimingConstraints& timing);

// Full-trace accounting from the aggregate statistics.
EnergyReport accumulate(const SimStats& stats, const SystemConfig& cfg);

} // namespace pimgpt
