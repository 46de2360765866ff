#include "pimgpt/energy.hpp"

#include <algorithm>

namespace pimgpt {

namespace {

constexpr double kPsToS = 1e-12;
constexpr double kNsToS = 1e-9;

double act_pre_pair_energy(const CurrentProfile& idd, const TimingConstraints& t) {
    // One bank's activate-precharge window: IDD0 over tRAS + tRP, minus the
    // background already accounted (IDD3N while the row sits open, IDD2N
    // during the precharge itself). Clamped: the baseline GDDR6 currents put
    // IDD0 below IDD3N, which zeroes this term.
    double e = (idd.IDD0 * (t.tRAS + t.tRP) - idd.IDD3N * t.tRAS - idd.IDD2N * t.tRP) * 1e-3 *
               idd.VDD * kNsToS;
    return std::max(0.0, e);
}

} // namespace

std::string EnergyReport::formula_notes() {
    return "act_pre: max(0, IDD0*(tRAS+tRP) - IDD3N*tRAS - IDD2N*tRP) * VDD per pair; "
           "read: (IDD4R-IDD3N)*VDD*burst; write: (IDD4W-IDD3N)*VDD*burst; "
           "refresh: IDD5B*VDD*tRFC per channel refresh; "
           "background: per channel, IDD3N*VDD while any row is open (first ACT to end, "
           "refresh windows excepted at IDD2N); "
           "pim_mac: mac_power/16 per busy MAC unit scaled by mac_width/16; "
           "asic: synthesized power times busy time (idle blocks power-gated)";
}

double command_energy(const TraceEvent& e, const CurrentProfile& idd,
                      const TimingConstraints& t) {
    double mult = e.multiplicity();
    switch (e.kind) {
        case EventKind::COL_RD:
        case EventKind::COL_WR: {
            double burst_delta = (e.kind == EventKind::COL_RD) ? (idd.IDD4R - idd.IDD3N)
                                                               : (idd.IDD4W - idd.IDD3N);
            double energy = mult * burst_delta * 1e-3 * idd.VDD * double(e.dur) * kPsToS;
            if (e.act_at >= 0) energy += mult * act_pre_pair_energy(idd, t);
            return energy;
        }
        case EventKind::REF:
            // one bank's share of its channel's all-bank refresh
            return mult * idd.IDD5B * 1e-3 * idd.VDD * t.tRFC * kNsToS;
        case EventKind::BUS:
        case EventKind::ASIC:
            return 0.0; // covered by the constant-power terms
    }
    throw EnergyError("unknown command kind");
}

EnergyReport accumulate(const SimStats& stats, const SystemConfig& cfg) {
    const auto& idd = cfg.idd;
    const auto& t = cfg.timing;
    EnergyReport r;

    r.dram_act_pre = double(stats.activates) * act_pre_pair_energy(idd, t);
    r.dram_read = (idd.IDD4R - idd.IDD3N) * 1e-3 * idd.VDD * double(stats.rd_busy_ps) * kPsToS;
    r.dram_write = (idd.IDD4W - idd.IDD3N) * 1e-3 * idd.VDD * double(stats.wr_busy_ps) * kPsToS;

    // stats.refreshes counts bank refreshes; every bank refreshes once per
    // channel refresh.
    double channel_refreshes =
        double(stats.refreshes) / double(cfg.dram.banks_per_channel);
    r.dram_refresh = channel_refreshes * idd.IDD5B * 1e-3 * idd.VDD * t.tRFC * kNsToS;

    // Background: channels sit in active standby from the first activate on,
    // precharged during refresh windows.
    double total_s = double(stats.final_ps) * kPsToS;
    double per_channel_refresh_s =
        (channel_refreshes / std::max<double>(1.0, cfg.dram.channels)) * t.tRFC * kNsToS;
    double open_s = std::max(0.0, total_s - per_channel_refresh_s);
    if (stats.col_accesses == 0) open_s = 0.0; // nothing ever activated
    double closed_s = total_s - open_s;
    r.dram_background = cfg.dram.channels *
                        (idd.IDD3N * open_s + idd.IDD2N * closed_s) * 1e-3 * idd.VDD;

    // 149.29 mW covers one channel's 16 MAC units at 16 lanes each;
    // mac_busy_ps sums per-bank streaming time.
    double unit_power_w = (cfg.pim.mac_power_mw * 1e-3 / 16.0) *
                          (double(cfg.pim.mac_width) / 16.0) * cfg.pim.mac_units_per_bank;
    r.pim_mac = unit_power_w * double(stats.mac_busy_ps) * kPsToS;

    r.asic = cfg.asic.power_mw * 1e-3 * double(stats.asic_busy_ps) * kPsToS;

    r.transfer_attributed = 0.0; // interface energy folds into the IDD terms
    r.total = r.dram_background + r.dram_act_pre + r.dram_read + r.dram_write + r.dram_refresh +
              r.pim_mac + r.asic + r.transfer_attributed;
    return r;
}

} // namespace pimgpt
