#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pimgpt/energy.hpp"

using namespace pimgpt;

TEST_CASE("command energy examples") {
    SystemConfig cfg;
    TraceEvent ref;
    ref.kind = EventKind::REF;
    ref.banks.add(0, 16); // one whole channel
    double e = command_energy(ref, cfg.idd, cfg.timing);
    // 16 banks x (1/16 of a channel refresh)... the per-bank share sums to
    // one channel refresh: 0.277 A x 1.25 V x 455 ns = 157.5 nJ
    CHECK(e / 16.0 * 16.0 == doctest::Approx(16 * 0.277 * 1.25 * 455e-9));
    TraceEvent one_bank_ref;
    one_bank_ref.kind = EventKind::REF;
    one_bank_ref.banks.add(0, 1);
    CHECK(command_energy(one_bank_ref, cfg.idd, cfg.timing) ==
          doctest::Approx(0.277 * 1.25 * 455e-9));

    TraceEvent rd;
    rd.kind = EventKind::COL_RD;
    rd.dur = 1000; // 1 ns burst
    rd.banks.add(3, 4);
    CHECK(command_energy(rd, cfg.idd, cfg.timing) ==
          doctest::Approx((0.530 - 0.142) * 1.25 * 1e-9)); // 0.485 nJ

    TraceEvent wr = rd;
    wr.kind = EventKind::COL_WR;
    CHECK(command_energy(wr, cfg.idd, cfg.timing) ==
          doctest::Approx((0.470 - 0.142) * 1.25 * 1e-9));
}

TEST_CASE("zero-duration trace yields zero energy") {
    SystemConfig cfg;
    SimStats st;
    EnergyReport r = accumulate(st, cfg);
    CHECK(r.total == 0.0);
}

TEST_CASE("refresh energy is count exact") {
    SystemConfig cfg;
    SimStats st;
    st.final_ps = 1'000'000'000; // 1 ms
    st.refreshes = 16 * 8 * 146; // 146 deadlines, all banks
    st.col_accesses = 1;
    EnergyReport r = accumulate(st, cfg);
    double per_refresh = 0.277 * 1.25 * 455e-9;
    CHECK(r.dram_refresh == doctest::Approx(8 * 146 * per_refresh).epsilon(1e-12));
    // command-count consistency: refresh term / unit = count
    CHECK(r.dram_refresh / per_refresh == doctest::Approx(8 * 146).epsilon(1e-12));
}

TEST_CASE("all-idle background uses IDD2N") {
    SystemConfig cfg;
    SimStats st;
    st.final_ps = 1'000'000'000; // 1 ms
    st.col_accesses = 0;         // nothing activated: all precharged
    EnergyReport r = accumulate(st, cfg);
    CHECK(r.dram_background == doctest::Approx(8 * 0.092 * 1.25 * 1e-3));
    CHECK(r.pim_mac == 0.0);
    CHECK(r.asic == 0.0);
}

TEST_CASE("asic busy energy") {
    SystemConfig cfg;
    SimStats st;
    st.final_ps = 1'000'000; // 1 us
    st.asic_busy_ps = 1'000'000;
    st.col_accesses = 0;
    EnergyReport r = accumulate(st, cfg);
    CHECK(r.asic == doctest::Approx(304.59e-3 * 1e-6)); // 304.59 nJ
}

TEST_CASE("linearity: doubling duration with identical commands doubles background only") {
    SystemConfig cfg;
    SimStats a;
    a.final_ps = 1'000'000'000;
    a.col_accesses = 100;
    a.rd_busy_ps = 50'000'000;
    a.activates = 1000;
    a.refreshes = 0;
    SimStats b = a;
    b.final_ps = 2'000'000'000;
    EnergyReport ra = accumulate(a, cfg);
    EnergyReport rb = accumulate(b, cfg);
    CHECK(rb.dram_read == doctest::Approx(ra.dram_read));
    CHECK(rb.dram_act_pre == doctest::Approx(ra.dram_act_pre));
    CHECK(rb.dram_background == doctest::Approx(2 * ra.dram_background));
    // components sum to total
    double sum = ra.dram_background + ra.dram_act_pre + ra.dram_read + ra.dram_write +
                 ra.dram_refresh + ra.pim_mac + ra.asic + ra.transfer_attributed;
    CHECK(ra.total == doctest::Approx(sum).epsilon(1e-12));
}
