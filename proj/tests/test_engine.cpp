#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pimgpt/engine.hpp"
#include "pimgpt/report.hpp"

using namespace pimgpt;

namespace {

GptModelConfig toy_model() {
    GptModelConfig m;
    m.name = "toy";
    m.num_layers = 2;
    m.d_model = 64;
    m.num_heads = 4;
    m.d_head = 16;
    m.d_ffn = 256;
    m.vocab_size = 256;
    m.max_tokens = 16;
    return m;
}

SimTrace run_tokens(const GptModelConfig& m, const SystemConfig& cfg, uint64_t T,
                    std::vector<TraceSink*> sinks = {}) {
    MemoryMap map = build_memory_map(m, cfg, static_cast<uint32_t>(T));
    Engine eng(map, cfg);
    for (auto* s : sinks) eng.add_sink(s);
    for (uint64_t t = 1; t <= T; ++t) {
        auto g = build_graph(m, t);
        auto s = compile(g, map, cfg);
        eng.execute(s);
        eng.mark_token();
    }
    return eng.finish();
}

} // namespace

TEST_CASE("bank machine command legality and completion") {
    SystemConfig cfg;
    BankMachine bm(cfg);
    // ACT at t: bank in Process until t + tRCD
    ps_t done = bm.issue(BankMachine::Cmd::ACT, 7, 1000);
    CHECK(done == 1000 + 12000);
    // RD one cycle before tRCD elapses aborts naming tRCD
    try {
        bm.issue(BankMachine::Cmd::RD, 7, 1000 + 12000 - 1000);
        FAIL("expected violation");
    } catch (const TimingViolation& e) {
        CHECK(std::string(e.what()).find("tRCD") != std::string::npos);
    }
    BankMachine bm2(cfg);
    bm2.issue(BankMachine::Cmd::ACT, 3, 0);
    CHECK(bm2.issue(BankMachine::Cmd::RD, 3, 12000) == 13000);
    // back-to-back reads at exactly tCCD are legal; faster is not
    CHECK(bm2.issue(BankMachine::Cmd::RD, 3, 13000) == 14000);
    CHECK_THROWS_AS(bm2.issue(BankMachine::Cmd::RD, 3, 13500), TimingViolation);
    // WR then PRE after exactly tWR is legal (with tRAS already satisfied)
    BankMachine bm3(cfg);
    bm3.issue(BankMachine::Cmd::ACT, 1, 0);
    ps_t w = bm3.issue(BankMachine::Cmd::WR, 1, 40000); // ends 41000
    CHECK(w == 41000);
    CHECK_THROWS_AS(bm3.issue(BankMachine::Cmd::PRE, 1, 41000 + 12000 - 1000), TimingViolation);
    BankMachine bm3b(cfg);
    bm3b.issue(BankMachine::Cmd::ACT, 1, 0);
    bm3b.issue(BankMachine::Cmd::WR, 1, 40000);
    CHECK_NOTHROW(bm3b.issue(BankMachine::Cmd::PRE, 1, 41000 + 12000));
    // PRE before tRAS aborts
    BankMachine bm4(cfg);
    bm4.issue(BankMachine::Cmd::ACT, 1, 0);
    CHECK_THROWS_AS(bm4.issue(BankMachine::Cmd::PRE, 1, 31000), TimingViolation);
}

TEST_CASE("transfer durations") {
    SystemConfig cfg;
    // 2048 bytes at 32 GB/s: 64 ns
    CHECK(transfer_ps(2048, TransferDir::broadcast, cfg) == 64000);
    cfg.dram.pin_rate_gbps = 2.0; // 4 GB/s
    CHECK(transfer_ps(2048, TransferDir::collect, cfg) == 512000);
}

TEST_CASE("asic compute hand counts") {
    SystemConfig cfg;
    // residual_add of 256 elements with 256 adders: exactly 1 cycle
    CHECK(asic_compute_cycles(NodeKind::residual_add, 256, cfg) == 1);
    CHECK(asic_compute_cycles(NodeKind::residual_add, 257, cfg) == 2);
    // softmax at N=4, by the documented census: ceil(4/128) exp passes +
    // ceil(4/128) normalize passes + exp depth 11 + recip depth 11 + fused
    // accumulation drain ceil(log2 4)+1 = 3 -> 2 + 25 = 27 cycles
    CHECK(asic_compute_cycles(NodeKind::softmax, 4, cfg) == 1 + 1 + 11 + 11 + 3);
    // gelu: one multiplier-wide pass + fixed pipeline depth
    CHECK(asic_compute_cycles(NodeKind::gelu, 128, cfg) ==
          1 + 11 + 11 + 7);
    // partial_sum of N elements: adder-wide, no depth
    CHECK(asic_compute_cycles(NodeKind::partial_sum, 512, cfg) == 2);
}

TEST_CASE("empty stream yields clock zero") {
    SystemConfig cfg;
    auto m = toy_model();
    MemoryMap map = build_memory_map(m, cfg, 4);
    InstructionStream empty;
    empty.map = &map;
    empty.cfg = cfg;
    empty.model = m;
    SimTrace tr = simulate(empty, map, cfg);
    CHECK(tr.stats.final_ps == 0);
    CHECK(tr.stats.col_accesses == 0);
}

TEST_CASE("single MAC over one fresh row costs tRCD + 64 cycles of streaming") {
    SystemConfig cfg;
    // one channel, one bank, W_Q = 32x32 = exactly one 1024-element row
    GptModelConfig m;
    m.name = "rowtoy";
    m.num_layers = 1;
    m.d_model = 32;
    m.num_heads = 1;
    m.d_head = 32;
    m.d_ffn = 128;
    m.vocab_size = 64;
    m.max_tokens = 4;
    SystemConfig tcfg = cfg;
    tcfg.dram.channels = 1;
    tcfg.dram.banks_per_channel = 1;
    tcfg.dram.columns = 1024;
    tcfg.dram.capacity_per_channel = uint64_t(2048) * 1024 * 8;
    MemoryMap map = build_memory_map(m, tcfg, 4);
    EventLog log;
    Engine eng(map, tcfg);
    eng.add_sink(&log);
    auto g = build_graph(m, 1);
    auto s = compile(g, map, tcfg);
    eng.execute(s);
    eng.finish();
    // find the first full-row MAC burst: a fresh activate then 64 reads
    for (const auto& e : log.events) {
        if (e.kind == EventKind::COL_RD && e.count == 64 && e.act_at >= 0) {
            CHECK(e.t == e.act_at + 12000); // tRCD between ACT and first read
            CHECK(e.dur == 64000);          // 64 accesses at tCCD
            CHECK(e.hits == 63);            // the first access misses
            return;
        }
    }
    FAIL("no full-row MAC burst found");
}

TEST_CASE("open row continuation skips the second activate") {
    // Two consecutive weight blocks share the bank cursor mid-row: the
    // second sweep continues on the open row with zero ACT.
    SystemConfig cfg;
    auto m = toy_model();
    EventLog log;
    SimTrace tr = run_tokens(m, cfg, 1, {&log});
    // W_Q occupies 32 elems per bank; W_K follows within the same row: its
    // burst must be a 100% hit burst (count == hits).
    size_t full_hit_bursts = 0;
    for (const auto& e : log.events) {
        if (e.kind == EventKind::COL_RD && e.count > 0 && e.hits == e.count) ++full_hit_bursts;
    }
    CHECK(full_hit_bursts > 0);
    CHECK(tr.stats.final_ps > 0);
}

TEST_CASE("determinism: identical runs produce identical traces") {
    SystemConfig cfg;
    auto m = toy_model();
    SimTrace a = run_tokens(m, cfg, 8);
    SimTrace b = run_tokens(m, cfg, 8);
    CHECK(a.stats.final_ps == b.stats.final_ps);
    CHECK(a.stats.activates == b.stats.activates);
    CHECK(a.stats.row_hits == b.stats.row_hits);
    CHECK(a.stats.bus_bytes == b.stats.bus_bytes);
    CHECK(a.stats.token_ps == b.stats.token_ps);
}

TEST_CASE("timing checker finds zero violations on the toy run") {
    SystemConfig cfg;
    auto m = toy_model();
    TimingChecker chk(cfg, 128);
    SimTrace tr = run_tokens(m, cfg, 16, {&chk});
    CHECK(chk.violations() == 0);
    // refresh count per channel = floor(final / tREFI) +- 1
    uint64_t per_bank = tr.stats.refreshes / 128;
    uint64_t expect = uint64_t(tr.stats.final_ps) / 6825000ull;
    CHECK(per_bank >= (expect > 0 ? expect - 1 : 0));
    CHECK(per_bank <= expect + 1);
}

TEST_CASE("the checker catches planted violations") {
    SystemConfig cfg;
    TimingChecker chk(cfg, 4);
    TraceEvent rd;
    rd.kind = EventKind::COL_RD;
    rd.act_at = 1000;
    rd.t = 1000 + 11000; // one cycle early
    rd.cadence = 1000;
    rd.count = 4;
    rd.hits = 3;
    rd.row = 5;
    rd.banks.add(0, 4);
    chk.on_event(rd);
    CHECK(chk.violations() > 0);
    CHECK(chk.first_violation().find("tRCD") != std::string::npos);
}

TEST_CASE("monotonicity in token count and resources") {
    SystemConfig cfg;
    auto m = toy_model();
    SimTrace t4 = run_tokens(m, cfg, 4);
    SimTrace t8 = run_tokens(m, cfg, 8);
    CHECK(t8.stats.final_ps > t4.stats.final_ps);

    SystemConfig wide = cfg;
    wide.pim.mac_width = 64;
    SimTrace w = run_tokens(m, wide, 8);
    CHECK(w.stats.final_ps <= t8.stats.final_ps);

    // channel scaling holds for realistic dims (the degenerate toy is
    // activate-overhead-bound and exempt; the trend holds for real dims)
    const auto& gm = find_model("gpt3-small");
    SimTrace g8 = run_tokens(gm, cfg, 4);
    SystemConfig more = cfg;
    more.dram.channels = 16;
    SimTrace g16 = run_tokens(gm, more, 4);
    CHECK(g16.stats.final_ps <= g8.stats.final_ps);
}

TEST_CASE("work conservation across channel counts") {
    SystemConfig cfg;
    auto m = toy_model();
    SimTrace a = run_tokens(m, cfg, 4);
    SystemConfig half = cfg;
    half.dram.channels = 4;
    SimTrace b = run_tokens(m, half, 4);
    // the MAC work (column accesses) redistributes but its sum is invariant
    CHECK(a.stats.col_reads == b.stats.col_reads);
}

TEST_CASE("row hit rate approximates the mapper prediction") {
    SystemConfig cfg;
    const auto& m = find_model("gpt3-small");
    MemoryMap map = build_memory_map(m, cfg, 8);
    Engine eng(map, cfg);
    for (uint64_t t = 1; t <= 8; ++t) {
        auto g = build_graph(m, t);
        auto s = compile(g, map, cfg);
        eng.execute(s);
        eng.mark_token();
    }
    SimTrace tr = eng.finish();
    double predicted = predicted_row_hit(map, 4);
    CHECK(tr.stats.row_hit_rate() ==
          doctest::Approx(predicted).epsilon(0.01)); // within 1%
}

TEST_CASE("fused collect: downstream ASIC overlap never hurts") {
    // total latency with fusion must be <= the same stream charged serially;
    // check the weaker property that asic-busy time exceeds exposed asic wall
    // time (some of it hides under transfers).
    SystemConfig cfg;
    auto m = toy_model();
    SimTrace tr = run_tokens(m, cfg, 8);
    CHECK(tr.stats.t_asic <= tr.stats.asic_busy_ps);
}

TEST_CASE("breakdown partitions the wall clock") {
    SystemConfig cfg;
    auto m = toy_model();
    SimTrace tr = run_tokens(m, cfg, 8);
    ps_t sum = tr.stats.t_vmm + tr.stats.t_asic + tr.stats.t_transfer + tr.stats.t_kv +
               tr.stats.t_refresh + tr.stats.t_idle;
    CHECK(std::abs(double(sum - tr.stats.final_ps)) <= 0.001 * double(tr.stats.final_ps));
}

TEST_CASE("zero- and one-token runs") {
    RunOptions opt;
    opt.model = toy_model();
    opt.tokens = 0;
    RunReport r0 = run(opt);
    CHECK(r0.total_latency_s == 0.0);
    CHECK_FALSE(data_movement_reduction(r0).has_value());
    CHECK(report_json(r0).find("\"data_movement_reduction\": \"n/a\"") != std::string::npos);

    RunOptions real;
    real.model = find_model("gpt2-small");
    real.tokens = 1;
    RunReport r1 = run(real);
    CHECK(r1.total_latency_s > 0.0);
    // the smallest real run is dominated by the VMM sweeps
    CHECK(r1.vmm_s > 0.5 * r1.total_latency_s);
}

TEST_CASE("report run determinism and serialization") {
    RunOptions opt;
    opt.model = toy_model();
    opt.tokens = 6;
    RunReport a = run(opt);
    RunReport b = run(opt);
    CHECK(report_json(a) == report_json(b));
    CHECK(report_csv(a) == report_csv(b));
    CHECK(a.total_latency_s > 0);
    auto red = data_movement_reduction(a);
    CHECK(red.has_value());

    // per-row sweep errors keep the sweep alive
    SweepResult res = sweep(SweepDim::pin_rate, {16.0, -1.0, 2.0}, opt, 1);
    CHECK(res.rows[0].ok);
    CHECK_FALSE(res.rows[1].ok);
    CHECK(res.rows[2].ok);
    CHECK(res.rows[0].normalized_latency == doctest::Approx(1.0));
    CHECK(res.rows[2].normalized_latency > 1.0);
    // CSV and JSON both render
    CHECK(sweep_csv(res).find("pin_rate") != std::string::npos);
    CHECK(sweep_json(res).find("error") != std::string::npos);
    // normalized columns equal the ratio of absolute columns to 1e-9
    double ratio = res.rows[2].report.total_latency_s / res.rows[0].report.total_latency_s;
    CHECK(std::fabs(res.rows[2].normalized_latency - ratio) <= 1e-9 * ratio);
}
