#pragma once

#include "pimgpt/compiler.hpp"
#include "pimgpt/config.hpp"
#include "pimgpt/mapper.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace pimgpt {

struct TimingViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using ps_t = int64_t;

// Command timing in picoseconds, derived once from the config.
struct LatencyModel {
    ps_t tRCD, tRP, tCCD, tWR, tRFC, tREFI, tRAS;
    ps_t dram_cycle, pim_cycle, asic_cycle;
    ps_t drain; // adder-tree drain after the last chunk of a sweep
    double bus_bytes_per_ps;

    explicit LatencyModel(const SystemConfig& cfg);
    ps_t transfer_ps(uint64_t bytes) const;
};

enum class EventKind : uint8_t { COL_RD, COL_WR, REF, BUS, ASIC };
const char* event_kind_name(EventKind k);

// Bank id ranges held inline: events cover a handful of [g0, g1) runs.
struct BankRanges {
    static constexpr size_t kMax = 6;
    uint8_t n = 0;
    std::array<std::pair<uint32_t, uint32_t>, kMax> r{};
    void add(uint32_t g0, uint32_t g1) { r[n++] = {g0, g1}; }
    void clear() { n = 0; }
    bool full() const { return n == kMax; }
    const std::pair<uint32_t, uint32_t>* begin() const { return r.data(); }
    const std::pair<uint32_t, uint32_t>* end() const { return r.data() + n; }
};

// One trace event, possibly standing for many banks doing the identical
// thing. A column burst carries its own precharge/activate preamble:
// pre_at/act_at are -1 when the row was already open.
struct TraceEvent {
    ps_t t = 0;        // first column access (COL), start otherwise
    ps_t dur = 0;      // burst or transfer duration
    ps_t pre_at = -1;      // PRE closing the previous row
    ps_t act_at = -1;      // ACT opening this row
    ps_t post_pre_at = -1; // PRE right after the burst (close-row writes)
    EventKind kind = EventKind::COL_RD;
    uint32_t row = 0;
    uint32_t count = 1;    // column accesses in a burst
    uint32_t hits = 0;     // of which row-buffer hits
    ps_t cadence = 0;      // spacing between accesses in a burst
    uint64_t bytes = 0;    // bus payload (wire bytes)
    uint32_t fanout = 1;   // channel interfaces crossed (bus events)
    BankRanges banks;
    uint32_t multiplicity() const {
        uint32_t m = 0;
        for (auto& p : banks) m += p.second - p.first;
        return m;
    }
};

class TraceSink {
public:
    virtual ~TraceSink() = default;
    virtual void on_event(const TraceEvent& e) = 0;
    virtual void finalize(ps_t) {}
};

// Aggregate statistics; the source of all latency/energy/row-hit numbers.
struct SimStats {
    ps_t final_ps = 0;
    uint64_t activates = 0;
    uint64_t precharges = 0;
    uint64_t col_accesses = 0; // reads + writes
    uint64_t col_reads = 0;
    uint64_t col_writes = 0;
    uint64_t row_hits = 0;
    uint64_t refreshes = 0; // per-channel refresh count
    ps_t rd_busy_ps = 0;    // sum over banks of read-burst time
    ps_t wr_busy_ps = 0;
    ps_t mac_busy_ps = 0;   // per-bank MAC streaming time (column read time)
    ps_t asic_busy_ps = 0;
    ps_t bus_busy_ps = 0;
    uint64_t bus_bytes = 0; // sum of bytes x fanout: interface bytes moved
    uint64_t baseline_bytes = 0; // operand bytes a non-PIM system would move
    // Wall-clock attribution; the pieces partition [0, final_ps].
    ps_t t_vmm = 0, t_asic = 0, t_transfer = 0, t_kv = 0, t_refresh = 0, t_idle = 0;
    std::array<ps_t, 12> asic_busy_by_kind{}; // indexed by NodeKind
    // Per-token series (filled by mark_token).
    std::vector<ps_t> token_ps;
    std::vector<ps_t> token_refresh_ps;

    double row_hit_rate() const {
        return col_accesses ? double(row_hits) / double(col_accesses) : 0.0;
    }
};

// Independent re-verification of every pairwise timing constraint over the
// emitted event stream. Bank state lives in an interval map so range events
// stay cheap.
class TimingChecker : public TraceSink {
public:
    TimingChecker(const SystemConfig& cfg, uint32_t total_banks);
    void on_event(const TraceEvent& e) override;
    void finalize(ps_t final_ps) override;
    uint64_t violations() const { return violations_; }
    const std::string& first_violation() const { return first_violation_; }

private:
    struct BankCheck {
        int64_t open_row = -1;
        ps_t act_t = std::numeric_limits<ps_t>::min() / 4;
        ps_t last_col_end = std::numeric_limits<ps_t>::min() / 4;
        ps_t last_wr_end = std::numeric_limits<ps_t>::min() / 4;
        ps_t pre_end = std::numeric_limits<ps_t>::min() / 4;
        ps_t ref_end = std::numeric_limits<ps_t>::min() / 4;
        uint64_t refs = 0;
        bool opened_since_col = false;
        bool operator==(const BankCheck&) const = default;
    };
    void check_one(const TraceEvent& e, BankCheck& s);
    void fail(const TraceEvent& e, const std::string& what);

    LatencyModel lat_;
    uint32_t total_banks_;
    std::map<uint32_t, BankCheck> states_; // key = range start
    uint64_t violations_ = 0;
    std::string first_violation_;
    ps_t last_finalize_ = 0;
};

// In-memory event log for tests and the CSV dump.
class EventLog : public TraceSink {
public:
    void on_event(const TraceEvent& e) override { events.push_back(e); }
    std::vector<TraceEvent> events;
    std::string to_csv() const;
};

struct SimTrace {
    SimStats stats;
};

// Single-command bank state machine: the reference semantics the bulk engine
// must reproduce. Throws TimingViolation on an illegal command.
class BankMachine {
public:
    enum class Cmd { ACT, RD, WR, PRE, REF };
    explicit BankMachine(const SystemConfig& cfg) : lat_(cfg) {}
    // Returns the completion time of the command issued at `t`.
    ps_t issue(Cmd cmd, uint32_t row, ps_t t);
    int64_t open_row() const { return open_row_; }

private:
    LatencyModel lat_;
    int64_t open_row_ = -1;
    ps_t act_t_ = std::numeric_limits<ps_t>::min() / 4;
    ps_t last_col_ = std::numeric_limits<ps_t>::min() / 4;
    ps_t last_wr_end_ = std::numeric_limits<ps_t>::min() / 4;
    ps_t pre_end_ = std::numeric_limits<ps_t>::min() / 4;
    ps_t ref_end_ = std::numeric_limits<ps_t>::min() / 4;
};

// Spec-level helpers shared with tests and the report module.
enum class TransferDir { broadcast, collect, write_kv };
ps_t transfer_ps(uint64_t bytes, TransferDir dir, const SystemConfig& cfg);
// ASIC cycles for one op; batch handling lives in the engine.
uint64_t asic_compute_cycles(NodeKind op, uint64_t elems, const SystemConfig& cfg);

// A contiguous stretch of elements one bank sweeps (or writes).
struct BankSweep {
    uint32_t bank = 0;
    uint64_t start_elem = 0; // absolute element offset within the bank
    uint64_t elems = 0;
};
struct MacClass;    // per-instruction bank equivalence class (engine.cpp)
struct GroupTiming; // walk timing summary (engine.cpp)

// Event-driven execution of instruction streams over the channel/bank tree.
// One Engine instance carries clock, bank and refresh state across streams so
// a token-by-token run composes the same way one long stream would.
class Engine {
public:
    Engine(const MemoryMap& map, const SystemConfig& cfg);

    void add_sink(TraceSink* sink) { sinks_.push_back(sink); }
    void execute(const InstructionStream& stream);
    void mark_token();
    SimTrace finish();

    const SimStats& stats() const { return stats_; }
    ps_t clock() const { return clock_; }

private:
    struct BankT {
        int64_t open_row = -1;
        ps_t act_t = std::numeric_limits<ps_t>::min() / 4;
        ps_t busy_until = 0;
        ps_t wr_end = std::numeric_limits<ps_t>::min() / 4;
        ps_t last_col_end = std::numeric_limits<ps_t>::min() / 4;
        uint64_t refs = 0;
    };
    struct WalkResult {
        ps_t first_result = 0;
        ps_t end = 0;
        ps_t refresh_stall = 0;
    };

    void emit(TraceEvent e);
    void catch_up_refresh(ps_t now);
    // Sweep `pieces` on one bank starting not before t0; returns timing.
    WalkResult walk_bank(uint32_t bank, const std::vector<BankSweep>& pieces, ps_t t0, bool write,
                         bool explicit_pre, std::vector<TraceEvent>& scratch);
    void flush_grouped(std::vector<TraceEvent>& scratch);
    GroupTiming run_mac_classes(std::vector<MacClass>& classes, ps_t t0, bool write,
                                bool explicit_pre);
    // Bank-state signature folded into class keys: banks walk identically iff
    // shape, open-row relation and clamped recovery slacks all agree.
    uint64_t state_sig(uint32_t bank, ps_t t0, uint64_t first_row) const;
    std::vector<MacClass> weight_geometry(const MatrixPlacement& block, uint32_t round,
                                          uint32_t rounds, ps_t t0) const;
    std::vector<MacClass> key_sweep_geometry(uint32_t layer, uint64_t tokens, uint32_t channel,
                                             uint32_t round, ps_t t0) const;
    std::vector<MacClass> value_sweep_geometry(uint32_t layer, uint32_t head, uint64_t tokens,
                                               uint32_t round, ps_t t0) const;

    // Channel interfaces are independent links (crossbar): broadcasts hold
    // every link, targeted sends hold one, collects serialize on the ASIC
    // receive port.
    ps_t reserve_broadcast(uint64_t bytes, ps_t earliest);
    ps_t reserve_send(uint64_t bytes, uint32_t channel, ps_t earliest);
    ps_t reserve_collect(uint64_t bytes, ps_t earliest);

    // Group handlers.
    struct GroupView {
        const InstructionStream* s;
        size_t begin, end;
    };
    void run_vmm_group(const GroupView& gv);
    void run_attn_value_group(const GroupView& gv);
    void run_asic_group(const GroupView& gv);
    void run_kv_group(const GroupView& gv);
    void run_embed_group(const GroupView& gv);

    // Monotone wall-clock attribution: advances the cursor to `t`, charging
    // the interval to `bucket`; intervals never double-count.
    void bucket_to(ps_t t, ps_t& bucket);

    const MemoryMap& map_;
    SystemConfig cfg_;
    LatencyModel lat_;
    std::vector<BankT> banks_;
    ps_t clock_ = 0;
    std::vector<ps_t> ch_free_;
    ps_t asic_rx_free_ = 0;
    ps_t asic_free_ = 0;
    // Pending fused collect: a downstream ASIC group may start at .start.
    struct PendingCollect {
        bool valid = false;
        ps_t start = 0;
        ps_t end = 0;
    } pending_collect_;
    // Streaming window of the last per-head ASIC batch (softmax): head h's
    // result is ready at a linear fraction of the window.
    struct HeadWindow {
        bool valid = false;
        ps_t start = 0;
        ps_t end = 0;
        uint32_t heads = 1;
    } head_window_;
    // Window of the most recent collect: KV write-back cuts through the
    // crossbar, so its channel-link leg overlaps this window.
    struct CollectWindow {
        ps_t start = 0;
        ps_t end = 0;
    } last_collect_window_;
    ps_t attr_cursor_ = 0;
    ps_t mac_result_ready_ = 0;
    ps_t mac_first_result_ = 0;
    ps_t send_arrival_ = 0;
    ps_t token_start_ = 0;
    ps_t token_refresh_ = 0;
    SimStats stats_;
    std::vector<TraceSink*> sinks_;
    const InstructionStream* cur_stream_ = nullptr;
};

// Convenience wrapper per the module contract: one stream, fresh engine.
SimTrace simulate(const InstructionStream& stream, const MemoryMap& map, const SystemConfig& cfg,
                  std::vector<TraceSink*> sinks = {});

} // namespace pimgpt
