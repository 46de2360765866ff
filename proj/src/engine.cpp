#include "pimgpt/engine.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>

namespace pimgpt {

namespace {

inline uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

inline ps_t ns_to_ps(double ns) { return static_cast<ps_t>(std::llround(ns * 1000.0)); }

inline uint32_t ceil_log2(uint64_t n) {
    uint32_t b = 0;
    while ((1ull << b) < n) ++b;
    return b;
}

} // namespace

LatencyModel::LatencyModel(const SystemConfig& cfg) {
    tRCD = ns_to_ps(cfg.timing.tRCD);
    tRP = ns_to_ps(cfg.timing.tRP);
    tCCD = ns_to_ps(cfg.timing.tCCD);
    tWR = ns_to_ps(cfg.timing.tWR);
    tRFC = ns_to_ps(cfg.timing.tRFC);
    tREFI = ns_to_ps(cfg.timing.tREFI);
    tRAS = ns_to_ps(cfg.timing.tRAS);
    dram_cycle = static_cast<ps_t>(std::llround(1e12 / cfg.dram.dram_clock_hz));
    pim_cycle = static_cast<ps_t>(std::llround(1e12 / cfg.pim.pim_clock_hz));
    asic_cycle = static_cast<ps_t>(std::llround(1e12 / cfg.asic.clock_hz));
    // adder-tree depth: log2(mac_width) + 1 stages, drained once per sweep
    drain = (ceil_log2(cfg.pim.mac_width) + 1) * pim_cycle;
    bus_bytes_per_ps = channel_bandwidth(cfg) / 1e12;
}

ps_t LatencyModel::transfer_ps(uint64_t bytes) const {
    return static_cast<ps_t>(std::ceil(double(bytes) / bus_bytes_per_ps));
}

ps_t transfer_ps(uint64_t bytes, TransferDir, const SystemConfig& cfg) {
    return LatencyModel(cfg).transfer_ps(bytes);
}

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::COL_RD: return "RD";
        case EventKind::COL_WR: return "WR";
        case EventKind::REF: return "REF";
        case EventKind::BUS: return "BUS";
        case EventKind::ASIC: return "ASIC";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ASIC cost model. Work follows the approximation-algorithm census at the
// configured resource widths: multiplier-bound passes at num_multipliers lanes,
// add-bound passes at num_adders. The iterative units (6-term Taylor exp,
// 3-iteration NR reciprocal, 2-iteration inverse sqrt) are pipelined and
// contribute fixed depths, paid once per batch of back-to-back ops.
namespace asic_cost {

constexpr uint64_t kExpDepth = 11;
constexpr uint64_t kRecipDepth = 11;
constexpr uint64_t kInvSqrtDepth = 9;
constexpr uint64_t kGeluDepth = kExpDepth + kRecipDepth + 7;

struct Cost {
    uint64_t var = 0;   // throughput-bound cycles
    uint64_t depth = 0; // pipeline latency, once per batch
};

Cost cost(NodeKind op, uint64_t n, const SystemConfig& cfg) {
    const uint64_t A = cfg.asic.num_adders;
    const uint64_t M = cfg.asic.num_multipliers;
    const uint64_t lg = ceil_log2(std::max<uint64_t>(n, 1)) + 1;
    switch (op) {
        case NodeKind::residual_add:
            return {ceil_div(n, A), 0};
        case NodeKind::partial_sum:
            return {ceil_div(n, A), 0};
        case NodeKind::argmax:
            return {ceil_div(n, A), lg};
        case NodeKind::gelu:
            return {ceil_div(n, M), kGeluDepth};
        case NodeKind::softmax:
            // n exp evaluations plus n normalize multiplies at the multiplier
            // width; the n-1 accumulation adds run fused behind the exp pass
            // and appear as the tree drain; one NR reciprocal per instance.
            return {2 * ceil_div(n, M), kExpDepth + kRecipDepth + lg};
        case NodeKind::layernorm:
            // fused mean/variance pass (adds + squares), rsqrt, affine pass
            return {2 * ceil_div(n, A) + 2 * ceil_div(n, M), kInvSqrtDepth + lg + 4};
        default:
            return {ceil_div(n, A), 1};
    }
}

} // namespace asic_cost

uint64_t asic_compute_cycles(NodeKind op, uint64_t elems, const SystemConfig& cfg) {
    auto c = asic_cost::cost(op, elems, cfg);
    return std::max<uint64_t>(c.var + c.depth, 1);
}

// ---------------------------------------------------------------------------
// BankMachine

ps_t BankMachine::issue(Cmd cmd, uint32_t row, ps_t t) {
    auto fail = [&](const char* what) -> ps_t {
        throw TimingViolation(std::string("BankMachine: ") + what);
    };
    switch (cmd) {
        case Cmd::ACT:
            if (open_row_ != -1) return fail("ACT issued to a bank with an open row");
            if (t < pre_end_) return fail("tRP violated (PRE->ACT gap)");
            if (t < ref_end_) return fail("tRFC violated (refresh in progress)");
            open_row_ = row;
            act_t_ = t;
            return t + lat_.tRCD;
        case Cmd::RD:
        case Cmd::WR:
            if (open_row_ != static_cast<int64_t>(row)) return fail("column access to a closed row");
            if (t < act_t_ + lat_.tRCD) return fail("tRCD violated (ACT->column gap)");
            if (t < last_col_ + lat_.tCCD) return fail("tCCD violated (column->column gap)");
            last_col_ = t;
            if (cmd == Cmd::WR) last_wr_end_ = t + lat_.tCCD;
            return t + lat_.tCCD;
        case Cmd::PRE:
            if (open_row_ == -1) return fail("PRE issued to a precharged bank");
            if (t < act_t_ + lat_.tRAS) return fail("tRAS violated (ACT->PRE gap)");
            if (t < last_wr_end_ + lat_.tWR) return fail("tWR violated (write recovery)");
            open_row_ = -1;
            pre_end_ = t + lat_.tRP;
            return pre_end_;
        case Cmd::REF:
            if (open_row_ != -1) return fail("REF issued with an open row");
            if (t < pre_end_) return fail("tRP violated before REF");
            ref_end_ = t + lat_.tRFC;
            return ref_end_;
    }
    return t;
}

// ---------------------------------------------------------------------------
// TimingChecker

TimingChecker::TimingChecker(const SystemConfig& cfg, uint32_t total_banks)
    : lat_(cfg), total_banks_(total_banks) {
    states_[0] = BankCheck{};
}

void TimingChecker::fail(const TraceEvent& e, const std::string& what) {
    ++violations_;
    if (first_violation_.empty()) {
        std::ostringstream o;
        o << what << " at " << e.t << " ps (" << event_kind_name(e.kind) << ")";
        first_violation_ = o.str();
    }
}

void TimingChecker::check_one(const TraceEvent& e, BankCheck& s) {
    switch (e.kind) {
        case EventKind::COL_RD:
        case EventKind::COL_WR: {
            if (e.pre_at >= 0) {
                if (s.open_row == -1) fail(e, "PRE to precharged bank");
                if (e.pre_at < s.act_t + lat_.tRAS) fail(e, "tRAS");
                if (e.pre_at < s.last_wr_end + lat_.tWR) fail(e, "tWR");
                s.open_row = -1;
                s.pre_end = e.pre_at + lat_.tRP;
            }
            if (e.act_at >= 0) {
                if (s.open_row != -1) fail(e, "ACT to an open bank");
                if (e.act_at < s.pre_end) fail(e, "tRP");
                if (e.act_at < s.ref_end) fail(e, "tRFC");
                s.open_row = e.row;
                s.act_t = e.act_at;
                s.opened_since_col = true;
            }
            if (s.open_row != static_cast<int64_t>(e.row)) fail(e, "column access to closed row");
            if (e.t < s.act_t + lat_.tRCD) fail(e, "tRCD");
            if (e.t < s.last_col_end) fail(e, "tCCD");
            if (e.count > 1 && e.cadence < lat_.tCCD) fail(e, "tCCD (burst cadence)");
            uint32_t expected_hits = e.count - (s.opened_since_col ? 1 : 0);
            if (e.hits != expected_hits) fail(e, "row-hit accounting");
            s.opened_since_col = false;
            s.last_col_end = e.t + ps_t(e.count) * e.cadence;
            if (e.kind == EventKind::COL_WR) s.last_wr_end = s.last_col_end;
            if (e.post_pre_at >= 0) {
                if (e.post_pre_at < s.act_t + lat_.tRAS) fail(e, "tRAS");
                if (e.post_pre_at < s.last_wr_end + lat_.tWR) fail(e, "tWR");
                s.open_row = -1;
                s.pre_end = e.post_pre_at + lat_.tRP;
            }
            break;
        }
        case EventKind::REF:
            if (s.open_row != -1) {
                if (e.t < s.act_t + lat_.tRAS) fail(e, "tRAS before REF");
                if (e.t < s.last_wr_end + lat_.tWR) fail(e, "tWR before REF");
            }
            if (e.t + lat_.tREFI < ps_t(s.refs + 1) * lat_.tREFI) {
                fail(e, "REF earlier than its tREFI slot");
            }
            s.open_row = -1;
            s.ref_end = e.t + lat_.tRFC;
            s.refs += 1;
            break;
        case EventKind::BUS:
        case EventKind::ASIC:
            break;
    }
}

void TimingChecker::on_event(const TraceEvent& e) {
    if (e.kind == EventKind::BUS || e.kind == EventKind::ASIC) return;
    for (auto [g0, g1] : e.banks) {
        auto it = std::prev(states_.upper_bound(g0));
        if (it->first != g0) states_[g0] = it->second;
        if (g1 < total_banks_) {
            auto hi = states_.lower_bound(g1);
            if (hi == states_.end() || hi->first != g1) {
                states_[g1] = std::prev(hi)->second;
            }
        }
        auto from = states_.find(g0);
        auto to = states_.lower_bound(g1);
        for (auto p = from; p != to; ++p) check_one(e, p->second);
        for (auto p = std::next(from); p != to;) {
            if (p->second == from->second) {
                p = states_.erase(p);
            } else {
                ++p;
            }
        }
    }
}

void TimingChecker::finalize(ps_t final_ps) {
    last_finalize_ = final_ps;
    uint64_t expect = uint64_t(final_ps) / uint64_t(lat_.tREFI);
    for (auto& [g, s] : states_) {
        if (s.refs + 1 < expect) {
            ++violations_;
            if (first_violation_.empty()) first_violation_ = "missing refreshes";
        }
    }
}

std::string EventLog::to_csv() const {
    std::ostringstream o;
    o << "clock_ps,kind,bank_first,multiplicity,row,count,hits,duration_ps,bytes,pre_ps,act_ps\n";
    for (const auto& e : events) {
        o << e.t << "," << event_kind_name(e.kind) << ","
          << (e.banks.n ? e.banks.r[0].first : 0) << "," << e.multiplicity() << "," << e.row
          << "," << e.count << "," << e.hits << "," << e.dur << "," << e.bytes << ","
          << e.pre_at << "," << e.act_at << "\n";
    }
    return o.str();
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(const MemoryMap& map, const SystemConfig& cfg)
    : map_(map), cfg_(cfg), lat_(cfg), banks_(map.bank_count()),
      ch_free_(map.geom.channels, 0) {}

void Engine::emit(TraceEvent e) {
    uint32_t mult = e.multiplicity();
    switch (e.kind) {
        case EventKind::COL_RD:
            if (e.pre_at >= 0) stats_.precharges += mult;
            if (e.post_pre_at >= 0) stats_.precharges += mult;
            if (e.act_at >= 0) stats_.activates += mult;
            stats_.col_reads += uint64_t(e.count) * mult;
            stats_.col_accesses += uint64_t(e.count) * mult;
            stats_.row_hits += uint64_t(e.hits) * mult;
            stats_.rd_busy_ps += e.dur * mult;
            stats_.mac_busy_ps += e.dur * mult;
            break;
        case EventKind::COL_WR:
            if (e.pre_at >= 0) stats_.precharges += mult;
            if (e.post_pre_at >= 0) stats_.precharges += mult;
            if (e.act_at >= 0) stats_.activates += mult;
            stats_.col_writes += uint64_t(e.count) * mult;
            stats_.col_accesses += uint64_t(e.count) * mult;
            stats_.row_hits += uint64_t(e.hits) * mult;
            stats_.wr_busy_ps += e.dur * mult;
            break;
        case EventKind::REF:
            stats_.refreshes += mult;
            break;
        case EventKind::BUS:
            stats_.bus_busy_ps += e.dur;
            stats_.bus_bytes += e.bytes * e.fanout;
            break;
        case EventKind::ASIC:
            stats_.asic_busy_ps += e.dur;
            break;
    }
    for (auto* s : sinks_) s->on_event(e);
}

ps_t Engine::reserve_broadcast(uint64_t bytes, ps_t earliest) {
    ps_t start = earliest;
    for (ps_t f : ch_free_) start = std::max(start, f);
    ps_t end = start + lat_.transfer_ps(bytes);
    for (ps_t& f : ch_free_) f = end;
    return start;
}

ps_t Engine::reserve_send(uint64_t bytes, uint32_t channel, ps_t earliest) {
    ps_t start = std::max(earliest, ch_free_[channel % ch_free_.size()]);
    ch_free_[channel % ch_free_.size()] = start + lat_.transfer_ps(bytes);
    return start;
}

ps_t Engine::reserve_collect(uint64_t bytes, ps_t earliest) {
    ps_t start = std::max(earliest, asic_rx_free_);
    asic_rx_free_ = start + lat_.transfer_ps(bytes);
    return start;
}

void Engine::catch_up_refresh(ps_t now) {
    if (now <= 0) return;
    uint64_t target = uint64_t(now) / uint64_t(lat_.tREFI);
    for (;;) {
        uint64_t min_refs = UINT64_MAX;
        for (auto& b : banks_) min_refs = std::min(min_refs, b.refs);
        if (min_refs >= target) break;
        ps_t deadline = ps_t(min_refs + 1) * lat_.tREFI;
        ps_t at = deadline;
        for (uint32_t g = 0; g < banks_.size(); ++g) {
            if (banks_[g].refs != min_refs) continue;
            at = std::max(at, banks_[g].busy_until);
            if (banks_[g].open_row != -1) {
                // implicit precharge-all: honor tRAS and write recovery
                at = std::max(at, banks_[g].act_t + lat_.tRAS);
                at = std::max(at, banks_[g].wr_end + lat_.tWR);
            }
        }
        TraceEvent e;
        e.kind = EventKind::REF;
        e.dur = lat_.tRFC;
        e.t = at;
        uint32_t start = UINT32_MAX;
        auto flush_range = [&](uint32_t g0, uint32_t g1) {
            if (e.banks.full()) {
                emit(e);
                e.banks.clear();
            }
            e.banks.add(g0, g1);
            for (uint32_t g = g0; g < g1; ++g) {
                banks_[g].refs += 1;
                banks_[g].open_row = -1;
                banks_[g].busy_until = std::max(banks_[g].busy_until, at + lat_.tRFC);
            }
        };
        for (uint32_t g = 0; g < banks_.size(); ++g) {
            bool due = banks_[g].refs == min_refs;
            if (due && start == UINT32_MAX) start = g;
            if (!due && start != UINT32_MAX) {
                flush_range(start, g);
                start = UINT32_MAX;
            }
        }
        if (start != UINT32_MAX) flush_range(start, uint32_t(banks_.size()));
        if (e.banks.n) emit(e);
    }
}

Engine::WalkResult Engine::walk_bank(uint32_t bank, const std::vector<BankSweep>& pieces, ps_t t0,
                                     bool write, bool explicit_pre,
                                     std::vector<TraceEvent>& scratch) {
    BankT& b = banks_[bank];
    const uint32_t R = map_.row_elems;
    const uint32_t mac = cfg_.pim.mac_width;
    ps_t t = std::max(t0, b.busy_until);
    WalkResult res{0, t, 0};
    bool first_burst = true;
    EventKind col_kind = write ? EventKind::COL_WR : EventKind::COL_RD;

    for (const auto& piece : pieces) {
        uint64_t row = piece.start_elem / R;
        uint64_t col = piece.start_elem % R;
        uint64_t left = piece.elems;
        while (left > 0) {
            uint64_t span = std::min<uint64_t>(R - col, left);
            uint32_t count = static_cast<uint32_t>(ceil_div(span, mac));
            // refresh due: eager at the boundary, deferred to the span edge
            while (ps_t(b.refs + 1) * lat_.tREFI <= t) {
                ps_t at = std::max({t, b.act_t + lat_.tRAS, b.wr_end + lat_.tWR});
                TraceEvent rf;
                rf.kind = EventKind::REF;
                rf.t = at;
                rf.dur = lat_.tRFC;
                rf.banks.add(bank, bank + 1);
                scratch.push_back(rf);
                res.refresh_stall += (at - t) + lat_.tRFC;
                t = at + lat_.tRFC;
                b.open_row = -1;
                b.refs += 1;
            }
            TraceEvent ce;
            ce.kind = col_kind;
            ce.cadence = lat_.tCCD;
            ce.row = static_cast<uint32_t>(row);
            ce.count = count;
            ce.banks.add(bank, bank + 1);
            ps_t burst_t;
            if (b.open_row == static_cast<int64_t>(row)) {
                burst_t = std::max(t, b.last_col_end);
                ce.hits = count;
            } else {
                if (b.open_row != -1) {
                    ps_t pre_t = std::max({t, b.act_t + lat_.tRAS, b.wr_end + lat_.tWR});
                    ce.pre_at = pre_t;
                    t = pre_t + lat_.tRP;
                }
                ce.act_at = t;
                b.act_t = t;
                b.open_row = static_cast<int64_t>(row);
                burst_t = t + lat_.tRCD;
                ce.hits = count - 1;
            }
            ce.t = burst_t;
            ce.dur = ps_t(count) * lat_.tCCD;
            t = burst_t + ce.dur;
            b.last_col_end = t;
            if (write) b.wr_end = t;
            if (first_burst) {
                res.first_result = t;
                first_burst = false;
            }
            if (explicit_pre) {
                // close the row right after the burst (value write-back)
                ps_t pre_t = std::max({t, b.act_t + lat_.tRAS, b.wr_end + lat_.tWR});
                ce.post_pre_at = pre_t;
                b.open_row = -1;
                t = pre_t + lat_.tRP;
            }
            scratch.push_back(ce);
            left -= span;
            col = 0;
            ++row;
        }
    }
    b.busy_until = t;
    res.end = t;
    if (first_burst) res.first_result = t;
    return res;
}

void Engine::bucket_to(ps_t t, ps_t& bucket) {
    if (t > attr_cursor_) {
        bucket += t - attr_cursor_;
        attr_cursor_ = t;
    }
}

// --- MAC geometry: per-bank sweep shapes grouped into cycle-identical classes

struct MacClass {
    std::vector<std::pair<uint32_t, uint64_t>> members; // (bank, first_row)
    std::vector<BankSweep> pieces;                      // representative, absolute
    bool write = false;
    bool explicit_pre = false;
};

namespace {

struct ClassKey {
    uint64_t a = 0, b = 0, c = 0, d = 0;
    bool operator<(const ClassKey& o) const {
        return std::tie(a, b, c, d) < std::tie(o.a, o.b, o.c, o.d);
    }
};

using ClassIndex = std::map<ClassKey, size_t>;

} // namespace

// Combines the walk-relevant bank state into one comparable word. Times are
// clamped at t0: anything earlier can never delay the walk.
uint64_t Engine::state_sig(uint32_t bank, ps_t t0, uint64_t first_row) const {
    const BankT& b = banks_[bank];
    uint64_t open_state = b.open_row == -1 ? 0 : (b.open_row == int64_t(first_row) ? 1 : 2);
    uint64_t ras = uint64_t(std::max<ps_t>(0, b.act_t + lat_.tRAS - t0));
    uint64_t wr = uint64_t(std::max<ps_t>(0, b.wr_end + lat_.tWR - t0));
    uint64_t col = uint64_t(std::max<ps_t>(0, b.last_col_end - t0));
    uint64_t busy = uint64_t(std::max<ps_t>(0, b.busy_until - t0));
    uint64_t h = open_state;
    h = h * 1000003 + ras;
    h = h * 1000003 + wr;
    h = h * 1000003 + col;
    h = h * 1000003 + busy;
    h = h * 1000003 + b.refs;
    return h;
}

// Weight block sweep for one GB round: the bank's round run is one
// contiguous stretch by construction.
std::vector<MacClass> Engine::weight_geometry(const MatrixPlacement& block, uint32_t round,
                                              uint32_t rounds, ps_t t0) const {
    std::vector<MacClass> classes;
    ClassIndex index;
    const uint32_t R = map_.row_elems;
    (void)rounds;
    for (const auto& run : block.segments) {
        if (run.round != round) continue;
        uint32_t g = run.start.channel * map_.geom.banks_per_channel + run.start.bank;
        uint64_t local0 = uint64_t(run.start.row) * R + run.start.col;
        uint64_t first_row = local0 / R;
        ClassKey key{local0 % R, run.elems, round, state_sig(g, t0, first_row)};
        auto it = index.find(key);
        if (it == index.end()) {
            MacClass cl;
            cl.members.push_back({g, first_row});
            cl.pieces.push_back({g, local0, run.elems});
            index.emplace(key, classes.size());
            classes.push_back(std::move(cl));
        } else {
            classes[it->second].members.push_back({g, first_row});
        }
    }
    return classes;
}

// q.K^T sweep: each bank reads the round's head-group slice of every
// cached-token key row it holds.
std::vector<MacClass> Engine::key_sweep_geometry(uint32_t layer, uint64_t tokens,
                                                 uint32_t channel, uint32_t round,
                                                 ps_t t0) const {
    std::vector<MacClass> classes;
    ClassIndex index;
    const uint32_t R = map_.row_elems;
    const uint32_t C = map_.geom.channels;
    const uint32_t B = map_.geom.banks_per_channel;
    const uint32_t gb_elems = cfg_.gb_elems();
    const uint32_t rows_per_token = static_cast<uint32_t>(ceil_div(map_.model.d_model, R));
    const auto& res = map_.reservation(layer, KvKind::key);
    const uint32_t hpr = std::max<uint32_t>(1, gb_elems / map_.model.d_head);
    uint64_t a = uint64_t(round) * hpr * map_.model.d_head;
    uint64_t bnd = std::min<uint64_t>(a + uint64_t(hpr) * map_.model.d_head,
                                      uint64_t(map_.model.num_heads) * map_.model.d_head);
    for (uint32_t b = 0; b < B; ++b) {
        uint32_t g = channel * B + b;
        uint64_t first = channel + uint64_t(C) * b; // first token on this bank
        if (first >= tokens) continue;
        uint64_t n_tok = (tokens - 1 - first) / (uint64_t(C) * B) + 1;
        uint64_t base_row = res.base[g].row;
        uint64_t first_row = base_row + a / R;
        ClassKey key{n_tok, base_row, 0, state_sig(g, t0, first_row)};
        auto it = index.find(key);
        if (it == index.end()) {
            MacClass cl;
            cl.members.push_back({g, first_row});
            for (uint64_t k = 0; k < n_tok; ++k) {
                cl.pieces.push_back({g, (base_row + k * rows_per_token) * R + a, bnd - a});
            }
            index.emplace(key, classes.size());
            classes.push_back(std::move(cl));
        } else {
            classes[it->second].members.push_back({g, first_row});
        }
    }
    return classes;
}

// scores.V sweep for one head: the head's value columns inside its channel.
std::vector<MacClass> Engine::value_sweep_geometry(uint32_t layer, uint32_t head,
                                                   uint64_t tokens, uint32_t round,
                                                   ps_t t0) const {
    std::vector<MacClass> classes;
    ClassIndex index;
    const uint32_t R = map_.row_elems;
    const uint32_t B = map_.geom.banks_per_channel;
    const uint32_t gb_elems = cfg_.gb_elems();
    const uint32_t rows_per_col = static_cast<uint32_t>(ceil_div(map_.max_tokens, R));
    const auto& res = map_.reservation(layer, KvKind::value);
    uint64_t a = uint64_t(round) * gb_elems;
    uint64_t bnd = std::min<uint64_t>(a + gb_elems, tokens);
    uint32_t c = head % map_.geom.channels;
    uint32_t w0 = (head / map_.geom.channels) * map_.model.d_head;
    std::vector<std::vector<uint64_t>> slots(B);
    for (uint32_t j = 0; j < map_.model.d_head; ++j) {
        uint32_t w = w0 + j;
        slots[w % B].push_back(w / B);
    }
    for (uint32_t b = 0; b < B; ++b) {
        if (slots[b].empty()) continue;
        uint32_t g = c * B + b;
        uint64_t base_row = res.base[g].row;
        uint64_t first_row = base_row + slots[b][0] * rows_per_col + a / R;
        ClassKey key{slots[b].size(), slots[b][0] * 131071 + base_row, 0,
                     state_sig(g, t0, first_row)};
        auto it = index.find(key);
        if (it == index.end()) {
            MacClass cl;
            cl.members.push_back({g, first_row});
            for (uint64_t q : slots[b]) {
                cl.pieces.push_back({g, (base_row + q * rows_per_col) * R + a, bnd - a});
            }
            index.emplace(key, classes.size());
            classes.push_back(std::move(cl));
        } else {
            classes[it->second].members.push_back({g, first_row});
        }
    }
    return classes;
}

struct GroupTiming {
    ps_t first_result = std::numeric_limits<ps_t>::max();
    ps_t end = 0;
    ps_t refresh_stall = 0;
};

namespace {

std::vector<std::pair<uint32_t, uint32_t>> to_ranges(std::vector<uint32_t> ids) {
    std::sort(ids.begin(), ids.end());
    std::vector<std::pair<uint32_t, uint32_t>> ranges;
    uint32_t start = ids[0], prev = ids[0];
    for (size_t i = 1; i < ids.size(); ++i) {
        if (ids[i] == prev + 1) {
            prev = ids[i];
        } else {
            ranges.push_back({start, prev + 1});
            start = prev = ids[i];
        }
    }
    ranges.push_back({start, prev + 1});
    return ranges;
}

} // namespace

void Engine::flush_grouped(std::vector<TraceEvent>& scratch) {
    for (auto& e : scratch) emit(std::move(e));
    scratch.clear();
}

// Walks every class, replicating the representative's timing onto members.
GroupTiming Engine::run_mac_classes(std::vector<MacClass>& classes, ps_t t0, bool write,
                                    bool explicit_pre) {
    GroupTiming gt;
    std::vector<TraceEvent> scratch;
    for (auto& cl : classes) {
        uint32_t rep = cl.members[0].first;
        uint64_t rep_first_row = cl.members[0].second;
        scratch.clear();
        WalkResult wr = walk_bank(rep, cl.pieces, t0, write || cl.write,
                                  explicit_pre || cl.explicit_pre, scratch);
        // stamp the member set onto the events
        std::vector<uint32_t> ids;
        ids.reserve(cl.members.size());
        for (auto& m : cl.members) ids.push_back(m.first);
        auto ranges = to_ranges(std::move(ids));
        for (size_t base = 0; base < ranges.size(); base += BankRanges::kMax) {
            BankRanges br;
            for (size_t k = base; k < std::min(ranges.size(), base + BankRanges::kMax); ++k) {
                br.add(ranges[k].first, ranges[k].second);
            }
            if (base == 0) {
                for (auto& e : scratch) e.banks = br;
                if (base + BankRanges::kMax >= ranges.size()) break;
                // more ranges: re-emit copies with the remaining ranges
            } else {
                for (auto& e : scratch) {
                    TraceEvent copy = e;
                    copy.banks = br;
                    emit(std::move(copy));
                }
            }
        }
        flush_grouped(scratch);
        // replicate final state; rows shift by each member's base offset
        const BankT rep_state = banks_[rep];
        for (size_t i = 1; i < cl.members.size(); ++i) {
            auto [g, first_row] = cl.members[i];
            BankT& st = banks_[g];
            st = rep_state;
            if (rep_state.open_row >= 0) {
                st.open_row = rep_state.open_row - int64_t(rep_first_row) + int64_t(first_row);
            }
        }
        gt.first_result = std::min(gt.first_result, wr.first_result);
        gt.end = std::max(gt.end, wr.end);
        gt.refresh_stall = std::max(gt.refresh_stall, wr.refresh_stall);
    }
    if (gt.first_result == std::numeric_limits<ps_t>::max()) gt.first_result = t0;
    if (gt.end == 0) gt.end = t0;
    return gt;
}

// --- group handlers ----------------------------------------------------------

void Engine::run_vmm_group(const GroupView& gv) {
    const auto& instrs = gv.s->instrs;
    ps_t group_start = clock_;
    // Rounds pipeline: the GB is double-buffered, so round r+1's broadcast
    // overlaps round r's MAC, and each round's collect streams out as its
    // results appear. The ASIC accumulates split partial sums fused with the
    // collects.
    ps_t prev_mac_end = clock_;
    ps_t data_ready = clock_;
    ps_t last_collect_end = clock_;
    ps_t last_asic_end = clock_;
    ps_t first_bcast_end = clock_;
    ps_t vmm_from = clock_;
    bool saw_bcast = false;
    ps_t refresh_stall_total = 0;

    size_t i = gv.begin;
    while (i < gv.end) {
        const Instruction& ins = instrs[i];
        if (ins.op == Opcode::broadcast) {
            ps_t b0 = reserve_broadcast(ins.bytes, ins.round == 0 ? clock_ : group_start);
            ps_t b_end = b0 + lat_.transfer_ps(ins.bytes);
            TraceEvent be;
            be.kind = EventKind::BUS;
            be.t = b0;
            be.dur = b_end - b0;
            be.bytes = ins.bytes;
            be.fanout = ins.fanout;
            emit(std::move(be));
            data_ready = b_end;
            if (!saw_bcast) {
                first_bcast_end = b_end;
                bucket_to(b_end, stats_.t_transfer);
                vmm_from = b_end;
                saw_bcast = true;
            }
            ++i;
            continue;
        }
        if (ins.op == Opcode::mac) {
            size_t j = i;
            while (j < gv.end && instrs[j].op == Opcode::mac && instrs[j].round == ins.round &&
                   instrs[j].block == ins.block) {
                ++j;
            }
            ps_t t0 = std::max(data_ready, prev_mac_end);
            std::vector<MacClass> classes;
            if (ins.block) {
                stats_.baseline_bytes += (ins.round == 0) ? ins.block->total_elems() * 2 : 0;
                classes = weight_geometry(*ins.block, ins.round, ins.rounds, t0);
            } else {
                if (ins.round == 0) {
                    stats_.baseline_bytes += ins.tokens * map_.model.d_model * 2;
                }
                for (size_t k = i; k < j; ++k) {
                    auto part = key_sweep_geometry(uint32_t(instrs[k].layer), instrs[k].tokens,
                                                   instrs[k].channel, instrs[k].round, t0);
                    for (auto& cl : part) classes.push_back(std::move(cl));
                }
            }
            GroupTiming gt = run_mac_classes(classes, t0, false, false);
            prev_mac_end = gt.end;
            mac_result_ready_ = gt.end + lat_.drain;
            mac_first_result_ = gt.first_result + lat_.drain;
            refresh_stall_total += gt.refresh_stall;
            i = j;
            continue;
        }
        if (ins.op == Opcode::collect) {
            ps_t c0 = reserve_collect(ins.bytes, mac_first_result_);
            ps_t dur = lat_.transfer_ps(ins.bytes);
            ps_t c_end = std::max(c0 + dur, mac_result_ready_);
            asic_rx_free_ = c_end;
            TraceEvent be;
            be.kind = EventKind::BUS;
            be.t = c0;
            be.dur = dur;
            be.bytes = ins.bytes;
            be.fanout = ins.fanout;
            emit(std::move(be));
            last_collect_end = std::max(last_collect_end, c_end);
            last_collect_window_ = {c0, c_end};
            if (ins.fused && ins.round + 1 == ins.rounds) {
                pending_collect_ = {true, c0, c_end};
            } else if (ins.round + 1 == ins.rounds) {
                pending_collect_ = {false, 0, 0};
            }
            ++i;
            continue;
        }
        if (ins.op == Opcode::asic_op) {
            // split-round partial accumulation, fused with its collect
            uint64_t cycles = asic_compute_cycles(ins.kind, ins.n, cfg_);
            ps_t dur = ps_t(cycles) * lat_.asic_cycle;
            ps_t a0 = std::max(asic_free_, last_collect_end - dur);
            a0 = std::max(a0, group_start);
            ps_t a_end = std::max(a0 + dur, last_collect_end);
            TraceEvent ae;
            ae.kind = EventKind::ASIC;
            ae.t = a0;
            ae.dur = dur;
            emit(std::move(ae));
            stats_.asic_busy_by_kind[size_t(ins.kind)] += dur;
            asic_free_ = a_end;
            last_asic_end = std::max(last_asic_end, a_end);
            ++i;
            continue;
        }
        throw TimingViolation("unexpected instruction in vmm group");
    }
    ps_t result_done = std::max(mac_result_ready_, prev_mac_end + lat_.drain);
    ps_t group_end = std::max({result_done, last_collect_end, last_asic_end});
    // MAC window charged to vmm minus refresh stalls; later exposure to
    // transfer/asic. With a pending fused collect the consuming group takes
    // over from result_done.
    bucket_to(std::max<ps_t>(vmm_from, result_done - refresh_stall_total), stats_.t_vmm);
    bucket_to(result_done, stats_.t_refresh);
    token_refresh_ += refresh_stall_total;
    clock_ = pending_collect_.valid ? std::max(result_done, last_asic_end) : group_end;
    clock_ = std::max(clock_, group_start);
    if (!pending_collect_.valid) {
        bucket_to(std::max(result_done, last_collect_end), stats_.t_transfer);
        bucket_to(group_end, stats_.t_asic);
    }
    (void)first_bcast_end;
}

void Engine::run_attn_value_group(const GroupView& gv) {
    const auto& instrs = gv.s->instrs;
    // the sends stream behind the per-head softmax window when one is open
    if (head_window_.valid) clock_ = std::min(clock_, head_window_.start);
    ps_t latest = clock_;
    ps_t first_result = std::numeric_limits<ps_t>::max();
    // per-channel chaining falls out of per-bank busy_until
    size_t i = gv.begin;
    bool counted_baseline = false;
    while (i < gv.end) {
        const Instruction& ins = instrs[i];
        if (ins.op == Opcode::send) {
            ps_t earliest = clock_;
            if (head_window_.valid && ins.head >= 0) {
                uint32_t h = uint32_t(ins.head);
                ps_t span = head_window_.end - head_window_.start;
                earliest = head_window_.start +
                           ps_t((double(h + 1) / head_window_.heads) * double(span));
            }
            ps_t s0 = reserve_send(ins.bytes, ins.channel, earliest);
            ps_t s_end = s0 + lat_.transfer_ps(ins.bytes);
            TraceEvent be;
            be.kind = EventKind::BUS;
            be.t = s0;
            be.dur = s_end - s0;
            be.bytes = ins.bytes;
            be.fanout = ins.fanout;
            emit(std::move(be));
            send_arrival_ = s_end;
            latest = std::max(latest, s_end);
            ++i;
            continue;
        }
        if (ins.op == Opcode::mac) {
            if (!counted_baseline) {
                stats_.baseline_bytes += ins.tokens * map_.model.d_model * 2;
                counted_baseline = true;
            }
            auto classes = value_sweep_geometry(uint32_t(ins.layer), uint32_t(ins.head),
                                                ins.tokens, ins.round, send_arrival_);
            GroupTiming gt = run_mac_classes(classes, send_arrival_, false, false);
            latest = std::max(latest, gt.end + lat_.drain);
            first_result = std::min(first_result, gt.first_result + lat_.drain);
            token_refresh_ += gt.refresh_stall;
            ++i;
            continue;
        }
        if (ins.op == Opcode::asic_op) { // per-head partial sums
            uint64_t cycles = asic_compute_cycles(ins.kind, ins.n, cfg_);
            ps_t dur = ps_t(cycles) * lat_.asic_cycle;
            ps_t a0 = std::max(asic_free_, latest);
            asic_free_ = a0 + dur;
            TraceEvent ae;
            ae.kind = EventKind::ASIC;
            ae.t = a0;
            ae.dur = dur;
            emit(std::move(ae));
            stats_.asic_busy_by_kind[size_t(ins.kind)] += dur;
            latest = std::max(latest, a0 + dur);
            ++i;
            continue;
        }
        if (ins.op == Opcode::collect) {
            head_window_.valid = false;
            if (first_result == std::numeric_limits<ps_t>::max()) first_result = latest;
            ps_t c0 = reserve_collect(ins.bytes, first_result);
            ps_t dur = lat_.transfer_ps(ins.bytes);
            ps_t c_end = std::max(c0 + dur, latest);
            asic_rx_free_ = c_end;
            TraceEvent be;
            be.kind = EventKind::BUS;
            be.t = c0;
            be.dur = dur;
            be.bytes = ins.bytes;
            be.fanout = ins.fanout;
            emit(std::move(be));
            pending_collect_ = ins.fused ? PendingCollect{true, c0, c_end}
                                         : PendingCollect{false, 0, 0};
            latest = std::max(latest, c_end);
            ++i;
            continue;
        }
        throw TimingViolation("unexpected instruction in attention value group");
    }
    bucket_to(latest, stats_.t_vmm);
    clock_ = std::max(latest, asic_free_);
}

void Engine::run_asic_group(const GroupView& gv) {
    const auto& instrs = gv.s->instrs;
    uint64_t var = 0, depth = 0;
    uint64_t k = 0;
    for (size_t i = gv.begin; i < gv.end; ++i) {
        auto c = asic_cost::cost(instrs[i].kind, instrs[i].n, cfg_);
        var += c.var;
        depth = std::max(depth, c.depth);
        ++k;
    }
    uint64_t cycles = std::max<uint64_t>(var + depth + (k - 1), 1);
    ps_t dur = ps_t(cycles) * lat_.asic_cycle;
    ps_t a0 = std::max(asic_free_, pending_collect_.valid ? pending_collect_.start : clock_);
    ps_t a_end = a0 + dur;
    if (pending_collect_.valid) a_end = std::max(a_end, pending_collect_.end);
    TraceEvent ae;
    ae.kind = EventKind::ASIC;
    ae.t = a0;
    ae.dur = dur;
    emit(std::move(ae));
    stats_.asic_busy_by_kind[size_t(instrs[gv.begin].kind)] += dur;
    asic_free_ = a_end;
    // a batch of per-head softmaxes streams its results: downstream sends may
    // start as each head completes
    if (k > 1 && instrs[gv.begin].kind == NodeKind::softmax && instrs[gv.begin].head >= 0) {
        head_window_ = {true, a0, a_end, uint32_t(k)};
    } else {
        head_window_.valid = false;
    }
    pending_collect_ = {false, 0, 0};
    clock_ = std::max(clock_, a_end);
    bucket_to(clock_, stats_.t_asic);
}

void Engine::run_kv_group(const GroupView& gv) {
    const Instruction& ins = gv.s->instrs[gv.begin];
    ps_t group_start = clock_;
    stats_.baseline_bytes += ins.bytes;
    // The k/v vector reaches its banks through the crossbar: the outbound
    // link leg cuts through the producing collect, so writes start once the
    // data is off the source channels. The value vector splits across
    // channels and travels its per-link shares in parallel.
    uint64_t wire_bytes = ins.bytes;
    ps_t cut_through = std::max(last_collect_window_.start, clock_ - lat_.transfer_ps(wire_bytes));
    ps_t b0, b_end;
    if (ins.kind == NodeKind::kv_write_key) {
        BankAddress a0 = key_token_address(map_, uint32_t(ins.layer), ins.tokens);
        b0 = reserve_send(wire_bytes, a0.channel, cut_through);
        b_end = std::max(b0 + lat_.transfer_ps(wire_bytes), clock_);
    } else {
        uint64_t per_ch = ceil_div(wire_bytes, map_.geom.channels);
        b0 = cut_through;
        b_end = clock_;
        for (uint32_t cch = 0; cch < map_.geom.channels; ++cch) {
            ps_t s = reserve_send(per_ch, cch, cut_through);
            b_end = std::max(b_end, s + lat_.transfer_ps(per_ch));
        }
    }
    TraceEvent be;
    be.kind = EventKind::BUS;
    be.t = b0;
    be.dur = b_end - b0;
    be.bytes = ins.bytes;
    be.fanout = 1;
    emit(std::move(be));

    const uint32_t R = map_.row_elems;
    std::vector<MacClass> classes;
    if (ins.kind == NodeKind::kv_write_key) {
        BankAddress a = key_token_address(map_, uint32_t(ins.layer), ins.tokens);
        uint32_t g = a.channel * map_.geom.banks_per_channel + a.bank;
        MacClass cl;
        cl.members.push_back({g, a.row});
        cl.pieces.push_back({g, uint64_t(a.row) * R, map_.model.d_model});
        cl.write = true;
        classes.push_back(std::move(cl));
    } else {
        // one element per column, each paying ACT + WR + tWR + PRE
        ClassIndex index;
        const uint32_t B = map_.geom.banks_per_channel;
        std::map<uint32_t, std::vector<BankSweep>> per_bank;
        for (uint32_t j = 0; j < map_.model.d_model; ++j) {
            BankAddress a = value_column_address(map_, uint32_t(ins.layer), j, ins.tokens);
            uint32_t g = a.channel * B + a.bank;
            per_bank[g].push_back({g, uint64_t(a.row) * R + a.col, 1});
        }
        std::map<ClassKey, size_t> idx2;
        for (auto& [g, pieces] : per_bank) {
            ClassKey key{pieces.size(), pieces[0].start_elem % R, pieces[0].start_elem / R,
                         state_sig(g, b_end, pieces[0].start_elem / R)};
            auto it = idx2.find(key);
            if (it == idx2.end()) {
                MacClass cl;
                cl.members.push_back({g, pieces[0].start_elem / R});
                cl.pieces = pieces;
                cl.write = true;
                cl.explicit_pre = true;
                idx2.emplace(key, classes.size());
                classes.push_back(std::move(cl));
            } else {
                classes[it->second].members.push_back({g, pieces[0].start_elem / R});
            }
        }
    }
    GroupTiming gt = run_mac_classes(classes, b_end, true, false);
    token_refresh_ += gt.refresh_stall;
    clock_ = std::max(clock_, gt.end);
    bucket_to(clock_, stats_.t_kv);
    (void)group_start;
}

void Engine::run_embed_group(const GroupView& gv) {
    const Instruction& ins = gv.s->instrs[gv.begin];
    ps_t group_start = clock_;
    stats_.baseline_bytes += ins.bytes;
    // token id 0 layout is representative; all embedding columns share shape
    const auto& block = map_.placement(-1, MatrixRole::W_embed_out);
    const uint32_t R = map_.row_elems;
    std::vector<MacClass> classes;
    for (const auto& piece : locate_source(block, 0, map_.model.d_model, map_.geom, R)) {
        uint32_t g = piece.channel * map_.geom.banks_per_channel + piece.bank;
        MacClass cl;
        cl.members.push_back({g, piece.local_elem / R});
        cl.pieces.push_back({g, piece.local_elem, piece.elems});
        classes.push_back(std::move(cl));
    }
    GroupTiming gt = run_mac_classes(classes, clock_, false, false);
    ps_t t0 = reserve_collect(ins.bytes, gt.end);
    ps_t t_end = t0 + lat_.transfer_ps(ins.bytes);
    TraceEvent be;
    be.kind = EventKind::BUS;
    be.t = t0;
    be.dur = t_end - t0;
    be.bytes = ins.bytes;
    be.fanout = 1;
    emit(std::move(be));
    bucket_to(gt.end, stats_.t_vmm);
    bucket_to(t_end, stats_.t_transfer);
    clock_ = t_end;
    (void)group_start;
}

void Engine::execute(const InstructionStream& stream) {
    cur_stream_ = &stream;
    size_t i = 0;
    const auto& instrs = stream.instrs;
    while (i < instrs.size()) {
        size_t j = i;
        uint32_t group = instrs[i].group;
        while (j < instrs.size() && instrs[j].group == group) ++j;
        catch_up_refresh(clock_);
        GroupView gv{&stream, i, j};
        switch (instrs[i].op) {
            case Opcode::broadcast:
            case Opcode::mac: // broadcast-less group reusing the GB contents
                run_vmm_group(gv);
                break;
            case Opcode::send:
                run_attn_value_group(gv);
                break;
            case Opcode::asic_op:
                run_asic_group(gv);
                break;
            case Opcode::kv_write:
                run_kv_group(gv);
                break;
            case Opcode::embed_read:
                run_embed_group(gv);
                break;
            default:
                throw TimingViolation("group starts with an unexpected opcode");
        }
        i = j;
    }
    stats_.final_ps = clock_;
}

void Engine::mark_token() {
    stats_.token_ps.push_back(clock_ - token_start_);
    stats_.token_refresh_ps.push_back(token_refresh_);
    token_start_ = clock_;
    token_refresh_ = 0;
}

SimTrace Engine::finish() {
    catch_up_refresh(clock_);
    stats_.final_ps = clock_;
    ps_t accounted = stats_.t_vmm + stats_.t_asic + stats_.t_transfer + stats_.t_kv +
                     stats_.t_refresh;
    stats_.t_idle = std::max<ps_t>(0, stats_.final_ps - accounted);
    for (auto* s : sinks_) s->finalize(clock_);
    SimTrace tr;
    tr.stats = stats_;
    return tr;
}

SimTrace simulate(const InstructionStream& stream, const MemoryMap& map, const SystemConfig& cfg,
                  std::vector<TraceSink*> sinks) {
    Engine eng(map, cfg);
    for (auto* s : sinks) eng.add_sink(s);
    eng.execute(stream);
    eng.mark_token();
    return eng.finish();
}

} // namespace pimgpt
