#include "pimgpt/compiler.hpp"

#include <algorithm>
#include <sstream>

namespace pimgpt {

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::vmm: return "vmm";
        case NodeKind::kv_write_key: return "kv_write_key";
        case NodeKind::kv_write_value: return "kv_write_value";
        case NodeKind::softmax: return "softmax";
        case NodeKind::layernorm: return "layernorm";
        case NodeKind::gelu: return "gelu";
        case NodeKind::residual_add: return "residual_add";
        case NodeKind::partial_sum: return "partial_sum";
        case NodeKind::transfer_broadcast: return "transfer_broadcast";
        case NodeKind::transfer_collect: return "transfer_collect";
        case NodeKind::embed_lookup: return "embed_lookup";
        case NodeKind::argmax: return "argmax";
    }
    return "?";
}

const char* target_name(Target t) {
    switch (t) {
        case Target::pim: return "pim";
        case Target::asic: return "asic";
        case Target::bus: return "bus";
    }
    return "?";
}

const char* opcode_name(Opcode o) {
    switch (o) {
        case Opcode::broadcast: return "broadcast";
        case Opcode::send: return "send";
        case Opcode::mac: return "mac";
        case Opcode::collect: return "collect";
        case Opcode::kv_write: return "kv_write";
        case Opcode::asic_op: return "asic_op";
        case Opcode::embed_read: return "embed_read";
    }
    return "?";
}

bool ComputationGraph::is_dag() const {
    for (const auto& n : nodes) {
        for (uint32_t d : n.deps) {
            if (d >= n.id) return false;
        }
    }
    return true;
}

ComputationGraph build_graph(const GptModelConfig& model, uint64_t token_position) {
    if (token_position < 1) throw CompileError("token_position must be >= 1");
    ComputationGraph g;
    g.model = model;
    g.token_position = token_position;
    auto add = [&](GraphNode n) {
        n.id = static_cast<uint32_t>(g.nodes.size());
        g.nodes.push_back(std::move(n));
        return g.nodes.back().id;
    };
    const uint64_t d = model.d_model;
    const uint64_t t = token_position;

    GraphNode embed;
    embed.kind = NodeKind::embed_lookup;
    embed.n = d;
    uint32_t x = add(embed);

    for (uint32_t l = 0; l < model.num_layers; ++l) {
        int li = static_cast<int>(l);
        auto weight_vmm = [&](MatrixRole role, uint64_t rows, uint64_t cols,
                              std::vector<uint32_t> deps) {
            GraphNode n;
            n.kind = NodeKind::vmm;
            n.layer = li;
            n.role = role;
            n.is_weight_vmm = true;
            n.rows = rows;
            n.cols = cols;
            n.deps = std::move(deps);
            return add(n);
        };
        uint32_t q = weight_vmm(MatrixRole::W_Q, d, d, {x});
        uint32_t k = weight_vmm(MatrixRole::W_K, d, d, {x});
        uint32_t v = weight_vmm(MatrixRole::W_V, d, d, {x});

        GraphNode kw;
        kw.kind = NodeKind::kv_write_key;
        kw.layer = li;
        kw.n = d;
        kw.deps = {k};
        uint32_t key_write = add(kw);
        GraphNode vw;
        vw.kind = NodeKind::kv_write_value;
        vw.layer = li;
        vw.n = d;
        vw.deps = {v};
        uint32_t value_write = add(vw);

        std::vector<uint32_t> head_outs;
        for (uint32_t h = 0; h < model.num_heads; ++h) {
            GraphNode qk;
            qk.kind = NodeKind::vmm;
            qk.layer = li;
            qk.head = static_cast<int>(h);
            qk.is_attn_score = true;
            qk.rows = model.d_head; // reduction per head
            qk.cols = t;            // one score per cached token
            qk.deps = {q, key_write};
            uint32_t qk_id = add(qk);

            GraphNode sm;
            sm.kind = NodeKind::softmax;
            sm.layer = li;
            sm.head = static_cast<int>(h);
            sm.n = t;
            sm.deps = {qk_id};
            uint32_t sm_id = add(sm);

            GraphNode sv;
            sv.kind = NodeKind::vmm;
            sv.layer = li;
            sv.head = static_cast<int>(h);
            sv.is_attn_value = true;
            sv.rows = t; // reduction over cached tokens
            sv.cols = model.d_head;
            sv.deps = {sm_id, value_write};
            head_outs.push_back(add(sv));
        }

        std::vector<uint32_t> proj_deps = head_outs;
        uint32_t proj = weight_vmm(MatrixRole::W_proj, d, d, std::move(proj_deps));

        GraphNode r1;
        r1.kind = NodeKind::residual_add;
        r1.layer = li;
        r1.n = d;
        r1.deps = {proj, x};
        uint32_t resid1 = add(r1);
        GraphNode n1;
        n1.kind = NodeKind::layernorm;
        n1.layer = li;
        n1.n = d;
        n1.deps = {resid1};
        uint32_t ln1 = add(n1);

        uint32_t ffn1 = weight_vmm(MatrixRole::W_ffn1, d, model.d_ffn, {ln1});
        GraphNode ge;
        ge.kind = NodeKind::gelu;
        ge.layer = li;
        ge.n = model.d_ffn;
        ge.deps = {ffn1};
        uint32_t gelu_id = add(ge);
        uint32_t ffn2 = weight_vmm(MatrixRole::W_ffn2, model.d_ffn, d, {gelu_id});

        GraphNode r2;
        r2.kind = NodeKind::residual_add;
        r2.layer = li;
        r2.n = d;
        r2.deps = {ffn2, ln1};
        uint32_t resid2 = add(r2);
        GraphNode n2;
        n2.kind = NodeKind::layernorm;
        n2.layer = li;
        n2.n = d;
        n2.deps = {resid2};
        x = add(n2);
    }

    GraphNode out;
    out.kind = NodeKind::vmm;
    out.layer = -1;
    out.role = MatrixRole::W_embed_out;
    out.is_weight_vmm = true;
    out.rows = d;
    out.cols = model.vocab_size;
    out.deps = {x};
    uint32_t logits = add(out);

    GraphNode am;
    am.kind = NodeKind::argmax;
    am.n = model.vocab_size;
    am.deps = {logits};
    add(am);
    return g;
}

namespace {

inline uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

// Banks whose flat range starts mid-column emit one extra partial output.
uint32_t cut_extras(const MatrixPlacement& block) {
    uint32_t extras = 0;
    for (const auto& run : block.segments) {
        if (run.round == 0 && run.src_offset % block.rows != 0) ++extras;
    }
    return extras;
}

struct Lowerer {
    const ComputationGraph& g;
    const MemoryMap& map;
    const SystemConfig& cfg;
    InstructionStream out;
    std::vector<std::vector<uint32_t>> terminal; // node -> its result instrs
    std::vector<bool> feeds_asic;                // node -> some consumer is asic

    Lowerer(const ComputationGraph& g_, const MemoryMap& map_, const SystemConfig& cfg_)
        : g(g_), map(map_), cfg(cfg_) {
        out.map = &map;
        out.cfg = cfg;
        out.model = g.model;
        out.token_position = g.token_position;
        out.node_instrs.resize(g.nodes.size());
        terminal.resize(g.nodes.size());
        feeds_asic.assign(g.nodes.size(), false);
        for (const auto& n : g.nodes) {
            bool asic = n.kind == NodeKind::softmax || n.kind == NodeKind::layernorm ||
                        n.kind == NodeKind::gelu || n.kind == NodeKind::residual_add ||
                        n.kind == NodeKind::argmax;
            if (!asic) continue;
            for (uint32_t dep : n.deps) feeds_asic[dep] = true;
        }
    }

    // GB reuse: consecutive single-round weight blocks fed by the same input
    // vector (the QKV projections) share one broadcast.
    struct SharedBcast {
        bool valid = false;
        int layer = -1;
        std::vector<uint32_t> input_nodes;
        uint32_t bcast_id = 0;
    } shared_bcast;

    uint32_t emit(Instruction ins, uint32_t node_id) {
        ins.id = static_cast<uint32_t>(out.instrs.size());
        out.instrs.push_back(std::move(ins));
        out.node_instrs[node_id].push_back(out.instrs.back().id);
        return out.instrs.back().id;
    }

    std::vector<uint32_t> dep_instrs(const GraphNode& n) {
        std::vector<uint32_t> deps;
        for (uint32_t d : n.deps) {
            for (uint32_t i : terminal[d]) deps.push_back(i);
        }
        return deps;
    }

    // Shared lowering for weight blocks and the attention score sweep: one
    // broadcast per GB round, per-channel MACs, a collect, and ASIC partial
    // sums when the reduction splits.
    void lower_vmm_rounds(const GraphNode& n, const MatrixPlacement* block, uint64_t reduction,
                          uint64_t collect_bytes_per_round, uint64_t partial_n,
                          const std::vector<uint32_t>& first_deps,
                          const std::vector<uint32_t>& alias_nodes) {
        const uint32_t gb = cfg.gb_elems();
        const uint32_t rounds = static_cast<uint32_t>(ceil_div(reduction, gb));
        uint32_t group = n.id;
        std::vector<uint32_t> prev_round_term = first_deps;
        uint32_t accum = UINT32_MAX;
        bool reuse_gb = rounds == 1 && n.is_weight_vmm && shared_bcast.valid &&
                        shared_bcast.layer == n.layer && shared_bcast.input_nodes == n.deps;
        for (uint32_t r = 0; r < rounds; ++r) {
            uint64_t slice = std::min<uint64_t>(gb, reduction - uint64_t(r) * gb);
            uint32_t bid;
            if (reuse_gb) {
                bid = shared_bcast.bcast_id; // GB already holds this vector
            } else {
                Instruction b;
                b.group = group;
                b.target = Target::bus;
                b.op = Opcode::broadcast;
                b.kind = NodeKind::transfer_broadcast;
                b.layer = n.layer;
                b.bytes = slice * 2;
                b.fanout = map.geom.channels;
                b.round = r;
                b.rounds = rounds;
                b.deps = prev_round_term;
                bid = emit(b, n.id);
            }
            if (rounds == 1 && n.is_weight_vmm && !reuse_gb) {
                shared_bcast = {true, n.layer, n.deps, bid};
            } else if (!reuse_gb) {
                shared_bcast.valid = false;
            }

            std::vector<uint32_t> macs;
            for (uint32_t c = 0; c < map.geom.channels; ++c) {
                Instruction m;
                m.group = group;
                m.target = Target::pim;
                m.op = Opcode::mac;
                m.kind = n.kind;
                m.layer = n.layer;
                m.head = n.head;
                m.channel = c;
                m.block = block;
                m.tokens = g.token_position;
                m.round = r;
                m.rounds = rounds;
                m.deps = {bid};
                macs.push_back(emit(m, n.id));
            }
            Instruction col;
            col.group = group;
            col.target = Target::bus;
            col.op = Opcode::collect;
            col.kind = NodeKind::transfer_collect;
            col.layer = n.layer;
            col.bytes = collect_bytes_per_round;
            col.round = r;
            col.rounds = rounds;
            col.fused = feeds_asic[n.id] || rounds > 1;
            col.deps = macs;
            uint32_t cid = emit(col, n.id);
            prev_round_term = {cid};

            if (r > 0) {
                Instruction ps;
                ps.group = group;
                ps.target = Target::asic;
                ps.op = Opcode::asic_op;
                ps.kind = NodeKind::partial_sum;
                ps.layer = n.layer;
                ps.n = partial_n;
                ps.deps = {cid};
                if (accum != UINT32_MAX) ps.deps.push_back(accum);
                accum = emit(ps, n.id);
                prev_round_term = {accum};
            }
        }
        terminal[n.id] = prev_round_term;
        for (uint32_t alias : alias_nodes) {
            terminal[alias] = prev_round_term;
            out.node_instrs[alias] = out.node_instrs[n.id];
        }
    }

    void lower_weight_vmm(const GraphNode& n) {
        const MatrixPlacement* block = &map.placement(n.layer, n.role);
        uint64_t collect_bytes = (n.cols + cut_extras(*block)) * 2;
        lower_vmm_rounds(n, block, n.rows, collect_bytes, n.cols, dep_instrs(n), {});
    }

    // q.K^T: all heads of a layer share the physical row sweep, so the first
    // head's node carries the instructions and the rest alias them. GB rounds
    // split at head boundaries: every head's reduction (d_head elements)
    // completes inside one round, so rounds emit disjoint score groups and no
    // partial sums.
    void lower_attention_scores(const GraphNode& n) {
        if (n.head != 0) return; // aliased by head 0
        std::vector<uint32_t> aliases;
        std::vector<uint32_t> deps = dep_instrs(n);
        for (const auto& other : g.nodes) {
            if (other.is_attn_score && other.layer == n.layer && other.id != n.id) {
                aliases.push_back(other.id);
                for (uint32_t d : other.deps) {
                    for (uint32_t i : terminal[d]) deps.push_back(i);
                }
            }
        }
        std::sort(deps.begin(), deps.end());
        deps.erase(std::unique(deps.begin(), deps.end()), deps.end());

        const uint32_t gb = cfg.gb_elems();
        const uint32_t H = g.model.num_heads;
        const uint32_t hpr = std::max<uint32_t>(1, gb / g.model.d_head);
        const uint32_t rounds = static_cast<uint32_t>(ceil_div(H, hpr));
        uint32_t group = n.id;
        std::vector<uint32_t> prev = deps;
        std::vector<uint32_t> terminals;
        for (uint32_t r = 0; r < rounds; ++r) {
            uint32_t heads_r = std::min(hpr, H - r * hpr);
            Instruction b;
            b.group = group;
            b.target = Target::bus;
            b.op = Opcode::broadcast;
            b.kind = NodeKind::transfer_broadcast;
            b.layer = n.layer;
            b.bytes = uint64_t(heads_r) * g.model.d_head * 2;
            b.fanout = map.geom.channels;
            b.round = r;
            b.rounds = rounds;
            b.deps = prev;
            uint32_t bid = emit(b, n.id);
            std::vector<uint32_t> macs;
            for (uint32_t ch = 0; ch < map.geom.channels; ++ch) {
                Instruction mm;
                mm.group = group;
                mm.target = Target::pim;
                mm.op = Opcode::mac;
                mm.kind = n.kind;
                mm.layer = n.layer;
                mm.channel = ch;
                mm.tokens = g.token_position;
                mm.round = r;
                mm.rounds = rounds;
                mm.deps = {bid};
                macs.push_back(emit(mm, n.id));
            }
            Instruction col;
            col.group = group;
            col.target = Target::bus;
            col.op = Opcode::collect;
            col.kind = NodeKind::transfer_collect;
            col.layer = n.layer;
            col.bytes = uint64_t(heads_r) * g.token_position * 2;
            col.round = r;
            col.rounds = rounds;
            col.fused = true; // consumed by the softmax batch
            col.deps = macs;
            uint32_t cid = emit(col, n.id);
            prev = {cid};
            terminals.push_back(cid);
        }
        terminal[n.id] = terminals;
        for (uint32_t alias : aliases) {
            terminal[alias] = terminals;
            out.node_instrs[alias] = out.node_instrs[n.id];
        }
    }

    // scores.V: per head, targeted sends to the head's channel and that
    // channel's bank sweep; heads execute concurrently across channels.
    // Lowered once every head's softmax has a terminal, i.e. at the last head.
    void lower_attention_values(const GraphNode& last) {
        if (last.head != static_cast<int>(g.model.num_heads) - 1) return;
        shared_bcast.valid = false; // sends overwrite the GBs
        const GraphNode& n = *[&] {
            for (const auto& other : g.nodes) {
                if (other.is_attn_value && other.layer == last.layer && other.head == 0) {
                    return &other;
                }
            }
            return &last;
        }();
        const uint32_t gb = cfg.gb_elems();
        const uint64_t t = g.token_position;
        const uint32_t rounds = static_cast<uint32_t>(ceil_div(t, gb));
        uint32_t group = n.id;

        std::vector<uint32_t> all_macs;
        std::vector<uint32_t> aliases;
        for (uint32_t h = 0; h < g.model.num_heads; ++h) {
            const GraphNode* hn = &n;
            if (h != 0) {
                for (const auto& other : g.nodes) {
                    if (other.is_attn_value && other.layer == n.layer &&
                        other.head == static_cast<int>(h)) {
                        hn = &other;
                        break;
                    }
                }
                aliases.push_back(hn->id);
            }
            std::vector<uint32_t> deps = dep_instrs(*hn);
            uint32_t accum = UINT32_MAX;
            for (uint32_t r = 0; r < rounds; ++r) {
                uint64_t slice = std::min<uint64_t>(gb, t - uint64_t(r) * gb);
                Instruction s;
                s.group = group;
                s.target = Target::bus;
                s.op = Opcode::send;
                s.kind = NodeKind::transfer_broadcast;
                s.layer = n.layer;
                s.head = static_cast<int>(h);
                s.channel = h % map.geom.channels;
                s.bytes = slice * 2;
                s.round = r;
                s.rounds = rounds;
                s.deps = deps;
                uint32_t sid = emit(s, hn->id);

                Instruction m;
                m.group = group;
                m.target = Target::pim;
                m.op = Opcode::mac;
                m.kind = n.kind;
                m.layer = n.layer;
                m.head = static_cast<int>(h);
                m.channel = h % map.geom.channels;
                m.tokens = t;
                m.round = r;
                m.rounds = rounds;
                m.deps = {sid};
                uint32_t mid = emit(m, hn->id);
                all_macs.push_back(mid);
                deps = {mid};
                if (r > 0) {
                    Instruction ps;
                    ps.group = group;
                    ps.target = Target::asic;
                    ps.op = Opcode::asic_op;
                    ps.kind = NodeKind::partial_sum;
                    ps.layer = n.layer;
                    ps.head = static_cast<int>(h);
                    ps.n = g.model.d_head;
                    ps.deps = {mid};
                    if (accum != UINT32_MAX) ps.deps.push_back(accum);
                    accum = emit(ps, hn->id);
                    deps = {accum};
                }
            }
            terminal[hn->id] = deps;
        }
        Instruction col;
        col.group = group;
        col.target = Target::bus;
        col.op = Opcode::collect;
        col.kind = NodeKind::transfer_collect;
        col.layer = n.layer;
        col.bytes = uint64_t(g.model.d_model) * 2 * rounds;
        col.deps = all_macs;
        col.fused = feeds_asic[n.id];
        uint32_t cid = emit(col, n.id);
        terminal[n.id].push_back(cid);
        for (uint32_t a : aliases) terminal[a].push_back(cid);
    }

    void lower_asic(const GraphNode& n) {
        Instruction a;
        // Per-head softmaxes share one fetch group so the engine pipelines
        // them through the engine (depth paid once).
        a.group = (n.kind == NodeKind::softmax && n.head >= 0)
                      ? n.id - static_cast<uint32_t>(n.head) * 3
                      : n.id;
        a.target = Target::asic;
        a.op = Opcode::asic_op;
        a.kind = n.kind;
        a.layer = n.layer;
        a.head = n.head;
        a.n = n.n;
        a.deps = dep_instrs(n);
        terminal[n.id] = {emit(a, n.id)};
    }

    void lower_kv_write(const GraphNode& n) {
        Instruction w;
        w.group = n.id;
        w.target = Target::pim;
        w.op = Opcode::kv_write;
        w.kind = n.kind;
        w.layer = n.layer;
        w.tokens = g.token_position - 1; // index of the token being written
        w.n = g.model.d_model;
        w.bytes = uint64_t(g.model.d_model) * 2;
        w.deps = dep_instrs(n);
        terminal[n.id] = {emit(w, n.id)};
    }

    void lower_embed(const GraphNode& n) {
        Instruction e;
        e.group = n.id;
        e.target = Target::pim;
        e.op = Opcode::embed_read;
        e.kind = n.kind;
        e.n = g.model.d_model;
        e.bytes = uint64_t(g.model.d_model) * 2;
        e.deps = {};
        terminal[n.id] = {emit(e, n.id)};
    }

    InstructionStream run() {
        for (const auto& n : g.nodes) {
            switch (n.kind) {
                case NodeKind::vmm:
                    if (n.is_weight_vmm) {
                        lower_weight_vmm(n);
                    } else if (n.is_attn_score) {
                        lower_attention_scores(n);
                    } else {
                        lower_attention_values(n);
                    }
                    break;
                case NodeKind::softmax:
                case NodeKind::layernorm:
                case NodeKind::gelu:
                case NodeKind::residual_add:
                case NodeKind::argmax:
                    lower_asic(n);
                    break;
                case NodeKind::kv_write_key:
                case NodeKind::kv_write_value:
                    lower_kv_write(n);
                    break;
                case NodeKind::embed_lookup:
                    lower_embed(n);
                    break;
                default:
                    throw CompileError(std::string("unexpected graph node kind ") +
                                       node_kind_name(n.kind));
            }
        }
        for (size_t i = 0; i < g.nodes.size(); ++i) {
            if (out.node_instrs[i].empty()) {
                throw CompileError("graph node " + std::to_string(i) + " lowered to nothing");
            }
        }
        return std::move(out);
    }
};

} // namespace

InstructionStream compile(const ComputationGraph& graph, const MemoryMap& map,
                          const SystemConfig& cfg) {
    if (graph.model.name != map.model.name || graph.model.d_model != map.model.d_model) {
        throw CompileError("graph/map model mismatch");
    }
    for (const auto& n : graph.nodes) {
        if (n.kind == NodeKind::vmm && n.is_weight_vmm) {
            map.placement(n.layer, n.role); // throws when unmapped
        }
        if (n.kind == NodeKind::kv_write_key) map.reservation(n.layer, KvKind::key);
        if (n.kind == NodeKind::kv_write_value) map.reservation(n.layer, KvKind::value);
    }
    Lowerer lw(graph, map, cfg);
    return lw.run();
}

std::string dump_stream(const InstructionStream& s) {
    std::ostringstream o;
    for (const auto& i : s.instrs) {
        o << i.id << ": g" << i.group << " " << target_name(i.target) << " " << opcode_name(i.op)
          << " " << node_kind_name(i.kind);
        if (i.layer >= 0) o << " L" << i.layer;
        if (i.head >= 0) o << " h" << i.head;
        if (i.channel != UINT32_MAX) o << " ch" << i.channel;
        if (i.block) o << " " << i.block->id();
        if (i.n) o << " n=" << i.n;
        if (i.bytes) o << " bytes=" << i.bytes;
        if (i.rounds > 1) o << " round=" << i.round << "/" << i.rounds;
        if (i.fused) o << " fused";
        o << " deps=[";
        for (size_t k = 0; k < i.deps.size(); ++k) {
            if (k) o << ",";
            o << i.deps[k];
        }
        o << "]\n";
    }
    return o.str();
}

namespace {

void commands_for_segment(std::vector<DramCommand>& out, uint32_t channel, uint32_t bank,
                          uint64_t start_row, uint64_t start_col, uint64_t elems,
                          uint32_t row_elems, uint32_t mac, bool write, int64_t& open_row) {
    uint64_t row = start_row;
    uint64_t col = start_col;
    uint64_t left = elems;
    while (left > 0) {
        uint64_t span = std::min<uint64_t>(row_elems - col, left);
        uint32_t accesses = static_cast<uint32_t>(ceil_div(span, mac));
        if (open_row != static_cast<int64_t>(row)) {
            if (open_row >= 0) {
                out.push_back({DramCommand::PRE, channel, bank, static_cast<uint32_t>(open_row), 1});
            }
            out.push_back({DramCommand::ACT, channel, bank, static_cast<uint32_t>(row), 1});
            open_row = static_cast<int64_t>(row);
        }
        out.push_back({write ? DramCommand::WR : DramCommand::RD, channel, bank,
                       static_cast<uint32_t>(row), accesses});
        left -= span;
        col = 0;
        ++row;
    }
}

} // namespace

std::vector<DramCommand> lower_to_commands(const Instruction& instr, const MemoryMap& map,
                                           const SystemConfig& cfg) {
    if (instr.target == Target::asic) {
        throw CompileError("lower_to_commands: instruction does not target pim/bus");
    }
    std::vector<DramCommand> out;
    const uint32_t R = map.row_elems;
    const uint32_t mac = cfg.pim.mac_width;
    const uint32_t B = map.geom.banks_per_channel;
    const uint32_t gb = cfg.gb_elems();

    if (instr.op == Opcode::mac && instr.block) {
        // Weight sweep: this channel's banks, the round's contiguous run.
        const auto& block = *instr.block;
        for (const auto& run : block.segments) {
            if (run.round != instr.round) continue;
            if (run.start.channel != instr.channel && instr.channel != UINT32_MAX) continue;
            int64_t open_row = -1;
            commands_for_segment(out, run.start.channel, run.start.bank, run.start.row,
                                 run.start.col, run.elems, R, mac, false, open_row);
        }
        return out;
    }
    if (instr.op == Opcode::mac) {
        const auto& model = map.model;
        uint64_t t = instr.tokens;
        if (instr.head < 0) {
            // q.K^T: sweep every cached token row owned by this channel; the
            // round covers a whole head group.
            uint64_t hpr = std::max<uint64_t>(1, gb / model.d_head);
            uint64_t a = uint64_t(instr.round) * hpr * model.d_head;
            uint64_t b = std::min<uint64_t>(a + hpr * model.d_head,
                                            uint64_t(model.num_heads) * model.d_head);
            std::vector<int64_t> open(B, -1);
            for (uint64_t tok = 0; tok < t; ++tok) {
                BankAddress addr = key_token_address(map, instr.layer, tok);
                if (addr.channel != instr.channel) continue;
                uint64_t off = uint64_t(addr.row) * R + a;
                commands_for_segment(out, addr.channel, addr.bank, off / R, off % R, b - a, R,
                                     mac, false, open[addr.bank]);
            }
        } else {
            // scores.V: this head's columns within its channel.
            uint64_t a = uint64_t(instr.round) * gb;
            uint64_t b = std::min<uint64_t>(a + gb, t);
            std::vector<int64_t> open(B, -1);
            for (uint32_t j = instr.head * model.d_head; j < (instr.head + 1u) * model.d_head;
                 ++j) {
                BankAddress lo = value_column_address(map, instr.layer, j, a);
                commands_for_segment(out, lo.channel, lo.bank, lo.row, lo.col, b - a, R, mac,
                                     false, open[lo.bank]);
            }
        }
        return out;
    }
    if (instr.op == Opcode::kv_write) {
        auto runs = kv_write_address(map, instr.layer,
                                     instr.kind == NodeKind::kv_write_key ? KvKind::key
                                                                          : KvKind::value,
                                     instr.tokens);
        if (instr.kind == NodeKind::kv_write_key) {
            int64_t open_row = -1;
            for (const auto& r : runs) {
                commands_for_segment(out, r.addr.channel, r.addr.bank, r.addr.row, r.addr.col,
                                     r.elems, R, mac, true, open_row);
            }
        } else {
            // One element per activated row, closed immediately.
            for (const auto& r : runs) {
                out.push_back({DramCommand::ACT, r.addr.channel, r.addr.bank, r.addr.row, 1});
                out.push_back({DramCommand::WR, r.addr.channel, r.addr.bank, r.addr.row, 1});
                out.push_back({DramCommand::PRE, r.addr.channel, r.addr.bank, r.addr.row, 1});
            }
        }
        return out;
    }
    if (instr.op == Opcode::embed_read) {
        // Token embedding: one column of the tied embedding matrix, read as a
        // plain row burst wherever its slices live.
        const auto& block = map.placement(-1, MatrixRole::W_embed_out);
        uint64_t token_id = instr.tokens; // routed through tokens for the dump
        uint64_t s = token_id * map.model.d_model;
        for (const auto& piece :
             locate_source(block, s, s + map.model.d_model, map.geom, R)) {
            int64_t open_row = -1;
            commands_for_segment(out, piece.channel, piece.bank, piece.local_elem / R,
                                 piece.local_elem % R, piece.elems, R, mac, false, open_row);
        }
        return out;
    }
    // bus transfers carry no DRAM commands
    return out;
}

} // namespace pimgpt
