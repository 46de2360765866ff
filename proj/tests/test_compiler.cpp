#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pimgpt/compiler.hpp"

#include <fstream>
#include <sstream>

#include <set>

using namespace pimgpt;

namespace {

GptModelConfig small_model() { return find_model("gpt3-small"); }

SystemConfig base_cfg() { return SystemConfig{}; }

} // namespace

TEST_CASE("graph shapes") {
    auto m = small_model();
    // token 1: q.K^T produces a length-1 score vector
    auto g1 = build_graph(m, 1);
    CHECK(g1.is_dag());
    for (const auto& n : g1.nodes) {
        if (n.is_attn_score) {
            CHECK(n.cols == 1);
            CHECK(n.rows == 64);
        }
    }
    // token 1024: per-head attention VMM of 1024 x 64
    auto g2 = build_graph(m, 1024);
    size_t scores = 0;
    for (const auto& n : g2.nodes) {
        if (n.is_attn_score) {
            CHECK(n.cols == 1024);
            CHECK(n.rows == 64);
            ++scores;
        }
    }
    CHECK(scores == size_t(m.num_heads) * m.num_layers);
    // node count per layer constant in token_position
    CHECK(g1.nodes.size() == g2.nodes.size());

    // hand-derived node census for one layer: 3 QKV + 2 kv writes + 3 per
    // head + proj + 2 residual + 2 layernorm + ffn1 + gelu + ffn2
    size_t per_layer = 3 + 2 + 3 * m.num_heads + 1 + 2 + 2 + 3;
    CHECK(g1.nodes.size() == 1 + per_layer * m.num_layers + 2);
}

TEST_CASE("vmm lowering counts: 1 broadcast + 8 MAC + 1 fused collect") {
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    MemoryMap map = build_memory_map(m, cfg, 64);
    auto g = build_graph(m, 1);
    auto s = compile(g, map, cfg);

    // find the proj node of layer 0 (consumer is the residual, an asic op)
    for (const auto& n : g.nodes) {
        if (n.is_weight_vmm && n.layer == 0 && n.role == MatrixRole::W_proj) {
            const auto& ids = s.node_instrs[n.id];
            size_t bcasts = 0, macs = 0, collects = 0, fused = 0;
            for (uint32_t i : ids) {
                const auto& ins = s.instrs[i];
                if (ins.op == Opcode::broadcast) ++bcasts;
                if (ins.op == Opcode::mac) ++macs;
                if (ins.op == Opcode::collect) {
                    ++collects;
                    if (ins.fused) ++fused;
                }
            }
            CHECK(bcasts == 1);
            CHECK(macs == 8);
            CHECK(collects == 1);
            CHECK(fused == 1);
        }
    }
}

TEST_CASE("long inputs split into GB rounds with a partial sum") {
    // FFN2 reduction for gpt3-small is 3072 elements = 6 KB > 2 KB GB.
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    MemoryMap map = build_memory_map(m, cfg, 16);
    auto g = build_graph(m, 1);
    auto s = compile(g, map, cfg);
    for (const auto& n : g.nodes) {
        if (n.is_weight_vmm && n.layer == 0 && n.role == MatrixRole::W_ffn2) {
            size_t bcasts = 0, partials = 0;
            for (uint32_t i : s.node_instrs[n.id]) {
                const auto& ins = s.instrs[i];
                if (ins.op == Opcode::broadcast) ++bcasts;
                if (ins.kind == NodeKind::partial_sum) ++partials;
            }
            CHECK(bcasts == 3);  // 3072 / 1024
            CHECK(partials == 2);
        }
    }
    // A 2048-element input with a 2 KB GB: 2 rounds + 1 partial_sum.
    GptModelConfig toy;
    toy.name = "toy2048";
    toy.num_layers = 1;
    toy.d_model = 2048;
    toy.num_heads = 16;
    toy.d_head = 128;
    toy.d_ffn = 8192;
    toy.vocab_size = 256;
    toy.max_tokens = 8;
    MemoryMap tmap = build_memory_map(toy, cfg, 8);
    auto tg = build_graph(toy, 1);
    auto ts = compile(tg, tmap, cfg);
    for (const auto& n : tg.nodes) {
        if (n.is_weight_vmm && n.role == MatrixRole::W_Q) {
            size_t bcasts = 0, partials = 0;
            for (uint32_t i : ts.node_instrs[n.id]) {
                const auto& ins = ts.instrs[i];
                if (ins.op == Opcode::broadcast) ++bcasts;
                if (ins.kind == NodeKind::partial_sum) ++partials;
            }
            CHECK(bcasts == 2);
            CHECK(partials == 1);
        }
    }
}

TEST_CASE("kv write lowering") {
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    MemoryMap map = build_memory_map(m, cfg, 64);
    auto g = build_graph(m, 1);
    auto s = compile(g, map, cfg);
    for (const auto& n : g.nodes) {
        if (n.kind == NodeKind::kv_write_key && n.layer == 0) {
            REQUIRE(s.node_instrs[n.id].size() == 1); // one write instruction
            const auto& ins = s.instrs[s.node_instrs[n.id][0]];
            auto cmds = lower_to_commands(ins, map, cfg);
            size_t acts = 0, wrs = 0, wr_accesses = 0;
            for (const auto& c : cmds) {
                if (c.kind == DramCommand::ACT) ++acts;
                if (c.kind == DramCommand::WR) {
                    ++wrs;
                    wr_accesses += c.accesses;
                }
            }
            CHECK(acts == 1); // single ACT amortized over consecutive writes
            CHECK(wr_accesses == 768 / 16);
        }
        if (n.kind == NodeKind::kv_write_value && n.layer == 0) {
            const auto& ins = s.instrs[s.node_instrs[n.id][0]];
            auto cmds = lower_to_commands(ins, map, cfg);
            // every element: ACT + WR + PRE on a closed row
            size_t acts = 0, wrs = 0, pres = 0;
            for (const auto& c : cmds) {
                if (c.kind == DramCommand::ACT) ++acts;
                if (c.kind == DramCommand::WR) ++wrs;
                if (c.kind == DramCommand::PRE) ++pres;
            }
            CHECK(acts == 768);
            CHECK(wrs == 768);
            CHECK(pres == 768);
        }
    }
}

TEST_CASE("mac command counts reproduce placement geometry") {
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    MemoryMap map = build_memory_map(m, cfg, 16);
    auto g = build_graph(m, 1);
    auto s = compile(g, map, cfg);
    // W_V over channel 0: 16 banks x 4608 elements each = 16 x 288 accesses;
    // spans: rows touched per bank.
    for (const auto& n : g.nodes) {
        if (n.is_weight_vmm && n.layer == 0 && n.role == MatrixRole::W_V) {
            for (uint32_t i : s.node_instrs[n.id]) {
                const auto& ins = s.instrs[i];
                if (ins.op != Opcode::mac || ins.channel != 0) continue;
                auto cmds = lower_to_commands(ins, map, cfg);
                uint64_t acts = 0, accesses = 0;
                for (const auto& c : cmds) {
                    if (c.kind == DramCommand::ACT) ++acts;
                    if (c.kind == DramCommand::RD) accesses += c.accesses;
                }
                CHECK(accesses == 16 * (4608 / 16));
                // 4608 elems starting mid-row span 5 or 6 rows
                CHECK(acts >= 16 * 5);
                CHECK(acts <= 16 * 6);
            }
        }
    }
}

TEST_CASE("full row MAC: 1 ACT + 64 reads, open row continuation drops the ACT") {
    // Synthetic single-run instruction over one full row.
    SystemConfig cfg = base_cfg();
    GptModelConfig toy;
    toy.name = "rowtoy";
    toy.num_layers = 1;
    toy.d_model = 32;
    toy.num_heads = 1;
    toy.d_head = 32;
    toy.d_ffn = 128;
    toy.vocab_size = 64;
    toy.max_tokens = 4;
    DramGeometry geom;
    geom.channels = 1;
    geom.banks_per_channel = 1;
    geom.columns = 1024;
    geom.capacity_per_channel = uint64_t(2048) * 1024 * 1 * 8;
    MemoryMap map = map_weights(toy, geom, 1024, 16);
    reserve_kv(map, 4);
    // W_Q is 32x32 = 1024 elements = exactly one row in the single bank.
    auto g = build_graph(toy, 1);
    auto s = compile(g, map, cfg);
    for (const auto& n : g.nodes) {
        if (n.is_weight_vmm && n.role == MatrixRole::W_Q) {
            const auto& ins = s.instrs[s.node_instrs[n.id][1]]; // the mac
            REQUIRE(ins.op == Opcode::mac);
            auto cmds = lower_to_commands(ins, map, cfg);
            size_t acts = 0, rds = 0, accesses = 0;
            for (const auto& c : cmds) {
                if (c.kind == DramCommand::ACT) ++acts;
                if (c.kind == DramCommand::RD) {
                    ++rds;
                    accesses += c.accesses;
                }
            }
            CHECK(acts == 1);
            CHECK(accesses == 64);
            size_t pres = 0;
            for (const auto& c : cmds) {
                if (c.kind == DramCommand::PRE) ++pres;
            }
            CHECK(pres == 0); // open-row policy: no PRE until a row switch
        }
    }
}

TEST_CASE("dependency closure matches graph reachability on a small model") {
    GptModelConfig toy;
    toy.name = "depstoy";
    toy.num_layers = 2;
    toy.d_model = 64;
    toy.num_heads = 4;
    toy.d_head = 16;
    toy.d_ffn = 256;
    toy.vocab_size = 128;
    toy.max_tokens = 8;
    SystemConfig cfg = base_cfg();
    cfg.dram.channels = 2;
    cfg.dram.banks_per_channel = 2;
    cfg.dram.columns = 4096;
    cfg.dram.capacity_per_channel = uint64_t(2048) * 4096 * 2 * 8;
    MemoryMap map = build_memory_map(toy, cfg, 8);
    auto g = build_graph(toy, 4);
    auto s = compile(g, map, cfg);

    // node-level reachability via graph edges
    size_t N = g.nodes.size();
    std::vector<std::set<uint32_t>> reach(N);
    for (const auto& n : g.nodes) {
        for (uint32_t d : n.deps) {
            reach[n.id].insert(d);
            reach[n.id].insert(reach[d].begin(), reach[d].end());
        }
    }
    // instruction-level reachability projected onto nodes; an instruction may
    // implement several nodes (batched attention heads)
    std::vector<std::set<uint32_t>> ireach(s.instrs.size());
    std::vector<std::set<uint32_t>> instr_nodes(s.instrs.size());
    for (uint32_t nid = 0; nid < N; ++nid) {
        for (uint32_t i : s.node_instrs[nid]) instr_nodes[i].insert(nid);
    }
    for (const auto& ins : s.instrs) {
        for (uint32_t d : ins.deps) {
            ireach[ins.id].insert(ireach[d].begin(), ireach[d].end());
            ireach[ins.id].insert(instr_nodes[d].begin(), instr_nodes[d].end());
        }
    }
    // for every graph edge a->b, b's instructions must reach a
    for (const auto& n : g.nodes) {
        for (uint32_t d : n.deps) {
            bool found = false;
            for (uint32_t i : s.node_instrs[n.id]) {
                if (ireach[i].count(d) || instr_nodes[i].count(d)) {
                    found = true;
                    break;
                }
            }
            INFO("edge ", d, " -> ", n.id);
            CHECK(found);
        }
    }
    // topological order: deps precede uses
    for (const auto& ins : s.instrs) {
        for (uint32_t d : ins.deps) CHECK(d < ins.id);
    }
}

TEST_CASE("compile rejects unmapped operands") {
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    auto g = build_graph(m, 1);
    MemoryMap map = build_memory_map(find_model("gpt2-small"), cfg, 8);
    CHECK_THROWS_AS(compile(g, map, cfg), CompileError);
}

TEST_CASE("dump is deterministic and names operands") {
    auto m = small_model();
    SystemConfig cfg = base_cfg();
    MemoryMap map = build_memory_map(m, cfg, 16);
    auto g = build_graph(m, 2);
    auto a = dump_stream(compile(g, map, cfg));
    auto b = dump_stream(compile(g, map, cfg));
    CHECK(a == b);
    CHECK(a.find("L0.W_Q") != std::string::npos);
    CHECK(a.find("asic_op softmax") != std::string::npos);
    CHECK(a.find("kv_write") != std::string::npos);
}

TEST_CASE("compile --dump matches the golden listing") {
    GptModelConfig toy;
    toy.name = "dumptoy";
    toy.num_layers = 1;
    toy.d_model = 64;
    toy.num_heads = 2;
    toy.d_head = 32;
    toy.d_ffn = 256;
    toy.vocab_size = 128;
    toy.max_tokens = 4;
    SystemConfig cfg;
    cfg.dram.channels = 2;
    cfg.dram.banks_per_channel = 2;
    cfg.dram.columns = 4096;
    cfg.dram.capacity_per_channel = uint64_t(2048) * 4096 * 2 * 8;
    MemoryMap map = build_memory_map(toy, cfg, 4);
    auto g = build_graph(toy, 2);
    std::string dump = dump_stream(compile(g, map, cfg));
    std::ifstream golden(std::string(TEST_DATA_DIR) + "/compile_dump_golden.txt");
    REQUIRE(golden.good());
    std::stringstream buf;
    buf << golden.rdbuf();
    CHECK(dump == buf.str());
}
