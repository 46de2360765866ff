#pragma once

#include "pimgpt/config.hpp"
#include "pimgpt/mapper.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pimgpt {

struct CompileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class NodeKind {
    vmm,
    kv_write_key,
    kv_write_value,
    softmax,
    layernorm,
    gelu,
    residual_add,
    partial_sum,
    transfer_broadcast,
    transfer_collect,
    embed_lookup,
    argmax, // greedy sampling after the output projection
};
const char* node_kind_name(NodeKind k);

struct GraphNode {
    uint32_t id = 0;
    NodeKind kind = NodeKind::vmm;
    int layer = -1;
    int head = -1;
    MatrixRole role = MatrixRole::W_Q; // for weight vmm nodes
    bool is_weight_vmm = false;
    bool is_attn_score = false; // q.K^T
    bool is_attn_value = false; // scores.V
    uint64_t rows = 0;          // reduction extent for vmm
    uint64_t cols = 0;          // output extent for vmm
    uint64_t n = 0;             // element count for asic/vector nodes
    std::vector<uint32_t> deps;
};

struct ComputationGraph {
    GptModelConfig model;
    uint64_t token_position = 1; // 1-based: attention spans this many tokens
    std::vector<GraphNode> nodes;

    const GraphNode& node(uint32_t id) const { return nodes.at(id); }
    bool is_dag() const;
};

// Per-layer decode-step graph: QKV projections, KV append, per-head scaled
// dot-product attention, output projection, post-LN residual blocks, FFN with
// GELU, then the tied output projection and greedy argmax.
ComputationGraph build_graph(const GptModelConfig& model, uint64_t token_position);

enum class Target { pim, asic, bus };
const char* target_name(Target t);

enum class Opcode {
    broadcast,   // bus -> all channel GBs
    send,        // bus -> one channel GB (per-head score slice)
    mac,         // one channel's banks sweep their share
    collect,     // bus <- per-channel results, serialized
    kv_write,    // bus transfer plus bank write chains
    asic_op,     // softmax/layernorm/gelu/residual/partial_sum/argmax
    embed_read,  // single-bank row read plus transfer
};
const char* opcode_name(Opcode o);

struct Instruction {
    uint32_t id = 0;
    uint32_t group = 0;  // fetch group: lowered pieces of one graph step
    Target target = Target::pim;
    Opcode op = Opcode::mac;
    NodeKind kind = NodeKind::vmm; // semantic tag (asic kind, kv kind, ...)
    int layer = -1;
    int head = -1;
    uint32_t channel = UINT32_MAX; // mac/send target channel
    const MatrixPlacement* block = nullptr;
    uint64_t tokens = 0;    // attention extent
    uint64_t n = 0;         // asic element count
    uint64_t bytes = 0;     // bus payload (wire bytes, one channel interface)
    uint32_t fanout = 1;    // channel interfaces the payload crosses
    uint32_t round = 0;
    uint32_t rounds = 1;
    bool fused = false;     // collect overlaps downstream ASIC compute
    std::vector<uint32_t> deps; // instruction ids
};

struct InstructionStream {
    const MemoryMap* map = nullptr;
    SystemConfig cfg;
    GptModelConfig model;
    uint64_t token_position = 1;
    std::vector<Instruction> instrs;
    // node id -> instruction ids implementing it (>= 1 per node)
    std::vector<std::vector<uint32_t>> node_instrs;
};

// Lower the graph against the memory map. Splits inputs longer than the GB
// into rounds with ASIC partial sums, batches attention heads into shared
// fetch groups, and marks collects feeding ASIC ops as fused.
InstructionStream compile(const ComputationGraph& graph, const MemoryMap& map,
                          const SystemConfig& cfg);

// One instruction per line for golden-file tests.
std::string dump_stream(const InstructionStream& s);

// DRAM command sequence for one pim/bus instruction under the open-row
// policy: ACT only on row switches, PRE deferred until the switch.
struct DramCommand {
    enum Kind { ACT, RD, WR, PRE } kind;
    uint32_t channel, bank, row;
    uint32_t accesses = 1; // consecutive column accesses at this row
};
std::vector<DramCommand> lower_to_commands(const Instruction& instr, const MemoryMap& map,
                                           const SystemConfig& cfg);

} // namespace pimgpt
