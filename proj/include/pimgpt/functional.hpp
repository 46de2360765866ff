#pragma once

#include "pimgpt/compiler.hpp"
#include "pimgpt/config.hpp"
#include "pimgpt/mapper.hpp"
#include "pimgpt/numerics.hpp"

#include <cstdint>
#include <vector>

namespace pimgpt {

// BF16 weights for one model, stored column-major per block (column j of a
// block with reduction R occupies [j*R, (j+1)*R)). The tied embedding matrix
// doubles as W_embed_out: column v is token v's embedding vector.
struct ModelWeights {
    GptModelConfig model;
    // indexed by layer * 6 + {W_Q, W_K, W_V, W_proj, W_ffn1, W_ffn2}; the
    // last entry is the shared embedding/output matrix.
    std::vector<Bf16Vector> blocks;
    std::vector<Bf16Vector> ln_gamma; // 2 per layer
    std::vector<Bf16Vector> ln_beta;
    Bf16 epsilon{1e-5f};

    static ModelWeights random(const GptModelConfig& model, uint32_t seed);
    const Bf16Vector& block(int layer, MatrixRole role) const;
};

struct ForwardResult {
    std::vector<uint32_t> tokens;     // generated ids (greedy argmax)
    std::vector<Bf16Vector> hidden;   // final hidden state per step
    std::vector<Bf16Vector> logits;   // vocabulary logits per step
};

// Reference forward pass composed purely of the numerics operations, using
// the same GB-round split plan the compiled stream executes (dots split at
// gb_elems boundaries, round partials accumulated sequentially).
// forced_tokens, when nonempty, drives the input ids (teacher forcing);
// greedy argmax feeds back otherwise.
ForwardResult golden_forward(const ModelWeights& w, const SystemConfig& cfg,
                             uint64_t token_count, uint32_t first_token = 0,
                             const std::vector<uint32_t>& forced_tokens = {});

// Functional execution of the compiled dataflow against a memory map: every
// partial dot is assembled exactly as the placement's bank pieces and GB
// rounds produce it (round-major, bank-major within a round).
ForwardResult execute_mapped(const ModelWeights& w, const MemoryMap& map,
                             const SystemConfig& cfg, uint64_t token_count,
                             uint32_t first_token = 0,
                             const std::vector<uint32_t>& forced_tokens = {});

} // namespace pimgpt
