#include "pimgpt/functional.hpp"

#include <algorithm>
#include <random>

namespace pimgpt {

using namespace numerics;

namespace {

size_t block_index(const GptModelConfig& m, int layer, MatrixRole role) {
    if (role == MatrixRole::W_embed_out) return size_t(m.num_layers) * 6;
    return size_t(layer) * 6 + size_t(role);
}

// Sequential accumulation of split-dot partials in plan order.
struct Acc {
    Bf16 v;
    bool any = false;
    void add(Bf16 p) {
        v = any ? bf_add(v, p) : p;
        any = true;
    }
    Bf16 get() const { return any ? v : Bf16(0.0f); }
};

// dot over [begin, end) of the operand pair, split at absolute multiples of
// gb within the reduction vector.
void dot_gb_pieces(Acc& acc, std::span<const Bf16> x, std::span<const Bf16> w, uint64_t begin,
                   uint64_t end, uint64_t gb) {
    uint64_t pos = begin;
    while (pos < end) {
        uint64_t round_end = (pos / gb + 1) * gb;
        uint64_t stop = std::min(end, round_end);
        acc.add(dot(x.subspan(pos, stop - pos), w.subspan(pos, stop - pos)));
        pos = stop;
    }
}

uint32_t argmax_index(const Bf16Vector& v) {
    uint32_t best = 0;
    for (uint32_t i = 1; i < v.size(); ++i) {
        if (v[i].to_float() > v[best].to_float()) best = i;
    }
    return best;
}

} // namespace

ModelWeights ModelWeights::random(const GptModelConfig& model, uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> wdist(-0.1f, 0.1f);
    std::uniform_real_distribution<float> edist(-1.0f, 1.0f);
    ModelWeights w;
    w.model = model;
    auto fill = [&](size_t n, auto& dist) {
        Bf16Vector v(n);
        for (auto& x : v) x = Bf16(dist(rng));
        return v;
    };
    uint64_t d = model.d_model;
    for (uint32_t l = 0; l < model.num_layers; ++l) {
        w.blocks.push_back(fill(d * d, wdist));            // W_Q
        w.blocks.push_back(fill(d * d, wdist));            // W_K
        w.blocks.push_back(fill(d * d, wdist));            // W_V
        w.blocks.push_back(fill(d * d, wdist));            // W_proj
        w.blocks.push_back(fill(d * model.d_ffn, wdist));  // W_ffn1
        w.blocks.push_back(fill(uint64_t(model.d_ffn) * d, wdist)); // W_ffn2
        for (int k = 0; k < 2; ++k) {
            Bf16Vector g(d), b(d);
            std::uniform_real_distribution<float> gd(0.9f, 1.1f);
            std::uniform_real_distribution<float> bd(-0.05f, 0.05f);
            for (auto& x : g) x = Bf16(gd(rng));
            for (auto& x : b) x = Bf16(bd(rng));
            w.ln_gamma.push_back(std::move(g));
            w.ln_beta.push_back(std::move(b));
        }
    }
    w.blocks.push_back(fill(d * model.vocab_size, edist)); // tied embedding
    return w;
}

const Bf16Vector& ModelWeights::block(int layer, MatrixRole role) const {
    return blocks.at(block_index(model, layer, role));
}

namespace {

// One decode step shared by the golden path and the mapped executor; the
// only difference is how a vmm output element is assembled (`vmm_col`).
template <typename VmmFn>
ForwardResult forward_impl(const ModelWeights& w, const SystemConfig& cfg, uint64_t token_count,
                           uint32_t first_token, const std::vector<uint32_t>& forced_tokens,
                           VmmFn&& vmm_col) {
    const auto& m = w.model;
    const uint64_t d = m.d_model;
    const uint64_t gb = cfg.gb_elems();
    ForwardResult out;
    std::vector<std::vector<Bf16Vector>> K(m.num_layers), V(m.num_layers);
    uint32_t token = first_token % m.vocab_size;
    Bf16 scale = inv_sqrt_const(m.d_head);

    for (uint64_t step = 1; step <= token_count; ++step) {
        if (!forced_tokens.empty()) token = forced_tokens[(step - 1) % forced_tokens.size()];
        out.tokens.push_back(token);
        // embedding lookup: column `token` of the tied matrix
        const auto& embed = w.block(-1, MatrixRole::W_embed_out);
        Bf16Vector x(embed.begin() + token * d, embed.begin() + (token + 1) * d);

        for (uint32_t l = 0; l < m.num_layers; ++l) {
            auto vmm = [&](MatrixRole role, uint64_t cols, const Bf16Vector& in) {
                Bf16Vector r(cols);
                for (uint64_t j = 0; j < cols; ++j) {
                    r[j] = vmm_col(int(l), role, j, in);
                }
                return r;
            };
            Bf16Vector q = vmm(MatrixRole::W_Q, d, x);
            Bf16Vector k = vmm(MatrixRole::W_K, d, x);
            Bf16Vector v = vmm(MatrixRole::W_V, d, x);
            K[l].push_back(k);
            V[l].push_back(v);
            uint64_t t = K[l].size();

            Bf16Vector attn(d);
            for (uint32_t h = 0; h < m.num_heads; ++h) {
                uint64_t h0 = uint64_t(h) * m.d_head;
                Bf16Vector scores(t);
                for (uint64_t i = 0; i < t; ++i) {
                    // GB rounds split at head boundaries: one dot per head
                    Bf16 raw = dot(std::span<const Bf16>(q).subspan(h0, m.d_head),
                                   std::span<const Bf16>(K[l][i]).subspan(h0, m.d_head));
                    scores[i] = bf_mul(raw, scale);
                }
                Bf16Vector s = softmax(scores);
                // scores.V: value columns reduce over tokens, split at gb
                for (uint64_t j = 0; j < m.d_head; ++j) {
                    Bf16Vector col(t);
                    for (uint64_t i = 0; i < t; ++i) col[i] = V[l][i][h0 + j];
                    attn[h0 + j] = dot_split(s, col, gb);
                }
            }
            Bf16Vector proj = vmm(MatrixRole::W_proj, d, attn);
            Bf16Vector r1 = residual_add(x, proj);
            Bf16Vector ln1 = layernorm(r1, w.ln_gamma[2 * l], w.ln_beta[2 * l], w.epsilon);
            Bf16Vector h1 = vmm(MatrixRole::W_ffn1, m.d_ffn, ln1);
            Bf16Vector ge = gelu_vec(h1);
            Bf16Vector h2 = vmm(MatrixRole::W_ffn2, d, ge);
            Bf16Vector r2 = residual_add(ln1, h2);
            x = layernorm(r2, w.ln_gamma[2 * l + 1], w.ln_beta[2 * l + 1], w.epsilon);
        }
        // output projection over the tied embedding + greedy sampling
        Bf16Vector logits(m.vocab_size);
        for (uint64_t vtok = 0; vtok < m.vocab_size; ++vtok) {
            logits[vtok] = vmm_col(-1, MatrixRole::W_embed_out, vtok, x);
        }
        token = argmax_index(logits);
        out.hidden.push_back(x);
        out.logits.push_back(std::move(logits));
    }
    return out;
}

} // namespace

ForwardResult golden_forward(const ModelWeights& w, const SystemConfig& cfg,
                             uint64_t token_count, uint32_t first_token,
                             const std::vector<uint32_t>& forced_tokens) {
    const uint64_t gb = cfg.gb_elems();
    auto vmm_col = [&](int layer, MatrixRole role, uint64_t j, const Bf16Vector& in) {
        const auto& blk = w.block(layer, role);
        uint64_t R = in.size();
        Acc acc;
        dot_gb_pieces(acc, std::span<const Bf16>(in),
                      std::span<const Bf16>(blk).subspan(j * R, R), 0, R, gb);
        return acc.get();
    };
    return forward_impl(w, cfg, token_count, first_token, forced_tokens, vmm_col);
}

ForwardResult execute_mapped(const ModelWeights& w, const MemoryMap& map,
                             const SystemConfig& cfg, uint64_t token_count,
                             uint32_t first_token,
                             const std::vector<uint32_t>& forced_tokens) {
    const uint64_t gb = cfg.gb_elems();
    // Assemble each output from the placement's bank pieces: round-major,
    // bank-major within a round, every partial rounded like the hardware.
    auto vmm_col = [&](int layer, MatrixRole role, uint64_t j, const Bf16Vector& in) {
        const auto& p = map.placement(layer, role);
        const auto& blk = w.block(layer, role);
        uint64_t R = in.size();
        Acc acc;
        for (uint32_t r = 0; r < p.gb_rounds; ++r) {
            uint64_t a = uint64_t(r) * gb;
            uint64_t b = std::min<uint64_t>(a + gb, R);
            auto pieces = locate_source(p, j * R + a, j * R + b, map.geom, map.row_elems);
            for (const auto& piece : pieces) {
                uint64_t lo = piece.src_begin - j * R;
                acc.add(dot(std::span<const Bf16>(in).subspan(lo, piece.elems),
                            std::span<const Bf16>(blk).subspan(piece.src_begin, piece.elems)));
            }
        }
        return acc.get();
    };
    // surface mapping errors (unmapped operands) the way compile would
    for (uint32_t l = 0; l < w.model.num_layers; ++l) {
        map.placement(int(l), MatrixRole::W_Q);
    }
    return forward_impl(w, cfg, token_count, first_token, forced_tokens, vmm_col);
}

} // namespace pimgpt
