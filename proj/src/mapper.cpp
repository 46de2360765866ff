#include "pimgpt/mapper.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace pimgpt {

namespace {

inline uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

// Column accesses a MAC sweep needs for a run of `elems` starting at element
// offset `col` inside a row: chunks never cross the row boundary.
uint64_t run_accesses(uint64_t col, uint64_t elems, uint32_t row_elems, uint32_t mac) {
    uint64_t acc = 0;
    uint64_t first = std::min<uint64_t>(row_elems - col, elems);
    acc += ceil_div(first, mac);
    elems -= first;
    uint64_t full_rows = elems / row_elems;
    acc += full_rows * (row_elems / mac);
    uint64_t tail = elems % row_elems;
    if (tail) acc += ceil_div(tail, mac);
    return acc;
}

uint64_t run_spans(uint64_t col, uint64_t elems, uint32_t row_elems) {
    if (elems == 0) return 0;
    return (col + elems - 1) / row_elems + 1; // rows touched
}

} // namespace

const char* role_name(MatrixRole r) {
    switch (r) {
        case MatrixRole::W_Q: return "W_Q";
        case MatrixRole::W_K: return "W_K";
        case MatrixRole::W_V: return "W_V";
        case MatrixRole::W_proj: return "W_proj";
        case MatrixRole::W_ffn1: return "W_ffn1";
        case MatrixRole::W_ffn2: return "W_ffn2";
        case MatrixRole::W_embed_out: return "W_embed_out";
    }
    return "?";
}

std::string MatrixPlacement::id() const {
    if (layer < 0) return std::string("shared.") + role_name(role);
    return "L" + std::to_string(layer) + "." + role_name(role);
}

std::vector<RowSegment> row_segments(const MatrixPlacement& p, uint32_t row_elems) {
    std::vector<RowSegment> out;
    for (const auto& run : p.segments) {
        uint64_t col = run.start.col;
        uint64_t row = run.start.row;
        uint64_t left = run.elems;
        uint64_t src = run.src_offset;
        while (left > 0) {
            uint32_t take = static_cast<uint32_t>(std::min<uint64_t>(row_elems - col, left));
            out.push_back({BankAddress{run.start.channel, run.start.bank,
                                       static_cast<uint32_t>(row), static_cast<uint32_t>(col)},
                           take, src});
            src += take;
            left -= take;
            col = 0;
            ++row;
        }
    }
    return out;
}

double max_row_hit(uint32_t nhead, uint32_t ncol, uint32_t row_capacity,
                   std::optional<uint64_t> ltoken) {
    if (nhead < 1 || ncol < 1) throw GeometryError("max_row_hit: nhead and ncol must be >= 1");
    if (ncol > row_capacity) {
        throw GeometryError("max_row_hit: ncol exceeds the row capacity (unsupported geometry)");
    }
    uint64_t k = std::min<uint64_t>(nhead, row_capacity / ncol);
    uint64_t groups = ceil_div(nhead, k); // rows per concatenated matrix row
    uint64_t reps = ltoken.value_or(1);
    uint64_t accesses = reps * uint64_t(nhead) * ncol;
    uint64_t activates = reps * groups;
    return 1.0 - double(activates) / double(accesses);
}

namespace {

struct BlockDims {
    int layer;
    MatrixRole role;
    uint64_t rows, cols;
};

std::vector<BlockDims> model_blocks(const GptModelConfig& m) {
    std::vector<BlockDims> blocks;
    uint64_t d = m.d_model;
    for (uint32_t l = 0; l < m.num_layers; ++l) {
        int li = static_cast<int>(l);
        blocks.push_back({li, MatrixRole::W_Q, d, d});
        blocks.push_back({li, MatrixRole::W_K, d, d});
        blocks.push_back({li, MatrixRole::W_V, d, d});
        blocks.push_back({li, MatrixRole::W_proj, d, d});
        blocks.push_back({li, MatrixRole::W_ffn1, d, m.d_ffn});
        blocks.push_back({li, MatrixRole::W_ffn2, m.d_ffn, d});
    }
    // Tied embedding doubles as the output projection: reduction d, vocab cols.
    blocks.push_back({-1, MatrixRole::W_embed_out, d, m.vocab_size});
    return blocks;
}

} // namespace

MemoryMap map_weights(const GptModelConfig& model, const DramGeometry& geom,
                      uint32_t row_capacity, uint32_t mac_width, uint32_t gb_elems) {
    model.validate();
    MemoryMap map;
    map.model = model;
    map.geom = geom;
    map.row_elems = row_capacity;
    map.mac_width = mac_width;
    const uint32_t nb = geom.channels * geom.banks_per_channel;
    map.used_elems_per_bank.assign(nb, 0);
    const uint64_t bank_cap = uint64_t(geom.rows_per_bank()) * row_capacity;

    for (const auto& bd : model_blocks(model)) {
        MatrixPlacement p;
        p.layer = bd.layer;
        p.role = bd.role;
        p.rows = bd.rows;
        p.cols = bd.cols;
        p.gb_rounds = static_cast<uint32_t>(ceil_div(bd.rows, gb_elems));
        p.round_slice = std::min<uint64_t>(gb_elems, bd.rows);
        uint64_t total = bd.rows * bd.cols;

        // Deal mac_width chunks (single elements for tiny blocks) to banks in
        // ascending (channel, bank) order; counts differ by at most one unit.
        uint64_t unit = (total >= uint64_t(nb) * mac_width) ? mac_width : 1;
        uint64_t units = ceil_div(total, unit);
        uint64_t q = units / nb;
        uint64_t r = units % nb;
        uint64_t src = 0;
        for (uint32_t g = 0; g < nb && src < total; ++g) {
            uint64_t n_units = q + (g < r ? 1 : 0);
            uint64_t elems = std::min(n_units * unit, total - src);
            if (elems == 0) continue;
            uint64_t& cursor = map.used_elems_per_bank[g];
            if (cursor + elems > bank_cap) {
                throw CapacityError("bank (" + std::to_string(g / geom.banks_per_channel) + "," +
                                    std::to_string(g % geom.banks_per_channel) +
                                    ") overflows while mapping " + p.id());
            }
            auto place_run = [&](uint64_t run_elems, uint64_t src_off, uint32_t round) {
                if (run_elems == 0) return;
                BankRun run;
                run.start = BankAddress{g / geom.banks_per_channel, g % geom.banks_per_channel,
                                        static_cast<uint32_t>(cursor / row_capacity),
                                        static_cast<uint32_t>(cursor % row_capacity)};
                run.elems = run_elems;
                run.src_offset = src_off;
                run.round = round;
                p.segments.push_back(run);
                cursor += run_elems;
            };
            if (p.gb_rounds == 1) {
                place_run(elems, src, 0);
            } else {
                // Round-major storage: each GB round's slice of the bank's
                // columns is contiguous so the MAC reads consecutive cells.
                uint64_t s = src, e = src + elems;
                for (uint32_t round = 0; round < p.gb_rounds; ++round) {
                    uint64_t a = uint64_t(round) * gb_elems;
                    uint64_t b = std::min<uint64_t>(a + gb_elems, bd.rows);
                    uint64_t round_elems = 0;
                    uint64_t first_src = UINT64_MAX;
                    for (uint64_t col = s / bd.rows; col * bd.rows < e; ++col) {
                        uint64_t s0 = std::max(std::max(s, col * bd.rows), col * bd.rows + a);
                        uint64_t s1 = std::min(e, col * bd.rows + b);
                        if (s1 <= s0) continue;
                        if (first_src == UINT64_MAX) first_src = s0;
                        round_elems += s1 - s0;
                    }
                    if (round_elems) place_run(round_elems, first_src, round);
                }
            }
            src += elems;
        }
        map.placements.push_back(std::move(p));
    }
    return map;
}

std::vector<std::pair<uint64_t, uint64_t>> run_source_ranges(const MatrixPlacement& p,
                                                             const BankRun& run) {
    std::vector<std::pair<uint64_t, uint64_t>> out;
    if (p.gb_rounds == 1) {
        out.push_back({run.src_offset, run.src_offset + run.elems});
        return out;
    }
    uint64_t a = uint64_t(run.round) * p.round_slice;
    uint64_t b = std::min<uint64_t>(a + p.round_slice, p.rows);
    uint64_t left = run.elems;
    uint64_t src = run.src_offset;
    while (left > 0) {
        uint64_t col = src / p.rows;
        uint64_t s0 = std::max(src, col * p.rows + a);
        uint64_t s1 = std::min(col * p.rows + b, s0 + left);
        out.push_back({s0, s1});
        left -= s1 - s0;
        src = (col + 1) * p.rows + a; // next column's slice
    }
    return out;
}

std::vector<SourcePiece> locate_source(const MatrixPlacement& p, uint64_t begin, uint64_t end,
                                       const DramGeometry& geom, uint32_t row_elems) {
    std::vector<SourcePiece> out;
    for (const auto& run : p.segments) {
        uint64_t local = uint64_t(run.start.row) * row_elems + run.start.col;
        for (auto [s0, s1] : run_source_ranges(p, run)) {
            uint64_t o0 = std::max(begin, s0);
            uint64_t o1 = std::min(end, s1);
            if (o1 > o0) {
                out.push_back({run.start.channel, run.start.bank, local + (o0 - s0), o0, o1 - o0});
            }
            local += s1 - s0;
        }
    }
    (void)geom;
    return out;
}

MemoryMap& reserve_kv(MemoryMap& map, uint32_t max_tokens) {
    if (max_tokens < 1) throw GeometryError("reserve_kv: max_tokens must be >= 1");
    map.max_tokens = max_tokens;
    const auto& m = map.model;
    const uint32_t C = map.geom.channels;
    const uint32_t B = map.geom.banks_per_channel;
    const uint32_t nb = C * B;
    const uint32_t R = map.row_elems;
    const uint64_t bank_cap = map.bank_capacity_elems();

    // Round every bank cursor up to a fresh row: reservations are row-granular.
    auto align_rows = [&](uint32_t g) {
        uint64_t& cur = map.used_elems_per_bank[g];
        cur = ceil_div(cur, R) * R;
    };

    const uint32_t rows_per_token = static_cast<uint32_t>(ceil_div(m.d_model, R));
    const uint32_t tokens_per_bank = static_cast<uint32_t>(ceil_div(max_tokens, nb));
    const uint32_t heads_per_channel = static_cast<uint32_t>(ceil_div(m.num_heads, C));
    const uint32_t value_slots = static_cast<uint32_t>(ceil_div(uint64_t(heads_per_channel) * m.d_head, B));
    const uint32_t rows_per_col = static_cast<uint32_t>(ceil_div(max_tokens, R));

    for (uint32_t l = 0; l < m.num_layers; ++l) {
        KvReservation key;
        key.layer = l;
        key.kind = KvKind::key;
        key.layout = KvLayout::row_major;
        key.token_capacity = tokens_per_bank * nb;
        key.rows_per_bank = tokens_per_bank * rows_per_token;
        for (uint32_t g = 0; g < nb; ++g) {
            align_rows(g);
            uint64_t cur = map.used_elems_per_bank[g];
            if (cur + uint64_t(key.rows_per_bank) * R > bank_cap) {
                throw CapacityError("bank (" + std::to_string(g / B) + "," + std::to_string(g % B) +
                                    ") overflows reserving keys for layer " + std::to_string(l));
            }
            key.base.push_back(BankAddress{g / B, g % B, static_cast<uint32_t>(cur / R), 0});
            map.used_elems_per_bank[g] = cur + uint64_t(key.rows_per_bank) * R;
        }
        map.reservations.push_back(std::move(key));

        KvReservation val;
        val.layer = l;
        val.kind = KvKind::value;
        val.layout = KvLayout::col_major;
        val.token_capacity = rows_per_col * R;
        val.rows_per_bank = value_slots * rows_per_col;
        for (uint32_t g = 0; g < nb; ++g) {
            align_rows(g);
            uint64_t cur = map.used_elems_per_bank[g];
            if (cur + uint64_t(val.rows_per_bank) * R > bank_cap) {
                throw CapacityError("bank (" + std::to_string(g / B) + "," + std::to_string(g % B) +
                                    ") overflows reserving values for layer " + std::to_string(l));
            }
            val.base.push_back(BankAddress{g / B, g % B, static_cast<uint32_t>(cur / R), 0});
            map.used_elems_per_bank[g] = cur + uint64_t(val.rows_per_bank) * R;
        }
        map.reservations.push_back(std::move(val));
    }
    return map;
}

MemoryMap build_memory_map(const GptModelConfig& model, const SystemConfig& cfg,
                           uint32_t max_tokens) {
    MemoryMap map = map_weights(model, cfg.dram, cfg.row_elems(), cfg.pim.mac_width,
                                cfg.gb_elems());
    reserve_kv(map, max_tokens);
    return map;
}

const MatrixPlacement& MemoryMap::placement(int layer, MatrixRole role) const {
    for (const auto& p : placements) {
        if (p.layer == layer && p.role == role) return p;
    }
    throw GeometryError("no placement for layer " + std::to_string(layer) + " role " +
                        role_name(role));
}

const KvReservation& MemoryMap::reservation(uint32_t layer, KvKind kind) const {
    for (const auto& r : reservations) {
        if (r.layer == layer && r.kind == kind) return r;
    }
    throw GeometryError("no reservation for layer " + std::to_string(layer));
}

BankAddress key_token_address(const MemoryMap& map, uint32_t layer, uint64_t token_index) {
    const auto& res = map.reservation(layer, KvKind::key);
    const uint32_t C = map.geom.channels;
    const uint32_t B = map.geom.banks_per_channel;
    const uint32_t rows_per_token = static_cast<uint32_t>(ceil_div(map.model.d_model, map.row_elems));
    uint32_t c = static_cast<uint32_t>(token_index % C);
    uint32_t b = static_cast<uint32_t>((token_index / C) % B);
    uint32_t k = static_cast<uint32_t>(token_index / (uint64_t(C) * B));
    BankAddress a = res.base[c * B + b];
    a.row += k * rows_per_token;
    a.col = 0;
    return a;
}

BankAddress value_column_address(const MemoryMap& map, uint32_t layer, uint32_t column,
                                 uint64_t token_index) {
    const auto& res = map.reservation(layer, KvKind::value);
    const uint32_t C = map.geom.channels;
    const uint32_t B = map.geom.banks_per_channel;
    const uint32_t R = map.row_elems;
    const uint32_t rows_per_col = static_cast<uint32_t>(ceil_div(map.max_tokens, R));
    uint32_t h = column / map.model.d_head;
    uint32_t c = h % C;
    uint32_t w = (h / C) * map.model.d_head + column % map.model.d_head;
    uint32_t b = w % B;
    uint32_t slot = w / B;
    BankAddress a = res.base[c * B + b];
    a.row += slot * rows_per_col + static_cast<uint32_t>(token_index / R);
    a.col = static_cast<uint32_t>(token_index % R);
    return a;
}

std::vector<KvRun> kv_write_address(const MemoryMap& map, uint32_t layer, KvKind kind,
                                    uint64_t token_index) {
    std::vector<KvRun> out;
    const uint32_t R = map.row_elems;
    const auto& res = map.reservation(layer, kind);
    if (kind == KvKind::key) {
        if (token_index >= res.token_capacity) {
            throw CapacityError("kv_write_address: token index exceeds key capacity");
        }
        BankAddress a = key_token_address(map, layer, token_index);
        uint64_t left = map.model.d_model;
        while (left > 0) {
            uint32_t take = static_cast<uint32_t>(std::min<uint64_t>(R, left));
            out.push_back({a, take});
            left -= take;
            a.row += 1;
        }
    } else {
        if (token_index >= res.token_capacity) {
            throw CapacityError("kv_write_address: token index exceeds value capacity");
        }
        for (uint32_t j = 0; j < map.model.d_model; ++j) {
            out.push_back({value_column_address(map, layer, j, token_index), 1});
        }
    }
    return out;
}

std::string memory_map_json(const MemoryMap& map) {
    nlohmann::json j;
    j["model"] = map.model.name;
    j["geometry"] = {{"channels", map.geom.channels},
                     {"banks_per_channel", map.geom.banks_per_channel},
                     {"row_elems", map.row_elems},
                     {"rows_per_bank", map.geom.rows_per_bank()}};
    j["max_tokens"] = map.max_tokens;
    nlohmann::json pl = nlohmann::json::array();
    for (const auto& p : map.placements) {
        nlohmann::json e;
        e["id"] = p.id();
        e["rows"] = p.rows;
        e["cols"] = p.cols;
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& s : p.segments) {
            segs.push_back({{"channel", s.start.channel},
                            {"bank", s.start.bank},
                            {"row", s.start.row},
                            {"col", s.start.col},
                            {"elems", s.elems},
                            {"src", s.src_offset}});
        }
        e["segments"] = std::move(segs);
        pl.push_back(std::move(e));
    }
    j["placements"] = std::move(pl);
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : map.reservations) {
        nlohmann::json e;
        e["layer"] = r.layer;
        e["kind"] = (r.kind == KvKind::key) ? "key" : "value";
        e["layout"] = (r.layout == KvLayout::row_major) ? "row_major" : "col_major";
        e["token_capacity"] = r.token_capacity;
        e["rows_per_bank"] = r.rows_per_bank;
        e["base_row_first_bank"] = r.base.empty() ? 0 : r.base[0].row;
        rs.push_back(std::move(e));
    }
    j["reservations"] = std::move(rs);
    nlohmann::json occ = nlohmann::json::array();
    for (uint64_t u : map.used_elems_per_bank) occ.push_back(u * 2); // bytes
    j["bytes_used_per_bank"] = std::move(occ);
    return j.dump(2);
}

double predicted_row_hit(const MemoryMap& map, uint64_t token_position) {
    const uint32_t R = map.row_elems;
    const uint32_t mac = map.mac_width;
    const auto& m = map.model;
    uint64_t accesses = 0;
    uint64_t activates = 0;

    // Weight sweeps: every placement is read once per token step.
    for (const auto& p : map.placements) {
        for (const auto& run : p.segments) {
            accesses += run_accesses(run.start.col, run.elems, R, mac);
            activates += run_spans(run.start.col, run.elems, R);
        }
    }
    uint64_t t1 = token_position; // cached tokens read by attention at this step
    uint32_t rows_per_token = static_cast<uint32_t>(ceil_div(m.d_model, R));
    // K sweep: one span per cached token row; V sweep: per value column.
    uint64_t key_acc_per_token = run_accesses(0, m.d_model, R, mac);
    accesses += m.num_layers * t1 * key_acc_per_token;
    activates += m.num_layers * t1 * rows_per_token;
    uint64_t val_acc_per_col = ceil_div(t1, mac);
    uint64_t val_spans_per_col = t1 ? ceil_div(t1, R) : 0;
    accesses += m.num_layers * uint64_t(m.d_model) * val_acc_per_col;
    activates += m.num_layers * uint64_t(m.d_model) * val_spans_per_col;
    // KV writes: key is one activation amortized over the row, value pays an
    // activation per element.
    accesses += m.num_layers * key_acc_per_token;
    activates += m.num_layers * rows_per_token;
    accesses += m.num_layers * uint64_t(m.d_model);
    activates += m.num_layers * uint64_t(m.d_model);
    return 1.0 - double(activates) / double(accesses);
}

} // namespace pimgpt
