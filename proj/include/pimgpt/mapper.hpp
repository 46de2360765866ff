#pragma once

#include "pimgpt/config.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pimgpt {

struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BankAddress {
    uint32_t channel = 0;
    uint32_t bank = 0;
    uint32_t row = 0;
    uint32_t col = 0; // element offset within the row
};

enum class MatrixRole { W_Q, W_K, W_V, W_proj, W_ffn1, W_ffn2, W_embed_out };
const char* role_name(MatrixRole r);

// One contiguous stretch of a bank's row space holding matrix elements. Rows
// fill left to right, consecutive rows top to bottom; a run may span several
// rows. row_segments() cuts runs at row boundaries.
//
// Blocks whose reduction exceeds the global buffer are stored round-major:
// each GB round's slice of the bank's columns is one contiguous run, so the
// MAC always consumes consecutive cells. `round` tags the slice;
// `src_offset` is the column-major flat offset of the run's first element.
struct BankRun {
    BankAddress start;
    uint64_t elems = 0;
    uint64_t src_offset = 0;
    uint32_t round = 0;
};

struct RowSegment {
    BankAddress start;
    uint32_t elems = 0; // never crosses the row boundary
    uint64_t src_offset = 0;
};

struct MatrixPlacement {
    int layer = -1; // -1: shared (embedding / output projection)
    MatrixRole role = MatrixRole::W_Q;
    uint64_t rows = 0; // reduction extent
    uint64_t cols = 0; // output extent (heads concatenated)
    uint32_t gb_rounds = 1; // reduction slices (ceil(rows / gb_elems))
    uint64_t round_slice = 0; // slice length of every round but the last
    std::vector<BankRun> segments;

    uint64_t total_elems() const { return rows * cols; }
    std::string id() const;
};

std::vector<RowSegment> row_segments(const MatrixPlacement& p, uint32_t row_elems);

// Column-major flat source ranges a run holds. Unsplit blocks give one range
// [src_offset, src_offset + elems); round-major runs give one range per
// covered column (that column's round slice).
std::vector<std::pair<uint64_t, uint64_t>> run_source_ranges(const MatrixPlacement& p,
                                                             const BankRun& run);

// Banks and local offsets holding the flat source range [begin, end).
struct SourcePiece {
    uint32_t channel = 0, bank = 0;
    uint64_t local_elem = 0; // absolute element offset inside the bank
    uint64_t src_begin = 0;
    uint64_t elems = 0;
};
std::vector<SourcePiece> locate_source(const MatrixPlacement& p, uint64_t begin, uint64_t end,
                                       const DramGeometry& geom, uint32_t row_elems);

enum class KvKind { key, value };
enum class KvLayout { row_major, col_major };

struct KvReservation {
    uint32_t layer = 0;
    KvKind kind = KvKind::key;
    uint32_t token_capacity = 0;
    KvLayout layout = KvLayout::row_major;
    std::vector<BankAddress> base;   // one entry per participating bank
    uint32_t rows_per_bank = 0;      // reserved rows at each base
};

struct MemoryMap {
    GptModelConfig model;
    DramGeometry geom;
    uint32_t row_elems = 0;
    uint32_t mac_width = 16;
    uint32_t max_tokens = 0;
    std::vector<MatrixPlacement> placements;
    std::vector<KvReservation> reservations;
    // Next free element offset per bank (channel-major bank index).
    std::vector<uint64_t> used_elems_per_bank;

    const MatrixPlacement& placement(int layer, MatrixRole role) const;
    const KvReservation& reservation(uint32_t layer, KvKind kind) const;
    uint64_t bank_capacity_elems() const { return uint64_t(geom.rows_per_bank()) * row_elems; }
    uint32_t bank_count() const { return geom.channels * geom.banks_per_channel; }
};

// Alg. 3 hit score: fraction of sequential element accesses that land in an
// already-open row when min(nhead, floor(row_capacity/ncol)) heads are
// concatenated per row. ltoken repeats the pattern over that many rows and
// does not change the fraction.
double max_row_hit(uint32_t nhead, uint32_t ncol, uint32_t row_capacity,
                   std::optional<uint64_t> ltoken = std::nullopt);

// Weight mapping: per-layer blocks in dataflow order, then the shared
// embedding/output-projection matrix. Matrices are flattened column-major
// over concatenated heads and dealt to banks in mac_width chunks so per-bank
// element counts differ by at most one chunk. Blocks with reductions longer
// than gb_elems are stored round-major per bank.
MemoryMap map_weights(const GptModelConfig& model, const DramGeometry& geom,
                      uint32_t row_capacity, uint32_t mac_width = 16,
                      uint32_t gb_elems = 1024);

// KV reservations on top of the weight map (mutates and returns it).
// Keys row-major: token i lands in channel i % C, the bank advancing every C
// tokens. Values column-major: column j of head h lives in channel h % C.
MemoryMap& reserve_kv(MemoryMap& map, uint32_t max_tokens);

// Convenience: map weights then reserve KV using the config geometry.
MemoryMap build_memory_map(const GptModelConfig& model, const SystemConfig& cfg,
                           uint32_t max_tokens);

struct KvRun {
    BankAddress addr;
    uint32_t elems = 0;
};

// Deterministic write-back address computation into the reserved space.
std::vector<KvRun> kv_write_address(const MemoryMap& map, uint32_t layer, KvKind kind,
                                    uint64_t token_index);

// The per-(token,head) key rows read by a q.K^T sweep live where the key
// writes put them; value columns likewise. Exposed for the compiler.
BankAddress key_token_address(const MemoryMap& map, uint32_t layer, uint64_t token_index);
BankAddress value_column_address(const MemoryMap& map, uint32_t layer, uint32_t column,
                                 uint64_t token_index);

// JSON dump of placements, reservations and per-bank occupancy.
std::string memory_map_json(const MemoryMap& map);

// Mapper-side prediction of the simulated row-hit rate for one full token
// step at token position t: one ACT per row span, one access per mac chunk.
double predicted_row_hit(const MemoryMap& map, uint64_t token_position);

} // namespace pimgpt
