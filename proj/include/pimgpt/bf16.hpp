#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <vector>

namespace pimgpt {

// 16-bit brain float: 1 sign bit, 8 exponent bits, 7 mantissa bits.
// The value is the high half of the equivalent IEEE-754 binary32 pattern;
// conversion from float rounds to nearest, ties to even.
class Bf16 {
public:
    constexpr Bf16() = default;

    static constexpr Bf16 from_bits(uint16_t b) {
        Bf16 v;
        v.bits_ = b;
        return v;
    }

    explicit Bf16(float f) : bits_(round_bits(f)) {}
    explicit Bf16(double d) : bits_(round_bits(static_cast<float>(d))) {}

    uint16_t bits() const { return bits_; }

    float to_float() const {
        uint32_t u = static_cast<uint32_t>(bits_) << 16;
        float f;
        std::memcpy(&f, &u, sizeof(f));
        return f;
    }

    bool is_nan() const { return (bits_ & 0x7fff) > 0x7f80; }
    bool is_inf() const { return (bits_ & 0x7fff) == 0x7f80; }
    bool is_zero() const { return (bits_ & 0x7fff) == 0; }
    bool is_finite() const { return (bits_ & 0x7f80) != 0x7f80; }
    bool sign() const { return (bits_ & 0x8000) != 0; }
    // Normal: exponent field neither all-zero nor all-ones.
    bool is_normal() const {
        uint16_t e = (bits_ >> 7) & 0xff;
        return e != 0 && e != 0xff;
    }

    bool operator==(const Bf16& o) const { return bits_ == o.bits_; }
    bool operator!=(const Bf16& o) const { return bits_ != o.bits_; }

    static uint16_t round_bits(float f) {
        uint32_t u;
        std::memcpy(&u, &f, sizeof(u));
        if ((u & 0x7fffffffu) > 0x7f800000u) {
            // NaN: keep sign, force quiet bit so the payload survives truncation.
            return static_cast<uint16_t>((u >> 16) | 0x0040);
        }
        uint32_t bias = 0x7fffu + ((u >> 16) & 1u);
        return static_cast<uint16_t>((u + bias) >> 16);
    }

private:
    uint16_t bits_ = 0;
};

inline Bf16 bf16_round(float x) { return Bf16(x); }
inline Bf16 bf16_round(double x) { return Bf16(static_cast<float>(x)); }

// Elementary BF16 arithmetic: compute in float, round the result once.
inline Bf16 bf_add(Bf16 a, Bf16 b) { return Bf16(a.to_float() + b.to_float()); }
inline Bf16 bf_sub(Bf16 a, Bf16 b) { return Bf16(a.to_float() - b.to_float()); }
inline Bf16 bf_mul(Bf16 a, Bf16 b) { return Bf16(a.to_float() * b.to_float()); }

using Bf16Vector = std::vector<Bf16>;

// Distance in units of representable BF16 steps, treating the bit patterns of
// same-sign values as consecutive integers (standard ULP-distance trick).
inline int32_t ulp_distance(Bf16 a, Bf16 b) {
    auto key = [](Bf16 v) -> int32_t {
        uint16_t u = v.bits();
        return (u & 0x8000) ? -static_cast<int32_t>(u & 0x7fff)
                            : static_cast<int32_t>(u & 0x7fff);
    };
    int32_t d = key(a) - key(b);
    return d < 0 ? -d : d;
}

} // namespace pimgpt
