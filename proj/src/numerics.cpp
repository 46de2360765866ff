#include "pimgpt/numerics.hpp"

#include <algorithm>
#include <stdexcept>

namespace pimgpt::numerics {

namespace {

// Seed constants for Newton-Raphson reciprocal, rounded to BF16 like every
// other datapath constant.
const Bf16 kNr48over17(48.0f / 17.0f);
const Bf16 kNr32over17(32.0f / 17.0f);
const Bf16 kOne(1.0f);
const Bf16 kHalf(0.5f);
const Bf16 kThreeHalves(1.5f);

// exp range reduction: ln2 split so k*ln2_hi stays exact for the |k| the
// softmax path produces (ln2_hi = 11/16 has a 4-bit mantissa).
const Bf16 kInvLn2(1.0f / 0.69314718056f);
const Bf16 kLn2Hi(0.6875f);
const Bf16 kLn2Lo(0.69314718056f - 0.6875f);

// 1/2! .. 1/5! for the six-term exp polynomial.
const Bf16 kExpC2(0.5f);
const Bf16 kExpC3(1.0f / 6.0f);
const Bf16 kExpC4(1.0f / 24.0f);
const Bf16 kExpC5(1.0f / 120.0f);

// Maclaurin tanh coefficients (terms x, x^3 .. x^11).
const Bf16 kTanhC1(-1.0f / 3.0f);
const Bf16 kTanhC2(2.0f / 15.0f);
const Bf16 kTanhC3(-17.0f / 315.0f);
const Bf16 kTanhC4(62.0f / 2835.0f);
const Bf16 kTanhC5(-1382.0f / 155925.0f);

const Bf16 kGeluCube(0.044715f);
const Bf16 kGeluScale(0.7978845608f); // sqrt(2/pi)

} // namespace

Bf16 nr_reciprocal(Bf16 d) {
    if (d.is_zero()) throw std::domain_error("nr_reciprocal: division by zero");
    if (!d.is_finite()) return Bf16(1.0f / d.to_float()); // NaN/Inf propagate
    bool neg = d.sign();
    float a = std::fabs(d.to_float());
    int e = 0;
    float m = std::frexp(a, &e); // a = m * 2^e, m in [0.5, 1)
    Bf16 dp(m);                   // exact: same mantissa, shifted exponent
    Bf16 x = bf_sub(kNr48over17, bf_mul(kNr32over17, dp));
    for (int it = 0; it < 3; ++it) {
        Bf16 t = bf_mul(dp, x);
        Bf16 err = bf_sub(kOne, t);
        x = bf_add(x, bf_mul(x, err));
    }
    // Rescale by exponent subtraction: 1/a = X * 2^-e.
    float r = std::ldexp(x.to_float(), -e);
    Bf16 out(r);
    if (neg) out = Bf16::from_bits(static_cast<uint16_t>(out.bits() ^ 0x8000));
    return out;
}

Bf16 nr_divide(Bf16 numerator, Bf16 d) {
    if (d.is_zero()) throw std::domain_error("nr_divide: division by zero");
    if (!d.is_finite() || !numerator.is_finite()) {
        return Bf16(numerator.to_float() / d.to_float());
    }
    return bf_mul(numerator, nr_reciprocal(d));
}

Bf16 fast_inv_sqrt(Bf16 d) {
    if (!d.is_finite() || d.sign() || d.is_zero()) {
        throw std::domain_error("fast_inv_sqrt: input must be finite and > 0");
    }
    // Prescale by an even exponent so D' = 0.5*d stays normal; the shift is
    // exact and 1/sqrt(d * 4^-k) * 2^-k = 1/sqrt(d).
    int e = 0;
    std::frexp(d.to_float(), &e);
    int k = (e >= 0) ? e / 2 : (e - 1) / 2;
    Bf16 ds(std::ldexp(d.to_float(), -2 * k));
    Bf16 dp = bf_mul(kHalf, ds);
    // Unpack to 32 bits (pad 16 zeros), magic subtract, keep the high half.
    uint32_t l = static_cast<uint32_t>(ds.bits()) << 16;
    uint32_t l2 = 0x5f3759dfu - (l >> 1);
    Bf16 x = Bf16::from_bits(static_cast<uint16_t>(l2 >> 16));
    for (int it = 0; it < 2; ++it) {
        Bf16 t = bf_mul(dp, x);
        Bf16 t2 = bf_mul(t, x);
        Bf16 s = bf_sub(kThreeHalves, t2);
        x = bf_mul(x, s);
    }
    return Bf16(std::ldexp(x.to_float(), -k));
}

Bf16 taylor_exp(Bf16 x) {
    if (x.is_nan()) return x;
    float xf = x.to_float();
    if (xf > 89.0f) return Bf16::from_bits(0x7f80);  // overflow -> +inf
    if (xf < -93.0f) return Bf16(0.0f);              // underflow -> 0
    // k = round(x / ln2), computed through the BF16 multiplier.
    Bf16 kx = bf_mul(x, kInvLn2);
    int k = static_cast<int>(std::lrintf(kx.to_float()));
    // r = (x - k*ln2_hi) - k*ln2_lo
    Bf16 kb(static_cast<float>(k));
    Bf16 r = bf_sub(x, bf_mul(kb, kLn2Hi));
    r = bf_sub(r, bf_mul(kb, kLn2Lo));
    // Horner over 1 + r(1 + r(1/2 + r(1/6 + r(1/24 + r/120))))
    Bf16 p = kExpC5;
    p = bf_add(bf_mul(p, r), kExpC4);
    p = bf_add(bf_mul(p, r), kExpC3);
    p = bf_add(bf_mul(p, r), kExpC2);
    p = bf_add(bf_mul(p, r), kOne);
    p = bf_add(bf_mul(p, r), kOne);
    return Bf16(std::ldexp(p.to_float(), k));
}

Bf16 taylor_tanh(Bf16 x) {
    if (x.is_nan()) return x;
    float a = std::fabs(x.to_float());
    bool neg = x.sign();
    Bf16 y;
    if (a <= 1.0f) {
        Bf16 ax(a);
        Bf16 u = bf_mul(ax, ax);
        Bf16 p = kTanhC5;
        p = bf_add(bf_mul(p, u), kTanhC4);
        p = bf_add(bf_mul(p, u), kTanhC3);
        p = bf_add(bf_mul(p, u), kTanhC2);
        p = bf_add(bf_mul(p, u), kTanhC1);
        p = bf_add(bf_mul(p, u), kOne);
        y = bf_mul(ax, p);
    } else if (a < 3.5f) {
        // tanh(a) = 1 - 2/(e^{2a} + 1); the series alone diverges here.
        Bf16 e2 = taylor_exp(Bf16(2.0f * a));
        Bf16 den = bf_add(e2, kOne);
        Bf16 q = nr_divide(Bf16(2.0f), den);
        y = bf_sub(kOne, q);
    } else {
        y = kOne;
    }
    if (neg) y = Bf16::from_bits(static_cast<uint16_t>(y.bits() ^ 0x8000));
    return y;
}

Bf16 gelu(Bf16 x) {
    if (x.is_nan()) return x;
    Bf16 x2 = bf_mul(x, x);
    Bf16 x3 = bf_mul(x2, x);
    Bf16 s = bf_add(x, bf_mul(kGeluCube, x3));
    Bf16 a = bf_mul(kGeluScale, s);
    Bf16 one_plus;
    if (!a.sign()) {
        one_plus = bf_add(kOne, taylor_tanh(a));
    } else {
        // 1 + tanh(a) = 2/(1 + e^{-2a}); same arithmetic units, but avoids
        // the cancellation of adding 1 to a tanh value near -1.
        Bf16 e2 = taylor_exp(bf_mul(Bf16(-2.0f), a));
        one_plus = nr_divide(Bf16(2.0f), bf_add(kOne, e2));
    }
    Bf16 half_x = bf_mul(kHalf, x);
    return bf_mul(half_x, one_plus);
}

Bf16 tree_sum(std::span<const Bf16> v) {
    if (v.empty()) return Bf16(0.0f);
    Bf16 total;
    bool have_total = false;
    size_t pos = 0;
    while (pos < v.size()) {
        size_t n = std::min<size_t>(16, v.size() - pos);
        // Binary tree over up to 16 lanes, each level rounded.
        Bf16 lane[16];
        for (size_t i = 0; i < n; ++i) lane[i] = v[pos + i];
        size_t width = n;
        while (width > 1) {
            size_t half = width / 2;
            for (size_t i = 0; i < half; ++i) {
                lane[i] = bf_add(lane[2 * i], lane[2 * i + 1]);
            }
            if (width & 1) lane[half] = lane[width - 1];
            width = half + (width & 1);
        }
        if (!have_total) {
            total = lane[0];
            have_total = true;
        } else {
            total = bf_add(total, lane[0]);
        }
        pos += n;
    }
    return total;
}

Bf16 dot(std::span<const Bf16> a, std::span<const Bf16> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    if (a.empty()) return Bf16(0.0f);
    Bf16Vector prods(a.size());
    for (size_t i = 0; i < a.size(); ++i) prods[i] = bf_mul(a[i], b[i]);
    return tree_sum(prods);
}

Bf16 dot_split(std::span<const Bf16> a, std::span<const Bf16> b, size_t round_elems) {
    if (a.size() != b.size()) throw std::invalid_argument("dot_split: size mismatch");
    if (round_elems == 0 || a.size() <= round_elems) return dot(a, b);
    Bf16 acc;
    bool first = true;
    for (size_t pos = 0; pos < a.size(); pos += round_elems) {
        size_t n = std::min(round_elems, a.size() - pos);
        Bf16 part = dot(a.subspan(pos, n), b.subspan(pos, n));
        if (first) {
            acc = part;
            first = false;
        } else {
            acc = bf_add(acc, part);
        }
    }
    return acc;
}

Bf16Vector softmax(std::span<const Bf16> scores) {
    if (scores.empty()) throw std::invalid_argument("softmax: empty input");
    Bf16 m = scores[0];
    for (const Bf16& s : scores) {
        if (s.to_float() > m.to_float()) m = s;
    }
    Bf16Vector e(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        e[i] = taylor_exp(bf_sub(scores[i], m));
    }
    Bf16 denom = tree_sum(e);
    Bf16 r = nr_reciprocal(denom);
    Bf16Vector out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) out[i] = bf_mul(e[i], r);
    return out;
}

Bf16Vector layernorm(std::span<const Bf16> x, std::span<const Bf16> gamma,
                     std::span<const Bf16> beta, Bf16 epsilon) {
    if (x.size() != gamma.size() || x.size() != beta.size()) {
        throw std::invalid_argument("layernorm: shape mismatch");
    }
    if (x.empty()) return {};
    Bf16 inv_n(1.0 / static_cast<double>(x.size()));
    Bf16 mean = bf_mul(tree_sum(x), inv_n);
    Bf16Vector dev(x.size());
    Bf16Vector sq(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        dev[i] = bf_sub(x[i], mean);
        sq[i] = bf_mul(dev[i], dev[i]);
    }
    Bf16 var = bf_mul(tree_sum(sq), inv_n);
    Bf16 rstd = fast_inv_sqrt(bf_add(var, epsilon));
    Bf16Vector out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = bf_add(bf_mul(bf_mul(dev[i], rstd), gamma[i]), beta[i]);
    }
    return out;
}

Bf16Vector gelu_vec(std::span<const Bf16> x) {
    Bf16Vector out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
    return out;
}

Bf16Vector residual_add(std::span<const Bf16> a, std::span<const Bf16> b) {
    if (a.size() != b.size()) throw std::invalid_argument("residual_add: size mismatch");
    Bf16Vector out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = bf_add(a[i], b[i]);
    return out;
}

Bf16Vector attention_head(std::span<const Bf16> q, const std::vector<Bf16Vector>& K,
                          const std::vector<Bf16Vector>& V) {
    if (K.empty() || K.size() != V.size()) {
        throw std::invalid_argument("attention_head: K/V row counts must match and be nonzero");
    }
    size_t dk = q.size();
    size_t dv = V[0].size();
    for (const auto& k : K) {
        if (k.size() != dk) throw std::invalid_argument("attention_head: K row width != |q|");
    }
    for (const auto& v : V) {
        if (v.size() != dv) throw std::invalid_argument("attention_head: ragged V");
    }
    Bf16 scale = inv_sqrt_const(dk);
    Bf16Vector scores(K.size());
    for (size_t i = 0; i < K.size(); ++i) {
        scores[i] = bf_mul(dot(q, K[i]), scale);
    }
    Bf16Vector s = softmax(scores);
    Bf16Vector out(dv);
    Bf16Vector col(K.size());
    for (size_t j = 0; j < dv; ++j) {
        for (size_t i = 0; i < V.size(); ++i) col[i] = V[i][j];
        out[j] = dot(s, col);
    }
    return out;
}

} // namespace pimgpt::numerics
