"""Pinned integer procedures for the nonlinear kernels.

These are the bit-exact recipes the fabric microcode implements; the
reference oracles call them directly so oracle-vs-fabric comparisons are
exact equality, while closeness to floating point is a separate, tested
tolerance claim.  Every constant here is load-bearing: changing one
changes the kernel's defined output.

softmax  logits are natural-log-domain integers.  exp(d) for d <= 0 is
         evaluated as 2^(d*log2(e)) with the exponent in Q5: the integer
         part becomes a right shift, the 5-bitフfraction indexes a 32-entry
         Q15 table of 2^-f/32.  Outputs are produced from the running
         prefix sum so a row always totals 256, then clamped to 255
         (sum 255 or 256).

gelu     preactivations are Q4 fixed point (x = y/16).  GELU(x) =
         x * Phi(x) with Phi from the quadratic erf segment
         -0.2888*(|t|-1.769)^2 + 1 at t = x/sqrt(2), clamped outside
         |x| <= 2048/16; requantized to int8 with round-half-up.

norm     64 inputs form 8 groups of 8.  Per group: mean (s+4)>>3,
         variance ((sum d^2)+4)>>3 + 1, then 4 Newton iterations
         s <- (s + v/s) >> 1 from the fixed initial guess 128 give an
         integer standard deviation.  Gamma is Q6 (64 = 1.0) indexed by
         channel within the group; outputs saturate to int8.

quant    out = sat8(round_half_away((x * scale) >> 16)) with the product
         at 32-bit width; callers keep |x*scale| < 2^31.
"""

from __future__ import annotations

__all__ = [
    "EXP_LUT_Q15", "LOG2E_NEG_Q11", "LOGIT_MIN", "SOFTMAX_LOGIT_LIMIT",
    "softmax_row", "softmax_logits",
    "GELU_B_Q4", "GELU_A_Q14", "INV_SQRT2_Q10", "GELU_CLAMP",
    "gelu_q4", "norm_group", "quant_element", "sat8",
]

# round(32768 * 2**(-i/32)) for i in 0..31
EXP_LUT_Q15 = (
    32768, 32066, 31379, 30706, 30048, 29405, 28774, 28158,
    27554, 26964, 26386, 25821, 25268, 24726, 24196, 23678,
    23170, 22674, 22188, 21713, 21247, 20792, 20347, 19911,
    19484, 19066, 18658, 18258, 17867, 17484, 17109, 16743,
)

LOG2E_NEG_Q11 = -2955          # round(-log2(e) * 2^11)
LOGIT_MIN = -(1 << 19)         # masked entries take this logit
SOFTMAX_LOGIT_LIMIT = 1 << 17  # |unmasked logit| bound the procedure assumes


def sat8(v: int) -> int:
    return max(-128, min(127, v))


def softmax_logits(qk: list[int], mask: list[int], bias_row: list[int]) -> list[int]:
    """Masked logits: qk[i] + bias[i], masked entries forced to LOGIT_MIN."""
    out = []
    for q, m, b in zip(qk, mask, bias_row):
        logit = q + b
        if abs(logit) > SOFTMAX_LOGIT_LIMIT:
            raise ValueError(f"logit {logit} outside +-{SOFTMAX_LOGIT_LIMIT}")
        out.append(LOGIT_MIN if m != 0 else logit)
    return out


def softmax_row(qk: list[int], mask: list[int], bias_row: list[int]) -> list[int]:
    """One fixed-point softmax row: 32 uint8 values summing to 255 or 256."""
    logits = softmax_logits(qk, mask, bias_row)
    m = max(logits)
    prefixes = []
    total = 0
    for logit in logits:
        d = logit - m  # <= 0
        u = (d * LOG2E_NEG_Q11) >> 6   # Q5 of |d|*log2(e), >= 0
        qi = u >> 5
        uf = u & 31
        p = (EXP_LUT_Q15[uf] >> qi) if qi < 32 else 0
        total += p
        prefixes.append(total)
    if total == 0:
        raise ValueError("fully masked row: softmax undefined")
    out = []
    prev = 0
    for pfx in prefixes:
        c = (pfx << 8) // total
        o = c - prev
        o -= o >> 8  # 256 -> 255, smaller values unchanged
        prev = c
        out.append(o)
    return out


# ── GELU ─────────────────────────────────────────────────────────────

GELU_B_Q4 = 28          # round(1.769 * 16): erf segment boundary in Q4
GELU_A_Q14 = 4733       # round(0.2888 * 2^14): quadratic coefficient
INV_SQRT2_Q10 = 724     # round(2^10 / sqrt(2))
GELU_CLAMP = 2047       # Q4 preactivation clamp: +-128.0


def gelu_q4(y: int) -> int:
    """Integer GELU of a Q4 preactivation, requantized to int8."""
    yc = max(-GELU_CLAMP - 1, min(GELU_CLAMP, y))
    s = -1 if yc < 0 else 0
    ay = -yc if yc < 0 else yc
    tq = (ay * INV_SQRT2_Q10) >> 10       # Q4 of |x|/sqrt(2)
    e = min(tq, GELU_B_Q4) - GELU_B_Q4    # in [-28, 0]
    big_e = 16384 - (((e * e) * GELU_A_Q14) >> 8)  # Q14 of |erf|
    if s:
        big_e = -big_e
    phi = (16384 + big_e) >> 1            # Q14 of (1 + erf)/2
    g = (yc * phi) >> 14                  # Q4 again
    return sat8((g + 8) >> 4)             # round-half-up to int8


# ── layer normalization ──────────────────────────────────────────────

NORM_ISQRT_INIT = 128
NORM_ISQRT_ITERS = 4
NORM_GAMMA_Q = 6  # gamma is Q6: 64 means 1.0


def norm_group(xs: list[int], gammas: list[int], betas: list[int]) -> list[int]:
    """Normalize one 8-channel group (see module docstring for the recipe)."""
    s = sum(xs)
    mu = (s + 4) >> 3
    ds = [x - mu for x in xs]
    v = ((sum(d * d for d in ds) + 4) >> 3) + 1
    std = NORM_ISQRT_INIT
    for _ in range(NORM_ISQRT_ITERS):
        std = (std + v // std) >> 1
    s64 = std << NORM_GAMMA_Q
    half = s64 >> 1
    out = []
    for d, g, b in zip(ds, gammas, betas):
        t = d * g
        at = -t if t < 0 else t
        q = (at + half) // s64
        if t < 0:
            q = -q
        out.append(sat8(q + b))
    return out


# ── quantization ─────────────────────────────────────────────────────

def quant_element(x: int, scale: int) -> int:
    """sat8(round_half_away((x * scale) >> 16)); the product must fit 32 bits."""
    t = x * scale
    if not -(1 << 31) <= t < (1 << 31):
        raise ValueError(f"product {t} overflows the 32-bit datapath")
    at = -t if t < 0 else t
    r = (at + 0x8000) >> 16
    return sat8(-r if t < 0 else r)
